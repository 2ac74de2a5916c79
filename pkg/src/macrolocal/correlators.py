"""Observables, correlators and the arcsin conditions on them.

Settings are indexed globally in the order Alice 1..sA, Bob 1..sB when a
single axis over all settings is needed (``one_point``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from macrolocal.certificates import PartialSymmetricMatrix
from macrolocal.conic import SolverConfig, complete_to_psd
from macrolocal.errors import DomainError, ShapeError
from macrolocal.linalg import gram_vectors
from macrolocal.scenario import Behavior, Scenario, marginals

DOMAIN_TOL = 1e-12
TILDE_TOL = 1e-9
DEGENERATE_TOL = 1e-12
PRODUCT_TOL = 1e-9


@dataclass(frozen=True)
class ObservableAssignment:
    scenario: Scenario
    values_a: np.ndarray  # (settings_a, d)
    values_b: np.ndarray  # (settings_b, d)

    def __post_init__(self):
        sc = self.scenario
        va = np.array(self.values_a, dtype=float)
        vb = np.array(self.values_b, dtype=float)
        if va.shape != (sc.settings_a, sc.outcomes) or vb.shape != (sc.settings_b, sc.outcomes):
            raise ShapeError("observable values must be indexed by (setting, outcome)")
        if np.any(np.abs(va) > 1.0) or np.any(np.abs(vb) > 1.0):
            raise DomainError("observable values must lie in [-1, 1]")
        va.setflags(write=False)
        vb.setflags(write=False)
        object.__setattr__(self, "values_a", va)
        object.__setattr__(self, "values_b", vb)

    @property
    def is_dichotomic(self) -> bool:
        return bool(np.all(np.abs(self.values_a) == 1.0) and np.all(np.abs(self.values_b) == 1.0))

    @classmethod
    def parity(cls, scenario: Scenario) -> "ObservableAssignment":
        """O(c) = (-1)^c: outcome 0 maps to +1, outcome 1 to -1."""
        row = np.array([(-1.0) ** c for c in range(scenario.outcomes)])
        return cls(
            scenario,
            np.tile(row, (scenario.settings_a, 1)),
            np.tile(row, (scenario.settings_b, 1)),
        )


@dataclass(frozen=True)
class CorrelatorSet:
    one_point: np.ndarray  # E_Z, Alice settings then Bob settings
    two_point: np.ndarray  # E_XY, shape (settings_a, settings_b)
    # <O_Z^2>; all ones for +-1 observables
    second_moments: Optional[np.ndarray] = None

    def __post_init__(self):
        one = np.array(self.one_point, dtype=float).ravel()
        two = np.atleast_2d(np.array(self.two_point, dtype=float))
        if one.size != sum(two.shape):
            raise ShapeError("one_point needs one entry per setting of both parties")
        sec = np.ones_like(one) if self.second_moments is None else np.array(self.second_moments, dtype=float).ravel()
        if sec.shape != one.shape:
            raise ShapeError("second_moments must match one_point")
        for arr in (one, two, sec):
            arr.setflags(write=False)
        object.__setattr__(self, "one_point", one)
        object.__setattr__(self, "two_point", two)
        object.__setattr__(self, "second_moments", sec)

    @property
    def settings_a(self) -> int:
        return self.two_point.shape[0]

    @property
    def alice(self) -> np.ndarray:
        return self.one_point[: self.settings_a]

    @property
    def bob(self) -> np.ndarray:
        return self.one_point[self.settings_a :]

    def to_csv(self) -> str:
        lines = []
        for x, y in np.ndindex(*self.two_point.shape):
            lines.append(f"E {x + 1} {y + 1} {float(self.two_point[x, y])!r}")
        for z, value in enumerate(self.one_point):
            lines.append(f"E {z + 1} {float(value)!r}")
        return "\n".join(lines) + "\n"


def parse_correlators(text: str, settings_a: Optional[int] = None) -> CorrelatorSet:
    """Read ``E X Y value`` and ``E Z value`` rows (1-based indices).

    One-point rows use the global setting index; Alice's count defaults to
    the largest X among the two-point rows.
    """
    from macrolocal.errors import FormatError

    two = {}
    one = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        try:
            if parts[0] != "E" or len(parts) not in (3, 4):
                raise ValueError
            idx = tuple(int(p) for p in parts[1:-1])
            value = float(parts[-1])
        except (ValueError, IndexError):
            raise FormatError(f"expected 'E X Y value' or 'E Z value', got {line!r}", lineno) from None
        target = two if len(idx) == 2 else one
        if idx in target:
            raise FormatError(f"duplicate correlator {idx}", lineno)
        if min(idx) < 1:
            raise FormatError("correlator indices are 1-based", lineno)
        target[idx] = value
    if not two:
        raise FormatError("no two-point correlators found")
    sa = settings_a or max(x for x, _ in two)
    sb = max(y for _, y in two)
    mat = np.zeros((sa, sb))
    for x, y in np.ndindex(sa, sb):
        if (x + 1, y + 1) not in two:
            raise FormatError(f"missing two-point correlator E {x + 1} {y + 1}")
        mat[x, y] = two[(x + 1, y + 1)]
    vec = np.array([one.get((z + 1,), 0.0) for z in range(sa + sb)])
    return CorrelatorSet(vec, mat)


def correlators(behavior: Behavior, obs: Optional[ObservableAssignment] = None) -> CorrelatorSet:
    """Two-point E_XY = sum P(a,b) O_X(a) O_Y(b) and one-point E_Z from marginals."""
    sc = behavior.scenario
    obs = obs or ObservableAssignment.parity(sc)
    if obs.scenario != sc:
        raise ShapeError("observables and behavior use different scenarios")
    two = np.einsum("xyab,xa,yb->xy", behavior.table, obs.values_a, obs.values_b)
    m = marginals(behavior)
    one = np.concatenate([np.sum(m.p_a * obs.values_a, axis=1), np.sum(m.p_b * obs.values_b, axis=1)])
    second = np.concatenate([np.sum(m.p_a * obs.values_a**2, axis=1), np.sum(m.p_b * obs.values_b**2, axis=1)])
    # summation round-off can step just outside [-1, 1]
    return CorrelatorSet(np.clip(one, -1.0, 1.0), np.clip(two, -1.0, 1.0), np.clip(second, 0.0, 1.0))


@dataclass(frozen=True)
class ArcsinVerdict:
    satisfied: bool
    worst_slack: float


def _check_domain(values: np.ndarray, what: str) -> np.ndarray:
    if np.any(np.abs(values) > 1.0 + DOMAIN_TOL):
        raise DomainError(f"{what} outside [-1, 1]: {values}")
    return np.clip(values, -1.0, 1.0)


def tlm_check(two_point) -> ArcsinVerdict:
    """Arcsin conditions |sum arcsin E_XY - 2 arcsin E_X'Y'| <= pi for all X', Y'.

    ``worst_slack`` is pi minus the largest left-hand side; negative means
    violated.
    """
    e = np.asarray(two_point, dtype=float)
    if e.shape != (2, 2):
        raise ShapeError("arcsin conditions need two settings per party")
    angles = np.arcsin(_check_domain(e, "two-point correlators"))
    total = angles.sum()
    lhs = np.abs(total - 2.0 * angles)
    slack = math.pi - float(lhs.max())
    return ArcsinVerdict(satisfied=slack >= -DOMAIN_TOL, worst_slack=slack)


def normalized_correlators(corr: CorrelatorSet) -> tuple[np.ndarray, np.ndarray]:
    """Bias-corrected correlators and a mask of pairs touching a deterministic setting."""
    ea, eb = corr.alice, corr.bob
    _check_domain(corr.one_point, "one-point correlators")
    two = _check_domain(corr.two_point, "two-point correlators")
    var_a = np.clip(1.0 - ea**2, 0.0, None)
    var_b = np.clip(1.0 - eb**2, 0.0, None)
    degenerate = (var_a[:, None] <= DEGENERATE_TOL) | (var_b[None, :] <= DEGENERATE_TOL)
    denom = np.sqrt(var_a[:, None] * var_b[None, :])
    cov = two - np.outer(ea, eb)
    with np.errstate(divide="ignore", invalid="ignore"):
        tilde = np.where(degenerate, 0.0, cov / np.where(degenerate, 1.0, denom))
    if np.any(np.abs(tilde) > 1.0 + TILDE_TOL):
        raise DomainError(
            "bias-corrected correlators exceed 1 in magnitude; no behavior produces this set"
        )
    return np.clip(tilde, -1.0, 1.0), degenerate


def biased_tlm_check(corr: CorrelatorSet) -> ArcsinVerdict:
    """Arcsin conditions on (E_XY - E_X E_Y) / sqrt((1 - E_X^2)(1 - E_Y^2)).

    A setting with |E_Z| = 1 has a deterministic outcome, so every pair
    touching it must factorize (E_XY = E_X E_Y); those pairs then enter the
    arcsin sum as zero.
    """
    if corr.two_point.shape != (2, 2):
        raise ShapeError("arcsin conditions need two settings per party")
    tilde, degenerate = normalized_correlators(corr)
    if degenerate.any():
        cov = corr.two_point - np.outer(corr.alice, corr.bob)
        worst = float(np.max(np.abs(np.where(degenerate, cov, 0.0))))
        if worst > PRODUCT_TOL:
            return ArcsinVerdict(satisfied=False, worst_slack=-worst)
    return tlm_check(tilde)


@dataclass(frozen=True)
class RealizabilityResult:
    realizable: bool
    gram_vectors: Optional[tuple[np.ndarray, np.ndarray]]  # (u_X rows, v_Y rows)
    completion: Optional[np.ndarray] = None


def correlator_partial(corr: CorrelatorSet) -> PartialSymmetricMatrix:
    """Matrix [[F, E], [E^T, G]] with diagonals <O_Z^2>, cross block E_XY, free F, G."""
    sa, sb = corr.two_point.shape
    n = sa + sb
    entries = np.zeros((n, n))
    entries[np.diag_indices(n)] = corr.second_moments
    entries[:sa, sa:] = corr.two_point
    entries[sa:, :sa] = corr.two_point.T
    mask = np.zeros((n, n), dtype=bool)
    mask[np.diag_indices(n)] = True
    mask[:sa, sa:] = True
    mask[sa:, :sa] = True
    labels = [("A", x) for x in range(sa)] + [("B", y) for y in range(sb)]
    return PartialSymmetricMatrix(entries, mask, labels)


def quantum_realizable_correlators(corr: CorrelatorSet, config: SolverConfig | None = None) -> RealizabilityResult:
    """Decide whether E_XY = u_X . v_Y for vectors of norm^2 <O_Z^2>.

    Such vectors (Tsirelson's construction) give a quantum model with
    dichotomic observables; they are read off an eigen square root of a PSD
    completion.
    """
    _check_domain(corr.two_point, "two-point correlators")
    _check_domain(corr.one_point, "one-point correlators")
    result = complete_to_psd(correlator_partial(corr), config)
    if not result.feasible:
        return RealizabilityResult(False, None)
    vecs = gram_vectors(result.completion)
    sa = corr.settings_a
    return RealizabilityResult(True, (vecs[:sa], vecs[sa:]), result.completion)


def parse_observables(text) -> ObservableAssignment:
    """Read ``observables <sA> <sB> <d>`` then ``o <A|B> <setting> <outcome> <value>`` rows.

    Settings are 1-based, outcomes 0-based; every (party, setting, outcome)
    must appear exactly once.
    """
    from macrolocal.errors import FormatError
    from macrolocal.scenario import parse_scenario_header

    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    scenario = None
    seen = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if scenario is None:
            scenario = parse_scenario_header(line, "observables", lineno)
            continue
        parts = line.split()
        if len(parts) != 5 or parts[0] != "o" or parts[1] not in ("A", "B"):
            raise FormatError(f"expected 'o <A|B> setting outcome value', got {line!r}", lineno)
        try:
            s, c, v = int(parts[2]), int(parts[3]), float(parts[4])
        except ValueError:
            raise FormatError(f"unparsable entry {line!r}", lineno) from None
        n_set = scenario.settings_a if parts[1] == "A" else scenario.settings_b
        if not (1 <= s <= n_set and 0 <= c < scenario.outcomes):
            raise FormatError(f"index out of range in {line!r}", lineno)
        key = (parts[1], s - 1, c)
        if key in seen:
            raise FormatError(f"duplicate observable value {line!r}", lineno)
        seen[key] = v
    if scenario is None:
        raise FormatError("missing 'observables' header line")
    va = np.zeros((scenario.settings_a, scenario.outcomes))
    vb = np.zeros((scenario.settings_b, scenario.outcomes))
    for party, arr in (("A", va), ("B", vb)):
        for s, c in np.ndindex(arr.shape):
            if (party, s, c) not in seen:
                raise FormatError(f"missing observable value for {party} {s + 1} {c}")
            arr[s, c] = seen[(party, s, c)]
    try:
        return ObservableAssignment(scenario, va, vb)
    except DomainError as exc:
        raise FormatError(str(exc)) from None
