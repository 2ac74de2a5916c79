"""Bipartite Bell scenarios and behaviors.

A behavior is stored as an array ``table[X, Y, a, b] = P(a, b | X, Y)`` with
0-based setting indices internally. Files and user-facing messages use
1-based settings.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from macrolocal.errors import (
    EnumerationTooLargeError,
    FormatError,
    InconsistentMarginalsError,
    InvalidBehaviorError,
    ShapeError,
)

DEFAULT_TOLERANCE = 1e-9
ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class Scenario:
    settings_a: int
    settings_b: int
    outcomes: int

    def __post_init__(self):
        for name in ("settings_a", "settings_b", "outcomes"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ShapeError(f"{name} must be an integer, got {value!r}")
        if self.settings_a < 1 or self.settings_b < 1:
            raise ShapeError("each party needs at least one setting")
        if self.outcomes < 2:
            raise ShapeError("measurements need at least two outcomes")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        d = self.outcomes
        return (self.settings_a, self.settings_b, d, d)

    @property
    def n_alice(self) -> int:
        """Number of Alice outcome labels |A| = settings_a * d."""
        return self.settings_a * self.outcomes

    @property
    def n_bob(self) -> int:
        return self.settings_b * self.outcomes


CHSH_SCENARIO = Scenario(2, 2, 2)


@dataclass(frozen=True)
class Behavior:
    scenario: Scenario
    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        if table.shape != self.scenario.shape:
            raise ShapeError(
                f"table shape {table.shape} does not match scenario {self.scenario.shape}"
            )
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    def __eq__(self, other):
        if not isinstance(other, Behavior):
            return NotImplemented
        return self.scenario == other.scenario and np.array_equal(self.table, other.table)

    __hash__ = None


@dataclass(frozen=True)
class MarginalTables:
    p_a: np.ndarray  # (settings_a, d)
    p_b: np.ndarray  # (settings_b, d)


@dataclass(frozen=True)
class ValidationReport:
    normalized: bool
    nonnegative: bool
    no_signaling: bool
    worst_violation: float

    @property
    def valid(self) -> bool:
        return self.normalized and self.nonnegative and self.no_signaling


def _signaling_residuals(table: np.ndarray) -> tuple[float, float]:
    # Bob's marginal must not depend on X; Alice's must not depend on Y.
    bob = table.sum(axis=2)  # (X, Y, b)
    alice = table.sum(axis=3)  # (X, Y, a)
    res_b = float(np.max(np.abs(bob - bob[:1]))) if bob.shape[0] > 1 else 0.0
    res_a = float(np.max(np.abs(alice - alice[:, :1]))) if alice.shape[1] > 1 else 0.0
    return res_a, res_b


def validate_behavior(
    behavior: Behavior, tolerance: float = DEFAULT_TOLERANCE, tol_neg: float = 0.0
) -> ValidationReport:
    """Check normalization, nonnegativity and no-signaling of ``behavior``.

    ``worst_violation`` is the largest absolute residual over all three
    constraint families (negativity counts by its magnitude below zero).
    """
    table = behavior.table
    if table.shape != behavior.scenario.shape:
        raise ShapeError("table shape does not match scenario")
    norm_res = float(np.max(np.abs(table.sum(axis=(2, 3)) - 1.0)))
    neg_res = float(max(0.0, -table.min()))
    res_a, res_b = _signaling_residuals(table)
    ns_res = max(res_a, res_b)
    return ValidationReport(
        normalized=norm_res <= tolerance,
        nonnegative=neg_res <= tol_neg,
        no_signaling=ns_res <= tolerance,
        worst_violation=max(norm_res, neg_res, ns_res),
    )


def require_valid(behavior: Behavior, tolerance: float = DEFAULT_TOLERANCE, tol_neg: float = 0.0):
    report = validate_behavior(behavior, tolerance, tol_neg)
    if not report.valid:
        raise InvalidBehaviorError(
            f"invalid behavior (normalized={report.normalized}, "
            f"nonnegative={report.nonnegative}, no_signaling={report.no_signaling}, "
            f"worst violation {report.worst_violation:.3g})"
        )
    return report


def marginals(behavior: Behavior, tolerance: float = DEFAULT_TOLERANCE) -> MarginalTables:
    """Single-party marginals, averaged over the other party's settings."""
    table = behavior.table
    res_a, res_b = _signaling_residuals(table)
    if max(res_a, res_b) > tolerance:
        raise InconsistentMarginalsError(
            f"signaling residual {max(res_a, res_b):.3g} exceeds tolerance {tolerance:.3g}"
        )
    p_a = table.sum(axis=3).mean(axis=1)
    p_b = table.sum(axis=2).mean(axis=0)
    p_a.setflags(write=False)
    p_b.setflags(write=False)
    return MarginalTables(p_a=p_a, p_b=p_b)


def deterministic_behavior(scenario: Scenario, f: Sequence[int], g: Sequence[int]) -> Behavior:
    """Local deterministic point P(a,b|X,Y) = [a = f(X)] [b = g(Y)]."""
    if len(f) != scenario.settings_a or len(g) != scenario.settings_b:
        raise ShapeError("assignment lengths must match the number of settings")
    table = np.zeros(scenario.shape)
    for x, a in enumerate(f):
        for y, b in enumerate(g):
            table[x, y, a, b] = 1.0
    return Behavior(scenario, table)


def vertex_count(scenario: Scenario) -> int:
    d = scenario.outcomes
    return d ** scenario.settings_a * d ** scenario.settings_b


def deterministic_vertices(scenario: Scenario, cap: int = ENUMERATION_CAP) -> list[Behavior]:
    """All local deterministic behaviors, lexicographic in (f(1..sA), g(1..sB))."""
    count = vertex_count(scenario)
    if count > cap:
        raise EnumerationTooLargeError(f"{count} vertices exceed the cap of {cap}")
    sa = scenario.settings_a
    return [
        deterministic_behavior(scenario, fg[:sa], fg[sa:])
        for fg in itertools.product(
            range(scenario.outcomes), repeat=sa + scenario.settings_b
        )
    ]


def uniform_behavior(scenario: Scenario) -> Behavior:
    d = scenario.outcomes
    return Behavior(scenario, np.full(scenario.shape, 1.0 / d**2))


def pr_box() -> Behavior:
    """PR box: P(a,b|X,Y) = 1/2 iff a xor b = (X-1)(Y-1)."""
    table = np.zeros(CHSH_SCENARIO.shape)
    for x, y, a, b in itertools.product(range(2), repeat=4):
        if (a ^ b) == x * y:
            table[x, y, a, b] = 0.5
    return Behavior(CHSH_SCENARIO, table)


def noisy_pr_box(visibility: float) -> Behavior:
    """Mixture v * PR + (1 - v) * uniform; correlators are v * (1, 1, 1, -1)."""
    return mixture([pr_box(), uniform_behavior(CHSH_SCENARIO)], [visibility, 1.0 - visibility])


def mixture(behaviors: Sequence[Behavior], weights: Iterable[float]) -> Behavior:
    weights = list(weights)
    if len(weights) != len(behaviors) or not behaviors:
        raise ShapeError("need one weight per behavior")
    scenario = behaviors[0].scenario
    if any(b.scenario != scenario for b in behaviors):
        raise ShapeError("all behaviors in a mixture must share a scenario")
    table = sum(w * b.table for w, b in zip(weights, behaviors))
    return Behavior(scenario, table)


def singlet_behavior(angles_a: Sequence[float], angles_b: Sequence[float]) -> Behavior:
    """Singlet statistics for planar measurements at the given angles (radians).

    Outcome 0 carries observable value +1 and outcome 1 carries -1, so
    P(a,b|X,Y) = (1 - (-1)^(a+b) cos(theta_X - phi_Y)) / 4.
    """
    theta = np.asarray(angles_a, dtype=float).ravel()
    phi = np.asarray(angles_b, dtype=float).ravel()
    if theta.size == 0 or phi.size == 0:
        raise ShapeError("each party needs at least one angle")
    scenario = Scenario(theta.size, phi.size, 2)
    cos = np.cos(theta[:, None] - phi[None, :])
    sign = np.array([[1.0, -1.0], [-1.0, 1.0]])
    table = (1.0 - sign[None, None, :, :] * cos[:, :, None, None]) / 4.0
    return Behavior(scenario, table)


# E_XY = -cos(theta_X - phi_Y): correlators (1, 1, 1, -1) / sqrt2, CHSH = 2 sqrt2
CHSH_OPTIMAL_ANGLES = ((0.0, math.pi / 2), (5 * math.pi / 4, 3 * math.pi / 4))


def singlet_chsh_optimal() -> Behavior:
    return singlet_behavior(*CHSH_OPTIMAL_ANGLES)


def parse_scenario_header(line: str, keyword: str, lineno: int) -> Scenario:
    parts = line.split()
    if len(parts) != 4 or parts[0] != keyword:
        raise FormatError(f"expected '{keyword} <settings_a> <settings_b> <d>'", lineno)
    try:
        return Scenario(*(int(p) for p in parts[1:]))
    except ValueError as exc:
        raise FormatError(f"bad {keyword} header: {exc}", lineno) from None


def parse_table(text, header: str, entry: str) -> tuple[Scenario, np.ndarray]:
    """Shared reader for the behavior and functional text formats."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"input is not UTF-8: {exc}") from None
    scenario = None
    table = None
    seen = None
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if scenario is None:
            scenario = parse_scenario_header(line, header, lineno)
            table = np.zeros(scenario.shape)
            seen = np.zeros(scenario.shape, dtype=bool)
            continue
        parts = line.split()
        if len(parts) != 6 or parts[0] != entry:
            raise FormatError(f"expected '{entry} X Y a b value', got {line!r}", lineno)
        try:
            x, y, a, b = (int(p) for p in parts[1:5])
            value = float(parts[5])
        except ValueError:
            raise FormatError(f"unparsable entry {line!r}", lineno) from None
        if not (1 <= x <= scenario.settings_a and 1 <= y <= scenario.settings_b):
            raise FormatError(f"setting index out of range in {line!r}", lineno)
        d = scenario.outcomes
        if not (0 <= a < d and 0 <= b < d):
            raise FormatError(f"outcome index out of range in {line!r}", lineno)
        idx = (x - 1, y - 1, a, b)
        if seen[idx]:
            raise FormatError(f"duplicate entry for X={x} Y={y} a={a} b={b}", lineno)
        seen[idx] = True
        table[idx] = value
    if scenario is None:
        raise FormatError(f"missing '{header}' header line")
    if not seen.all():
        x, y, a, b = np.argwhere(~seen)[0]
        raise FormatError(f"missing entry X={x + 1} Y={y + 1} a={a} b={b}")
    return scenario, table


def format_table(scenario: Scenario, table: np.ndarray, header: str, entry: str) -> bytes:
    lines = [f"{header} {scenario.settings_a} {scenario.settings_b} {scenario.outcomes}"]
    for x, y, a, b in np.ndindex(*scenario.shape):
        # repr is the shortest string that round-trips the double exactly
        lines.append(f"{entry} {x + 1} {y + 1} {a} {b} {float(table[x, y, a, b])!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_behavior(text) -> Behavior:
    scenario, table = parse_table(text, "scenario", "p")
    return Behavior(scenario, table)


def serialize_behavior(behavior: Behavior) -> bytes:
    return format_table(behavior.scenario, behavior.table, "scenario", "p")
