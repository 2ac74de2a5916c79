"""Partially specified certificates for Q1 membership.

Two forms are built from a behavior:

* covariance form ``Gamma`` (rows: Alice outcomes, then Bob outcomes), the
  global covariance of the renormalized intensity fluctuations;
* order-1 moment form ``gamma`` with an extra leading identity row.

Entries between different settings of the same party are free; every other
entry is fixed by the behavior. The two forms differ by the rank-one
marginal outer product on the outcome block.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from macrolocal.errors import ConsistencyError, ContractError, FormatError, ShapeError
from macrolocal.linalg import sym_eig
from macrolocal.scenario import Behavior, Scenario, marginals, require_valid

IDENTITY = ("I",)
FIXED_ENTRY_TOL = 1e-9


class CertificateKind(enum.Enum):
    COVARIANCE = "covariance"
    NPA1 = "npa1"

    @classmethod
    def parse(cls, name: str) -> "CertificateKind":
        key = name.strip().lower()
        if key in ("covariance", "gamma", "cov"):
            return cls.COVARIANCE
        if key in ("npa1", "moment"):
            return cls.NPA1
        raise ValueError(f"unknown certificate kind {name!r}")


class Direction(enum.Enum):
    TO_COVARIANCE = "to_covariance"
    TO_NPA1 = "to_npa1"


def outcome_labels(scenario: Scenario, kind: CertificateKind) -> list[tuple]:
    """Row labels: identity (moment form only), Alice (X, a), then Bob (Y, b)."""
    d = scenario.outcomes
    labels = [IDENTITY] if kind is CertificateKind.NPA1 else []
    labels += [("A", x, a) for x in range(scenario.settings_a) for a in range(d)]
    labels += [("B", y, b) for y in range(scenario.settings_b) for b in range(d)]
    return labels


def certificate_size(scenario: Scenario, kind: CertificateKind) -> int:
    n = scenario.n_alice + scenario.n_bob
    return n + 1 if kind is CertificateKind.NPA1 else n


def _setting_of(label):
    return None if label == IDENTITY else (label[0], label[1])


def structure_mask(scenario: Scenario, kind: CertificateKind) -> np.ndarray:
    """True where an entry is fixed by the behavior."""
    labels = outcome_labels(scenario, kind)
    n = len(labels)
    mask = np.ones((n, n), dtype=bool)
    for i, li in enumerate(labels):
        for j, lj in enumerate(labels):
            si, sj = _setting_of(li), _setting_of(lj)
            if si is not None and sj is not None and si[0] == sj[0] and si != sj:
                mask[i, j] = False
    return mask


@dataclass(frozen=True)
class PartialSymmetricMatrix:
    """Symmetric matrix with a mask of fixed entries.

    ``entries`` holds the fixed values and the current values of the free
    entries (an initial guess, or a completion).
    """

    entries: np.ndarray
    fixed_mask: np.ndarray
    labels: tuple
    kind: Optional[CertificateKind] = None
    behavior: Optional[Behavior] = None

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        mask = np.array(self.fixed_mask, dtype=bool)
        n = entries.shape[0]
        if entries.shape != (n, n) or mask.shape != (n, n) or len(self.labels) != n:
            raise ShapeError("entries, mask and labels must agree in size")
        if not np.array_equal(mask, mask.T):
            raise ShapeError("fixed mask must be symmetric")
        if not np.all(np.diag(mask)):
            raise ShapeError("diagonal entries must be fixed")
        scale = max(1.0, float(np.max(np.abs(entries)))) if n else 1.0
        if n and np.max(np.abs(entries - entries.T)) > 1e-12 * scale:
            raise ShapeError("entries must be symmetric")
        entries = (entries + entries.T) / 2.0
        entries.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "fixed_mask", mask)
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.behavior is not None and self.kind is not None:
            ref = _reference_entries(self.behavior, self.kind)
            if ref.shape != entries.shape:
                raise ShapeError("certificate size does not match its behavior")
            residual = np.max(np.abs(np.where(mask, entries - ref, 0.0)))
            if residual > FIXED_ENTRY_TOL:
                raise ConsistencyError(
                    f"fixed entries deviate from the behavior by {residual:.3g}"
                )

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def free_count(self) -> int:
        return int((~self.fixed_mask).sum() // 2)

    def with_entries(self, completion) -> "PartialSymmetricMatrix":
        """Same pattern and fixed values, free entries taken from ``completion``."""
        completion = np.asarray(completion, dtype=float)
        if completion.shape != self.entries.shape:
            raise ShapeError("completion size does not match the partial matrix")
        sym = (completion + completion.T) / 2.0
        entries = np.where(self.fixed_mask, self.entries, sym)
        return PartialSymmetricMatrix(entries, self.fixed_mask, self.labels, self.kind, self.behavior)


def _marginal_vector(behavior: Behavior) -> np.ndarray:
    m = marginals(behavior)
    return np.concatenate([m.p_a.ravel(), m.p_b.ravel()])


def _reference_entries(behavior: Behavior, kind: CertificateKind) -> np.ndarray:
    """Fixed values of the moment form, with free entries set to P(a)P(a')."""
    sc = behavior.scenario
    na = sc.n_alice
    p = _marginal_vector(behavior)
    n = p.size
    moment = np.outer(p, p)
    d = sc.outcomes
    # same-setting blocks: delta_{aa'} P(a)
    for block in range(sc.settings_a + sc.settings_b):
        sl = slice(block * d, (block + 1) * d)
        moment[sl, sl] = np.diag(p[sl])
    # cross block: P(a, b) (rows a = (X, a), columns b = (Y, b))
    cross = behavior.table.transpose(0, 2, 1, 3).reshape(na, sc.n_bob)
    moment[:na, na:] = cross
    moment[na:, :na] = cross.T
    if kind is CertificateKind.COVARIANCE:
        return moment - np.outer(p, p)
    full = np.empty((n + 1, n + 1))
    full[0, 0] = 1.0
    full[0, 1:] = full[1:, 0] = p
    full[1:, 1:] = moment
    return full


def _build(behavior: Behavior, kind: CertificateKind) -> PartialSymmetricMatrix:
    require_valid(behavior)
    sc = behavior.scenario
    return PartialSymmetricMatrix(
        entries=_reference_entries(behavior, kind),
        fixed_mask=structure_mask(sc, kind),
        labels=outcome_labels(sc, kind),
        kind=kind,
        behavior=behavior,
    )


def build_covariance_partial(behavior: Behavior) -> PartialSymmetricMatrix:
    """Covariance form: cross block P(a,b) - P(a)P(b), same-setting blocks
    delta P(a) - P(a)P(a'), free entries initialized to 0."""
    return _build(behavior, CertificateKind.COVARIANCE)


def build_npa1_partial(behavior: Behavior) -> PartialSymmetricMatrix:
    """Moment form with identity row (1, P_A, P_B); free entries start at P(a)P(a')."""
    return _build(behavior, CertificateKind.NPA1)


def build_partial(behavior: Behavior, kind: CertificateKind) -> PartialSymmetricMatrix:
    return _build(behavior, kind)


def schur_convert(completion: PartialSymmetricMatrix, direction: Direction) -> PartialSymmetricMatrix:
    """Move a completed certificate between the moment and covariance forms.

    Moment to covariance subtracts the outer product of the marginal vector
    (the identity row) from the outcome block; the reverse adds it back.
    """
    if direction is Direction.TO_COVARIANCE:
        if completion.kind is not CertificateKind.NPA1:
            raise ContractError("conversion to covariance form needs a moment-form input")
        g = completion.entries
        if abs(g[0, 0] - 1.0) > FIXED_ENTRY_TOL:
            raise ConsistencyError("identity entry of a moment certificate must be 1")
        p = g[0, 1:]
        if completion.behavior is not None:
            ref = _marginal_vector(completion.behavior)
            if np.max(np.abs(ref - p)) > FIXED_ENTRY_TOL:
                raise ConsistencyError("identity row disagrees with the behavior marginals")
        entries = g[1:, 1:] - np.outer(p, p)
        mask = completion.fixed_mask[1:, 1:]
        labels = completion.labels[1:]
        return PartialSymmetricMatrix(entries, mask, labels, CertificateKind.COVARIANCE, completion.behavior)
    if direction is Direction.TO_NPA1:
        if completion.kind is not CertificateKind.COVARIANCE:
            raise ContractError("conversion to moment form needs a covariance-form input")
        if completion.behavior is None:
            raise ContractError("covariance-to-moment conversion needs the behavior marginals")
        p = _marginal_vector(completion.behavior)
        n = p.size
        entries = np.empty((n + 1, n + 1))
        entries[0, 0] = 1.0
        entries[0, 1:] = entries[1:, 0] = p
        entries[1:, 1:] = completion.entries + np.outer(p, p)
        mask = np.ones((n + 1, n + 1), dtype=bool)
        mask[1:, 1:] = completion.fixed_mask
        labels = (IDENTITY,) + tuple(completion.labels)
        return PartialSymmetricMatrix(entries, mask, labels, CertificateKind.NPA1, completion.behavior)
    raise ContractError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class CompletionVerdict:
    valid: bool
    min_eigenvalue: float
    worst_fixed_residual: float


def verify_completion(partial: PartialSymmetricMatrix, completion, tolerance: float = 1e-8) -> CompletionVerdict:
    """Check a completion against the fixed entries and for positive semidefiniteness."""
    completion = np.asarray(completion, dtype=float)
    if completion.shape != partial.entries.shape:
        raise ShapeError("completion size does not match the partial matrix")
    residual = float(np.max(np.abs(np.where(partial.fixed_mask, completion - partial.entries, 0.0)), initial=0.0))
    sym = (completion + completion.T) / 2.0
    asym = float(np.max(np.abs(completion - completion.T), initial=0.0))
    lam = float(sym_eig(sym).values[0]) if sym.size else 0.0
    valid = residual <= tolerance and asym <= tolerance and lam >= -tolerance
    return CompletionVerdict(valid=valid, min_eigenvalue=lam, worst_fixed_residual=max(residual, asym))


def dump_certificate(cert: PartialSymmetricMatrix) -> str:
    """Plain-text dump: header, n rows of values, then the 0/1 fixed mask.

    When the certificate carries its behavior, a ``marginals`` line records
    the marginal vector so the covariance form can be converted back.
    """
    kind = cert.kind.value if cert.kind is not None else "partial"
    n = cert.size
    lines = [f"certificate {kind} {n}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in cert.entries]
    lines.append("mask")
    lines += [" ".join("1" if v else "0" for v in row) for row in cert.fixed_mask]
    if cert.behavior is not None:
        lines.append("marginals " + " ".join(repr(float(v)) for v in _marginal_vector(cert.behavior)))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CertificateDump:
    kind: Optional[CertificateKind]
    entries: np.ndarray
    mask: np.ndarray
    marginals: Optional[np.ndarray]


def parse_certificate(text: str) -> CertificateDump:
    rows = [
        (i, line.strip())
        for i, line in enumerate(text.split("\n"), start=1)
        if line.strip() and not line.strip().startswith("#")
    ]
    if not rows:
        raise FormatError("empty certificate file")
    lineno, head = rows[0]
    parts = head.split()
    if len(parts) != 3 or parts[0] != "certificate":
        raise FormatError("expected 'certificate <kind> <n>'", lineno)
    try:
        kind = None if parts[1] == "partial" else CertificateKind.parse(parts[1])
        n = int(parts[2])
    except ValueError as exc:
        raise FormatError(str(exc), lineno) from None

    def grid(start, cast):
        out = []
        for k in range(n):
            if start + k >= len(rows):
                raise FormatError(f"expected {n} matrix rows")
            ln, text_row = rows[start + k]
            try:
                vals = [cast(v) for v in text_row.split()]
            except ValueError:
                raise FormatError("unparsable matrix row", ln) from None
            if len(vals) != n:
                raise FormatError(f"expected {n} values, got {len(vals)}", ln)
            out.append(vals)
        return np.array(out)

    entries = grid(1, float)
    pos = 1 + n
    mask = np.ones((n, n), dtype=bool)
    marg = None
    if pos < len(rows) and rows[pos][1] == "mask":
        mask = grid(pos + 1, int).astype(bool)
        pos += 1 + n
    if pos < len(rows) and rows[pos][1].startswith("marginals"):
        try:
            marg = np.array([float(v) for v in rows[pos][1].split()[1:]])
        except ValueError:
            raise FormatError("unparsable marginals line", rows[pos][0]) from None
    return CertificateDump(kind, entries, mask, marg)


def convert_dump(dump: CertificateDump, target: CertificateKind) -> CertificateDump:
    """Schur conversion of a parsed dump; the covariance side needs its marginals line."""
    if dump.kind is target:
        return dump
    if dump.kind is None:
        raise ContractError("the dump does not declare its certificate kind")
    if target is CertificateKind.COVARIANCE:
        g = dump.entries
        if abs(g[0, 0] - 1.0) > FIXED_ENTRY_TOL:
            raise ConsistencyError("identity entry of a moment certificate must be 1")
        p = g[0, 1:].copy()
        return CertificateDump(target, g[1:, 1:] - np.outer(p, p), dump.mask[1:, 1:].copy(), p)
    if dump.marginals is None:
        raise ContractError("covariance-to-moment conversion needs the marginals line")
    p = dump.marginals
    n = p.size
    if dump.entries.shape != (n, n):
        raise ShapeError("marginals line does not match the certificate size")
    entries = np.empty((n + 1, n + 1))
    entries[0, 0] = 1.0
    entries[0, 1:] = entries[1:, 0] = p
    entries[1:, 1:] = dump.entries + np.outer(p, p)
    mask = np.ones((n + 1, n + 1), dtype=bool)
    mask[1:, 1:] = dump.mask
    return CertificateDump(target, entries, mask, None)


def format_dump(dump: CertificateDump) -> str:
    kind = dump.kind.value if dump.kind is not None else "partial"
    n = dump.entries.shape[0]
    lines = [f"certificate {kind} {n}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in dump.entries]
    lines.append("mask")
    lines += [" ".join("1" if v else "0" for v in row) for row in dump.mask]
    if dump.marginals is not None:
        lines.append("marginals " + " ".join(repr(float(v)) for v in dump.marginals))
    return "\n".join(lines) + "\n"
