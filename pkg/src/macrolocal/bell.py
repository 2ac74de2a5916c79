"""Linear Bell functionals: CHSH, CGLMP, evaluation and bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from macrolocal.conic import BisectionResult, SolverConfig, max_linear_over_q1
from macrolocal.errors import DomainError, EnumerationTooLargeError, ShapeError
from macrolocal.scenario import (
    CHSH_SCENARIO,
    ENUMERATION_CAP,
    Behavior,
    Scenario,
    deterministic_behavior,
    format_table,
    parse_table,
    vertex_count,
)

TIE_RTOL = 1e-12
HEADER = "functional"
ENTRY = "c"


@dataclass(frozen=True)
class BellFunctional:
    scenario: Scenario
    coefficients: np.ndarray
    name: Optional[str] = None

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.shape != self.scenario.shape:
            raise ShapeError(f"coefficients of shape {c.shape}, scenario needs {self.scenario.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def scaled(self, factor: float) -> "BellFunctional":
        return BellFunctional(self.scenario, factor * self.coefficients, self.name)


@dataclass(frozen=True)
class LocalBound:
    value: float
    argmax_vertex: Behavior


def chsh() -> BellFunctional:
    """E11 + E12 + E21 - E22 with the +-1 parity observables."""
    o = np.array([1.0, -1.0])
    sign = np.array([[1.0, 1.0], [1.0, -1.0]])
    coeffs = sign[:, :, None, None] * np.outer(o, o)[None, None]
    return BellFunctional(CHSH_SCENARIO, coeffs, "chsh")


def cglmp(d: int) -> BellFunctional:
    if int(d) != d or d < 2:
        raise DomainError(f"CGLMP needs d >= 2, got {d}")
    d = int(d)
    c = np.zeros((2, 2, d, d))
    a = np.arange(d)[:, None]
    b = np.arange(d)[None, :]

    def add(x, y, mask, weight):
        c[x, y] += weight * mask

    for k in range(d // 2):
        w = 1.0 - 2.0 * k / (d - 1)
        # P(A1 = B1 + k), P(B1 = A2 + k + 1), P(A2 = B2 + k), P(B2 = A1 + k)
        add(0, 0, (a - b - k) % d == 0, w)
        add(1, 0, (b - a - k - 1) % d == 0, w)
        add(1, 1, (a - b - k) % d == 0, w)
        add(0, 1, (b - a - k) % d == 0, w)
        # P(A1 = B1 - k - 1), P(B1 = A2 - k), P(A2 = B2 - k - 1), P(B2 = A1 - k - 1)
        add(0, 0, (a - b + k + 1) % d == 0, -w)
        add(1, 0, (b - a + k) % d == 0, -w)
        add(1, 1, (a - b + k + 1) % d == 0, -w)
        add(0, 1, (b - a + k + 1) % d == 0, -w)
    return BellFunctional(Scenario(2, 2, d), c, f"cglmp:{d}")


def zero_functional(scenario: Scenario) -> BellFunctional:
    return BellFunctional(scenario, np.zeros(scenario.shape), "zero")


def evaluate(functional: BellFunctional, behavior: Behavior) -> float:
    if functional.scenario != behavior.scenario:
        raise ShapeError("functional and behavior use different scenarios")
    return float(np.sum(functional.coefficients * behavior.table))


def local_bound(functional: BellFunctional, cap: int = ENUMERATION_CAP) -> LocalBound:
    """Maximum over deterministic vertices; the first maximizer in lexicographic order wins."""
    sc = functional.scenario
    count = vertex_count(sc)
    if count > cap:
        raise EnumerationTooLargeError(f"{count} vertices exceed the cap of {cap}")
    sa, sb, d = sc.settings_a, sc.settings_b, sc.outcomes
    axes = sa + sb
    values = np.zeros((d,) * axes)
    for x in range(sa):
        for y in range(sb):
            shape = [1] * axes
            shape[x], shape[sa + y] = d, d
            values = values + functional.coefficients[x, y].reshape(shape)
    flat = values.ravel()
    # vertices within round-off of the maximum count as tied: take the first
    top = float(flat.max())
    best = int(np.argmax(flat >= top - TIE_RTOL * max(1.0, abs(top))))
    fg = [int(v) for v in np.unravel_index(best, values.shape)]
    # exact re-summation so that rational functionals give exact bounds
    exact = math.fsum(
        float(functional.coefficients[x, y, fg[x], fg[sa + y]]) for x in range(sa) for y in range(sb)
    )
    return LocalBound(exact, deterministic_behavior(sc, fg[:sa], fg[sa:]))


def q1_bound(
    functional: BellFunctional, gap: float = 1e-4, config: SolverConfig | None = None, equalities=()
) -> BisectionResult:
    return max_linear_over_q1(functional.scenario, functional, gap=gap, config=config, equalities=equalities)


def parse_functional(text, name: Optional[str] = None) -> BellFunctional:
    scenario, table = parse_table(text, HEADER, ENTRY)
    return BellFunctional(scenario, table, name)


def serialize_functional(functional: BellFunctional) -> bytes:
    return format_table(functional.scenario, functional.coefficients, HEADER, ENTRY)


def named_functional(name: str) -> BellFunctional:
    """``chsh`` or ``cglmp:<d>``."""
    key = name.strip().lower()
    if key == "chsh":
        return chsh()
    if key.startswith("cglmp:"):
        try:
            d = int(key.split(":", 1)[1])
        except ValueError:
            raise DomainError(f"bad CGLMP dimension in {name!r}") from None
        return cglmp(d)
    raise DomainError(f"unknown functional {name!r}")
