import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrolocal.bell import (
    BellFunctional,
    cglmp,
    chsh,
    evaluate,
    local_bound,
    named_functional,
    parse_functional,
    q1_bound,
    serialize_functional,
    zero_functional,
)
from macrolocal.errors import DomainError, FormatError, ShapeError
from macrolocal.scenario import (
    CHSH_OPTIMAL_ANGLES,
    CHSH_SCENARIO,
    Scenario,
    deterministic_vertices,
    pr_box,
    singlet_behavior,
    uniform_behavior,
)

from helpers import random_nosignaling
from oracles import TSIRELSON


def test_chsh_coefficients():
    c = chsh().coefficients
    assert np.array_equal(c[0, 0], [[1, -1], [-1, 1]])
    assert np.array_equal(c[1, 1], [[-1, 1], [1, -1]])


def test_chsh_values():
    assert evaluate(chsh(), pr_box()) == 4.0
    assert evaluate(chsh(), uniform_behavior(CHSH_SCENARIO)) == 0.0
    assert abs(evaluate(chsh(), singlet_behavior(*CHSH_OPTIMAL_ANGLES)) - 2.828427) < 1e-6
    assert abs(evaluate(chsh(), singlet_behavior(*CHSH_OPTIMAL_ANGLES)) - TSIRELSON) < 1e-9


def test_chsh_on_vertices():
    values = {evaluate(chsh(), v) for v in deterministic_vertices(CHSH_SCENARIO)}
    assert values <= {-2.0, 0.0, 2.0}


def test_zero_functional_everywhere():
    z = zero_functional(CHSH_SCENARIO)
    assert evaluate(z, pr_box()) == 0.0
    assert local_bound(z).value == 0.0


def test_local_bounds():
    lb = local_bound(chsh())
    assert lb.value == 2.0
    assert evaluate(chsh(), lb.argmax_vertex) == 2.0
    # the first maximizer: all outcomes 0
    assert lb.argmax_vertex.table[0, 0, 0, 0] == 1.0


@pytest.mark.parametrize("d", range(2, 9))
def test_cglmp_local_bound_is_two(d):
    assert local_bound(cglmp(d)).value == 2.0


@pytest.mark.parametrize("d", [2, 3, 5])
def test_cglmp_uniform_is_zero(d):
    assert abs(evaluate(cglmp(d), uniform_behavior(Scenario(2, 2, d)))) < 1e-15


def test_cglmp2_is_chsh_like():
    # same value as CHSH on every local vertex up to relabeling: both have local bound 2 and PR value 4
    f = cglmp(2)
    assert local_bound(f).value == 2.0
    assert max(evaluate(f, v) for v in deterministic_vertices(CHSH_SCENARIO)) == 2.0
    c = f.coefficients
    # correlator form: each setting pair weighs +-(P(a=b) - P(a!=b))
    for x in range(2):
        for y in range(2):
            assert abs(c[x, y]).sum() == 4.0 and c[x, y].sum() == 0.0


def test_cglmp_domain():
    with pytest.raises(DomainError):
        cglmp(1)
    with pytest.raises(DomainError):
        named_functional("cglmp:x")
    assert named_functional("CGLMP:3").name == "cglmp:3"


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 50))
def test_local_bound_scaling(factor):
    f = cglmp(3)
    base, scaled = local_bound(f), local_bound(f.scaled(factor))
    assert math.isclose(scaled.value, factor * base.value, rel_tol=1e-12)
    assert np.array_equal(scaled.argmax_vertex.table, base.argmax_vertex.table)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_local_bound_dominates_vertices(seed):
    rng = np.random.default_rng(seed)
    f = BellFunctional(CHSH_SCENARIO, rng.normal(size=(2, 2, 2, 2)))
    lb = local_bound(f)
    brute = max(evaluate(f, v) for v in deterministic_vertices(CHSH_SCENARIO))
    assert math.isclose(lb.value, brute, rel_tol=1e-12, abs_tol=1e-12)
    b = random_nosignaling(rng)
    g = BellFunctional(CHSH_SCENARIO, rng.normal(size=(2, 2, 2, 2)))
    both = BellFunctional(CHSH_SCENARIO, f.coefficients + 2 * g.coefficients)
    assert math.isclose(evaluate(both, b), evaluate(f, b) + 2 * evaluate(g, b), abs_tol=1e-12)


def test_q1_chsh_bound_and_quantum_inclusion():
    res = q1_bound(chsh(), gap=1e-4)
    assert res.lower - 1e-4 <= TSIRELSON <= res.upper
    assert local_bound(chsh()).value <= res.lower + 1e-4
    assert res.upper >= evaluate(chsh(), singlet_behavior(*CHSH_OPTIMAL_ANGLES))


def test_q1_bound_scaling():
    a = q1_bound(chsh(), gap=1e-3)
    b = q1_bound(chsh().scaled(3.0), gap=3e-3)
    assert b.lower <= 3 * a.upper + 1e-6 and 3 * a.lower <= b.upper + 1e-6


def test_q1_zero():
    res = q1_bound(zero_functional(CHSH_SCENARIO))
    assert res.lower == 0.0 == res.upper


def test_functional_format_round_trip():
    f = cglmp(3)
    text = serialize_functional(f)
    assert text.startswith(b"functional 2 2 3\n")
    g = parse_functional(text)
    assert np.array_equal(g.coefficients, f.coefficients)
    with pytest.raises(FormatError):
        parse_functional(text.replace(b"functional", b"scenario"))


def test_functional_shape_check():
    with pytest.raises(ShapeError):
        BellFunctional(CHSH_SCENARIO, np.zeros((2, 2, 3, 3)))
    with pytest.raises(ShapeError):
        evaluate(cglmp(3), pr_box())


def test_cglmp_gap_over_quantum_floor_grows_with_d():
    from oracles import CGLMP_Q1, CGLMP_QUANTUM_FLOOR

    gaps = [CGLMP_Q1[d] - CGLMP_QUANTUM_FLOOR[d] for d in range(2, 7)]
    assert all(g >= 0 for g in gaps)
    assert all(b >= a for a, b in zip(gaps, gaps[1:]))
    # d = 6 is the one reference value not re-derived in the acceptance scan
    res = q1_bound(cglmp(6), gap=1e-4)
    assert res.lower - 1e-6 <= CGLMP_Q1[6] <= res.upper + 1e-6
    assert res.lower > CGLMP_QUANTUM_FLOOR[6]
