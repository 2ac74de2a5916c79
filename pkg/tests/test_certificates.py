import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrolocal.certificates import (
    CertificateKind,
    Direction,
    build_covariance_partial,
    build_npa1_partial,
    certificate_size,
    convert_dump,
    dump_certificate,
    format_dump,
    parse_certificate,
    schur_convert,
    verify_completion,
)
from macrolocal.errors import ConsistencyError, FormatError, InvalidBehaviorError
from macrolocal.linalg import min_eigenvalue
from macrolocal.macroscale import covariance_submatrix, analytic_covariance
from macrolocal.scenario import CHSH_SCENARIO, Behavior, Scenario, deterministic_behavior, pr_box, uniform_behavior

from helpers import random_nosignaling


def _cross(partial, sc):
    na = sc.n_alice
    return partial.entries[:na, na:]


def test_sizes():
    sc = Scenario(2, 3, 3)
    assert certificate_size(sc, CertificateKind.COVARIANCE) == 15
    assert certificate_size(sc, CertificateKind.NPA1) == 16
    assert build_npa1_partial(uniform_behavior(sc)).size == 16


def test_uniform_covariance_entries():
    g = build_covariance_partial(uniform_behavior(CHSH_SCENARIO))
    assert np.allclose(_cross(g, CHSH_SCENARIO), 0.0)
    assert np.allclose(np.diag(g.entries), 0.25)
    assert g.entries[0, 1] == -0.25
    assert not g.fixed_mask[0, 2] and g.entries[0, 2] == 0.0
    assert g.free_count == 8


def test_pr_covariance_entries():
    g = build_covariance_partial(pr_box())
    cross = _cross(g, CHSH_SCENARIO)
    assert np.allclose(np.abs(cross), 0.25)
    # (X, a) row against (Y, b) column: +1/4 when a xor b = XY (0-based)
    for x in range(2):
        for a in range(2):
            for y in range(2):
                for b in range(2):
                    sign = 1 if (a ^ b) == (x * y) else -1
                    assert cross[2 * x + a, 2 * y + b] == sign * 0.25
    assert np.allclose(np.diag(g.entries), 0.25)


def test_deterministic_covariance_is_zero():
    g = build_covariance_partial(deterministic_behavior(CHSH_SCENARIO, [0, 1], [1, 0]))
    assert np.all(g.entries[g.fixed_mask] == 0.0)


def test_npa1_examples():
    g = build_npa1_partial(uniform_behavior(CHSH_SCENARIO))
    assert np.allclose(g.entries[0], [1] + [0.5] * 8)
    assert np.allclose(g.entries[1:5, 5:], 0.25)
    g = build_npa1_partial(deterministic_behavior(CHSH_SCENARIO, [0, 0], [0, 0]))
    assert np.array_equal(g.entries[0], [1, 1, 0, 1, 0, 1, 0, 1, 0])
    cross = g.entries[1:5, 5:]
    for x in range(2):
        for y in range(2):
            assert cross[2 * x:2 * x + 2, 2 * y:2 * y + 2].sum() == 1.0
    g = build_npa1_partial(pr_box())
    assert set(np.unique(g.entries[1:5, 5:])) <= {0.0, 0.5}


def test_invalid_behavior_propagates():
    t = np.array(uniform_behavior(CHSH_SCENARIO).table)
    t[0, 0, 0, 0] += 0.1
    with pytest.raises(InvalidBehaviorError):
        build_covariance_partial(Behavior(CHSH_SCENARIO, t))


def test_schur_deterministic_gives_zero():
    b = deterministic_behavior(CHSH_SCENARIO, [1, 0], [0, 0])
    g = build_npa1_partial(b)
    p = g.entries[0, 1:]
    full = g.with_entries(np.outer(np.r_[1, p], np.r_[1, p]))
    cov = schur_convert(full, Direction.TO_COVARIANCE)
    assert np.allclose(cov.entries, 0.0)


def test_schur_uniform_free_entries_vanish():
    cov = schur_convert(build_npa1_partial(uniform_behavior(CHSH_SCENARIO)), Direction.TO_COVARIANCE)
    assert np.all(cov.entries[~cov.fixed_mask] == 0.0)


def test_schur_round_trip():
    rng = np.random.default_rng(5)
    b = random_nosignaling(rng)
    g = build_npa1_partial(b)
    back = schur_convert(schur_convert(g, Direction.TO_COVARIANCE), Direction.TO_NPA1)
    assert np.allclose(back.entries, g.entries, atol=1e-15)


def test_schur_rejects_bad_identity():
    g = build_npa1_partial(uniform_behavior(CHSH_SCENARIO))
    bad = g.entries.copy()
    bad[0, 0] = 0.5
    from macrolocal.certificates import PartialSymmetricMatrix

    with pytest.raises(ConsistencyError):
        schur_convert(PartialSymmetricMatrix(bad, g.fixed_mask, g.labels, CertificateKind.NPA1), Direction.TO_COVARIANCE)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_schur_equivalence_on_explicit_completions(seed):
    rng = np.random.default_rng(seed)
    b = random_nosignaling(rng)
    g = build_npa1_partial(b)
    free = rng.normal(scale=0.3, size=g.entries.shape)
    full = g.with_entries(np.where(g.fixed_mask, 0.0, free + free.T))
    cov = schur_convert(full, Direction.TO_COVARIANCE)
    lg, lc = min_eigenvalue(full.entries), min_eigenvalue(cov.entries)
    # the two spectra can differ in magnitude, but never by sign beyond round-off
    if abs(lg) > 1e-9 and abs(lc) > 1e-9:
        assert (lg >= 0) == (lc >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_covariance_blocks_match_macroscale(seed):
    rng = np.random.default_rng(seed)
    b = random_nosignaling(rng)
    g = build_covariance_partial(b)
    assert np.all(np.diag(g.entries) >= 0) and np.all(np.diag(g.entries) <= 0.25 + 1e-15)
    for x in range(2):
        for y in range(2):
            block = analytic_covariance(b, x, y).matrix
            assert np.max(np.abs(block - covariance_submatrix(b, x, y))) <= 1e-12


def test_verify_completion_examples():
    g = build_covariance_partial(deterministic_behavior(CHSH_SCENARIO, [0, 0], [1, 1]))
    v = verify_completion(g, np.zeros((8, 8)))
    assert v.valid and v.min_eigenvalue == 0.0
    u = build_covariance_partial(uniform_behavior(CHSH_SCENARIO))
    bad = u.entries.copy()
    bad[0, 4] += 0.1
    bad[4, 0] += 0.1
    v = verify_completion(u, bad)
    assert not v.valid and v.worst_fixed_residual >= 0.1 - 1e-15
    pr = build_covariance_partial(pr_box())
    v = verify_completion(pr, pr.entries)
    assert not v.valid and v.min_eigenvalue < 0


def test_dump_round_trip_and_convert():
    rng = np.random.default_rng(2)
    b = random_nosignaling(rng)
    g = build_npa1_partial(b)
    dump = parse_certificate(dump_certificate(g))
    assert dump.kind is CertificateKind.NPA1
    assert np.array_equal(dump.entries, g.entries)
    assert np.array_equal(dump.mask, g.fixed_mask)
    cov = convert_dump(dump, CertificateKind.COVARIANCE)
    ref = schur_convert(g, Direction.TO_COVARIANCE)
    assert np.allclose(cov.entries, ref.entries, atol=1e-15)
    again = convert_dump(parse_certificate(format_dump(cov)), CertificateKind.NPA1)
    assert np.allclose(again.entries, g.entries, atol=1e-15)
    assert np.array_equal(again.mask, g.fixed_mask)


def test_dump_format_errors():
    with pytest.raises(FormatError):
        parse_certificate("")
    with pytest.raises(FormatError):
        parse_certificate("certificate npa1 2\n1 0\n")
    with pytest.raises(FormatError, match="line 2"):
        parse_certificate("certificate npa1 2\n1 x\n0 1\n")
