"""Macroscopic intensity experiment: N pairs per trial, renormalized fluctuations.

Each trial draws the detector counts of N independent pairs for one
setting pair and records (count - N P(c)) / sqrt(N) for every outcome of
both parties. By the central limit theorem these fluctuations are
gaussian with covariance given by the behavior, which is the block of the
covariance-form certificate for that setting pair.

Trial t uses the stream ``PCG64(seed).jumped(t)``, so any subset of trials
can be regenerated (or run in parallel) without replaying the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from macrolocal.certificates import build_covariance_partial, outcome_labels, CertificateKind
from macrolocal.errors import ContractError, PreconditionError, ShapeError
from macrolocal.linalg import gram_vectors, sym_eig
from macrolocal.scenario import Behavior, require_valid

PSD_TOL = 1e-8


@dataclass(frozen=True)
class SimulationConfig:
    pairs_per_trial: int
    trials: int
    seed: int = 0
    setting_pair: tuple = (0, 0)  # 0-based (X, Y)

    def __post_init__(self):
        if self.pairs_per_trial < 1 or self.trials < 1:
            raise ContractError("pairs_per_trial and trials must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ContractError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class CovarianceBlock:
    matrix: np.ndarray
    labels: tuple
    standard_errors: Optional[np.ndarray] = None


@dataclass(frozen=True)
class IntensitySample:
    values: np.ndarray  # (trials, outcomes of Alice's X then Bob's Y)
    labels: tuple
    setting_pair: tuple
    config: Optional[SimulationConfig] = field(default=None, compare=False)

    def to_csv(self) -> str:
        return _samples_csv(self.values, self.labels, self.setting_pair)


@dataclass(frozen=True)
class GlobalSample:
    values: np.ndarray  # (trials, all outcomes of all settings)
    labels: tuple

    def to_csv(self) -> str:
        return _samples_csv(self.values, self.labels, None)


def _label_text(label) -> str:
    party, setting, outcome = label
    return f"{party}:{setting + 1}:{outcome}"


def _samples_csv(values, labels, setting_pair) -> str:
    pair = "all" if setting_pair is None else f"{setting_pair[0] + 1}:{setting_pair[1] + 1}"
    text = [_label_text(lbl) for lbl in labels]
    lines = ["trial,setting_pair,outcome_label,value"]
    for t, row in enumerate(values):
        for name, v in zip(text, row):
            lines.append(f"{t + 1},{pair},{name},{float(v)!r}")
    return "\n".join(lines) + "\n"


def _pair_labels(behavior: Behavior, x: int, y: int) -> tuple:
    d = behavior.scenario.outcomes
    return tuple([("A", x, a) for a in range(d)] + [("B", y, b) for b in range(d)])


def _check_pair(behavior: Behavior, x: int, y: int) -> None:
    sc = behavior.scenario
    if not (0 <= x < sc.settings_a and 0 <= y < sc.settings_b):
        raise ShapeError(f"setting pair ({x + 1}, {y + 1}) outside the scenario")


def analytic_covariance(behavior: Behavior, x: int, y: int) -> CovarianceBlock:
    """Covariance of one pair's centered indicators (Alice's outcomes, then Bob's)."""
    _check_pair(behavior, x, y)
    joint = behavior.table[x, y]
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    d = len(pa)
    cov = np.empty((2 * d, 2 * d))
    cov[:d, :d] = np.diag(pa) - np.outer(pa, pa)
    cov[d:, d:] = np.diag(pb) - np.outer(pb, pb)
    cov[:d, d:] = joint - np.outer(pa, pb)
    cov[d:, :d] = cov[:d, d:].T
    return CovarianceBlock(cov, _pair_labels(behavior, x, y))


def covariance_submatrix(behavior: Behavior, x: int, y: int) -> np.ndarray:
    """The (X, Y) rows and columns of the covariance-form certificate."""
    partial = build_covariance_partial(behavior)
    labels = partial.labels
    wanted = _pair_labels(behavior, x, y)
    idx = [labels.index(lbl) for lbl in wanted]
    return partial.entries[np.ix_(idx, idx)]


def trial_generator(seed: int, trial: int, base: Optional[np.random.PCG64] = None) -> np.random.Generator:
    """Stream of one trial: the seeded PCG64 advanced by ``trial`` jumps."""
    base = base if base is not None else np.random.PCG64(seed)
    return np.random.Generator(base.jumped(trial))


def simulate_intensities(behavior: Behavior, config: SimulationConfig) -> IntensitySample:
    require_valid(behavior)
    x, y = config.setting_pair
    _check_pair(behavior, x, y)
    joint = np.clip(behavior.table[x, y], 0.0, None)
    probs = (joint / joint.sum()).ravel()
    d = behavior.scenario.outcomes
    n = config.pairs_per_trial
    expected = n * np.concatenate([joint.sum(axis=1), joint.sum(axis=0)])
    base = np.random.PCG64(config.seed)
    counts = np.empty((config.trials, d * d), dtype=np.int64)
    for t in range(config.trials):
        counts[t] = trial_generator(config.seed, t, base).multinomial(n, probs)
    counts = counts.reshape(config.trials, d, d)
    # subtracting exact N P(c) keeps the per-party sums at N - N = 0
    totals = np.concatenate([counts.sum(axis=2), counts.sum(axis=1)], axis=1)
    values = (totals - expected) / math.sqrt(n)
    return IntensitySample(values, _pair_labels(behavior, x, y), (x, y), config)


def empirical_covariance(sample) -> CovarianceBlock:
    """Unbiased sample covariance with per-entry standard errors.

    The standard error of entry (c, c') is the sample standard deviation
    of the centered products (z_c - mean_c)(z_c' - mean_c') over sqrt(T).
    """
    z = np.asarray(sample.values, dtype=float)
    t = z.shape[0]
    if t < 2:
        raise ContractError("the sample covariance needs at least two trials")
    centered = z - z.mean(axis=0)
    cov = centered.T @ centered / (t - 1)
    products = centered[:, :, None] * centered[:, None, :]
    se = products.std(axis=0, ddof=1) / math.sqrt(t)
    return CovarianceBlock(cov, tuple(sample.labels), se)


def _polar_normals(rng: np.random.Generator, count: int) -> np.ndarray:
    """Standard normals by the Marsaglia polar method."""
    out = np.empty(count)
    filled = 0
    while filled < count:
        need = count - filled
        u = rng.random((need // 2 + 8, 2)) * 2.0 - 1.0
        s = np.sum(u * u, axis=1)
        ok = (s > 0.0) & (s < 1.0)
        u, s = u[ok], s[ok]
        factor = np.sqrt(-2.0 * np.log(s) / s)
        pairs = (u * factor[:, None]).ravel()[:need]
        out[filled : filled + pairs.size] = pairs
        filled += pairs.size
    return out


def gaussian_global_sample(completion, trials: int, seed: int = 0, labels=None) -> GlobalSample:
    """Zero-mean gaussian samples with covariance ``completion`` (eigen square root)."""
    gamma = np.asarray(completion, dtype=float)
    if trials < 1:
        raise ContractError("trials must be at least 1")
    lam = sym_eig(gamma).values[0] if gamma.size else 0.0
    if lam < -PSD_TOL:
        raise PreconditionError(f"covariance is not PSD (min eigenvalue {lam:.3g})")
    root = gram_vectors(gamma)  # root @ root.T == gamma
    n = gamma.shape[0]
    g = _polar_normals(np.random.Generator(np.random.PCG64(seed)), trials * n).reshape(trials, n)
    if labels is None:
        labels = tuple(range(n))
    return GlobalSample(g @ root.T, tuple(labels))


def global_covariance_labels(behavior: Behavior) -> tuple:
    return tuple(outcome_labels(behavior.scenario, CertificateKind.COVARIANCE))


def marginal_block(sample: GlobalSample, x: int, y: int, outcomes: int):
    """Restrict a global sample to the (X, Y) outcomes, in pair-label order."""
    wanted = [("A", x, a) for a in range(outcomes)] + [("B", y, b) for b in range(outcomes)]
    idx = [sample.labels.index(lbl) for lbl in wanted]
    return IntensitySample(sample.values[:, idx], tuple(wanted), (x, y))


def ks_pvalue(values, sigma: float, step: float = 0.0) -> float:
    """Kolmogorov-Smirnov p-value of ``values`` against N(0, sigma^2).

    With ``step > 0`` the values live on a lattice of that spacing (counts
    over sqrt(N)). The reference is then the continuity-corrected normal,
    compared just below and at every support point, so the lattice jumps
    are not read as misfit; the continuous-case p-value is conservative
    for such data.
    """
    v = np.asarray(values, dtype=float)
    if step <= 0.0:
        return float(stats.kstest(v, "norm", args=(0.0, sigma)).pvalue)
    origin = v.min()
    k = np.rint((v - origin) / step).astype(np.int64)
    support, counts = np.unique(k, return_counts=True)
    t = v.size
    above = np.cumsum(counts) / t  # ECDF at each support point
    below = above - counts / t  # ECDF just below it
    points = origin + support * step
    ref_at = stats.norm.cdf(points + step / 2.0, scale=sigma)
    ref_below = stats.norm.cdf(points - step / 2.0, scale=sigma)
    d = max(float(np.max(np.abs(above - ref_at))), float(np.max(np.abs(below - ref_below))))
    return float(stats.kstwo.sf(d, t))


@dataclass(frozen=True)
class ConvergenceReport:
    max_abs_error: float
    max_z_score: float  # |empirical - analytic| / standard error, worst entry
    within_4se: bool
    ks_pvalues: tuple  # one per outcome with positive variance


def convergence_report(sample, analytic: CovarianceBlock) -> ConvergenceReport:
    """Compare a sample with the analytic covariance: entry z-scores and KS probes."""
    emp = empirical_covariance(sample)
    diff = np.abs(emp.matrix - analytic.matrix)
    se = emp.standard_errors
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 1e-12, np.inf, 0.0))
    config = getattr(sample, "config", None)
    step = 1.0 / math.sqrt(config.pairs_per_trial) if config is not None else 0.0
    values = np.asarray(sample.values)
    pvals = []
    for c in range(values.shape[1]):
        var = analytic.matrix[c, c]
        if var > 0:
            pvals.append(ks_pvalue(values[:, c], math.sqrt(var), step))
    return ConvergenceReport(float(diff.max()), float(z.max()), bool(np.all(z <= 4.0)), tuple(pvals))
