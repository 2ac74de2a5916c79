"""PSD completion feasibility and linear optimization over Q1.

The engine runs Dykstra's alternating projections between a product cone
(PSD blocks times a nonnegative orthant) and an affine subspace. Both
projections are closed form. Feasibility is declared when the cone point
and the affine point are within ``feas_tol``; infeasibility when the
inter-set distance settles at a value above ``10 * feas_tol``. At each
stall check a Farkas-type separating matrix is built from the current
displacement; when it passes, the infeasible verdict is flagged as
certified (up to floating point).

Thin feasible sets make alternating projections crawl. With the default
``method="auto"`` a run still undecided after ``fallback_after``
iterations hands over to a log-det barrier method that maximizes the
smallest cone eigenvalue over the affine set; its duality bound decides
infeasibility.

Certificates built from behaviors always have forced null vectors (the
outcomes of one setting sum to the identity row). Completion therefore
first restricts to the orthogonal complement of every null vector of a
fully fixed principal block, which any PSD completion must annihilate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import networkx as nx
import numpy as np

from macrolocal.certificates import CertificateKind, PartialSymmetricMatrix, build_npa1_partial, build_partial
from macrolocal.errors import ContractError, ShapeError
from macrolocal.linalg import EigenDecomposition, psd_project, sym_eig
from macrolocal.scenario import Behavior, Scenario, uniform_behavior

__all__ = [
    "BisectionResult",
    "CompletionResult",
    "CompletionStatus",
    "EigenDecomposition",
    "SolverConfig",
    "complete_to_psd",
    "max_linear_over_q1",
    "membership_q1",
    "psd_project",
    "sym_eig",
]

# null vectors of fixed blocks: structural zeros come out at round-off level
KERNEL_TOL = 1e-12
# rows made dependent by the face restriction leave ~1e-12 residue
RANK_RTOL = 1e-9


class CompletionStatus(enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class SolverConfig:
    feas_tol: float = 1e-8
    max_iter: int = 200_000
    stall_window: int = 500
    stall_rtol: float = 1e-10
    method: str = "auto"  # "auto", "dykstra" or "barrier"
    fallback_after: int = 5_000
    diagnostics: Optional[TextIO] = field(default=None, compare=False)
    diagnostics_every: int = 100

    def __post_init__(self):
        if self.method not in ("auto", "dykstra", "barrier"):
            raise ContractError(f"unknown solver method {self.method!r}")
        if self.feas_tol <= 0 or self.max_iter < 1 or self.stall_window < 1:
            raise ContractError("solver tolerances and budgets must be positive")


@dataclass(frozen=True)
class CompletionResult:
    status: CompletionStatus
    completion: Optional[np.ndarray]
    psd_margin: float
    separation_lower_bound: float
    iterations: int = 0
    fixed_residual: float = 0.0
    certified: bool = False
    method: str = "dykstra"

    @property
    def feasible(self) -> bool:
        return self.status is CompletionStatus.FEASIBLE


# ---------------------------------------------------------------------------
# symmetric-matrix vectorization (svec keeps the Frobenius inner product)

_SQRT2 = math.sqrt(2.0)


def _svec_index(r: int):
    iu = np.triu_indices(r)
    weights = np.where(iu[0] == iu[1], 1.0, _SQRT2)
    return iu, weights


def svec(mat: np.ndarray) -> np.ndarray:
    iu, w = _svec_index(mat.shape[0])
    return mat[iu] * w


def smat(vec: np.ndarray, r: int) -> np.ndarray:
    iu, w = _svec_index(r)
    out = np.zeros((r, r))
    out[iu] = vec / w
    return out + np.triu(out, 1).T


def _svec_len(r: int) -> int:
    return r * (r + 1) // 2


def _svec_row(r: int, coeff: dict) -> np.ndarray:
    """Row c with c . svec(Y) = sum of coeff[(i, j)] * Y_ij over the given keys."""
    iu, w = _svec_index(r)
    row = np.zeros(len(w))
    pos = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(*iu))}
    for (i, j), value in coeff.items():
        k = pos[(min(i, j), max(i, j))]
        # svec stores sqrt2 * Y_ij; a key (i, j) with i != j counts Y_ij once
        row[k] += value / w[k]
    return row


# ---------------------------------------------------------------------------
# generic engine


@dataclass
class _Outcome:
    status: CompletionStatus
    point: np.ndarray  # affine-feasible iterate
    margin: float  # smallest cone eigenvalue / orthant entry at ``point``
    iterations: int
    certified: bool
    separation: float
    method: str


class _ConicProblem:
    """Find u in K with A u = b, K = PSD blocks x nonnegative orthant."""

    def __init__(self, psd_blocks, orthant, a_mat, b_vec, cone_bounds=None):
        # psd_blocks: list of (offset, r); orthant: (start, stop) or None
        self.psd_blocks = list(psd_blocks)
        self.orthant = orthant if orthant is not None and orthant[1] > orthant[0] else None
        self.n = a_mat.shape[1]
        # cone_bounds: (trace bound per PSD block, bound per orthant entry)
        # over the feasible set; used to validate separating certificates
        self.cone_bounds = cone_bounds
        if a_mat.shape[0]:
            u, sv, wt = np.linalg.svd(a_mat, full_matrices=True)
            k = int(np.sum(sv > RANK_RTOL * sv[0])) if sv.size and sv[0] > 0 else 0
            self.row_basis = wt[:k].T
            self.null_basis = wt[k:].T
            self.particular = self.row_basis @ ((u[:, :k].T @ b_vec) / sv[:k])
            self.consistency = float(np.linalg.norm(a_mat @ self.particular - b_vec))
        else:
            self.row_basis = np.zeros((self.n, 0))
            self.null_basis = np.eye(self.n)
            self.particular = np.zeros(self.n)
            self.consistency = 0.0
        self._iu = {r: _svec_index(r) for _, r in self.psd_blocks}
        self.barrier_degree = sum(r for _, r in self.psd_blocks)
        if self.orthant is not None:
            self.barrier_degree += self.orthant[1] - self.orthant[0]

    # -- projections --------------------------------------------------------

    def project_affine(self, u: np.ndarray) -> np.ndarray:
        rb = self.row_basis
        return u - rb @ (rb.T @ u) + self.particular

    def block(self, u, off, r):
        iu, w = self._iu[r]
        m = np.zeros((r, r))
        m[iu] = u[off : off + len(w)] / w
        return m + np.triu(m, 1).T

    def project_cone(self, u: np.ndarray) -> np.ndarray:
        out = u.copy()
        for off, r in self.psd_blocks:
            vals, vecs = np.linalg.eigh(self.block(u, off, r))
            if vals[0] >= 0.0:
                continue
            m = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
            iu, w = self._iu[r]
            out[off : off + len(w)] = m[iu] * w
        if self.orthant is not None:
            s, e = self.orthant
            np.clip(out[s:e], 0.0, None, out=out[s:e])
        return out

    def margin(self, u: np.ndarray) -> float:
        """Smallest eigenvalue over PSD blocks and smallest orthant entry."""
        worst = math.inf
        for off, r in self.psd_blocks:
            worst = min(worst, float(np.linalg.eigvalsh(self.block(u, off, r))[0]))
        if self.orthant is not None:
            s, e = self.orthant
            worst = min(worst, float(np.min(u[s:e])))
        return worst

    def separation_certificate(self, x: np.ndarray):
        """Check the displacement at affine point ``x`` as an infeasibility proof.

        ``z = P_K(x) - x`` restricted to the row space of A is constant on the
        affine set. If that constant is negative even after charging z's cone
        violation against the feasible-set bounds, K misses the affine set.
        Returns (certified, distance bound).
        """
        if self.cone_bounds is None:
            return False, 0.0
        z = self.project_cone(x) - x
        z = self.row_basis @ (self.row_basis.T @ z)
        norm = float(np.linalg.norm(z))
        if norm == 0.0:
            return False, 0.0
        beta = float(z @ self.particular)
        slack = 0.0
        trace_bounds, orthant_bounds = self.cone_bounds
        for (off, r), bound in zip(self.psd_blocks, trace_bounds):
            lam = np.linalg.eigvalsh(self.block(z, off, r))[0]
            slack += max(0.0, -lam) * bound
        if self.orthant is not None:
            s, e = self.orthant
            slack += float(np.sum(np.clip(-z[s:e], 0.0, None) * orthant_bounds))
        lhs = beta + slack
        if lhs < -1e-12 * norm:
            return True, -lhs / norm
        return False, 0.0

    # -- solvers ------------------------------------------------------------

    def solve(self, start: np.ndarray, config: SolverConfig) -> _Outcome:
        if config.method == "barrier":
            return self.barrier(start, config)
        if config.method == "dykstra":
            return self.dykstra(start, config, config.max_iter)
        outcome = self.dykstra(start, config, min(config.fallback_after, config.max_iter))
        if outcome.status is not CompletionStatus.UNDECIDED:
            return outcome
        fallback = self.barrier(outcome.point, config)
        fallback.iterations += outcome.iterations
        return fallback

    def dykstra(self, start: np.ndarray, config: SolverConfig, budget: int) -> _Outcome:
        tol = config.feas_tol
        x = self.project_affine(start)
        p = np.zeros_like(x)
        history = []
        out = config.diagnostics
        if out is not None:
            out.write("iteration,distance\n")
        w = config.stall_window
        for it in range(1, budget + 1):
            y = self.project_cone(x + p)
            p = x + p - y
            x = self.project_affine(y)
            dist = float(np.linalg.norm(x - y))
            if out is not None and it % config.diagnostics_every == 0:
                out.write(f"{it},{dist:.12g}\n")
            if dist <= tol:
                # Weyl: x is within ``dist`` of a cone point, so its margin is >= -tol
                return _Outcome(CompletionStatus.FEASIBLE, x, self.margin(x), it, False, 0.0, "dykstra")
            history.append(dist)
            if it % w == 0 and dist > 10 * tol:
                certified, bound = self.separation_certificate(x)
                if certified:
                    return _Outcome(CompletionStatus.INFEASIBLE, x, self.margin(x), it, True, bound, "dykstra")
                if len(history) > w:
                    old = history[-w - 1]
                    if abs(dist - old) <= config.stall_rtol * dist:
                        return _Outcome(CompletionStatus.INFEASIBLE, x, self.margin(x), it, False, dist, "dykstra")
                    history = history[-w - 1 :]
        return _Outcome(CompletionStatus.UNDECIDED, x, self.margin(x), budget, False, 0.0, "dykstra")

    def barrier(self, start: np.ndarray, config: SolverConfig, stop_at: Optional[float] = None) -> _Outcome:
        """Maximize t subject to u affine-feasible and every cone part >= t.

        Path following on -tau * t - sum log det(Y_b - t I) - sum log(s_i - t).
        A centered point bounds the optimum by t + nu / tau (nu the barrier
        degree), which decides infeasibility. The run stops as feasible once
        the margin reaches ``stop_at`` (default ``-feas_tol``); pass
        ``math.inf`` to follow the path to the end.
        """
        tol = config.feas_tol
        stop_at = -tol if stop_at is None else stop_at
        nb = self.null_basis
        u0 = self.project_affine(start)
        k = nb.shape[1]
        # derivative of every cone part with respect to (z, t), u = u0 + N z
        block_dirs = []
        for off, r in self.psd_blocks:
            iu, w = self._iu[r]
            seg = (nb[off : off + len(w)] / w[:, None]).T
            dirs = np.zeros((k + 1, r, r))
            dirs[:k, iu[0], iu[1]] = seg
            dirs[:k, iu[1], iu[0]] = seg
            dirs[k] = -np.eye(r)
            block_dirs.append((off, r, dirs))
        if self.orthant is not None:
            s, e = self.orthant
            jac_s = np.hstack([nb[s:e], -np.ones((e - s, 1))])
        else:
            jac_s = None

        def parts(wv):
            u = u0 + nb @ wv[:k]
            t = wv[k]
            mats = [self.block(u, off, r) - t * np.eye(r) for off, r, _ in block_dirs]
            sl = u[self.orthant[0] : self.orthant[1]] - t if jac_s is not None else None
            return u, mats, sl

        def value(wv, tau):
            _, mats, sl = parts(wv)
            val = -tau * wv[k]
            for m in mats:
                lam = np.linalg.eigvalsh(m)
                if lam[0] <= 0.0:
                    return math.inf
                val -= float(np.sum(np.log(lam)))
            if sl is not None:
                if np.min(sl) <= 0.0:
                    return math.inf
                val -= float(np.sum(np.log(sl)))
            return val

        def finish(status, wv, steps, certified=False, separation=0.0):
            u = parts(wv)[0]
            return _Outcome(status, u, self.margin(u), steps, certified, separation, "barrier")

        wv = np.zeros(k + 1)
        wv[k] = self.margin(u0) - 1.0
        nu = self.barrier_degree
        tau = 1.0
        steps = 0
        for _outer in range(40):
            decrement = math.inf
            for _inner in range(200):
                steps += 1
                _, mats, sl = parts(wv)
                grad = np.zeros(k + 1)
                grad[k] = -tau
                hess = np.zeros((k + 1, k + 1))
                for (_, r, dirs), m in zip(block_dirs, mats):
                    lam, vec = np.linalg.eigh(m)
                    wm = vec / np.sqrt(lam)
                    scaled = np.einsum("ai,kab,bj->kij", wm, dirs, wm, optimize=True)
                    grad -= np.einsum("kii->k", scaled)
                    flat = scaled.reshape(k + 1, -1)
                    hess += flat @ flat.T
                if jac_s is not None:
                    inv = 1.0 / sl
                    grad -= jac_s.T @ inv
                    hess += (jac_s * (inv**2)[:, None]).T @ jac_s
                try:
                    step = -np.linalg.solve(hess, grad)
                except np.linalg.LinAlgError:
                    step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
                decrement = max(float(-grad @ step), 0.0)
                if decrement < 1e-12:
                    break
                f0 = value(wv, tau)
                alpha = 1.0
                while alpha > 1e-14:
                    trial = wv + alpha * step
                    if value(trial, tau) <= f0 - 0.25 * alpha * decrement:
                        break
                    alpha *= 0.5
                else:
                    break
                wv = trial
                if wv[k] >= stop_at:
                    return finish(CompletionStatus.FEASIBLE, wv, steps)
                if decrement < 1e-9:
                    break
            # centered up to the Newton decrement: widen the gap bound a little
            upper = wv[k] + nu / tau * (1.0 + math.sqrt(min(decrement, 1.0)))
            if upper < -10 * tol:
                return finish(CompletionStatus.INFEASIBLE, wv, steps, True, -upper)
            if nu / tau < tol / 10:
                break
            tau *= 10.0
        if wv[k] >= -tol:
            return finish(CompletionStatus.FEASIBLE, wv, steps)
        return finish(CompletionStatus.UNDECIDED, wv, steps)



# ---------------------------------------------------------------------------
# PSD completion


def _fixed_cliques(mask: np.ndarray) -> list[list[int]]:
    n = mask.shape[0]
    if mask.all():
        return [list(range(n))]
    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    rows, cols = np.nonzero(np.triu(mask, 1))
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return [sorted(c) for c in nx.find_cliques(graph)]


def _face_basis(partial: PartialSymmetricMatrix, tol: float):
    """Orthonormal basis of the face forced by PSD fixed blocks.

    Returns (basis, violation) where violation > 0 is the Frobenius norm of
    the negative part of the worst fixed block (a certified distance from the
    affine set to the PSD cone).
    """
    n = partial.size
    kernel = []
    violation = 0.0
    for clique in _fixed_cliques(partial.fixed_mask):
        block = partial.entries[np.ix_(clique, clique)]
        vals, vecs = np.linalg.eigh(block)
        neg = np.clip(vals, None, 0.0)
        violation = max(violation, float(np.linalg.norm(neg)))
        for k in np.nonzero(vals <= KERNEL_TOL)[0]:
            u = np.zeros(n)
            u[clique] = vecs[:, k]
            kernel.append(u)
    if violation > 10 * tol:
        return None, violation
    if not kernel:
        return np.eye(n), violation
    kmat = np.array(kernel).T
    u, sv, _ = np.linalg.svd(kmat, full_matrices=True)
    rank = int(np.sum(sv > 1e-8))
    return u[:, rank:], violation


def complete_to_psd(partial: PartialSymmetricMatrix, config: SolverConfig | None = None) -> CompletionResult:
    """Decide whether the free entries can be chosen to make the matrix PSD."""
    config = config or SolverConfig()
    n = partial.size
    basis, violation = _face_basis(partial, config.feas_tol)
    if basis is None:
        return CompletionResult(
            CompletionStatus.INFEASIBLE, None, -violation, violation, 0, 0.0, certified=True, method="reduction"
        )
    r = basis.shape[1]
    if r == 0:
        zero = np.zeros((n, n))
        residual = float(np.max(np.abs(np.where(partial.fixed_mask, partial.entries, 0.0))))
        if residual <= config.feas_tol:
            return CompletionResult(CompletionStatus.FEASIBLE, zero, 0.0, 0.0, 0, residual, method="reduction")
        # the forced face is {0}
        return CompletionResult(
            CompletionStatus.INFEASIBLE, None, 0.0, residual, 0, residual, certified=True, method="reduction"
        )

    # X = B Y B^T; rows of A express fixed entries X_ij (i <= j) in svec(Y)
    iu, w = _svec_index(r)
    fi, fj = np.nonzero(np.triu(partial.fixed_mask))
    coeff = basis[fi][:, iu[0]] * basis[fj][:, iu[1]] + basis[fi][:, iu[1]] * basis[fj][:, iu[0]]
    coeff = np.where(iu[0] == iu[1], coeff / 2.0, coeff) / w
    # off-diagonal equations stand for two symmetric entries
    row_w = np.where(fi == fj, 1.0, _SQRT2)
    a_mat = coeff * row_w[:, None]
    b_vec = partial.entries[fi, fj] * row_w
    trace = float(np.trace(partial.entries))
    problem = _ConicProblem([(0, r)], None, a_mat, b_vec, cone_bounds=([trace], None))
    if problem.consistency > 10 * config.feas_tol:
        # no symmetric matrix on the forced face matches the fixed entries
        return CompletionResult(
            CompletionStatus.INFEASIBLE, None, 0.0, problem.consistency, 0, problem.consistency, certified=True,
            method="reduction",
        )
    start = svec(basis.T @ partial.entries @ basis)
    outcome = problem.solve(start, config)
    y = smat(outcome.point, r)
    completion = basis @ y @ basis.T
    completion = (completion + completion.T) / 2.0
    residual = float(np.max(np.abs(np.where(partial.fixed_mask, completion - partial.entries, 0.0))))
    margin = float(np.linalg.eigvalsh(completion)[0])
    if outcome.status is CompletionStatus.FEASIBLE:
        return CompletionResult(
            outcome.status, completion, margin, 0.0, outcome.iterations, residual, method=outcome.method
        )
    return CompletionResult(
        outcome.status, None, margin, outcome.separation, outcome.iterations, residual,
        certified=outcome.certified, method=outcome.method,
    )


def membership_q1(
    behavior: Behavior,
    kind: CertificateKind = CertificateKind.NPA1,
    config: SolverConfig | None = None,
) -> CompletionResult:
    """Q1 membership of a behavior via completion of its certificate."""
    return complete_to_psd(build_partial(behavior, kind), config)


# ---------------------------------------------------------------------------
# linear optimization over Q1


@dataclass(frozen=True)
class BisectionResult:
    lower: float
    upper: float
    witness: Behavior
    iterations: int
    certificate: Optional[np.ndarray] = None  # moment-form completion for the witness
    converged: bool = True
    undecided: int = 0
    history: tuple = ()  # (level, status) per oracle call


class _MomentLayout:
    """Reduced moment matrix: identity, then outcomes 0..d-2 of every setting.

    Each setting's last outcome is the identity minus the others, so the
    full moment-form certificate is a congruence of this one and
    normalization plus no-signaling hold by construction.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        sa, sb, d = scenario.settings_a, scenario.settings_b, scenario.outcomes
        m = d - 1
        self.m = m
        self.r = 1 + (sa + sb) * m
        self.L = _svec_len(self.r)
        groups = [[1 + g * m + a for a in range(m)] for g in range(sa + sb)]
        self.groups = groups
        rows, rhs = [_svec_row(self.r, {(0, 0): 1.0})], [1.0]
        for g in groups:
            for i in g:
                # projector: <E^2> = <E>
                rows.append(_svec_row(self.r, {(i, i): 1.0, (0, i): -1.0}))
                rhs.append(0.0)
            for p in range(len(g)):
                for q in range(p + 1, len(g)):
                    rows.append(_svec_row(self.r, {(g[p], g[q]): 1.0}))
                    rhs.append(0.0)
        self.structural = (np.array(rows), np.array(rhs))
        # behavior table as a linear map of svec(Y)
        self.wmat = self._expansion()
        n_full = self.wmat.shape[0]
        table = []
        for x, y, a, b in np.ndindex(sa, sb, d, d):
            i = 1 + x * d + a
            j = 1 + sa * d + y * d + b
            # full entry (i, j) = w_i^T Y w_j
            outer = np.outer(self.wmat[i], self.wmat[j])
            table.append(svec((outer + outer.T) / 2.0))
        assert n_full == 1 + (sa + sb) * d
        self.table_map = np.array(table)
        self.n_table = self.table_map.shape[0]

    def _expansion(self) -> np.ndarray:
        """W with full moment matrix = W Y W^T."""
        sc = self.scenario
        d, m = sc.outcomes, self.m
        wmat = np.zeros((1 + (sc.settings_a + sc.settings_b) * d, self.r))
        wmat[0, 0] = 1.0
        for g, red in enumerate(self.groups):
            for a in range(d):
                row = 1 + g * d + a
                if a < m:
                    wmat[row, red[a]] = 1.0
                else:
                    wmat[row, 0] = 1.0
                    wmat[row, red] = -1.0
        return wmat

    def behavior(self, y_svec: np.ndarray) -> Behavior:
        return Behavior(self.scenario, (self.table_map @ y_svec).reshape(self.scenario.shape))

    def full_certificate(self, y_svec: np.ndarray) -> np.ndarray:
        full = self.wmat @ smat(y_svec, self.r) @ self.wmat.T
        return (full + full.T) / 2.0

    def reduce(self, full_certificate: np.ndarray) -> np.ndarray:
        d = self.scenario.outcomes
        keep = [0] + [1 + g * d + a for g in range(len(self.groups)) for a in range(self.m)]
        return svec(full_certificate[np.ix_(keep, keep)])


def _product_moment(layout: _MomentLayout, behavior: Behavior) -> np.ndarray:
    # free entries P(a)P(a'): exact for deterministic and product behaviors
    return layout.reduce(build_npa1_partial(behavior).entries)


def max_linear_over_q1(
    scenario: Scenario,
    functional,
    gap: float = 1e-4,
    config: SolverConfig | None = None,
    equalities: Sequence = (),
    max_steps: int = 200,
) -> BisectionResult:
    """Bracket max F(P) over Q1 by bisection on the level set F(P) >= v.

    ``functional`` provides ``scenario`` and ``coefficients`` (shaped like a
    behavior table). ``equalities`` holds (functional, value) pairs imposed
    as linear constraints. The bracket starts at [best deterministic
    vertex, algebraic maximum]; with equalities the lower end starts at the
    value of a strictly feasible point instead. The lower end is always
    attained by the returned witness, whose certificate is exactly PSD.
    """
    config = config or SolverConfig()
    if functional.scenario != scenario:
        raise ShapeError("functional scenario does not match")
    coeffs = np.asarray(functional.coefficients, dtype=float)
    if coeffs.shape != scenario.shape:
        raise ShapeError("functional coefficients do not match the scenario")
    if gap <= 0:
        raise ContractError("gap must be positive")
    layout = _MomentLayout(scenario)
    c_row = coeffs.ravel() @ layout.table_map
    pairs = scenario.settings_a * scenario.settings_b
    upper = float(coeffs.reshape(pairs, -1).max(axis=1).sum())
    L, D = layout.L, layout.n_table
    n = L + D + 1
    struct_a, struct_b = layout.structural
    extra_rows = [np.asarray(f.coefficients, dtype=float).ravel() @ layout.table_map for f, _ in equalities]
    extra_rhs = [float(v) for _, v in equalities]
    # the trace of Y is 1 + number of settings (diag = first row, rows sum to <= 1)
    trace_bound = 1.0 + scenario.settings_a + scenario.settings_b

    def assemble(level: Optional[float]) -> _ConicProblem:
        rows = [np.hstack([struct_a, np.zeros((struct_a.shape[0], D + 1))])]
        rhs = [struct_b]
        rows.append(np.hstack([-layout.table_map, np.eye(D), np.zeros((D, 1))]))
        rhs.append(np.zeros(D))
        for row, value in zip(extra_rows, extra_rhs):
            rows.append(np.concatenate([row, np.zeros(D + 1)])[None, :])
            rhs.append([value])
        last = np.zeros(n)
        last[n - 1] = -1.0
        if level is None:
            # no level constraint: pin the objective slack to 1
            last[n - 1] = 1.0
            rhs.append([1.0])
        else:
            last[:L] = c_row
            rhs.append([level])
        rows.append(last[None, :])
        span = 1.0 if level is None else max(upper - level, 0.0) + 1e-9
        bounds = ([trace_bound], np.r_[np.ones(D), span])
        return _ConicProblem([(0, layout.r)], (L, n), np.vstack(rows), np.concatenate(rhs), bounds)

    def lift(y: np.ndarray, level: Optional[float]) -> np.ndarray:
        obj = 1.0 if level is None else float(c_row @ y - level)
        return np.concatenate([y, layout.table_map @ y, [obj]])

    base = assemble(None)
    uniform = _product_moment(layout, uniform_behavior(scenario))
    if extra_rows:
        if base.consistency > 10 * config.feas_tol:
            raise ContractError("the equality constraints are inconsistent")
        found = base.barrier(lift(uniform, None), config, stop_at=math.inf)
        if found.margin <= 0.0:
            raise ContractError("the equality constraints leave no interior point of Q1")
        anchor = found.point[:L]
        witness = anchor
        lower = float(c_row @ witness)
    else:
        from macrolocal.bell import local_bound

        lb = local_bound(functional)
        lower = float(lb.value)
        witness = _product_moment(layout, lb.argmax_vertex)
        anchor = uniform
    anchor_margin = base.margin(lift(anchor, None))

    def constraint_margin(y):
        return base.margin(lift(y, None))

    def repair(y: np.ndarray) -> np.ndarray:
        # margin is concave, so mixing toward the anchor restores it linearly
        deficit = -constraint_margin(y)
        if deficit <= 0.0:
            return y
        eps = min(1.0, 2.0 * deficit / (deficit + anchor_margin))
        return (1.0 - eps) * y + eps * anchor

    history = []
    steps = undecided = 0
    # levels the oracle could not decide; the optimum lies within solver
    # resolution of them, so keep bisecting the gaps on either side
    soft: Optional[list] = None
    while upper - lower > gap and steps < max_steps:
        if soft is None:
            level = 0.5 * (lower + upper)
        else:
            left, right = soft[0] - lower, upper - soft[1]
            if max(left, right) <= gap / 16:
                break
            level = 0.5 * (lower + soft[0]) if left >= right else 0.5 * (soft[1] + upper)
        steps += 1
        problem = assemble(level)
        outcome = problem.solve(lift(witness, level), config)
        status = outcome.status
        if status is CompletionStatus.FEASIBLE:
            point = outcome.point
            if outcome.margin < 0.0:
                # push to an exactly PSD point first; mixing is the fallback
                inner = problem.barrier(point, config, stop_at=0.0)
                if inner.margin >= 0.0:
                    point = inner.point
            y = repair(point[:L])
            value = float(c_row @ y)
            if value > lower:
                lower, witness = value, y
            else:
                # feasible only up to tolerance and repair lost the progress
                status = CompletionStatus.UNDECIDED
        elif status is CompletionStatus.INFEASIBLE:
            upper = level
        history.append((level, status.value))
        if status is CompletionStatus.UNDECIDED:
            undecided += 1
            soft = [level, level] if soft is None else [min(soft[0], level), max(soft[1], level)]
        if soft is not None and not (lower < soft[0] and soft[1] < upper):
            soft = [v for v in soft if lower < v < upper] or None
            if soft is not None:
                soft = [min(soft), max(soft)]
    table = layout.table_map @ witness
    table = np.where(np.abs(table) < 1e-15, 0.0, table).reshape(scenario.shape)
    return BisectionResult(
        lower=lower,
        upper=upper,
        witness=Behavior(scenario, table),
        iterations=steps,
        certificate=layout.full_certificate(witness),
        converged=upper - lower <= gap,
        undecided=undecided,
        history=tuple(history),
    )
