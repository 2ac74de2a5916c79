"""Macroscopic locality toolkit for bipartite correlation tables.

Membership tests for the set Q1 of macroscopically local behaviors,
Bell-functional bounds over Q1 and the local polytope, correlator
conditions, wiring closure and the macroscopic intensity simulation.
"""

from macrolocal.scenario import (
    Behavior,
    FormatError,
    MarginalTables,
    Scenario,
    ValidationReport,
    deterministic_behavior,
    deterministic_vertices,
    marginals,
    mixture,
    noisy_pr_box,
    parse_behavior,
    pr_box,
    serialize_behavior,
    singlet_behavior,
    uniform_behavior,
    validate_behavior,
)
from macrolocal.certificates import (
    CertificateKind,
    PartialSymmetricMatrix,
    build_covariance_partial,
    build_npa1_partial,
    schur_convert,
    verify_completion,
)
from macrolocal.conic import (
    BisectionResult,
    CompletionResult,
    CompletionStatus,
    EigenDecomposition,
    SolverConfig,
    complete_to_psd,
    max_linear_over_q1,
    membership_q1,
    psd_project,
    sym_eig,
)
from macrolocal.bell import (
    BellFunctional,
    cglmp,
    chsh,
    evaluate,
    local_bound,
    q1_bound,
)

__version__ = "0.1.0"
