"""Local wirings of several boxes into one effective box.

A party holding n independent boxes measures them one after the other;
which box and which setting come next may depend on the outcomes seen so
far. Each effective setting is a decision tree whose leaves carry the
effective outcome label. Nondeterministic strategies are obtained by
adding a box that only supplies local randomness.

Composite tables grow as d^(2n) per settings tuple, so the number of
boxes is capped at ``MAX_BOXES`` unless a larger cap is passed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence, Union

import numpy as np

from macrolocal.certificates import CertificateKind, PartialSymmetricMatrix, build_npa1_partial, verify_completion
from macrolocal.conic import SolverConfig, membership_q1
from macrolocal.errors import (
    ContractError,
    EnumerationTooLargeError,
    FormatError,
    PreconditionError,
    ShapeError,
)
from macrolocal.linalg import gram_vectors
from macrolocal.scenario import Behavior, Scenario, marginals

MAX_BOXES = 4


@dataclass(frozen=True)
class Leaf:
    label: tuple


@dataclass(frozen=True)
class Node:
    box: int  # 0-based box index
    setting: int  # 0-based setting used on that box
    children: tuple  # one subtree per outcome


Tree = Union[Node, Leaf]


def _paths(tree: Tree, prefix=()):
    """Yield (measurements, label); measurements are (box, setting, outcome) in order."""
    if isinstance(tree, Leaf):
        yield prefix, tree.label
        return
    for outcome, child in enumerate(tree.children):
        yield from _paths(child, prefix + ((tree.box, tree.setting, outcome),))


@dataclass(frozen=True)
class WiringStrategy:
    party: str  # "A" or "B"
    boxes: int
    trees: tuple  # one decision tree per effective setting
    complete: bool = False

    def __post_init__(self):
        if self.party not in ("A", "B"):
            raise ContractError("party must be 'A' or 'B'")
        if self.boxes < 1:
            raise ContractError("a wiring needs at least one box")
        object.__setattr__(self, "trees", tuple(self.trees))
        if not self.trees:
            raise ContractError("a wiring needs at least one effective setting")
        for tree in self.trees:
            for path, label in _paths(tree):
                boxes = [m[0] for m in path]
                if len(set(boxes)) != len(boxes):
                    raise ContractError("a path measures the same box twice")
                if any(not 0 <= b < self.boxes for b in boxes):
                    raise ContractError("a node names a box that does not exist")
                if self.complete:
                    if len(boxes) != self.boxes:
                        raise ContractError("complete strategies must measure every box on every path")
                    expected = tuple(o for _, _, o in sorted(path))
                    if tuple(label) != expected:
                        raise ContractError("complete strategies label leaves by the outcome tuple")

    @property
    def labels(self) -> list:
        """Distinct leaf labels in sorted order; the effective outcome is the rank."""
        return sorted({tuple(label) for tree in self.trees for _, label in _paths(tree)})

    def check_against(self, scenarios: Sequence[Scenario]) -> None:
        if len(scenarios) != self.boxes:
            raise ContractError(f"strategy wires {self.boxes} boxes, {len(scenarios)} given")

        def walk(tree):
            if isinstance(tree, Leaf):
                return
            sc = scenarios[tree.box]
            n_settings = sc.settings_a if self.party == "A" else sc.settings_b
            if not 0 <= tree.setting < n_settings:
                raise ContractError(f"box {tree.box + 1} has no setting {tree.setting + 1}")
            if len(tree.children) != sc.outcomes:
                raise ContractError(f"node on box {tree.box + 1} needs {sc.outcomes} children")
            for child in tree.children:
                walk(child)

        for tree in self.trees:
            walk(tree)


@dataclass(frozen=True)
class OutcomeMerge:
    maps_a: np.ndarray  # (settings_a, d): merged label of each outcome
    maps_b: np.ndarray  # (settings_b, d)

    def __post_init__(self):
        for name in ("maps_a", "maps_b"):
            m = np.array(getattr(self, name), dtype=int)
            if m.ndim != 2:
                raise ShapeError("merge maps are indexed by (setting, outcome)")
            for row in m:
                if set(row.tolist()) != set(range(int(row.max()) + 1)) or row.min() < 0:
                    raise ContractError("merge maps must be onto a contiguous range starting at 0")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def identity(cls, scenario: Scenario) -> "OutcomeMerge":
        d = scenario.outcomes
        return cls(np.tile(np.arange(d), (scenario.settings_a, 1)), np.tile(np.arange(d), (scenario.settings_b, 1)))


def coarse_grain(behavior: Behavior, merge: OutcomeMerge) -> Behavior:
    """Sum probabilities over merged outcomes; pads with zero-probability outcomes."""
    sc = behavior.scenario
    if merge.maps_a.shape != (sc.settings_a, sc.outcomes) or merge.maps_b.shape != (sc.settings_b, sc.outcomes):
        raise ShapeError("merge shape does not match the scenario")
    d_new = max(2, int(merge.maps_a.max()) + 1, int(merge.maps_b.max()) + 1)
    out = np.zeros((sc.settings_a, sc.settings_b, d_new, d_new))
    for x, y, a, b in np.ndindex(sc.shape):
        out[x, y, merge.maps_a[x, a], merge.maps_b[y, b]] += behavior.table[x, y, a, b]
    return Behavior(Scenario(sc.settings_a, sc.settings_b, d_new), out)


def _check_box_count(n: int, cap: int) -> None:
    if n > cap:
        raise EnumerationTooLargeError(f"{n} boxes exceed the cap of {cap}")


def product_behavior(behaviors: Sequence[Behavior], cap: int = MAX_BOXES) -> np.ndarray:
    """Joint table of independent boxes, axes (x_1..x_n, y_1..y_n, a_1..a_n, b_1..b_n)."""
    n = len(behaviors)
    _check_box_count(n, cap)
    if n == 0:
        raise ContractError("no boxes given")
    letters = "abcdefghijklmnopqrstuvwxyz"
    subs, out_x, out_y, out_a, out_b = [], "", "", "", ""
    for i in range(n):
        x, y, a, b = letters[4 * i : 4 * i + 4]
        subs.append(x + y + a + b)
        out_x += x
        out_y += y
        out_a += a
        out_b += b
    subscripts = ",".join(subs) + "->" + out_x + out_y + out_a + out_b
    return np.einsum(subscripts, *[b.table for b in behaviors])


def _path_lists(strategy: WiringStrategy):
    labels = strategy.labels
    index = {label: k for k, label in enumerate(labels)}
    return [[(path, index[tuple(label)]) for path, label in _paths(tree)] for tree in strategy.trees], len(labels)


def _check_pair(behaviors, strat_a, strat_b, cap):
    if strat_a.party != "A" or strat_b.party != "B":
        raise ContractError("strategies must be given as (Alice's, Bob's)")
    if strat_a.boxes != strat_b.boxes:
        raise ContractError("both parties must wire the same boxes")
    _check_box_count(len(behaviors), cap)
    scenarios = [b.scenario for b in behaviors]
    strat_a.check_against(scenarios)
    strat_b.check_against(scenarios)


def apply_wiring(
    behaviors: Sequence[Behavior], strat_a: WiringStrategy, strat_b: WiringStrategy, cap: int = MAX_BOXES
) -> Behavior:
    """Effective behavior of the wired boxes.

    A box measured by both parties contributes its joint probability, a box
    measured by one party only contributes that party's marginal.
    """
    behaviors = list(behaviors)
    _check_pair(behaviors, strat_a, strat_b, cap)
    margs = [marginals(b) for b in behaviors]
    paths_a, na = _path_lists(strat_a)
    paths_b, nb = _path_lists(strat_b)
    d = max(2, na, nb)
    table = np.zeros((len(paths_a), len(paths_b), d, d))
    for xe, ye in itertools.product(range(len(paths_a)), range(len(paths_b))):
        for path_a, la in paths_a[xe]:
            seen_a = {box: (s, o) for box, s, o in path_a}
            for path_b, lb in paths_b[ye]:
                seen_b = {box: (s, o) for box, s, o in path_b}
                prob = 1.0
                for box in set(seen_a) | set(seen_b):
                    if box in seen_a and box in seen_b:
                        (x, a), (y, b) = seen_a[box], seen_b[box]
                        prob *= behaviors[box].table[x, y, a, b]
                    elif box in seen_a:
                        x, a = seen_a[box]
                        prob *= margs[box].p_a[x, a]
                    else:
                        y, b = seen_b[box]
                        prob *= margs[box].p_b[y, b]
                table[xe, ye, la, lb] += prob
    return Behavior(Scenario(len(paths_a), len(paths_b), d), table)


def certified_completion(
    behavior: Behavior, config: SolverConfig | None = None
) -> PartialSymmetricMatrix:
    """Moment-form certificate completed by the conic engine; raises if none is found."""
    result = membership_q1(behavior, CertificateKind.NPA1, config)
    if not result.feasible:
        raise PreconditionError(f"no certificate found for this behavior ({result.status.value})")
    return build_npa1_partial(behavior).with_entries(result.completion)


def wired_certificate(
    certs: Sequence[PartialSymmetricMatrix],
    strat_a: WiringStrategy,
    strat_b: WiringStrategy,
    tolerance: float = 1e-8,
    cap: int = MAX_BOXES,
) -> np.ndarray:
    """Completed moment-form certificate of the wired behavior.

    Every box certificate is factored as a Gram matrix. A leaf's vector is
    the tensor product over boxes of the measured outcome's vector (the
    identity vector for boxes not measured on that path), and an effective
    outcome's vector is the sum over its leaves. The result is the Gram
    matrix of the identity and all effective outcome vectors. Certificates
    must be moment-form completions carrying their behaviors.
    """
    certs = list(certs)
    for i, cert in enumerate(certs):
        if cert.kind is not CertificateKind.NPA1 or cert.behavior is None:
            raise PreconditionError(f"certificate {i + 1} must be a moment-form completion with its behavior")
        verdict = verify_completion(build_npa1_partial(cert.behavior), cert.entries, tolerance)
        if not verdict.valid:
            raise PreconditionError(
                f"certificate {i + 1} fails verification (min eigenvalue {verdict.min_eigenvalue:.3g}, "
                f"residual {verdict.worst_fixed_residual:.3g})"
            )
    behaviors = [c.behavior for c in certs]
    _check_pair(behaviors, strat_a, strat_b, cap)
    vecs = [gram_vectors(c.entries) for c in certs]

    def row(box, party, setting, outcome):
        sc = behaviors[box].scenario
        d = sc.outcomes
        if party == "A":
            return 1 + setting * d + outcome
        return 1 + sc.settings_a * d + setting * d + outcome

    def leaf_vector(party, path):
        measured = {box: (s, o) for box, s, o in path}
        parts = []
        for box in range(len(certs)):
            if box in measured:
                s, o = measured[box]
                parts.append(vecs[box][row(box, party, s, o)])
            else:
                parts.append(vecs[box][0])
        return reduce(np.kron, parts)

    identity = reduce(np.kron, [v[0] for v in vecs])
    paths_a, na = _path_lists(strat_a)
    paths_b, nb = _path_lists(strat_b)
    d = max(2, na, nb)
    rows = [identity]
    for party, path_lists in (("A", paths_a), ("B", paths_b)):
        for plist in path_lists:
            block = np.zeros((d, identity.size))
            for path, label in plist:
                block[label] += leaf_vector(party, path)
            rows.extend(block)
    w = np.array(rows)
    gamma = w @ w.T
    return (gamma + gamma.T) / 2.0


# ---------------------------------------------------------------------------
# builders


def trivial_strategy(party: str, settings: int, outcomes: int) -> WiringStrategy:
    """One box, measured with the effective setting; its outcome is the output."""
    trees = [Node(0, x, tuple(Leaf((a,)) for a in range(outcomes))) for x in range(settings)]
    return WiringStrategy(party, 1, tuple(trees), complete=True)


def sequential_strategy(
    party: str,
    first_setting: Sequence[int],
    second_setting,
    label=None,
    outcomes: int = 2,
) -> WiringStrategy:
    """Two boxes: box 1 with ``first_setting[X]``, then box 2 with ``second_setting(X, a1)``.

    ``label(a1, a2)`` gives the effective outcome; ``None`` keeps the full
    tuple (a complete strategy).
    """
    trees = []
    for x, s1 in enumerate(first_setting):
        children = []
        for a1 in range(outcomes):
            leaves = []
            for a2 in range(outcomes):
                leaves.append(Leaf((a1, a2) if label is None else (int(label(a1, a2)),)))
            children.append(Node(1, int(second_setting(x, a1)), tuple(leaves)))
        trees.append(Node(0, int(s1), tuple(children)))
    return WiringStrategy(party, 2, tuple(trees), complete=label is None)


def xor_wiring(party: str) -> WiringStrategy:
    """Box 1 with the effective setting, box 2 with setting = first outcome, output the XOR."""
    return sequential_strategy(party, [0, 1], lambda x, a1: a1, lambda a1, a2: a1 ^ a2)


def random_strategy(
    rng: np.random.Generator,
    party: str,
    scenarios: Sequence[Scenario],
    settings: int = 2,
    complete: bool = True,
    n_labels: int = 2,
) -> WiringStrategy:
    """Random adaptive order and settings; complete, or with random leaf labels."""
    n = len(scenarios)

    def grow(remaining, prefix):
        if not remaining:
            if complete:
                return Leaf(tuple(o for _, o in sorted(prefix)))
            return Leaf((int(rng.integers(n_labels)),))
        box = int(rng.choice(sorted(remaining)))
        sc = scenarios[box]
        n_set = sc.settings_a if party == "A" else sc.settings_b
        setting = int(rng.integers(n_set))
        rest = remaining - {box}
        children = tuple(grow(rest, prefix + ((box, o),)) for o in range(sc.outcomes))
        return Node(box, setting, children)

    trees = tuple(grow(frozenset(range(n)), ()) for _ in range(settings))
    return WiringStrategy(party, n, trees, complete=complete)


# ---------------------------------------------------------------------------
# text format


def parse_strategy(text) -> WiringStrategy:
    """Read ``wiring <party> <n> <settings>`` followed by tree lines.

    ``node <setting_id> <box> <box_setting>`` declares the next vertex
    (ids count from 1 in order of declaration); the first vertex of each
    effective setting is its root. Box 0 marks a leaf, whose label is
    given by ``leaf <node> <label...>``. ``edge <parent> <outcome> <child>``
    links vertices. Settings, boxes and box settings are 1-based; outcomes
    and labels are 0-based. The strategy is complete when every label is
    the path's outcome tuple.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    header = None
    nodes = []  # (setting_id, box, box_setting)
    edges = {}
    leaves = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if header is None:
                if parts[0] != "wiring" or len(parts) != 4 or parts[1] not in ("A", "B"):
                    raise FormatError(f"expected 'wiring <A|B> <n> <settings>', got {line!r}", lineno)
                header = (parts[1], int(parts[2]), int(parts[3]))
            elif parts[0] == "node" and len(parts) == 4:
                nodes.append(tuple(int(p) for p in parts[1:]))
            elif parts[0] == "edge" and len(parts) == 4:
                parent, outcome, child = (int(p) for p in parts[1:])
                if (parent, outcome) in edges:
                    raise FormatError(f"duplicate edge from node {parent} on outcome {outcome}", lineno)
                edges[(parent, outcome)] = child
            elif parts[0] == "leaf" and len(parts) >= 3:
                leaves[int(parts[1])] = tuple(int(p) for p in parts[2:])
            else:
                raise FormatError(f"unrecognized line {line!r}", lineno)
        except ValueError:
            raise FormatError(f"non-integer field in {line!r}", lineno) from None
    if header is None:
        raise FormatError("missing 'wiring' header line")
    party, n, settings = header

    def build(node_id, depth):
        if not 1 <= node_id <= len(nodes):
            raise FormatError(f"edge points to unknown node {node_id}")
        if depth > n:
            raise FormatError("tree deeper than the number of boxes")
        _, box, box_setting = nodes[node_id - 1]
        if box == 0:
            if node_id not in leaves:
                raise FormatError(f"leaf node {node_id} has no label")
            return Leaf(leaves[node_id])
        children = []
        outcome = 0
        while (node_id, outcome) in edges:
            children.append(build(edges[(node_id, outcome)], depth + 1))
            outcome += 1
        if not children:
            raise FormatError(f"node {node_id} has no outgoing edges")
        return Node(box - 1, box_setting - 1, tuple(children))

    trees = []
    for s in range(1, settings + 1):
        roots = [i for i, node in enumerate(nodes, start=1) if node[0] == s]
        if not roots:
            raise FormatError(f"effective setting {s} has no tree")
        trees.append(build(roots[0], 0))
    complete = _is_complete(trees, n)
    try:
        return WiringStrategy(party, n, tuple(trees), complete=complete)
    except ContractError as exc:
        raise FormatError(str(exc)) from None


def _is_complete(trees, n) -> bool:
    for tree in trees:
        for path, label in _paths(tree):
            if len(path) != n or tuple(label) != tuple(o for _, _, o in sorted(path)):
                return False
    return True


def format_strategy(strategy: WiringStrategy) -> str:
    lines = [f"wiring {strategy.party} {strategy.boxes} {len(strategy.trees)}"]
    node_lines, edge_lines, leaf_lines = [], [], []

    def emit(tree, setting_id):
        node_lines.append(None)
        my_id = len(node_lines)
        if isinstance(tree, Leaf):
            node_lines[my_id - 1] = f"node {setting_id} 0 0"
            leaf_lines.append(f"leaf {my_id} " + " ".join(str(v) for v in tree.label))
            return my_id
        node_lines[my_id - 1] = f"node {setting_id} {tree.box + 1} {tree.setting + 1}"
        for outcome, child in enumerate(tree.children):
            child_id = emit(child, setting_id)
            edge_lines.append(f"edge {my_id} {outcome} {child_id}")
        return my_id

    for s, tree in enumerate(strategy.trees, start=1):
        emit(tree, s)
    return "\n".join(lines + node_lines + edge_lines + leaf_lines) + "\n"
