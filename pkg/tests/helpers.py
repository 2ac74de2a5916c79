"""Shared generators for the test suite."""

import itertools
import math

import numpy as np

from macrolocal.scenario import (
    CHSH_SCENARIO,
    Behavior,
    Scenario,
    deterministic_vertices,
    mixture,
    singlet_behavior,
)


def pr_family():
    """The eight extremal nonlocal boxes: a xor b = xy xor al*x xor be*y xor ga."""
    out = []
    for al, be, ga in itertools.product(range(2), repeat=3):
        t = np.zeros((2, 2, 2, 2))
        for x, y, a, b in itertools.product(range(2), repeat=4):
            if a ^ b == (x * y) ^ (al * x) ^ (be * y) ^ ga:
                t[x, y, a, b] = 0.5
        out.append(Behavior(CHSH_SCENARIO, t))
    return out


EXTREMAL_CHSH = deterministic_vertices(CHSH_SCENARIO) + pr_family()


def random_nosignaling(rng):
    """Mixture of 2-5 extremal no-signaling boxes with varied concentration."""
    k = int(rng.integers(2, 6))
    idx = rng.choice(len(EXTREMAL_CHSH), size=k, replace=False)
    w = rng.dirichlet(np.ones(k) * rng.choice([0.3, 1.0, 3.0]))
    return mixture([EXTREMAL_CHSH[j] for j in idx], w)


def random_quantum(rng, settings=2):
    """Singlet at random planar angles mixed with local points (always in Q1)."""
    sc = Scenario(settings, settings, 2)
    verts = deterministic_vertices(sc)
    singlet = singlet_behavior(rng.uniform(0, 2 * math.pi, settings), rng.uniform(0, 2 * math.pi, settings))
    k = int(rng.integers(0, 3))
    parts = [singlet] + [verts[j] for j in rng.choice(len(verts), size=k, replace=False)]
    w = rng.dirichlet(np.ones(len(parts)))
    w[0] += rng.uniform(0, 2)  # keep the singlet dominant most of the time
    return mixture(parts, w / w.sum())


def perfectly_correlated(scenario=CHSH_SCENARIO):
    d = scenario.outcomes
    t = np.tile(np.eye(d) / d, (scenario.settings_a, scenario.settings_b, 1, 1))
    return Behavior(scenario, t)
