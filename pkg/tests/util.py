"""Shared helpers for the test suite."""

import numpy as np

from scfem.multiindex import MultiIndexSet, backward_neighbors


def brute_force_reduced_margin(indices, level_cap=12):
    """Independent reduced-margin oracle: scan the full level box.

    Enumerates every index in the box [1, level_cap]^M and keeps those
    outside the set whose backward neighbors all lie inside.
    """
    pool = {tuple(nu) for nu in indices}
    dim = len(next(iter(pool)))
    from itertools import product
    out = []
    for nu in product(range(1, level_cap + 2), repeat=dim):
        if nu in pool:
            continue
        if all(mu in pool for mu in backward_neighbors(nu)):
            out.append(nu)
    return sorted(out)


def all_monotone_sets_2d(level_cap):
    """Every downward-closed nonempty subset of the 2D level box.

    Monotone 2D sets are staircases: described by a nonincreasing height
    profile h_1 >= h_2 >= ... >= h_cap >= 0 with h_1 >= 1.
    """
    sets = []

    def rec(profile, prev):
        if len(profile) == level_cap:
            if profile[0] >= 1:
                sets.append([(i + 1, j + 1)
                             for i, h in enumerate(profile) for j in range(h)])
            return
        for h in range(prev + 1):
            rec(profile + [h], h)

    rec([], level_cap)
    return [s for s in sets if s]


def random_monotone_set(rng, dim, n_extra, level_cap=4):
    """Grow a monotone set from the root by random margin additions."""
    s = MultiIndexSet.root(dim)
    for _ in range(n_extra):
        margin = [nu for nu in s.reduced_margin() if max(nu) <= level_cap]
        if not margin:
            break
        s = s.union([margin[rng.integers(len(margin))]])
    return s


def fit_loglog_slope(x, y):
    """Least-squares slope of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])
