"""Independent oracles for freezing expected values in tests.

Every routine here deliberately avoids the production code paths: the
Green-function oracle integrates the transition kernel in the time domain
(products of modified Bessel functions), whereas production integrates in
Fourier space; crossing and threshold oracles do exhaustive searches on
small windows.  Agreement between the two routes is the point of the tests.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
from scipy import integrate, special


# ---------------------------------------------------------------------------
# nearest-neighbour (R=1) Green function, time-domain Bessel route


def heat_kernel_nn(x, t: float, d: int | None = None) -> float:
    """p_t(0,x) for the rate-1 nearest-neighbour walk on Z^d.

    Axes decouple: each axis is a continuous-time walk taking +-1 steps at
    total rate 1/d, so the axis marginal is e^{-t/d} I_k(t/d) = ive(k, t/d).
    """
    if d is None:
        d = len(x)
    out = 1.0
    for c in x:
        out *= special.ive(abs(int(c)), t / d)
    return out


def green_nn(x, d: int | None = None, T: float = 0.0) -> float:
    """integral_T^inf p_t(0,x) dt by adaptive quadrature (d >= 3 only)."""
    if d is None:
        d = len(x)
    if d < 3:
        raise ValueError("integral diverges: the walk is recurrent for d <= 2")
    val, err = integrate.quad(
        lambda t: heat_kernel_nn(x, t, d),
        T,
        np.inf,
        limit=400,
        epsabs=1e-12,
        epsrel=1e-12,
    )
    if err > 1e-8:
        raise RuntimeError(f"oracle quadrature did not converge: err={err}")
    return val


def hitting_nn(x, d: int | None = None) -> float:
    """h(0,x) = g(0,x)/g(0,0) for the nearest-neighbour walk."""
    if d is None:
        d = len(x)
    return green_nn(x, d) / green_nn((0,) * d, d)


# ---------------------------------------------------------------------------
# brute-force crossing / threshold oracles on small windows


def star_neighbors(p):
    d = len(p)
    for dz in itertools.product((-1, 0, 1), repeat=d):
        if any(dz):
            yield tuple(a + b for a, b in zip(p, dz))


def nearest_neighbors(p):
    for i in range(len(p)):
        for s in (-1, 1):
            q = list(p)
            q[i] += s
            yield tuple(q)


def crossing_by_bfs(occupied: set, center, inner: int, outer: int, star: bool) -> bool:
    """Definition-level crossing check by breadth-first search.

    Start from occupied sites adjacent to the inner ball, stop on reaching
    an occupied site adjacent to the outer complement.
    """
    nbrs = star_neighbors if star else nearest_neighbors

    def dist(p):
        return max(abs(a - b) for a, b in zip(p, center))

    def touches_inner(p):
        return any(dist(q) <= inner for q in nbrs(p))

    def touches_outer(p):
        return any(dist(q) > outer for q in nbrs(p))

    frontier = [p for p in occupied if touches_inner(p)]
    seen = set(frontier)
    while frontier:
        nxt = []
        for p in frontier:
            if touches_outer(p):
                return True
            for q in nbrs(p):
                if q in occupied and q not in seen:
                    seen.add(q)
                    nxt.append(q)
        frontier = nxt
    return False


def threshold_by_grid(realize, check, grid: int = 1024):
    """Smallest alpha on a uniform grid at which `check(realize(alpha))` holds.

    Returns math.inf when even alpha = 1 yields no crossing.
    """
    if not check(realize(1.0)):
        return math.inf
    for j in range(grid + 1):
        a = j / grid
        if check(realize(a)):
            return a
    raise AssertionError("unreachable: check held at alpha = 1")


# ---------------------------------------------------------------------------
# admissible-pair building blocks (brute force)


def ball_sites(center, radius: int, d: int):
    rng = range(-radius, radius + 1)
    return [
        tuple(c + dz for c, dz in zip(center, offs))
        for offs in itertools.product(rng, repeat=d)
    ]


def star_adjacent_pairs_in_ball(center, radius: int, d: int):
    """Unordered *-adjacent site pairs with both endpoints in the ball."""
    sites = set(ball_sites(center, radius, d))
    pairs = set()
    for p in sites:
        for q in star_neighbors(p):
            if q in sites:
                pairs.add(frozenset((p, q)))
    return [tuple(sorted(fp)) for fp in sorted(map(sorted, pairs), key=str)]


def count_admissible_leaf_choices(d: int, L: int) -> tuple[int, int]:
    """(number of singleton choices, number of *-pair choices) in B(0, 2L)."""
    singles = (4 * L + 1) ** d
    pairs = len(star_adjacent_pairs_in_ball((0,) * d, 2 * L, d))
    return singles, pairs


# ---------------------------------------------------------------------------
# shell counts for the embedding-count formula (independent arithmetic)


def linf_shell_count(d: int, r: int) -> int:
    """Number of lattice points with linf norm exactly r, exact arithmetic."""
    if r == 0:
        return 1
    return (2 * r + 1) ** d - (2 * r - 1) ** d


def embedding_count_formula(d: int, ell: int, N: int) -> int:
    per_node = linf_shell_count(d, 2 * ell) * linf_shell_count(d, ell)
    return per_node ** (2**N - 1)


# ---------------------------------------------------------------------------
# misc closed forms


def displacement_tail_closed_form(d: int, S: float, r: float) -> float:
    """2d * exp(-(r/2) ln(1 + d r / S)) for the nearest-neighbour walk."""
    return 2 * d * math.exp(-(r / 2) * math.log(1 + d * r / S))


def two_site_joint_closed_form(alpha: float, h: float) -> float:
    """mu_alpha[xi(0)=xi(x)=1] = alpha^2 + alpha(1-alpha) h(x)."""
    return alpha * alpha + alpha * (1 - alpha) * h


def exact_mean_alpha_pow(alpha: Fraction, counts: dict[int, int]) -> Fraction:
    """Exact E[alpha^N] for a finite empirical distribution of class counts."""
    total = sum(counts.values())
    acc = Fraction(0)
    for n, c in counts.items():
        acc += Fraction(c) * (alpha**n)
    return acc / total
