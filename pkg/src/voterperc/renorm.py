"""Multi-scale tree combinatorics over nested lattice scales.

A binary tree of depth N embeds into Z^d with the root at the origin, nodes
at depth k on the sublattice L_{N-k} Z^d, and the two children of a node at
linf distance exactly L_{N-k} and 2 L_{N-k} from it, where L_j = L * ell^j.
The module counts and enumerates these embeddings exactly, extracts one from
any *-path crossing the top-scale annulus, verifies that leaf balls are
spread out on all scales, and enumerates the admissible site pairs that
assign each leaf ball either one *-adjacent site pair or one single site.

All counts use exact integer arithmetic.  The scale ratio ell must be at
least 6; the combinatorial statements are only asserted in that regime and
the module refuses smaller values rather than extrapolating.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .lattice import (
    Site,
    Window,
    check_site,
    dist_linf,
    enumerate_region,
    enumerate_sphere,
    neighbors,
    site_add,
    sphere_size,
    validate_path,
)

__all__ = [
    "Node",
    "Scales",
    "ProperEmbedding",
    "AdmissiblePair",
    "ExtractionError",
    "tree_nodes",
    "validate_embedding",
    "count_embeddings",
    "enumerate_embeddings",
    "sample_embedding",
    "check_spread_out",
    "extract_embedding",
    "leaf_ball_choices",
    "count_admissible_pairs",
    "admissible_count_bound",
    "enumerate_admissible_pairs",
    "admissible_pair_at",
    "validate_admissible_pair",
]

Node = tuple[int, ...]


@dataclass(frozen=True)
class Scales:
    """Nested scales L_k = L * ell^k for k = 0..N."""

    L: int
    ell: int
    N: int

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("base scale L must be a positive integer")
        if self.ell < 6:
            raise ValueError("scale ratio ell must be >= 6; smaller ratios are outside the stated regime")
        if self.N < 0:
            raise ValueError("depth N must be non-negative")

    def scale(self, k: int) -> int:
        if k < 0:
            raise ValueError("scale index must be >= 0")
        return self.L * self.ell**k


class ExtractionError(RuntimeError):
    """No candidate child center exists; would falsify the embedding lemma."""


def tree_nodes(N: int) -> list[Node]:
    """All nodes of the depth-N binary tree, root first, lex within depth."""
    out: list[Node] = []
    for k in range(N + 1):
        out.extend(itertools.product((1, 2), repeat=k))
    return out


@dataclass(frozen=True)
class ProperEmbedding:
    """A map from binary-tree nodes (tuples over {1, 2}) to lattice sites."""

    mapping: dict[Node, Site]

    @property
    def N(self) -> int:
        return max(len(m) for m in self.mapping)

    @property
    def d(self) -> int:
        return len(self.mapping[()])

    def leaves(self) -> list[Node]:
        n = self.N
        return [m for m in sorted(self.mapping) if len(m) == n]

    def leaf_centers(self) -> list[Site]:
        return [self.mapping[m] for m in self.leaves()]

    def key(self) -> tuple:
        """Hashable identity (sorted node/site pairs), for dedup checks."""
        return tuple(sorted(self.mapping.items()))

    def to_json(self) -> str:
        return json.dumps(
            {"".join(map(str, node)): list(site) for node, site in sorted(self.mapping.items())}
        )

    @classmethod
    def from_json(cls, text: str) -> "ProperEmbedding":
        raw = json.loads(text)
        mapping = {
            tuple(int(c) for c in key): check_site(site) for key, site in raw.items()
        }
        return cls(mapping=mapping)


def validate_embedding(t: ProperEmbedding, s: Scales) -> list[str]:
    """Check the three embedding conditions; empty list means valid.

    Raises for structural problems (wrong node set, mixed dimensions);
    returns one message per violated placement condition otherwise.
    """
    expected = set(tree_nodes(s.N))
    have = set(t.mapping)
    if have != expected:
        missing = sorted(expected - have)
        extra = sorted(have - expected)
        raise ValueError(f"node set mismatch: missing {missing[:4]}, unexpected {extra[:4]}")
    d = len(t.mapping[()])
    if any(len(site) != d for site in t.mapping.values()):
        raise ValueError("embedded sites have mixed dimensions")

    violations: list[str] = []
    origin = (0,) * d
    if t.mapping[()] != origin:
        violations.append(f"condition (1): root maps to {t.mapping[()]}, expected the origin")
    for m, site in sorted(t.mapping.items()):
        spacing = s.scale(s.N - len(m))
        if any(c % spacing for c in site):
            violations.append(
                f"condition (2): node {m} at {site} is not on the spacing-{spacing} sublattice"
            )
    for m in sorted(t.mapping):
        k = len(m)
        if k >= s.N:
            continue
        step = s.scale(s.N - k)
        got1 = dist_linf(t.mapping[m + (1,)], t.mapping[m])
        got2 = dist_linf(t.mapping[m + (2,)], t.mapping[m])
        if got1 != step:
            violations.append(f"condition (3): |T(m1) - T(m)| = {got1} at node {m}, expected {step}")
        if got2 != 2 * step:
            violations.append(f"condition (3): |T(m2) - T(m)| = {got2} at node {m}, expected {2 * step}")
    return violations


def count_embeddings(d: int, ell: int, N: int) -> int:
    """Exact number of proper embeddings of the depth-N tree into Z^d.

    Each of the 2^N - 1 internal nodes chooses its first child among the
    sublattice shell of radius ell (in child-lattice units) and its second
    among the shell of radius 2*ell, independently.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if ell < 6:
        raise ValueError("scale ratio ell must be >= 6; smaller ratios are outside the stated regime")
    if N < 0:
        raise ValueError("depth N must be non-negative")
    per_node = sphere_size(d, 2 * ell) * sphere_size(d, ell)
    return per_node ** (2**N - 1)


@lru_cache(maxsize=16)
def _shell_offsets(d: int, r: int) -> tuple[Site, ...]:
    return tuple(enumerate_sphere((0,) * d, r))


def enumerate_embeddings(d: int, ell: int, N: int, L: int = 1) -> Iterator[ProperEmbedding]:
    """Stream every proper embedding; guarded to N <= 1.

    Already at N = 2 the count is the cube of the N = 1 count, far beyond
    anything enumerable; larger N must be sampled instead.
    """
    if N > 1:
        raise ValueError("enumeration is guarded to N <= 1; the N = 2 count is already astronomical")
    s = Scales(L=L, ell=ell, N=N)
    origin = (0,) * d
    if N == 0:
        yield ProperEmbedding(mapping={(): origin})
        return
    spacing = s.scale(0)
    for v in _shell_offsets(d, ell):
        c1 = tuple(spacing * c for c in v)
        for w in _shell_offsets(d, 2 * ell):
            c2 = tuple(spacing * c for c in w)
            yield ProperEmbedding(mapping={(): origin, (1,): c1, (2,): c2})


def sample_embedding(d: int, ell: int, N: int, L: int = 1, rng=None) -> ProperEmbedding:
    """Uniform random proper embedding (independent child choices per node)."""
    if rng is None:
        rng = np.random.default_rng()
    s = Scales(L=L, ell=ell, N=N)
    near = _shell_offsets(d, ell)
    far = _shell_offsets(d, 2 * ell)
    mapping: dict[Node, Site] = {(): (0,) * d}
    for k in range(N):
        spacing = s.scale(N - k - 1)
        for m in itertools.product((1, 2), repeat=k):
            base = mapping[m]
            v = near[int(rng.integers(len(near)))]
            w = far[int(rng.integers(len(far)))]
            mapping[m + (1,)] = site_add(base, tuple(spacing * c for c in v))
            mapping[m + (2,)] = site_add(base, tuple(spacing * c for c in w))
    return ProperEmbedding(mapping=mapping)


def check_spread_out(t: ProperEmbedding, s: Scales) -> dict:
    """Leaf balls B(T(m), 2L) are spread out on all scales.

    For each leaf m0 and each scale index k >= 1 whose separation threshold
    ell^k L / 2 lies below the diameter of the embedded image, the number of
    leaves whose ball B(., 2L) comes within linf distance ell^k L / 2 of
    m0's ball (m0 itself included) must not exceed 2^k.  The bound is sharp:
    the leaves sharing m0's k-th ancestor number exactly 2^k, and a leaf
    sibling pair placed at the minimal separation ell L has ball gap
    (ell - 4) L, within the k = 1 threshold ell L / 2 whenever ell <= 8.
    Every leaf outside that ancestor's subtree stays clear of the threshold
    for any ell >= 6 (the child-step geometric series leaves a gap of at
    least ell^(k+1) L / 5 between subtrees).  Pairwise disjointness of the
    balls is checked separately and unconditionally: distinct leaf centers
    are at least ell L > 4L apart, so the 2L-balls never touch.

    Structural defects (wrong node set, mixed dimensions) raise; placement
    violations are reported in the result so that artificial maps can still
    be run through the geometric checks.
    """
    problems = validate_embedding(t, s)
    centers = t.leaf_centers()
    n = len(centers)
    two_l = 2 * s.L

    def ball_dist(a: Site, b: Site) -> int:
        return max(0, dist_linf(a, b) - 2 * two_l)

    nodes = list(t.mapping.values())
    diameter = max(
        (dist_linf(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1 :]),
        default=0,
    )
    per_k = []
    ok = True
    k = 1
    while s.ell**k * s.L / 2.0 < diameter:
        threshold = s.ell**k * s.L / 2.0
        worst = 0
        for c0 in centers:
            close = sum(1 for c in centers if ball_dist(c0, c) <= threshold)
            worst = max(worst, close)
        bound = 2**k
        ok = ok and worst <= bound
        per_k.append({"k": k, "threshold": threshold, "max_count": worst, "bound": bound})
        k += 1
    disjoint = all(
        dist_linf(a, b) > 2 * two_l
        for i, a in enumerate(centers)
        for b in centers[i + 1 :]
    )
    return {
        "ok": ok and disjoint and not problems,
        "disjoint": disjoint,
        "n_leaves": n,
        "diameter": diameter,
        "per_k": per_k,
        "embedding_violations": problems,
    }


def _sphere_hits(points: np.ndarray, centers: np.ndarray, inner: int, outer: int) -> np.ndarray:
    """For each center, does the point set meet S(c, inner) and S(c, outer)?"""
    dist = np.abs(points[None, :, :] - centers[:, None, :]).max(axis=2)
    return (dist == inner).any(axis=1) & (dist == outer).any(axis=1)


def extract_embedding(path: Sequence[Sequence[int]], s: Scales) -> ProperEmbedding:
    """Extract a proper embedding whose leaf annuli the given *-path crosses.

    The path must meet both S(L_N - 1) and S(2 L_N).  Each node's children
    are found by scanning the child-lattice shells at distance L_{N-k} and
    2 L_{N-k} in lexicographic order for a center whose spheres
    S(c, L_{N-k-1} - 1) and S(c, 2 L_{N-k-1}) the path meets; the first hit
    is taken (existence, not uniqueness, is guaranteed).  A scan coming up
    empty raises ExtractionError: for a valid input that would falsify the
    crossing-recursion lemma, so it aborts loudly.
    """
    pts_list = [check_site(p) for p in path]
    if not validate_path(pts_list, "star"):
        raise ValueError("input is not a *-connected path")
    d = len(pts_list[0])
    points = np.unique(np.asarray(pts_list, dtype=np.int64), axis=0)
    origin = (0,) * d

    def meets(center: np.ndarray, j: int) -> bool:
        return bool(_sphere_hits(points, center[None, :], s.scale(j) - 1, 2 * s.scale(j))[0])

    if not meets(np.zeros(d, dtype=np.int64), s.N):
        raise ValueError(
            f"path does not meet both S({s.scale(s.N) - 1}) and S({2 * s.scale(s.N)}): "
            "the top-scale annulus is not crossed"
        )

    mapping: dict[Node, Site] = {(): origin}
    stack: list[Node] = [()]
    while stack:
        m = stack.pop()
        k = len(m)
        if k == s.N:
            continue
        j = s.N - k
        spacing = s.scale(j - 1)
        base = np.asarray(mapping[m], dtype=np.int64)
        for tag, mult in ((1, 1), (2, 2)):
            offsets = np.asarray(_shell_offsets(d, mult * s.ell), dtype=np.int64)
            candidates = base[None, :] + spacing * offsets
            hits = _sphere_hits(points, candidates, spacing - 1, 2 * spacing)
            if not hits.any():
                raise ExtractionError(
                    f"no child candidate at node {m} (distance {mult * s.scale(j)}): "
                    "the path crosses the parent annulus but no child annulus, "
                    "which would falsify the crossing recursion"
                )
            choice = candidates[int(np.argmax(hits))]
            mapping[m + (tag,)] = tuple(int(c) for c in choice)
            stack.append(m + (tag,))

    embedding = ProperEmbedding(mapping=mapping)
    problems = validate_embedding(embedding, s)
    if problems:
        raise ExtractionError(f"extracted embedding fails validation: {problems[0]}")
    return embedding


# ---------------------------------------------------------------------------
# admissible pairs over the leaves


@dataclass(frozen=True)
class AdmissiblePair:
    """Sites drawn from the leaf balls: per ball either a *-adjacent pair
    into X or a single site into Y."""

    X: tuple[Site, ...]
    Y: tuple[Site, ...]
    embedding: ProperEmbedding


LeafChoice = tuple[str, tuple]


@lru_cache(maxsize=8)
def _ball_choices_at_origin(d: int, L: int) -> tuple[tuple[LeafChoice, ...], int]:
    """All per-ball choices for a leaf ball of radius 2L at the origin."""
    sites = enumerate_region(Window(center=(0,) * d, radius=2 * L))
    in_ball = set(sites)
    choices: list[LeafChoice] = []
    for a in sites:
        for b in neighbors(a, "star"):
            if b > a and b in in_ball:
                choices.append(("pair", (a, b)))
    for y in sites:
        choices.append(("single", (y,)))
    return tuple(choices), len(sites)


def leaf_ball_choices(t: ProperEmbedding, L: int) -> dict[Node, list[LeafChoice]]:
    """Per leaf, every admissible ball assignment, translated to the leaf."""
    base, _n = _ball_choices_at_origin(t.d, L)
    out: dict[Node, list[LeafChoice]] = {}
    for m in t.leaves():
        c = t.mapping[m]
        out[m] = [
            (kind, tuple(site_add(p, c) for p in payload)) for kind, payload in base
        ]
    return out


def count_admissible_pairs(t: ProperEmbedding, L: int) -> int:
    """Exact count: the per-ball choice count raised to the leaf count."""
    if L < 1:
        raise ValueError("L must be a positive integer")
    base, _n = _ball_choices_at_origin(t.d, L)
    return len(base) ** len(t.leaves())


def admissible_count_bound(t: ProperEmbedding, L: int) -> int:
    """Union-over-subsets bound: sum over leaf subsets A of
    (|B(2L)| 3^d)^|A| |B(2L)|^(2^N - |A|), exactly (|B(2L)|(3^d + 1))^(2^N)."""
    _base, n_ball = _ball_choices_at_origin(t.d, L)
    return (n_ball * (3**t.d + 1)) ** len(t.leaves())


def _assemble_pair(t: ProperEmbedding, assignment: Sequence[LeafChoice]) -> AdmissiblePair:
    xs: list[Site] = []
    ys: list[Site] = []
    for kind, payload in assignment:
        if kind == "pair":
            xs.extend(payload)
        else:
            ys.extend(payload)
    return AdmissiblePair(X=tuple(sorted(xs)), Y=tuple(sorted(ys)), embedding=t)


def enumerate_admissible_pairs(t: ProperEmbedding, L: int) -> Iterator[AdmissiblePair]:
    """Stream all admissible pairs; guarded to N <= 1 and L <= 2."""
    if t.N > 1 or L > 2:
        raise ValueError("enumeration is guarded to N <= 1 and L <= 2")
    if L < 1:
        raise ValueError("L must be a positive integer")
    per_leaf = leaf_ball_choices(t, L)
    ordered = [per_leaf[m] for m in t.leaves()]
    for assignment in itertools.product(*ordered):
        yield _assemble_pair(t, assignment)


def admissible_pair_at(t: ProperEmbedding, L: int, index: int) -> AdmissiblePair:
    """Random access into the enumeration order (mixed-radix decode).

    Lets large enumerations be spot-checked without streaming them.
    """
    total = count_admissible_pairs(t, L)
    if not 0 <= index < total:
        raise ValueError(f"index {index} outside [0, {total})")
    per_leaf = leaf_ball_choices(t, L)
    ordered = [per_leaf[m] for m in t.leaves()]
    digits: list[int] = []
    for choices in reversed(ordered):
        index, digit = divmod(index, len(choices))
        digits.append(digit)
    assignment = [choices[digit] for choices, digit in zip(ordered, reversed(digits))]
    return _assemble_pair(t, assignment)


def validate_admissible_pair(pair: AdmissiblePair, t: ProperEmbedding, L: int) -> list[str]:
    """Check the per-ball dichotomy, pair adjacency, containment, and the
    leaf-count identity; empty list means admissible."""
    violations: list[str] = []
    leaves = t.leaves()
    xs = set(pair.X)
    ys = set(pair.Y)
    if len(xs) != len(pair.X) or len(ys) != len(pair.Y):
        violations.append("duplicate sites within X or Y")
    covered: set[Site] = set()
    for m in leaves:
        c = t.mapping[m]
        ball = {s for s in enumerate_region(Window(center=c, radius=2 * L))}
        covered |= ball
        bx = sorted(xs & ball)
        by = sorted(ys & ball)
        profile = (len(bx), len(by))
        if profile not in ((2, 0), (0, 1)):
            violations.append(f"leaf {m}: ball profile {profile} is neither (2,0) nor (0,1)")
        if profile == (2, 0) and dist_linf(bx[0], bx[1]) != 1:
            violations.append(f"leaf {m}: X sites {bx} are not *-adjacent")
    stray = (xs | ys) - covered
    if stray:
        violations.append(f"sites outside every leaf ball: {sorted(stray)[:4]}")
    if len(pair.X) / 2 + len(pair.Y) != len(leaves):
        violations.append(
            f"identity failure: |X|/2 + |Y| = {len(pair.X) / 2 + len(pair.Y)}, "
            f"expected {len(leaves)}"
        )
    return violations
