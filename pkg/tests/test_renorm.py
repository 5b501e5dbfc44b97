"""Tree-embedding combinatorics: counts, extraction, spread-out, admissible pairs.

Counting formulas are cross-checked against the independent shell arithmetic
in ``oracles.py`` and against full enumeration where feasible.  Extraction is
exercised on synthetic crossing paths whose geometry is known by
construction, and the spread-out check is driven both with enumerated and
randomly sampled embeddings.
"""

import itertools
import json
import math

import numpy as np
import pytest

from voterperc.lattice import dist_linf, enumerate_region, Window
from voterperc.renorm import (
    AdmissiblePair,
    ExtractionError,
    ProperEmbedding,
    Scales,
    admissible_count_bound,
    admissible_pair_at,
    check_spread_out,
    count_admissible_pairs,
    count_embeddings,
    enumerate_admissible_pairs,
    enumerate_embeddings,
    extract_embedding,
    leaf_ball_choices,
    sample_embedding,
    tree_nodes,
    validate_admissible_pair,
    validate_embedding,
)

from oracles import count_admissible_leaf_choices, embedding_count_formula


# ---------------------------------------------------------------------------
# scales and tree shape


def test_scales_validation():
    s = Scales(L=2, ell=6, N=3)
    assert [s.scale(k) for k in range(4)] == [2, 12, 72, 432]
    with pytest.raises(ValueError):
        Scales(L=2, ell=5, N=1)
    with pytest.raises(ValueError):
        Scales(L=0, ell=6, N=1)
    with pytest.raises(ValueError):
        Scales(L=1, ell=6, N=-1)
    with pytest.raises(ValueError):
        s.scale(-1)


def test_tree_nodes_shape():
    assert tree_nodes(0) == [()]
    nodes = tree_nodes(2)
    assert nodes == [(), (1,), (2,), (1, 1), (1, 2), (2, 1), (2, 2)]
    assert len(tree_nodes(3)) == 2**4 - 1


# ---------------------------------------------------------------------------
# embedding validation


def test_validate_root_only():
    s = Scales(L=1, ell=6, N=0)
    assert validate_embedding(ProperEmbedding(mapping={(): (0, 0, 0)}), s) == []
    bad = validate_embedding(ProperEmbedding(mapping={(): (1, 0, 0)}), s)
    assert len(bad) == 1 and "condition (1)" in bad[0]


def test_validate_hand_case_n1():
    s = Scales(L=2, ell=6, N=1)
    l1 = s.scale(1)
    t = ProperEmbedding(
        mapping={(): (0, 0, 0), (1,): (l1, 0, 0), (2,): (0, 2 * l1, 0)}
    )
    assert validate_embedding(t, s) == []


def test_validate_structural_errors_raise():
    s = Scales(L=1, ell=6, N=1)
    with pytest.raises(ValueError, match="node set mismatch"):
        validate_embedding(ProperEmbedding(mapping={(): (0, 0, 0)}), s)
    with pytest.raises(ValueError, match="mixed dimensions"):
        validate_embedding(
            ProperEmbedding(mapping={(): (0, 0, 0), (1,): (6, 0), (2,): (12, 0, 0)}),
            s,
        )


def test_validate_placement_violations():
    s = Scales(L=2, ell=6, N=1)
    # child 1 off the L-sublattice (odd coordinate)
    t = ProperEmbedding(
        mapping={(): (0, 0, 0), (1,): (11, 0, 0), (2,): (24, 0, 0)}
    )
    msgs = validate_embedding(t, s)
    assert any("condition (2)" in m for m in msgs)
    # wrong child distances: |T(m1)| = 2 L_1 and |T(m2)| = L_1
    t = ProperEmbedding(
        mapping={(): (0, 0, 0), (1,): (24, 0, 0), (2,): (12, 0, 0)}
    )
    msgs = validate_embedding(t, s)
    assert sum("condition (3)" in m for m in msgs) == 2


# ---------------------------------------------------------------------------
# counting and enumeration


def test_count_matches_independent_formula():
    for d, ell, N in [(1, 6, 1), (2, 7, 1), (3, 6, 1), (3, 6, 2), (3, 9, 3)]:
        assert count_embeddings(d, ell, N) == embedding_count_formula(d, ell, N)
    assert count_embeddings(3, 6, 0) == 1
    assert count_embeddings(3, 6, 1) == 2_994_628
    assert count_embeddings(3, 6, 2) == 2_994_628**3
    with pytest.raises(ValueError):
        count_embeddings(3, 5, 1)


def test_enumerate_n0_single():
    embs = list(enumerate_embeddings(3, 6, 0))
    assert len(embs) == 1 and embs[0].mapping == {(): (0, 0, 0)}


def test_enumerate_full_low_dimension():
    # d = 1: two choices per shell, 4 embeddings total
    embs = list(enumerate_embeddings(1, 6, 1, L=2))
    assert len(embs) == count_embeddings(1, 6, 1) == 4
    s = Scales(L=2, ell=6, N=1)
    assert all(validate_embedding(t, s) == [] for t in embs)
    assert len({t.key() for t in embs}) == 4

    # d = 2 full sweep with dedup
    embs = list(enumerate_embeddings(2, 6, 1))
    assert len(embs) == count_embeddings(2, 6, 1)
    assert len({t.key() for t in embs}) == len(embs)
    s = Scales(L=1, ell=6, N=1)
    assert all(validate_embedding(t, s) == [] for t in embs[:: len(embs) // 97])


def test_enumerate_guard():
    with pytest.raises(ValueError, match="N <= 1"):
        list(enumerate_embeddings(3, 6, 2))


def test_sampled_embeddings_validate():
    rng = np.random.default_rng(11)
    s = Scales(L=2, ell=7, N=3)
    for _ in range(5):
        t = sample_embedding(3, 7, 3, L=2, rng=rng)
        assert validate_embedding(t, s) == []
        assert len(t.leaves()) == 8


def test_embedding_json_round_trip():
    rng = np.random.default_rng(3)
    t = sample_embedding(3, 6, 2, L=1, rng=rng)
    back = ProperEmbedding.from_json(t.to_json())
    assert back.mapping == t.mapping
    keys = set(json.loads(t.to_json()))
    assert "" in keys and "12" in keys and len(keys) == 7


# ---------------------------------------------------------------------------
# spread-out property


def test_spread_out_enumerated_n1():
    s = Scales(L=2, ell=6, N=1)
    stream = enumerate_embeddings(3, 6, 1, L=2)
    for t in itertools.islice(stream, 2000):
        rep = check_spread_out(t, s)
        assert rep["ok"], rep
        assert rep["disjoint"]


def test_spread_out_sampled_n3():
    rng = np.random.default_rng(5)
    s = Scales(L=1, ell=6, N=3)
    for _ in range(40):
        rep = check_spread_out(sample_embedding(3, 6, 3, rng=rng), s)
        assert rep["ok"], rep
        assert rep["n_leaves"] == 8


def test_spread_out_bound_is_sharp():
    # sibling leaves at the minimal separation ell L reach the k = 1 bound
    s = Scales(L=2, ell=6, N=1)
    t = ProperEmbedding(
        mapping={(): (0, 0, 0), (1,): (12, 0, 0), (2,): (24, 0, 0)}
    )
    rep = check_spread_out(t, s)
    assert rep["ok"] and rep["disjoint"]
    assert rep["per_k"][0]["max_count"] == rep["per_k"][0]["bound"] == 2

    # maximally contracted N = 2: all four leaf centers within the k = 2
    # threshold, so the k = 2 count attains 4
    s2 = Scales(L=1, ell=6, N=2)
    t2 = ProperEmbedding(
        mapping={
            (): (0, 0, 0),
            (1,): (36, 0, 0),
            (2,): (72, 0, 0),
            (1, 1): (42, 0, 0),
            (1, 2): (48, 0, 0),
            (2, 1): (66, 0, 0),
            (2, 2): (60, 0, 0),
        }
    )
    assert validate_embedding(t2, s2) == []
    rep2 = check_spread_out(t2, s2)
    assert rep2["ok"], rep2
    by_k = {row["k"]: row for row in rep2["per_k"]}
    assert by_k[2]["max_count"] == by_k[2]["bound"] == 4


def test_spread_out_artificial_overlap_fails():
    # two leaves closer than 4L: balls intersect, disjointness must fail
    s = Scales(L=1, ell=6, N=1)
    t = ProperEmbedding(
        mapping={(): (0, 0, 0), (1,): (6, 0, 0), (2,): (8, 0, 0)}
    )
    rep = check_spread_out(t, s)
    assert not rep["disjoint"]
    assert not rep["ok"]
    assert rep["embedding_violations"]  # (2,) is not at distance 2 L_1


def test_spread_out_structural_error_raises():
    s = Scales(L=1, ell=6, N=1)
    with pytest.raises(ValueError, match="node set mismatch"):
        check_spread_out(ProperEmbedding(mapping={(): (0, 0, 0)}), s)


# ---------------------------------------------------------------------------
# extraction from crossing paths


def straight_ray(d: int, length: int) -> list[tuple]:
    return [(x,) + (0,) * (d - 1) for x in range(length + 1)]


def staircase_path(d: int, length: int, rng) -> list[tuple]:
    """A *-path from the origin whose linf norm grows by 1 each step.

    The leading coordinate carries the norm; the others jitter inside it,
    so every sphere S(0, r) with r <= length is met exactly once.
    """
    p = [0] * d
    out = [tuple(p)]
    for _ in range(length):
        p[0] += 1
        j = int(rng.integers(1, d)) if d > 1 else 0
        if j:
            step = int(rng.integers(-1, 2))
            if abs(p[j] + step) <= p[0]:
                p[j] += step
        out.append(tuple(p))
    return out


def assert_leaf_spheres_met(path, t: ProperEmbedding, s: Scales):
    pts = set(map(tuple, path))
    for c in t.leaf_centers():
        dists = {dist_linf(p, c) for p in pts}
        assert s.scale(0) - 1 in dists, (c, sorted(dists)[:5])
        assert 2 * s.scale(0) in dists, (c, sorted(dists)[:5])


def test_extract_straight_ray():
    for N in (1, 2):
        s = Scales(L=1, ell=6, N=N)
        path = straight_ray(3, 2 * s.scale(N))
        t = extract_embedding(path, s)
        assert validate_embedding(t, s) == []
        assert_leaf_spheres_met(path, t, s)


def test_extract_staircases():
    rng = np.random.default_rng(17)
    for N in (1, 2):
        s = Scales(L=1, ell=6, N=N)
        for _ in range(10):
            path = staircase_path(3, 2 * s.scale(N), rng)
            t = extract_embedding(path, s)
            assert validate_embedding(t, s) == []
            assert_leaf_spheres_met(path, t, s)


def test_extract_scaled_base():
    s = Scales(L=2, ell=6, N=1)
    path = straight_ray(3, 2 * s.scale(1))
    t = extract_embedding(path, s)
    assert validate_embedding(t, s) == []
    assert_leaf_spheres_met(path, t, s)


def test_extract_preconditions():
    s = Scales(L=1, ell=6, N=1)
    with pytest.raises(ValueError, match="top-scale annulus"):
        extract_embedding(straight_ray(3, s.scale(1) // 2), s)
    with pytest.raises(ValueError, match="not a \\*-connected path"):
        extract_embedding([(0, 0, 0), (2, 0, 0)], s)
    assert issubclass(ExtractionError, RuntimeError)


# ---------------------------------------------------------------------------
# admissible pairs


def host(N: int, L: int) -> ProperEmbedding:
    if N == 0:
        return ProperEmbedding(mapping={(): (0, 0, 0)})
    s = Scales(L=L, ell=6, N=1)
    l1 = s.scale(1)
    return ProperEmbedding(
        mapping={(): (0, 0, 0), (1,): (l1, 0, 0), (2,): (0, 2 * l1, 0)}
    )


def test_admissible_count_n0_matches_oracle():
    t = host(0, 1)
    singles, pairs = count_admissible_leaf_choices(3, 1)
    assert (singles, pairs) == (125, 1036)
    assert count_admissible_pairs(t, 1) == singles + pairs == 1161
    stream = list(enumerate_admissible_pairs(t, 1))
    assert len(stream) == 1161
    assert len(set((p.X, p.Y) for p in stream)) == 1161
    for pair in stream:
        assert validate_admissible_pair(pair, t, 1) == []
    assert count_admissible_pairs(t, 1) <= admissible_count_bound(t, 1)


def test_admissible_count_l2_matches_oracle():
    t = host(0, 2)
    singles, pairs = count_admissible_leaf_choices(3, 2)
    assert count_admissible_pairs(t, 2) == singles + pairs
    sample = itertools.islice(enumerate_admissible_pairs(t, 2), 500)
    for pair in sample:
        assert validate_admissible_pair(pair, t, 2) == []


def test_admissible_n1_product_structure():
    t = host(1, 1)
    per_leaf = count_admissible_pairs(host(0, 1), 1)
    assert count_admissible_pairs(t, 1) == per_leaf**2
    # identity on a sampled prefix plus random access deep into the stream
    prefix = list(itertools.islice(enumerate_admissible_pairs(t, 1), 300))
    for i, pair in enumerate(prefix):
        assert admissible_pair_at(t, 1, i) == pair
        assert len(pair.X) / 2 + len(pair.Y) == 2
    rng = np.random.default_rng(23)
    total = count_admissible_pairs(t, 1)
    for idx in rng.integers(0, total, size=50):
        pair = admissible_pair_at(t, 1, int(idx))
        assert validate_admissible_pair(pair, t, 1) == []


def test_admissible_sites_inside_leaf_balls():
    t = host(1, 1)
    balls = [
        set(enumerate_region(Window(center=c, radius=2)))
        for c in t.leaf_centers()
    ]
    rng = np.random.default_rng(29)
    total = count_admissible_pairs(t, 1)
    for idx in rng.integers(0, total, size=20):
        pair = admissible_pair_at(t, 1, int(idx))
        for site in pair.X + pair.Y:
            assert any(site in b for b in balls)


def test_admissible_guards_and_bad_pairs():
    t = host(1, 1)
    with pytest.raises(ValueError, match="guarded"):
        list(enumerate_admissible_pairs(t, 3))
    with pytest.raises(ValueError, match="positive"):
        count_admissible_pairs(t, 0)
    with pytest.raises(ValueError, match="outside"):
        admissible_pair_at(t, 1, count_admissible_pairs(t, 1))

    t0 = host(0, 1)
    # non-adjacent X pair
    bad = AdmissiblePair(X=((0, 0, 0), (2, 0, 0)), Y=(), embedding=t0)
    msgs = validate_admissible_pair(bad, t0, 1)
    assert any("not \\*-adjacent" in m or "not *-adjacent" in m for m in msgs)
    # site outside every leaf ball
    bad = AdmissiblePair(X=(), Y=((9, 9, 9),), embedding=t0)
    msgs = validate_admissible_pair(bad, t0, 1)
    assert any("outside" in m for m in msgs)
    # empty selection breaks the leaf-count identity
    bad = AdmissiblePair(X=(), Y=(), embedding=t0)
    msgs = validate_admissible_pair(bad, t0, 1)
    assert any("identity" in m for m in msgs)


def test_leaf_ball_choices_translation():
    t = host(1, 2)
    per_leaf = leaf_ball_choices(t, 2)
    leaves = t.leaves()
    assert set(per_leaf) == set(leaves)
    c = t.mapping[leaves[0]]
    kinds = {kind for kind, _ in per_leaf[leaves[0]]}
    assert kinds == {"pair", "single"}
    for kind, payload in per_leaf[leaves[0]][:50]:
        for site in payload:
            assert dist_linf(site, c) <= 4
