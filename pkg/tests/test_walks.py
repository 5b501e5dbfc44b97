"""Event-engine invariants on small systems (reference loop)."""

import csv
import itertools
import math

import numpy as np
import pytest

from voterperc.green import build_table, support_size
from voterperc.lattice import dist_linf
from voterperc.seeding import UniformBlocks, replica_rng
from voterperc.walks import (
    EventEngine,
    StepKernel,
    batch_pair_meetings,
    coupled_coalescing_annihilating,
    dump_event_log,
    pack_width,
    pair_meeting,
    simulate_system,
)

K3 = StepKernel(3, 1)
K1 = StepKernel(1, 1)


def ball_sites(d, r):
    return [z for z in itertools.product(range(-r, r + 1), repeat=d)]


def test_step_kernel_support_and_order():
    for d, R in [(1, 1), (3, 1), (3, 2), (2, 3)]:
        k = StepKernel(d, R)
        assert k.n_steps == support_size(d, R)
        rows = [tuple(r) for r in k.steps]
        assert rows == sorted(rows)
        assert all(0 < sum(abs(c) for c in z) <= R for z in rows)
    assert K3.n_steps == 6
    with pytest.raises(ValueError):
        StepKernel(0, 1)
    with pytest.raises(ValueError):
        StepKernel(3, 0)


def test_step_kernel_sample_uniform():
    rng = np.random.default_rng(0)
    draws = K3.sample(rng, size=6000)
    rows = [tuple(r) for r in K3.steps]
    counts = {z: 0 for z in rows}
    for r in draws:
        counts[tuple(r)] += 1
    chi2 = sum((c - 1000.0) ** 2 / 1000.0 for c in counts.values())
    assert chi2 < 30.0  # df = 5
    assert np.allclose(K3.weights, 1.0 / 6.0)


def test_pack_width():
    assert pack_width(1) == 21
    assert pack_width(3) == 21
    assert pack_width(4) == 15
    assert pack_width(5) == 12
    assert pack_width(7) == 9


def test_engine_validation():
    with pytest.raises(ValueError):
        EventEngine([(0, 0, 0), (0, 0, 0)], K3, seed=0)
    with pytest.raises(ValueError):
        EventEngine([], K3, seed=0)
    with pytest.raises(ValueError):
        EventEngine([(0, 0)], K3, seed=0)
    with pytest.raises(ValueError):
        EventEngine([(0, 0, 0)], K3, mode="bogus", seed=0)
    with pytest.raises(ValueError):
        EventEngine([(0, 0, 0)], K3, free_period=1.0, seed=0)
    with pytest.raises(ValueError):
        EventEngine([(0, 0, 0)], K3, mode="delayed-coalescing", seed=0)
    cap = (1 << 20) - 2  # d=3 packing: 21 bits, offset 2^20, R=1
    EventEngine([(cap, 0, 0), (0, 0, 0)], K3, seed=0)
    with pytest.raises(OverflowError):
        EventEngine([(cap + 1, 0, 0), (0, 0, 0)], K3, seed=0)
    eng = EventEngine([(0, 0, 0), (1, 0, 0)], K3, seed=0)
    with pytest.raises(ValueError):
        eng.run()  # no stop rule
    ind = EventEngine([(0, 0, 0), (1, 0, 0)], K3, mode="independent", seed=0)
    with pytest.raises(ValueError):
        ind.run(until_absorbed=True)


def test_coalescing_invariants_small_system():
    sites = ball_sites(3, 1)
    sys = simulate_system(sites, K3, "coalescing", horizon=50.0, seed=5, engine="python")
    n = len(sites)
    assert sys.n_trace_counts[0] == n
    assert all(a >= b for a, b in zip(sys.n_trace_counts, sys.n_trace_counts[1:]))
    assert sys.n_trace_counts[-1] == sys.n_classes
    assert sys.clock <= 50.0
    assert sys.stop_reason in ("horizon", "absorbed")
    # representatives carry the minimal member index, distinct classes
    # occupy distinct sites
    reps = sorted(set(int(r) for r in sys.rep_index))
    for i, r in enumerate(sys.rep_index):
        assert r <= i
    live_pos = [tuple(int(c) for c in sys.positions[r]) for r in reps]
    assert len(set(live_pos)) == len(live_pos)
    # class_map points every origin at the lexicographically least member
    groups = {}
    for org, rep in sys.class_map().items():
        groups.setdefault(rep, []).append(org)
    for rep, members in groups.items():
        assert rep == min(members)


def test_coalescing_absorbs_in_d1():
    sys = simulate_system(
        [(0,), (1,), (5,)], K1, "coalescing", until_absorbed=True, horizon=math.inf, seed=2
    )
    assert sys.stop_reason == "absorbed"
    assert sys.n_classes == 1


def test_annihilating_parity():
    sys = simulate_system(
        [(0,), (1,), (4,), (5,)], K1, "annihilating", horizon=400.0, seed=3
    )
    n_alive = int(sys.alive.sum())
    assert n_alive % 2 == 0
    assert sys.annihilations == (4 - n_alive) // 2
    assert sys.n_classes == n_alive
    assert sys.n_trace_counts[-1] == n_alive


def test_independent_mode_never_merges():
    sys = simulate_system(
        [(0, 0, 0), (1, 0, 0), (0, 1, 0)], K3, "independent", horizon=30.0, seed=4
    )
    assert np.array_equal(sys.rep_index, np.arange(3))
    assert sys.n_classes == 3


def test_event_log_determinism_and_replica_independence():
    sites = [(0, 0, 0), (1, 0, 0), (3, 2, 1), (-2, 0, 4)]
    a = simulate_system(sites, K3, horizon=20.0, rng=replica_rng(9, 0), record_events=True)
    b = simulate_system(sites, K3, horizon=20.0, rng=replica_rng(9, 0), record_events=True)
    c = simulate_system(sites, K3, horizon=20.0, rng=replica_rng(9, 1), record_events=True)
    assert a.events == b.events
    assert a.events != c.events
    assert all(kind in ("jump", "coalesce") for *_, kind in a.events)


def test_segmentation_invariance_reference_loop():
    sites = ball_sites(3, 1)

    def make():
        return EventEngine(sites, K3, stream=UniformBlocks(replica_rng(13, 0)),
                           use_compiled=False)

    one = make()
    one.run(12.0)
    seg = make()
    for t in (1.5, 4.0, 4.0, 9.25, 12.0):  # repeated horizons are no-ops
        seg.run(t)
    assert one.clock == seg.clock
    assert np.array_equal(one.rep_index(), seg.rep_index())
    assert np.array_equal(one.pos, seg.pos)
    assert one.trace_t == seg.trace_t and one.trace_n == seg.trace_n
    # both streams sit at the same read position
    assert one.stream.take() == seg.stream.take()


def test_event_log_csv(tmp_path):
    sys = simulate_system(
        [(0, 0, 0), (1, 1, 1)], K3, horizon=10.0, seed=1, record_events=True
    )
    path = tmp_path / "events.csv"
    dump_event_log(sys, str(path))
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time", "walker_id", "dx_1", "dx_2", "dx_3", "event_kind"]
    assert len(rows) - 1 == len(sys.events)
    times = [float(r[0]) for r in rows[1:]]
    assert times == sorted(times)
    bare = simulate_system([(0, 0, 0), (1, 1, 1)], K3, horizon=1.0, seed=1)
    with pytest.raises(ValueError):
        dump_event_log(bare, str(path))


def test_snapshot_partition_refines_final():
    sites = ball_sites(3, 1)
    sys = simulate_system(
        sites, K3, horizon=40.0, seed=7, snapshot_time=2.0, engine="python"
    )
    snap = sys.snapshot_rep_index
    assert snap is not None
    for i in range(len(sites)):
        for j in range(i + 1, len(sites)):
            if snap[i] == snap[j]:
                assert sys.rep_index[i] == sys.rep_index[j]
    cm = sys.classes_at_snapshot()
    assert set(cm) == set(sys.origins)


def test_max_displacement_dominates_final_offset():
    sites = ball_sites(3, 1)
    sys = simulate_system(
        sites, K3, horizon=15.0, seed=8, track_displacement_until=15.0, engine="python"
    )
    assert sys.max_displacement is not None
    for i, org in enumerate(sys.origins):
        final = tuple(int(c) for c in sys.positions[sys.rep_index[i]])
        assert sys.max_displacement[i] >= dist_linf(final, org)


def test_delayed_coalescing_free_phase():
    sys = simulate_system(
        [(0,), (1,)], K1, "delayed-coalescing", free_period=5.0, horizon=25.0, seed=4
    )
    # merges can only happen after the free period
    merge_times = sys.n_trace_times[1:][np.diff(sys.n_trace_counts) < 0]
    assert all(t >= 5.0 for t in merge_times)
    assert sys.collisions_before_free_period >= 1  # this seed collides early
    # a zero free period reduces to plain coalescing, event for event
    a = simulate_system(
        [(0,), (3,)], K1, "delayed-coalescing", free_period=0.0, horizon=20.0,
        rng=replica_rng(21, 0), record_events=True,
    )
    b = simulate_system(
        [(0,), (3,)], K1, "coalescing", horizon=20.0,
        rng=replica_rng(21, 0), record_events=True,
    )
    assert a.events == b.events


def test_until_absorbed_with_horizon_cap():
    sys = simulate_system(
        [(0, 0, 0), (1, 0, 0), (0, 3, 0)], K3, horizon=30.0, until_absorbed=True, seed=11
    )
    assert sys.stop_reason in ("absorbed", "horizon")
    if sys.stop_reason == "absorbed":
        assert sys.n_classes == 1
    else:
        assert sys.clock == 30.0


def test_pair_meeting_outcomes():
    tab = build_table(3, 1)
    out = pair_meeting((2, 2, 2), (2, 2, 2), K3, escape_radius=8, seed=0)
    assert out.status == "met" and out.time == 0.0 and out.residual_bound == 0.0

    met = escaped = 0
    for i in range(40):
        out = pair_meeting(
            (0, 0, 0), (1, 0, 0), K3, escape_radius=24,
            rng=replica_rng(40, i), table=tab,
        )
        if out.status == "met":
            met += 1
            assert out.final_separation == 0
            assert out.residual_bound == 0.0
        else:
            escaped += 1
            assert out.status == "escaped"
            assert out.final_separation > 24
            # remaining meeting probability from |x| ~ 25 is a few percent
            assert 0.0 < out.residual_bound < 0.05
    assert met > 0 and escaped > 0

    out = pair_meeting((0, 0, 0), (9, 9, 9), K3, horizon=0.5, seed=1, table=tab)
    assert out.status in ("horizon", "met")
    if out.status == "horizon":
        assert out.time == 0.5
        assert out.residual_bound > 0


def test_batch_pair_meetings_matches_hitting_oracle():
    tab = build_table(3, 1)
    n = 4000
    out = batch_pair_meetings(
        (0, 0, 0), (1, 0, 0), K3, escape_radius=128.0, n=n,
        rng=replica_rng(50, 0),
    )
    assert set(np.unique(out["status"])) <= {0, 1}
    p_hat = float((out["status"] == 0).mean())
    se = math.sqrt(p_hat * (1 - p_hat) / n)
    residual = tab.far_bound  # escaped walks may still meet later
    assert abs(p_hat - 0.340537330) <= 3 * se + residual
    assert np.isnan(out["time"]).all()  # no waiting times drawn at infinite horizon
    esc = out["final_separation"][out["status"] == 1]
    assert (esc > 128).all()


def test_batch_engines_agree():
    args = dict(escape_radius=48.0, n=1500)
    a = batch_pair_meetings(
        (0, 0, 0), (2, 0, 0), K3, rng=replica_rng(51, 0), engine="numpy", **args
    )
    b = batch_pair_meetings(
        (0, 0, 0), (2, 0, 0), K3, rng=replica_rng(51, 1), engine="compiled", **args
    )
    pa = float((a["status"] == 0).mean())
    pb = float((b["status"] == 0).mean())
    se = math.sqrt(2 * 0.25 / args["n"])
    assert abs(pa - pb) <= 3 * se


def test_batch_finite_horizon_and_cap():
    n = 300
    out = batch_pair_meetings(
        (0, 0, 0), (1, 0, 0), K3, escape_radius=1e6, n=n,
        rng=replica_rng(52, 0), horizon=25.0,
    )
    assert set(np.unique(out["status"])) <= {0, 2}
    met = out["status"] == 0
    assert np.all(out["time"][met] <= 25.0)
    assert np.all(out["time"][~met] == 25.0)
    assert np.all(out["final_separation"][met] == 0)

    capped = batch_pair_meetings(
        (0, 0, 0), (5, 5, 5), K3, escape_radius=1e6, n=50,
        rng=replica_rng(52, 1), max_steps=64, chunk=32, engine="numpy",
    )
    assert (capped["status"] == 3).any()
    assert (capped["final_separation"][capped["status"] == 3] > 0).all()

    zero = batch_pair_meetings(
        (3, 3, 3), (3, 3, 3), K3, escape_radius=8.0, n=4, rng=replica_rng(52, 2)
    )
    assert (zero["status"] == 0).all()
    assert (zero["time"] == 0.0).all()


def test_coupled_inclusion_smoke():
    for d, kernel, sites in [
        (1, K1, [(0,), (1,), (3,), (6,)]),
        (3, K3, [(0, 0, 0), (1, 0, 0), (2, 1, 0), (0, 0, 3), (1, 1, 1)]),
    ]:
        for i in range(30):
            out = coupled_coalescing_annihilating(
                sites, kernel, horizon=25.0, rng=replica_rng(60 + d, i)
            )
            assert out.inclusion_ok and out.violations == 0
            assert out.annihilating_sites <= out.coalescing_sites
            assert (len(sites) - 2 * out.annihilations) == len(out.annihilating_sites)
            ts = [t for t, *_ in out.n_trace]
            assert ts == sorted(ts)
