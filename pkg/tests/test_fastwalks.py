"""Reference vs compiled engine: the two must be bit-identical.

Both loops read the same uniform stream with the same per-event layout
(wait, entity pick, step pick) and discard the same block tails, so every
state array must agree exactly, not just statistically.
"""

import itertools
import math

import numpy as np
import pytest

from voterperc.fastwalks import batch_difference_walk
from voterperc.green import build_table
from voterperc.seeding import UniformBlocks, replica_rng
from voterperc.walks import EventEngine, StepKernel, batch_pair_meetings

K3 = StepKernel(3, 1)
K1 = StepKernel(1, 1)

SITES343 = [z for z in itertools.product(range(-3, 4), repeat=3)]


def make_engine(compiled, seed=17, **kw):
    return EventEngine(
        SITES343,
        K3,
        stream=UniformBlocks(replica_rng(seed, 0)),
        use_compiled=compiled,
        **kw,
    )


def assert_state_equal(a: EventEngine, b: EventEngine):
    assert a.clock == b.clock
    assert a.n_live == b.n_live
    assert np.array_equal(a.rep_index(), b.rep_index())
    reps = np.unique(a.rep_index())
    assert np.array_equal(a.pos[reps], b.pos[reps])
    assert a.trace_t == b.trace_t
    assert a.trace_n == b.trace_n
    # identical stream positions: the next draw agrees (peek, don't consume)
    buf_a, pos_a = a.stream.block()
    buf_b, pos_b = b.stream.block()
    assert pos_a == pos_b
    assert buf_a[pos_a] == buf_b[pos_b]


def test_bit_identity_with_snapshot_and_displacement():
    py = make_engine(False, snapshot_time=0.5, track_displacement_until=2.0)
    nb = make_engine(True, snapshot_time=0.5, track_displacement_until=2.0)
    sa = py.run(2.0)
    sb = nb.run(2.0)
    assert sa == sb
    assert np.array_equal(py.snapshot_rep, nb.snapshot_rep)
    assert np.array_equal(py.maxdisp, nb.maxdisp)
    assert_state_equal(py, nb)


def test_bit_identity_under_segmentation():
    one = make_engine(True)
    one.run(2.0)
    seg = make_engine(True)
    for t in (0.3, 0.7, 1.1, 2.0):
        seg.run(t)
    assert_state_equal(one, seg)
    ref = make_engine(False)
    for t in (0.05, 1.9, 2.0):
        ref.run(t)
    assert_state_equal(seg, ref)


def test_reference_segment_then_compiled_continuation():
    mixed = make_engine(True)
    # a predicate forces the first segment onto the reference loop
    mixed.run(0.6, predicate=lambda e: False)
    assert getattr(mixed, "_nbstate", None) is None
    mixed.run(2.0)
    assert getattr(mixed, "_nbstate", None) is not None
    pure = make_engine(False)
    pure.run(0.6)
    pure.run(2.0)
    assert_state_equal(mixed, pure)


def test_compiled_engine_cannot_return_to_reference_loop():
    eng = make_engine(True)
    eng.run(0.5)
    assert eng.posmap is None
    with pytest.raises(RuntimeError):
        eng.run(1.0, predicate=lambda e: False)


def test_until_absorbed_bit_identity_d1():
    sites = [(i,) for i in range(0, 96, 2)]

    def make(compiled):
        return EventEngine(
            sites, K1, stream=UniformBlocks(replica_rng(23, 0)), use_compiled=compiled
        )

    py, nb = make(False), make(True)
    assert py.run(until_absorbed=True) == nb.run(until_absorbed=True)
    assert py.n_live == nb.n_live == 1
    assert_state_equal(py, nb)


def test_overflow_raised_at_identical_clock():
    cap = (1 << 20) - 2
    sites = [(cap, 0, 0), (cap, 2, 2), (cap - 1, 5, 0)]

    def run(compiled):
        eng = EventEngine(
            sites, K3, stream=UniformBlocks(replica_rng(31, 0)), use_compiled=compiled
        )
        with pytest.raises(OverflowError):
            eng.run(1e9)
        return eng.clock

    assert run(False) == run(True)


def test_batch_difference_walk_statuses_and_oracle():
    tab = build_table(3, 1)
    out = batch_difference_walk(
        np.array([1, 0, 0]), K3.steps, 96.0, 3000, replica_rng(71, 0)
    )
    assert set(np.unique(out["status"])) <= {0, 1}
    p = float((out["status"] == 0).mean())
    se = math.sqrt(p * (1 - p) / 3000)
    assert abs(p - 0.340537330) <= 3 * se + tab.far_bound
    assert (out["final_separation"][out["status"] == 1] > 96).all()
    assert (out["final_separation"][out["status"] == 0] == 0).all()


def test_batch_difference_walk_wide_kernel_uint16_path():
    k6 = StepKernel(3, 6)
    assert k6.n_steps > 256  # forces 16-bit step indices
    out = batch_difference_walk(
        np.array([1, 0, 0]), k6.steps, 64.0, 800, replica_rng(72, 0)
    )
    assert set(np.unique(out["status"])) <= {0, 1}
    p6 = float((out["status"] == 0).mean())
    # wider jumps spread faster: meeting probability drops well below the
    # nearest-neighbour value 0.34
    assert p6 < 0.08


def test_batch_difference_walk_cap():
    out = batch_difference_walk(
        np.array([4, 4, 4]), K3.steps, 1e9, 64, replica_rng(73, 0),
        max_steps=256, chunk=128,
    )
    assert (out["status"] == 3).any()
    capped = out["status"] == 3
    assert (out["final_separation"][capped] > 0).all()


def test_dispatch_matches_direct_kernel_call():
    a = batch_pair_meetings(
        (0, 0, 0), (2, 1, 0), K3, escape_radius=64.0, n=500,
        rng=replica_rng(74, 0), engine="compiled",
    )
    b = batch_difference_walk(
        np.array([2, 1, 0]), K3.steps, 64.0, 500, replica_rng(74, 0)
    )
    assert np.array_equal(a["status"], b["status"])
    assert np.array_equal(a["final_separation"], b["final_separation"])
