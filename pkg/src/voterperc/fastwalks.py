"""Compiled event loop for large coalescing systems.

Mirrors the coalescing branch of ``walks.EventEngine._run_python`` exactly:
same uniform-stream consumption (three values per event, events never
straddle block boundaries), same tie-breaking (class representative is the
minimal walker index), same deferred-event handling across segment
boundaries.  Positions are packed into signed 64-bit keys for the
site-occupancy hash map; the per-axis coordinate cap is enforced on every
jump.

State lives in the engine's own numpy arrays, mutated in place; only the
occupancy map and the class-member chains are private to this module.  Once
an engine has run a compiled segment it must stay on the compiled path.
"""

from __future__ import annotations

import math

import numpy as np
import numba as nb
from numba.core import types
from numba.typed import Dict as TypedDict

from .seeding import UniformBlocks  # noqa: F401  (documented dependency)

RUNNING, HORIZON, ABSORBED, OVERFLOW = 0, 1, 2, 3

# fstate slots
_CLOCK, _PENDING, _SEG, _SNAP_T, _TRACK_T = 0, 1, 2, 3, 4
# istate slots
_NLIVE, _BUFPOS, _TRLEN, _SNAP_DONE, _ABS, _TRACK, _SNAP_ON = 0, 1, 2, 3, 4, 5, 6


@nb.njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@nb.njit(cache=True)
def _build_map(pos, live_idx, n_live, shift, offset):
    m = TypedDict.empty(key_type=types.int64, value_type=types.int64)
    for s in range(n_live):
        i = live_idx[s]
        key = np.int64(0)
        for a in range(pos.shape[1]):
            key |= (pos[i, a] + offset) << (shift * a)
        m[key] = i
    return m


@nb.njit(cache=True)
def _kernel(
    pos,
    parent,
    live_idx,
    live_slot,
    posmap,
    steps,
    buf,
    fstate,
    istate,
    snap_parent,
    maxdisp,
    origins,
    head,
    tail,
    nxt,
    trace_t,
    trace_n,
    shift,
    offset,
    coord_cap,
    newpos,
):
    clock = fstate[_CLOCK]
    pending = fstate[_PENDING]
    seg = fstate[_SEG]
    snap_t = fstate[_SNAP_T]
    track_until = fstate[_TRACK_T]
    n_live = istate[_NLIVE]
    p = istate[_BUFPOS]
    tlen = istate[_TRLEN]
    snap_done = istate[_SNAP_DONE]
    until_abs = istate[_ABS] == 1
    track = istate[_TRACK] == 1
    snap_on = istate[_SNAP_ON] == 1

    d = pos.shape[1]
    n_steps = steps.shape[0]
    blen = buf.shape[0]
    status = RUNNING

    while True:
        if until_abs and n_live <= 1:
            status = ABSORBED
            break
        if blen - p < 3:
            status = RUNNING
            break
        if math.isnan(pending):
            u = buf[p]
            p += 1
            pending = clock - math.log1p(-u) / n_live
        if pending > seg:
            clock = seg
            status = HORIZON
            break
        t = pending
        pending = math.nan

        if snap_on and snap_done == 0 and t > snap_t:
            for i in range(parent.shape[0]):
                snap_parent[i] = _find(parent, i)
            snap_done = 1

        k = np.int64(buf[p] * n_live)
        p += 1
        if k >= n_live:
            k = n_live - 1
        ent = live_idx[k]
        si = np.int64(buf[p] * n_steps)
        p += 1
        if si >= n_steps:
            si = n_steps - 1
        clock = t

        old_key = np.int64(0)
        new_key = np.int64(0)
        over = False
        for a in range(d):
            c = pos[ent, a]
            old_key |= (c + offset) << (shift * a)
            c2 = c + steps[si, a]
            if c2 > coord_cap or c2 < -coord_cap:
                over = True
            newpos[a] = c2
            new_key |= (c2 + offset) << (shift * a)
        if over:
            status = OVERFLOW
            break

        if new_key in posmap:
            other = posmap[new_key]
            del posmap[old_key]
            if ent < other:
                rep, loser = ent, other
            else:
                rep, loser = other, ent
            parent[loser] = rep
            for a in range(d):
                pos[rep, a] = newpos[a]
            posmap[new_key] = rep
            slot = live_slot[loser]
            last = live_idx[n_live - 1]
            live_idx[slot] = last
            live_slot[last] = slot
            n_live -= 1
            if track:
                nxt[tail[rep]] = head[loser]
                tail[rep] = tail[loser]
                if t <= track_until:
                    m = head[rep]
                    while m != -1:
                        disp = np.int64(0)
                        for a in range(d):
                            dd = newpos[a] - origins[m, a]
                            if dd < 0:
                                dd = -dd
                            if dd > disp:
                                disp = dd
                        if disp > maxdisp[m]:
                            maxdisp[m] = disp
                        m = nxt[m]
            trace_t[tlen] = t
            trace_n[tlen] = n_live
            tlen += 1
        else:
            del posmap[old_key]
            posmap[new_key] = ent
            for a in range(d):
                pos[ent, a] = newpos[a]
            if track and t <= track_until:
                m = head[ent]
                while m != -1:
                    disp = np.int64(0)
                    for a in range(d):
                        dd = newpos[a] - origins[m, a]
                        if dd < 0:
                            dd = -dd
                        if dd > disp:
                            disp = dd
                    if disp > maxdisp[m]:
                        maxdisp[m] = disp
                    m = nxt[m]

    fstate[_CLOCK] = clock
    fstate[_PENDING] = pending
    istate[_NLIVE] = n_live
    istate[_BUFPOS] = p
    istate[_TRLEN] = tlen
    istate[_SNAP_DONE] = snap_done
    return status


@nb.njit(cache=True)
def _diff_chunk(pos, act, steps, sidx, escape_radius, status, finals):
    """Advance difference walks one chunk of jump steps; mark resolved rows.

    pos rows are mutated in place; act[r] is set to -1 once trial act[r]
    meets (status 0) or escapes (status 1).
    """
    chunk = sidx.shape[1]
    d = pos.shape[1]
    for r in range(act.shape[0]):
        i = act[r]
        for c in range(chunk):
            s = sidx[r, c]
            allzero = True
            m = np.int64(0)
            for a in range(d):
                v = pos[i, a] + steps[s, a]
                pos[i, a] = v
                av = -v if v < 0 else v
                if av != 0:
                    allzero = False
                if av > m:
                    m = av
            if allzero:
                status[i] = 0
                finals[i] = 0
                act[r] = -1
                break
            if m > escape_radius:
                status[i] = 1
                finals[i] = m
                act[r] = -1
                break


def batch_difference_walk(
    sep0: np.ndarray,
    steps: np.ndarray,
    escape_radius: float,
    n: int,
    rng,
    max_steps: int | None = None,
    chunk: int = 4096,
) -> dict:
    """Resolve n difference-walk trials from separation sep0 (jump chain only).

    Returns status (0 met, 1 escaped, 3 capped), final linf separations, and
    the positions array.  Step indices are drawn in bulk per chunk; jump
    times are irrelevant to meeting, so none are drawn.
    """
    pos = np.tile(sep0, (n, 1))
    status = np.full(n, 3, dtype=np.int8)
    finals = np.zeros(n, dtype=np.int64)
    act = np.arange(n, dtype=np.int64)
    n_steps = steps.shape[0]
    idx_dtype = np.uint8 if n_steps <= 256 else np.uint16
    if n_steps > 65536:
        raise ValueError("step support too large for packed indices")
    done_steps = 0
    esc = np.int64(escape_radius)
    while act.size:
        sidx = rng.integers(0, n_steps, size=(act.size, chunk), dtype=idx_dtype)
        _diff_chunk(pos, act, steps, sidx, esc, status, finals)
        act = act[act >= 0]
        done_steps += chunk
        if max_steps is not None and done_steps >= max_steps and act.size:
            finals[act] = np.abs(pos[act]).max(axis=1)
            break
    return {"status": status, "final_separation": finals, "time": np.full(n, math.nan)}


class _CompiledState:
    __slots__ = (
        "posmap",
        "fstate",
        "istate",
        "snap_parent",
        "maxdisp",
        "origins",
        "head",
        "tail",
        "nxt",
        "trace_t",
        "trace_n",
        "newpos",
    )


def _init_state(engine) -> _CompiledState:
    n, d = engine.n, engine.d
    st = _CompiledState()
    st.posmap = _build_map(
        engine.pos,
        engine.live_idx,
        np.int64(engine.n_live),
        np.int64(engine._shift),
        np.int64(engine._offset),
    )
    st.fstate = np.zeros(8, dtype=np.float64)
    st.istate = np.zeros(8, dtype=np.int64)
    st.fstate[_SNAP_T] = math.inf
    st.fstate[_TRACK_T] = -math.inf
    if engine.snapshot_time is not None:
        st.fstate[_SNAP_T] = engine.snapshot_time
        st.istate[_SNAP_ON] = 1
        st.istate[_SNAP_DONE] = 1 if engine.snapshot_rep is not None else 0
        st.snap_parent = (
            engine.snapshot_rep
            if engine.snapshot_rep is not None
            else np.zeros(n, dtype=np.int64)
        )
    else:
        st.snap_parent = np.zeros(1, dtype=np.int64)
    if engine.track_until is not None:
        st.fstate[_TRACK_T] = engine.track_until
        st.istate[_TRACK] = 1
        st.maxdisp = engine.maxdisp
        st.origins = np.array(engine.origins, dtype=np.int64)
        st.head = np.full(n, -1, dtype=np.int64)
        st.tail = np.full(n, -1, dtype=np.int64)
        st.nxt = np.full(n, -1, dtype=np.int64)
        for root, mem in enumerate(engine.members):
            if not mem:
                continue
            st.head[root] = mem[0]
            st.tail[root] = mem[-1]
            for a, b in zip(mem, mem[1:]):
                st.nxt[a] = b
    else:
        st.maxdisp = np.zeros(1, dtype=np.int64)
        st.origins = np.zeros((1, d), dtype=np.int64)
        st.head = np.zeros(1, dtype=np.int64)
        st.tail = np.zeros(1, dtype=np.int64)
        st.nxt = np.zeros(1, dtype=np.int64)
    st.trace_t = np.zeros(max(n, 1), dtype=np.float64)
    st.trace_n = np.zeros(max(n, 1), dtype=np.int64)
    st.newpos = np.zeros(d, dtype=np.int64)
    return st


def run_coalescing(engine, seg_horizon: float, until_absorbed: bool) -> int:
    """Advance a coalescing engine to the segment horizon or absorption."""
    st = getattr(engine, "_nbstate", None)
    if st is None:
        st = _init_state(engine)
        engine._nbstate = st
        # the occupancy map now lives in compiled space only
        engine.posmap = None

    fstate, istate = st.fstate, st.istate
    fstate[_CLOCK] = engine.clock
    fstate[_PENDING] = engine.pending
    fstate[_SEG] = seg_horizon
    istate[_NLIVE] = engine.n_live
    istate[_ABS] = 1 if until_absorbed else 0

    while True:
        buf, pos0 = engine.stream.block()
        istate[_BUFPOS] = pos0
        status = _kernel(
            engine.pos,
            engine.parent,
            engine.live_idx,
            engine.live_slot,
            st.posmap,
            engine.kernel.steps,
            buf,
            fstate,
            istate,
            st.snap_parent,
            st.maxdisp,
            st.origins,
            st.head,
            st.tail,
            st.nxt,
            st.trace_t,
            st.trace_n,
            np.int64(engine._shift),
            np.int64(engine._offset),
            np.int64(engine.coord_cap),
            st.newpos,
        )
        engine.stream.advance(int(istate[_BUFPOS]) - pos0)
        engine.clock = float(fstate[_CLOCK])
        engine.pending = float(fstate[_PENDING])
        engine.n_live = int(istate[_NLIVE])
        tlen = int(istate[_TRLEN])
        if tlen:
            engine.trace_t.extend(st.trace_t[:tlen].tolist())
            engine.trace_n.extend(int(v) for v in st.trace_n[:tlen])
            istate[_TRLEN] = 0
        if istate[_SNAP_ON] and istate[_SNAP_DONE] and engine.snapshot_rep is None:
            engine.snapshot_rep = st.snap_parent
        if status != RUNNING:
            return int(status)
        # fewer than 3 values remained: drop the tail and refill, exactly
        # like the reference loop's per-event ensure(3)
        engine.stream.ensure(3)
