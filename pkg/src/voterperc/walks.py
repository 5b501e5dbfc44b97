"""Event-driven simulation of interacting R-spread-out walkers.

A system of walkers evolves by a single exponential clock whose rate equals
the number of live entities (walkers, or merged classes once walkers have
coalesced); at each tick one live entity is chosen uniformly and jumps by an
increment drawn uniformly from ``B_1(R) \\ {0}``.  This is equivalent in law
to giving every entity its own unit-rate clock.  Interaction on collision
depends on the mode:

- ``independent``: collisions are ignored.
- ``coalescing``: a walker jumping onto an occupied site merges with the
  occupant; the merged class moves as one walker from then on.  The class
  representative is the lexicographically minimal origin.
- ``annihilating``: a walker jumping onto an occupied site kills both.
- ``delayed-coalescing``: walkers are independent on ``[0, free_period)``
  (collisions are counted but not resolved); at ``free_period`` co-located
  walkers merge and coalescing rules apply from then on.

Both the reference engine below and the compiled engine in ``fastwalks``
consume the same uniform stream in the same order (three uniforms per event:
waiting time, entity choice, step choice; an event never straddles a block
boundary), so they produce identical trajectories for identical seeds.
Trajectories are also independent of how a run is split into segments: an
undelivered waiting time is carried across segment boundaries rather than
redrawn.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .lattice import COORD_BOUND, Site, check_site, dist_linf, linf
from .seeding import UniformBlocks, replica_rng

MODES = ("independent", "coalescing", "annihilating", "delayed-coalescing")

# status codes shared with the compiled kernel
RUNNING, HORIZON, ABSORBED, OVERFLOW = 0, 1, 2, 3


def pack_width(d: int) -> int:
    """Bits per coordinate when packing a site into a signed 64-bit key."""
    return min(63 // d, 21)


@dataclass(frozen=True, eq=False)
class StepKernel:
    """Uniform step distribution on ``B_1(R) \\ {0}`` in d dimensions."""

    d: int
    R: int
    steps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.R < 1:
            raise ValueError("spread-out range R must be >= 1")
        incr = [
            z
            for z in itertools.product(range(-self.R, self.R + 1), repeat=self.d)
            if 0 < sum(abs(c) for c in z) <= self.R
        ]
        object.__setattr__(self, "steps", np.array(incr, dtype=np.int64))

    @property
    def n_steps(self) -> int:
        return self.steps.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_steps, 1.0 / self.n_steps)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        idx = rng.integers(0, self.n_steps, size=size)
        return self.steps[idx]


@dataclass
class WalkerRecord:
    origin: Site
    position: Site
    alive: bool
    class_rep: Site


@dataclass
class WalkerSystem:
    """Final state of a simulated walker system.

    Walker ids index the lexicographically sorted origins.  ``positions``
    rows are current class positions, valid at representative indices; read
    walker i's position as ``positions[rep_index[i]]``.  ``n_trace_*``
    record the live-entity count after every change (first row is the
    initial count at time 0).
    """

    mode: str
    kernel: StepKernel
    origins: list[Site]
    positions: np.ndarray
    rep_index: np.ndarray
    alive: np.ndarray
    clock: float
    stop_reason: str
    n_trace_times: np.ndarray
    n_trace_counts: np.ndarray
    annihilations: int = 0
    collisions_before_free_period: int = 0
    events: list[tuple] | None = None
    snapshot_rep_index: np.ndarray | None = None
    max_displacement: np.ndarray | None = None

    @property
    def n_walkers(self) -> int:
        return len(self.origins)

    @property
    def n_classes(self) -> int:
        if self.mode == "annihilating":
            return int(self.alive.sum())
        return len(set(self.rep_index.tolist()))

    @property
    def walkers(self) -> list[WalkerRecord]:
        out = []
        for i, org in enumerate(self.origins):
            rep = int(self.rep_index[i])
            out.append(
                WalkerRecord(
                    origin=org,
                    position=tuple(int(c) for c in self.positions[rep]),
                    alive=bool(self.alive[i]),
                    class_rep=self.origins[rep],
                )
            )
        return out

    def class_map(self) -> dict[Site, Site]:
        """Origin -> class representative origin (lexicographically minimal member)."""
        return {org: self.origins[int(r)] for org, r in zip(self.origins, self.rep_index)}

    def classes_at_snapshot(self) -> dict[Site, Site] | None:
        if self.snapshot_rep_index is None:
            return None
        return {
            org: self.origins[int(r)]
            for org, r in zip(self.origins, self.snapshot_rep_index)
        }


def dump_event_log(system: WalkerSystem, path: str) -> None:
    """CSV dump: time, walker_id, dx_1..dx_d, event_kind."""
    if system.events is None:
        raise ValueError("system was simulated without record_events=True")
    d = system.kernel.d
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time", "walker_id"] + [f"dx_{i+1}" for i in range(d)] + ["event_kind"])
        for t, wid, dx, kind in system.events:
            wr.writerow([repr(float(t)), wid] + [int(c) for c in dx] + [kind])


class EventEngine:
    """Resumable event loop over a walker system (reference implementation).

    ``run(seg_horizon)`` advances until the segment horizon, absorption, the
    caller predicate, or an overall horizon is hit, and may be called again
    to continue.  State lives in numpy arrays so the compiled engine can
    share it.
    """

    def __init__(
        self,
        initial: Sequence[Sequence[int]],
        kernel: StepKernel,
        mode: str = "coalescing",
        *,
        stream: UniformBlocks | None = None,
        rng: np.random.Generator | None = None,
        seed: int | None = None,
        free_period: float | None = None,
        record_events: bool = False,
        snapshot_time: float | None = None,
        track_displacement_until: float | None = None,
        use_compiled: bool | None = None,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode == "delayed-coalescing":
            if free_period is None or free_period < 0:
                raise ValueError("delayed-coalescing requires free_period >= 0")
        elif free_period is not None:
            raise ValueError("free_period only applies to delayed-coalescing mode")
        sites = sorted(check_site(p) for p in initial)
        if not sites:
            raise ValueError("initial site set must be non-empty")
        d = len(sites[0])
        for p in sites:
            check_site(p, d)
        if len(set(sites)) != len(sites):
            raise ValueError("initial sites must be distinct")
        if kernel.d != d:
            raise ValueError(f"kernel dimension {kernel.d} != site dimension {d}")

        if stream is None:
            if rng is None:
                rng = replica_rng(0 if seed is None else seed, 0)
            stream = UniformBlocks(rng)
        self.stream = stream
        self.kernel = kernel
        self.mode = mode
        self.d = d
        self.free_period = free_period
        self.origins = sites
        n = len(sites)
        self.n = n

        w = pack_width(d)
        self._shift = w
        self._offset = 1 << (w - 1)
        self.coord_cap = self._offset - kernel.R - 1
        if self.coord_cap < 2:
            raise ValueError(f"dimension {d} too large for packed positions")
        for p in sites:
            if linf(p) > self.coord_cap:
                raise OverflowError(
                    f"initial coordinate beyond packed-position cap {self.coord_cap} "
                    f"for d={d}"
                )

        self.pos = np.array(sites, dtype=np.int64)
        self.parent = np.arange(n, dtype=np.int64)
        self.alive = np.ones(n, dtype=bool)
        self.live_idx = np.arange(n, dtype=np.int64)
        self.live_slot = np.arange(n, dtype=np.int64)
        self.n_live = n
        self.posmap: dict[int, int] = {self._pack_row(self.pos[i]): i for i in range(n)}
        self.clock = 0.0
        self.pending = math.nan  # undelivered next event time
        self.annihilations = 0
        self.collisions = 0
        self._free_phase = mode == "delayed-coalescing" and free_period > 0

        self.trace_t = [0.0]
        self.trace_n = [n]
        self.events: list[tuple] | None = [] if record_events else None

        self.snapshot_time = snapshot_time
        self.snapshot_rep: np.ndarray | None = None
        if snapshot_time is not None and snapshot_time <= 0:
            self._take_snapshot()
        self.track_until = track_displacement_until
        self.maxdisp: np.ndarray | None = None
        self.members: list[list[int]] | None = None
        if self.track_until is not None:
            self.maxdisp = np.zeros(n, dtype=np.int64)
            self.members = [[i] for i in range(n)]
        if mode == "delayed-coalescing" and free_period == 0:
            self._merge_colocated(0.0)

        if use_compiled is None:
            use_compiled = (
                mode == "coalescing"
                and not record_events
                and n >= 256
            )
        self._compiled = None
        if use_compiled and mode == "coalescing" and not record_events:
            try:
                from . import fastwalks

                self._compiled = fastwalks
            except ImportError:
                self._compiled = None

    # -- helpers ----------------------------------------------------------

    def _pack_row(self, row) -> int:
        key = 0
        for i in range(self.d):
            key |= (int(row[i]) + self._offset) << (self._shift * i)
        return key

    def _find(self, i: int) -> int:
        p = self.parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return int(i)

    def _take_snapshot(self) -> None:
        self.snapshot_rep = np.array([self._find(i) for i in range(self.n)], dtype=np.int64)

    def _remove_live(self, entity: int) -> None:
        slot = int(self.live_slot[entity])
        last = int(self.live_idx[self.n_live - 1])
        self.live_idx[slot] = last
        self.live_slot[last] = slot
        self.n_live -= 1

    def _log(self, t: float, wid: int, dx, kind: str) -> None:
        if self.events is not None:
            self.events.append((t, wid, tuple(int(c) for c in dx), kind))

    def _trace(self, t: float) -> None:
        self.trace_t.append(t)
        self.trace_n.append(self.n_live)

    def _update_displacement(self, root: int, t: float) -> None:
        if self.maxdisp is None or t > self.track_until:
            return
        new = self.pos[root]
        for m in self.members[root]:
            disp = int(np.abs(new - np.array(self.origins[m], dtype=np.int64)).max())
            if disp > self.maxdisp[m]:
                self.maxdisp[m] = disp

    def _merge_colocated(self, t: float) -> None:
        """End of the free period: co-located walkers coalesce."""
        groups: dict[int, list[int]] = {}
        for slot in range(self.n_live):
            i = int(self.live_idx[slot])
            groups.setdefault(self._pack_row(self.pos[i]), []).append(i)
        self.posmap = {}
        changed = False
        for key, grp in groups.items():
            rep = min(grp)
            self.posmap[key] = rep
            for i in grp:
                if i != rep:
                    self.parent[i] = rep
                    self._remove_live(i)
                    if self.members is not None:
                        self.members[rep].extend(self.members[i])
                        self.members[i] = []
                    self._log(t, i, (0,) * self.d, "coalesce")
                    changed = True
        if changed:
            self._trace(t)

    # -- public state views ------------------------------------------------

    def live_entities(self) -> np.ndarray:
        return np.sort(self.live_idx[: self.n_live].copy())

    def live_positions(self) -> np.ndarray:
        idx = np.sort(self.live_idx[: self.n_live])
        return self.pos[idx].copy()

    def rep_index(self) -> np.ndarray:
        return np.array([self._find(i) for i in range(self.n)], dtype=np.int64)

    def occupied_sites(self) -> set[Site]:
        return {
            tuple(int(c) for c in self.pos[int(i)])
            for i in self.live_idx[: self.n_live]
        }

    def absorbed(self) -> bool:
        """No further interaction is possible."""
        if self.mode == "independent":
            return False
        return self.n_live <= 1

    # -- the event loop ----------------------------------------------------

    def run(
        self,
        seg_horizon: float = math.inf,
        *,
        until_absorbed: bool = False,
        predicate: Callable[["EventEngine"], bool] | None = None,
        max_events: int | None = None,
    ) -> int:
        """Advance until the segment horizon / absorption / predicate.

        Returns a status code: HORIZON, ABSORBED, or RUNNING (predicate or
        event budget stopped the loop early).
        """
        if (
            math.isinf(seg_horizon)
            and not until_absorbed
            and predicate is None
            and max_events is None
        ):
            raise ValueError("no stop rule: give a horizon, until_absorbed, or a predicate")
        if until_absorbed and self.mode == "independent":
            raise ValueError("independent walkers never absorb; use a horizon")
        if (
            until_absorbed
            and self.mode == "delayed-coalescing"
            and math.isinf(self.free_period)
            and math.isinf(seg_horizon)
        ):
            raise ValueError("absorption unreachable with an infinite free period")

        if max_events is not None and max_events <= 0:
            return RUNNING
        if getattr(self, "_nbstate", None) is not None and predicate is not None:
            raise RuntimeError(
                "engine already advanced by the compiled loop; predicates are "
                "only supported on the reference loop"
            )
        while True:
            if until_absorbed and self.absorbed():
                return ABSORBED
            if self.n_live == 0:
                return ABSORBED

            # phase boundary of the delayed mode acts as an internal horizon
            boundary = seg_horizon
            phase_switch = False
            if self._free_phase and self.free_period <= boundary:
                boundary = self.free_period
                phase_switch = True

            if (
                self._compiled is not None
                and not self._free_phase
                and predicate is None
                and self.mode == "coalescing"
            ):
                status = self._run_compiled(boundary, until_absorbed)
            else:
                status = self._run_python(boundary, until_absorbed, predicate, max_events)
            if status == RUNNING:
                return RUNNING
            if status == OVERFLOW:
                raise OverflowError(
                    f"walker coordinate exceeded packed-position cap {self.coord_cap}"
                )
            if status == ABSORBED:
                return ABSORBED
            # status == HORIZON at `boundary`
            if phase_switch and self.clock >= self.free_period:
                self._free_phase = False
                self.pending = math.nan  # the total jump rate changes here
                self._merge_colocated(self.free_period)
                if (
                    self.snapshot_time is not None
                    and self.snapshot_rep is None
                    and self.snapshot_time <= self.free_period
                ):
                    self._take_snapshot()
                continue
            return HORIZON

    def _run_python(
        self,
        seg_horizon: float,
        until_absorbed: bool,
        predicate,
        max_events,
    ) -> int:
        take = self.stream.take
        steps = self.kernel.steps
        n_steps = steps.shape[0]
        free = self._free_phase
        annihilating = self.mode == "annihilating"
        independent = self.mode == "independent" or free
        events_done = 0
        while True:
            if until_absorbed and not free and self.n_live <= 1 and self.mode != "independent":
                return ABSORBED
            if self.n_live == 0:
                return ABSORBED
            if max_events is not None and events_done >= max_events:
                return RUNNING

            # an event consumes at most 3 uniforms and never straddles blocks
            self.stream.ensure(3)
            if math.isnan(self.pending):
                u = take()
                self.pending = self.clock - math.log1p(-u) / self.n_live
            if self.pending > seg_horizon:
                self.clock = seg_horizon
                return HORIZON
            t = self.pending
            self.pending = math.nan

            if (
                self.snapshot_time is not None
                and self.snapshot_rep is None
                and t > self.snapshot_time
            ):
                self._take_snapshot()

            k = int(take() * self.n_live)
            if k >= self.n_live:
                k = self.n_live - 1
            ent = int(self.live_idx[k])
            si = int(take() * n_steps)
            if si >= n_steps:
                si = n_steps - 1
            step = steps[si]
            self.clock = t
            events_done += 1

            new = self.pos[ent] + step
            if int(np.abs(new).max()) > self.coord_cap:
                return OVERFLOW
            new_key = self._pack_row(new)
            old_key = self._pack_row(self.pos[ent])

            if independent:
                # during the free phase collisions are counted, not resolved
                if free and self._occupancy_count(new_key, exclude=ent) > 0:
                    self.collisions += 1
                self.pos[ent] = new
                self._log(t, ent, step, "jump")
            elif annihilating:
                other = self.posmap.get(new_key)
                del self.posmap[old_key]
                if other is not None:
                    self.pos[ent] = new
                    self.alive[ent] = False
                    self.alive[other] = False
                    self._remove_live(ent)
                    self._remove_live(other)
                    del self.posmap[new_key]
                    self.annihilations += 1
                    self._log(t, ent, step, "annihilate")
                    self._trace(t)
                else:
                    self.pos[ent] = new
                    self.posmap[new_key] = ent
                    self._log(t, ent, step, "jump")
            else:  # coalescing
                other = self.posmap.get(new_key)
                del self.posmap[old_key]
                if other is not None:
                    rep, loser = (ent, other) if ent < other else (other, ent)
                    self.parent[loser] = rep
                    self.pos[rep] = new
                    self.posmap[new_key] = rep
                    self._remove_live(loser)
                    if self.members is not None:
                        self.members[rep].extend(self.members[loser])
                        self.members[loser] = []
                    # only the jumping class moved; re-checking the target
                    # class's members is an idempotent no-op
                    self._update_displacement(rep, t)
                    self._log(t, ent, step, "coalesce")
                    self._trace(t)
                else:
                    self.pos[ent] = new
                    self.posmap[new_key] = ent
                    self._update_displacement(ent, t)
                    self._log(t, ent, step, "jump")

            if predicate is not None and predicate(self):
                return RUNNING

    def _occupancy_count(self, key: int, exclude: int) -> int:
        # during the free phase positions may coincide; count occupants lazily
        cnt = 0
        for slot in range(self.n_live):
            i = int(self.live_idx[slot])
            if i != exclude and self._pack_row(self.pos[i]) == key:
                cnt += 1
        return cnt

    def _run_compiled(self, seg_horizon: float, until_absorbed: bool) -> int:
        return self._compiled.run_coalescing(self, seg_horizon, until_absorbed)

    # -- result assembly ----------------------------------------------------

    def result(self, stop_reason: str) -> WalkerSystem:
        rep = self.rep_index()
        return WalkerSystem(
            mode=self.mode,
            kernel=self.kernel,
            origins=self.origins,
            positions=self.pos.copy(),
            rep_index=rep,
            alive=self.alive.copy()
            if self.mode == "annihilating"
            else (rep == np.arange(self.n)),
            clock=self.clock,
            stop_reason=stop_reason,
            n_trace_times=np.array(self.trace_t),
            n_trace_counts=np.array(self.trace_n),
            annihilations=self.annihilations,
            collisions_before_free_period=self.collisions,
            events=self.events,
            snapshot_rep_index=self.snapshot_rep.copy() if self.snapshot_rep is not None else None,
            max_displacement=self.maxdisp.copy() if self.maxdisp is not None else None,
        )


def simulate_system(
    initial: Sequence[Sequence[int]],
    kernel: StepKernel,
    mode: str = "coalescing",
    *,
    horizon: float = math.inf,
    until_absorbed: bool = False,
    predicate: Callable[[EventEngine], bool] | None = None,
    free_period: float | None = None,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    record_events: bool = False,
    snapshot_time: float | None = None,
    track_displacement_until: float | None = None,
    engine: str = "auto",
) -> WalkerSystem:
    """Simulate a walker system to its stop rule and return the final state.

    The stop rule is the first of: the time horizon, absorption (single
    class, or <= 1 live walker in annihilating mode), or the caller
    predicate (evaluated after every event).
    """
    if engine not in ("auto", "python", "compiled"):
        raise ValueError("engine must be auto, python, or compiled")
    use_compiled = {"auto": None, "python": False, "compiled": True}[engine]
    eng = EventEngine(
        initial,
        kernel,
        mode,
        rng=rng,
        seed=seed,
        free_period=free_period,
        record_events=record_events,
        snapshot_time=snapshot_time,
        track_displacement_until=track_displacement_until,
        use_compiled=use_compiled,
    )
    status = eng.run(horizon, until_absorbed=until_absorbed, predicate=predicate)
    if (
        eng.snapshot_time is not None
        and eng.snapshot_rep is None
        and eng.clock >= eng.snapshot_time
    ):
        eng._take_snapshot()
    reason = {HORIZON: "horizon", ABSORBED: "absorbed", RUNNING: "predicate"}[status]
    return eng.result(reason)


# ---------------------------------------------------------------------------
# coupled coalescing / annihilating systems driven by one arrow stream


@dataclass
class CoupledOutcome:
    """Trace of a coalescing system X and annihilating system X' sharing arrows."""

    times: list[float]
    inclusion_ok: bool
    violations: int
    annihilations: int
    coalescing_sites: set[Site]
    annihilating_sites: set[Site]
    n_trace: list[tuple[float, int, int]]  # (time, |X|, |X'|)


def coupled_coalescing_annihilating(
    initial: Sequence[Sequence[int]],
    kernel: StepKernel,
    horizon: float,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> CoupledOutcome:
    """Run both systems from the same initial set on one arrow stream.

    Arrows are generated only at sites occupied by the coalescing system X;
    since the annihilating set X' stays inside X pathwise, every arrow X'
    needs is available.  The inclusion is checked after every event.
    """
    sites = sorted(check_site(p) for p in initial)
    if len(set(sites)) != len(sites):
        raise ValueError("initial sites must be distinct")
    d = len(sites[0])
    if rng is None:
        rng = replica_rng(0 if seed is None else seed, 0)
    stream = UniformBlocks(rng)

    coal: dict[Site, None] = dict.fromkeys(sites)  # insertion-ordered site set
    annih: set[Site] = set(sites)
    clock = 0.0
    annihilations = 0
    violations = 0
    times: list[float] = []
    trace: list[tuple[float, int, int]] = [(0.0, len(coal), len(annih))]
    steps = kernel.steps
    n_steps = steps.shape[0]

    while coal:
        n = len(coal)
        stream.ensure(3)
        u = stream.take()
        dt = -math.log1p(-u) / n
        if clock + dt > horizon:
            clock = horizon
            break
        clock += dt
        k = int(stream.take() * n)
        if k >= n:
            k = n - 1
        x = next(itertools.islice(coal, k, None))
        si = int(stream.take() * n_steps)
        if si >= n_steps:
            si = n_steps - 1
        y = tuple(int(a + b) for a, b in zip(x, steps[si]))

        # coalescing system: class at x moves to y (merges silently if occupied)
        del coal[x]
        coal[y] = None

        # annihilating system consumes the same arrow if it occupies x
        if x in annih:
            annih.discard(x)
            if y in annih:
                annih.discard(y)
                annihilations += 1
            else:
                annih.add(y)

        times.append(clock)
        trace.append((clock, len(coal), len(annih)))
        if not annih <= set(coal):
            violations += 1

    return CoupledOutcome(
        times=times,
        inclusion_ok=violations == 0,
        violations=violations,
        annihilations=annihilations,
        coalescing_sites=set(coal),
        annihilating_sites=annih,
        n_trace=trace,
    )


# ---------------------------------------------------------------------------
# pair meetings via the difference walk


@dataclass
class MeetingOutcome:
    status: str  # met | escaped | horizon
    time: float
    final_separation: int  # linf norm of the separation at stopping
    residual_bound: float | None = None  # remaining meeting probability, if known


def pair_meeting(
    x: Sequence[int],
    y: Sequence[int],
    kernel: StepKernel,
    escape_radius: float | None = None,
    horizon: float = math.inf,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    table=None,
) -> MeetingOutcome:
    """Decide whether two independent walkers from x and y ever meet.

    The difference of the two walks is a spread-out walk at rate 2; the pair
    meets exactly when it hits 0.  The run stops at meeting, at escape
    (|separation| > escape_radius), or at the horizon.  When a Green table
    is supplied, a non-met outcome carries the residual meeting probability
    from the stopping separation (exact for tabulated separations, else the
    table's far bound).
    """
    x = check_site(x)
    y = check_site(y, len(x))
    if rng is None:
        rng = replica_rng(0 if seed is None else seed, 0)
    sep = np.array(y, dtype=np.int64) - np.array(x, dtype=np.int64)
    clock = 0.0
    if escape_radius is None and math.isinf(horizon):
        raise ValueError("need an escape radius or a horizon")

    def _outcome(status: str, t: float) -> MeetingOutcome:
        sep_norm = int(np.abs(sep).max())
        residual = None
        if status == "met":
            residual = 0.0
        elif table is not None:
            residual = table.hitting_many(sep.reshape(1, -1))[0]
        return MeetingOutcome(status, t, sep_norm, residual)

    if not sep.any():
        return _outcome("met", 0.0)
    steps = kernel.steps
    n_steps = steps.shape[0]
    while True:
        clock += rng.exponential(0.5)
        if clock > horizon:
            return _outcome("horizon", horizon)
        sep = sep + steps[int(rng.integers(0, n_steps))]
        if not sep.any():
            return _outcome("met", clock)
        if escape_radius is not None and np.abs(sep).max() > escape_radius:
            return _outcome("escaped", clock)


def batch_pair_meetings(
    x: Sequence[int],
    y: Sequence[int],
    kernel: StepKernel,
    escape_radius: float,
    n: int,
    rng: np.random.Generator,
    horizon: float = math.inf,
    max_steps: int | None = None,
    chunk: int = 128,
    engine: str = "auto",
) -> dict:
    """n independent meeting trials, vectorised in chunks of jump steps.

    Status codes: 0 met, 1 escaped, 2 horizon, 3 step budget exhausted
    (`max_steps`).  Capped trials are unresolved; callers should count them
    against the meeting probability's error interval.  With an infinite
    horizon only the jump chain matters (meeting does not depend on jump
    times), so no waiting times are drawn and the returned times are NaN.
    """
    x = check_site(x)
    y = check_site(y, len(x))
    sep0 = np.array(y, dtype=np.int64) - np.array(x, dtype=np.int64)
    status = np.full(n, 3, dtype=np.int8)
    finals = np.zeros(n, dtype=np.int64)
    track_time = math.isfinite(horizon)
    times = np.full(n, math.nan)
    if not sep0.any():
        status[:] = 0
        times[:] = 0.0
        return {"status": status, "final_separation": finals, "time": times}

    if engine not in ("auto", "numpy", "compiled"):
        raise ValueError("engine must be auto, numpy, or compiled")
    if engine != "numpy" and not track_time:
        try:
            from . import fastwalks

            return fastwalks.batch_difference_walk(
                sep0, kernel.steps, escape_radius, n, rng, max_steps=max_steps
            )
        except ImportError:
            if engine == "compiled":
                raise

    pos = np.tile(sep0, (n, 1))
    active = np.arange(n)
    clocks = np.zeros(n) if track_time else None
    steps = kernel.steps
    n_steps = steps.shape[0]
    done_steps = 0
    while active.size:
        k = active.size
        incr = steps[rng.integers(0, n_steps, size=(k, chunk))]
        path = pos[active][:, None, :] + np.cumsum(incr, axis=1)
        absmax = np.abs(path).max(axis=2)
        met_first = _first_true(absmax == 0, chunk)
        esc_first = _first_true(absmax > escape_radius, chunk)
        event_first = np.minimum(met_first, esc_first)
        if track_time:
            ts = clocks[active][:, None] + np.cumsum(
                rng.exponential(0.5, size=(k, chunk)), axis=1
            )
            hor_first = _first_true(ts > horizon, chunk)
        else:
            hor_first = np.full(k, chunk)

        resolved = np.minimum(event_first, hor_first) < chunk
        if resolved.any():
            sel = active[resolved]
            ei = event_first[resolved]
            hi = hor_first[resolved]
            by_event = ei < hi
            j = np.where(by_event, ei, np.maximum(hi - 1, 0))
            rows = np.nonzero(resolved)[0]
            # a horizon crossing before the first jump leaves the entry position
            end_pos = np.where(
                (by_event | (hi > 0))[:, None],
                path[rows, j],
                pos[sel],
            )
            status[sel] = np.where(
                by_event, np.where(met_first[resolved] <= esc_first[resolved], 0, 1), 2
            )
            finals[sel] = np.abs(end_pos).max(axis=1)
            pos[sel] = end_pos
            if track_time:
                times[sel] = np.where(by_event, ts[rows, j], horizon)
        surv = ~resolved
        rows = np.nonzero(surv)[0]
        pos[active[surv]] = path[rows, -1]
        if track_time:
            clocks[active[surv]] = ts[rows, -1]
        active = active[surv]
        done_steps += chunk
        if max_steps is not None and done_steps >= max_steps and active.size:
            finals[active] = np.abs(pos[active]).max(axis=1)
            break
    return {"status": status, "final_separation": finals, "time": times}


def _first_true(mask: np.ndarray, default: int) -> np.ndarray:
    """Index of the first True per row, or `default` for all-False rows."""
    any_row = mask.any(axis=1)
    first = mask.argmax(axis=1)
    return np.where(any_row, first, default)
