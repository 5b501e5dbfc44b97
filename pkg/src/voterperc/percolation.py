"""Occupied-cluster structure and annulus-crossing events on finite windows.

Clusters of a realized configuration are labeled under nearest or star
connectivity.  The crossing event uses the path-endpoint convention: an
occupied path whose first point is adjacent to a point of the inner ball A
and whose last point is adjacent to a point of the outer complement B, with
endpoint adjacency taken in the path's own mode.  Endpoints need not lie in
A or B themselves.

Because all sites of one coalescence class share a single mark, the crossing
indicator on a fixed structure is a monotone step function of alpha.
``alpha_threshold`` extracts the exact step location by activating classes
in increasing mark order with a union-only disjoint set, which gives the
identity ``has_crossing(realize_config(s, a), spec) == (a >= alpha_star)``
for every float a, with no tolerance.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit
from scipy import ndimage

from .green import displacement_bound
from .lattice import (
    Annulus,
    Connectivity,
    Site,
    Window,
    as_connectivity,
    dist_linf,
    enumerate_region,
    neighbors,
)
from .seeding import UniformBlocks, replica_rng
from .stationary import (
    CoalescenceStructure,
    SamplerConfig,
    SiteConfiguration,
    realize_config,
    sample_structure,
)
from .walks import EventEngine, StepKernel

__all__ = [
    "ClusterLabeling",
    "CrossingSpec",
    "ThresholdSample",
    "label_clusters",
    "has_crossing",
    "alpha_threshold",
    "threshold_samples",
    "crossing_curve",
    "curve_rows",
    "crossing_probability_direct",
    "alpha_c_scan",
    "scan_row",
    "threshold_quantile_summary",
    "verify_bottom_scale_inclusion",
    "write_crossing_csv",
    "write_threshold_csv",
]


# ---------------------------------------------------------------------------
# grid helpers


def _offsets(d: int, mode: Connectivity) -> list[Site]:
    """All nonzero neighbor offsets of the origin under ``mode``."""
    return neighbors((0,) * d, mode)


def _positive_offsets(d: int, mode: Connectivity) -> list[Site]:
    """One representative per unordered offset pair (first nonzero coord > 0)."""
    out = []
    for off in _offsets(d, mode):
        lead = next(c for c in off if c != 0)
        if lead > 0:
            out.append(off)
    return out


def _structure(d: int, mode: Connectivity, include_center: bool = True) -> np.ndarray:
    s = ndimage.generate_binary_structure(d, 1 if mode is Connectivity.NEAREST else d)
    if not include_center:
        s = s.copy()
        s[(1,) * d] = False
    return s


def _offset_slices(shape: Sequence[int], off: Site) -> tuple[tuple, tuple]:
    """Slice pairs (src, dst) so grid[src] and grid[dst] align sites x and x+off."""
    src, dst = [], []
    for n, o in zip(shape, off):
        src.append(slice(max(0, -o), n - max(0, o)))
        dst.append(slice(max(0, o), n - max(0, -o)))
    return tuple(src), tuple(dst)


def _window_grid(cfg: SiteConfiguration) -> tuple[np.ndarray, Window]:
    """Reshape per-site bits to the window grid (sites are in lex = C order)."""
    win = cfg.window
    if win is None:
        raise ValueError("configuration has no window; grid operations need one")
    if win.norm != "linf":
        raise ValueError("grid operations require an linf window")
    shape = (2 * win.radius + 1,) * len(win.center)
    bits = np.asarray(cfg.bits)
    if bits.size != int(np.prod(shape)):
        raise ValueError("site count does not match the window grid")
    return bits.reshape(shape), win


def _distance_grid(window: Window, center: Site) -> np.ndarray:
    """linf distance from ``center`` at every window grid point."""
    d = len(window.center)
    shape = (2 * window.radius + 1,) * d
    out = np.zeros(shape, dtype=np.int64)
    for axis in range(d):
        lo = window.center[axis] - window.radius
        coords = np.abs(np.arange(lo, lo + shape[axis]) - center[axis])
        idx = (None,) * axis + (slice(None),) + (None,) * (d - 1 - axis)
        np.maximum(out, coords[idx], out=out)
    return out


@lru_cache(maxsize=32)
def _grid_adjacency_csr(shape: tuple[int, ...], mode: Connectivity) -> tuple[np.ndarray, np.ndarray]:
    """CSR neighbor lists (ptr, idx) over flat grid indices."""
    flat = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)
    srcs, dsts = [], []
    for off in _offsets(len(shape), mode):
        a, b = _offset_slices(shape, off)
        srcs.append(flat[a].ravel())
        dsts.append(flat[b].ravel())
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    counts = np.bincount(src, minlength=flat.size)
    ptr = np.zeros(flat.size + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    order = np.argsort(src, kind="stable")
    return ptr, dst[order]


# ---------------------------------------------------------------------------
# cluster labeling


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    """Per-site cluster labels of the occupied set.

    ``labels[i]`` is 0 for a vacant site and ``k + 1`` for an occupied one,
    where k is the smallest site index in i's cluster.  The one-shift keeps
    0 free as the vacant sentinel while the representative site index stays
    recoverable as ``label - 1``.
    """

    window: Window | None
    labels: np.ndarray
    mode: Connectivity

    @property
    def n_clusters(self) -> int:
        return len(np.unique(self.labels[self.labels > 0]))

    def representative(self, label: int) -> int:
        """Smallest site index of the cluster carrying ``label``."""
        if label <= 0:
            raise ValueError("label 0 is the vacant sentinel")
        return label - 1

    def clusters(self) -> dict[int, np.ndarray]:
        """Label -> sorted site indices of that cluster."""
        out: dict[int, np.ndarray] = {}
        lab = self.labels
        for value in np.unique(lab[lab > 0]):
            out[int(value)] = np.nonzero(lab == value)[0]
        return out

    def sizes(self) -> dict[int, int]:
        return {k: len(v) for k, v in self.clusters().items()}


def label_clusters(cfg: SiteConfiguration, mode="star", engine: str = "auto") -> ClusterLabeling:
    """Label occupied clusters of ``cfg`` under the given connectivity.

    The grid engine runs a C-level connected-component pass over the window
    and relabels components to their minimal site index; the reference engine
    is a plain disjoint-set sweep over the site list and accepts arbitrary
    site sets.  Both produce identical labelings on windows.
    """
    conn = as_connectivity(mode)
    if engine == "auto":
        grid_ok = cfg.window is not None and cfg.window.norm == "linf"
        engine = "grid" if grid_ok else "reference"
    if engine == "grid":
        bits, _ = _window_grid(cfg)
        raw, _n = ndimage.label(bits, structure=_structure(bits.ndim, conn))
        flat = raw.ravel()
        occ = np.nonzero(flat > 0)[0]
        reps = np.full(int(flat.max()) + 1, flat.size, dtype=np.int64)
        np.minimum.at(reps, flat[occ], occ)
        labels = np.zeros(flat.size, dtype=np.int64)
        labels[occ] = reps[flat[occ]] + 1
        return ClusterLabeling(window=cfg.window, labels=labels, mode=conn)
    if engine != "reference":
        raise ValueError(f"unknown engine {engine!r}")

    index = {s: i for i, s in enumerate(cfg.sites)}
    parent = list(range(len(cfg.sites)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, site in enumerate(cfg.sites):
        if not cfg.bits[i]:
            continue
        for q in neighbors(site, conn):
            j = index.get(q)
            if j is not None and cfg.bits[j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    labels = np.zeros(len(cfg.sites), dtype=np.int64)
    for i in range(len(cfg.sites)):
        if cfg.bits[i]:
            labels[i] = find(i) + 1
    return ClusterLabeling(window=cfg.window, labels=labels, mode=conn)


# ---------------------------------------------------------------------------
# crossing events


@dataclass(frozen=True)
class CrossingSpec:
    """An annulus-crossing event: inner ball A to the outer-ball complement B."""

    annulus: Annulus
    mode: Connectivity = Connectivity.STAR

    def __post_init__(self):
        if not isinstance(self.annulus, Annulus):
            raise TypeError("annulus must be an Annulus")
        object.__setattr__(self, "mode", as_connectivity(self.mode))

    def fits(self, window: Window | None) -> bool:
        """Annulus contained in the window with a one-site margin.

        The margin honors the endpoint convention: the final path point sits
        at distance ``outer`` and its witness neighbor in B at ``outer + 1``
        must still be a window point.
        """
        if window is None or window.norm != "linf":
            return False
        if len(window.center) != len(self.annulus.center):
            return False
        shift = dist_linf(window.center, self.annulus.center)
        return shift + self.annulus.outer + 1 <= window.radius

    def require_fit(self, window: Window | None) -> None:
        if not self.fits(window):
            raise ValueError(
                f"annulus {self.annulus} does not fit window {window} with a one-site margin"
            )


def _adjacency_masks(window: Window, spec: CrossingSpec) -> tuple[np.ndarray, np.ndarray]:
    """Boolean grids of sites adjacent (in spec.mode) to A and to B."""
    dist = _distance_grid(window, spec.annulus.center)
    struct = _structure(dist.ndim, spec.mode, include_center=False)
    adj_a = ndimage.binary_dilation(dist <= spec.annulus.inner, structure=struct)
    # every mode includes axis steps, so a site at distance >= outer always has
    # a neighbor at distance outer + 1, and closer sites never reach past outer
    adj_b = dist >= spec.annulus.outer
    return adj_a, adj_b


def has_crossing(cfg: SiteConfiguration, spec: CrossingSpec, engine: str = "auto") -> bool:
    """Is A connected to B by an occupied mode-path with adjacent endpoints?

    True iff some occupied path g(0..n) of mode-adjacent sites has g(0)
    adjacent to a point of A = B(center, inner) and g(n) adjacent to a point
    of B = B(center, outer)^c.  Adjacency to A and B is geometric: the
    witnessed points of A and B need not be occupied.
    """
    spec.require_fit(cfg.window)
    if engine == "auto":
        engine = "grid"
    if engine == "grid":
        bits, win = _window_grid(cfg)
        occ = bits.astype(bool)
        adj_a, adj_b = _adjacency_masks(win, spec)
        lab, _n = ndimage.label(occ, structure=_structure(occ.ndim, spec.mode))
        a_labels = np.unique(lab[occ & adj_a])
        b_labels = np.unique(lab[occ & adj_b])
        return bool(np.intersect1d(a_labels, b_labels).size)
    if engine != "reference":
        raise ValueError(f"unknown engine {engine!r}")

    index = {s: i for i, s in enumerate(cfg.sites)}
    center = spec.annulus.center

    def adj_a(site: Site) -> bool:
        return any(dist_linf(q, center) <= spec.annulus.inner for q in neighbors(site, spec.mode))

    def adj_b(site: Site) -> bool:
        return any(dist_linf(q, center) > spec.annulus.outer for q in neighbors(site, spec.mode))

    seeds = [s for i, s in enumerate(cfg.sites) if cfg.bits[i] and adj_a(s)]
    seen = set(seeds)
    stack = list(seeds)
    while stack:
        site = stack.pop()
        if adj_b(site):
            return True
        for q in neighbors(site, spec.mode):
            j = index.get(q)
            if j is not None and cfg.bits[j] and q not in seen:
                seen.add(q)
                stack.append(q)
    return False


# ---------------------------------------------------------------------------
# exact per-sample thresholds


@dataclass(frozen=True)
class ThresholdSample:
    """The exact crossing threshold of one coalescence structure.

    ``alpha_star`` is the smallest alpha at which the realized configuration
    crosses; ``math.inf`` is the "never" sentinel for structures whose full
    activation still yields no crossing (geometric impossibility, distinct
    from a threshold at alpha = 1).
    """

    alpha_star: float
    structure_ref: str
    spec: CrossingSpec

    @property
    def never(self) -> bool:
        return math.isinf(self.alpha_star)

    def crossing_at(self, alpha: float) -> bool:
        return alpha >= self.alpha_star


@njit(cache=True)
def _uf_find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def _uf_union(parent, size, a, b):
    ra = _uf_find(parent, a)
    rb = _uf_find(parent, b)
    if ra == rb:
        return
    if size[ra] < size[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    size[ra] += size[rb]


@njit(cache=True)
def _activation_sweep(order, u_sorted, ptr, nbr, adj_a, adj_b):
    """Activate sites in mark order; return the mark joining SRC to SNK.

    Sites sharing one mark (one class) activate as a batch before the
    connectivity check.  Returns inf when even full activation leaves the
    two virtual terminals apart.
    """
    n = adj_a.shape[0]
    src = n
    snk = n + 1
    parent = np.arange(n + 2, dtype=np.int64)
    size = np.ones(n + 2, dtype=np.int64)
    active = np.zeros(n, dtype=np.uint8)
    m = order.shape[0]
    i = 0
    while i < m:
        u = u_sorted[i]
        j = i
        while j < m and u_sorted[j] == u:
            s = order[j]
            active[s] = 1
            if adj_a[s]:
                _uf_union(parent, size, s, src)
            if adj_b[s]:
                _uf_union(parent, size, s, snk)
            for k in range(ptr[s], ptr[s + 1]):
                t = nbr[k]
                if active[t]:
                    _uf_union(parent, size, s, t)
            j += 1
        if _uf_find(parent, src) == _uf_find(parent, snk):
            return u
        i = j
    return np.inf


def _site_marks(s: CoalescenceStructure) -> np.ndarray:
    return np.array([s.class_uniform[int(r)] for r in s.rep_index])


def alpha_threshold(
    s: CoalescenceStructure,
    spec: CrossingSpec,
    engine: str = "auto",
    ref: str | None = None,
) -> ThresholdSample:
    """Exact crossing threshold of a structure via a sorted activation sweep.

    Classes join in increasing order of their marks; a union-only disjoint
    set (activation is monotone, so no rollbacks are ever needed) tracks
    connectivity between two virtual terminals wired to the A-adjacent and
    B-adjacent sites.  The returned threshold satisfies
    ``has_crossing(realize_config(s, a), spec) == (a >= alpha_star)``
    exactly, for every float a.
    """
    spec.require_fit(s.window)
    if ref is None:
        ref = f"seed={s.seed}"
    marks = _site_marks(s)
    if engine == "auto":
        engine = "grid"

    if engine == "grid":
        win = s.window
        shape = (2 * win.radius + 1,) * len(win.center)
        adj_a, adj_b = _adjacency_masks(win, spec)
        ptr, nbr = _grid_adjacency_csr(shape, spec.mode)
        order = np.argsort(marks, kind="stable").astype(np.int64)
        star = float(
            _activation_sweep(
                order,
                marks[order],
                ptr,
                nbr,
                adj_a.ravel().astype(np.uint8),
                adj_b.ravel().astype(np.uint8),
            )
        )
        return ThresholdSample(alpha_star=star, structure_ref=ref, spec=spec)
    if engine != "reference":
        raise ValueError(f"unknown engine {engine!r}")

    index = {site: i for i, site in enumerate(s.sites)}
    center = spec.annulus.center
    n = len(s.sites)
    parent = list(range(n + 2))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    active = [False] * n
    by_mark: dict[float, list[int]] = {}
    for i, u in enumerate(marks):
        by_mark.setdefault(float(u), []).append(i)
    for u in sorted(by_mark):
        for i in by_mark[u]:
            active[i] = True
            site = s.sites[i]
            if any(dist_linf(q, center) <= spec.annulus.inner for q in neighbors(site, spec.mode)):
                union(i, n)
            if any(dist_linf(q, center) > spec.annulus.outer for q in neighbors(site, spec.mode)):
                union(i, n + 1)
            for q in neighbors(site, spec.mode):
                j = index.get(q)
                if j is not None and active[j]:
                    union(i, j)
        if find(n) == find(n + 1):
            return ThresholdSample(alpha_star=u, structure_ref=ref, spec=spec)
    return ThresholdSample(alpha_star=math.inf, structure_ref=ref, spec=spec)


# ---------------------------------------------------------------------------
# curves and scans


def _curve_geometry(d: int, L: int, mode) -> tuple[Window, CrossingSpec]:
    """Annulus inner L-2, outer 2L, sampled on B(0, 2L+1)."""
    if L < 3:
        raise ValueError("crossing geometry needs L >= 3 (inner radius L - 2 >= 1)")
    origin = (0,) * d
    window = Window(center=origin, radius=2 * L + 1)
    spec = CrossingSpec(annulus=Annulus(center=origin, inner=L - 2, outer=2 * L), mode=mode)
    return window, spec


def threshold_samples(
    d: int,
    R: int,
    L: int,
    replicas: int,
    *,
    config: SamplerConfig | None = None,
    seed: int = 0,
    mode="star",
    index_base: int = 0,
) -> tuple[list[ThresholdSample], list[float]]:
    """Sample structures on the scale-L crossing window and extract thresholds.

    Returns the per-replica threshold samples together with the structures'
    coalescence residual bounds (each bounds the probability that continuing
    the walks past the stop rule would change that sample's threshold).
    """
    window, spec = _curve_geometry(d, L, mode)
    cfg = config if config is not None else SamplerConfig(seed=seed)
    samples: list[ThresholdSample] = []
    residuals: list[float] = []
    for i in range(replicas):
        idx = index_base + i
        s = sample_structure(window, d, R, config=cfg, rng=replica_rng(seed, idx))
        samples.append(alpha_threshold(s, spec, ref=f"philox({seed},{idx})"))
        residuals.append(s.residual_bound)
    return samples, residuals


def crossing_curve(
    d: int,
    R: int,
    scales: Sequence[int],
    alpha_grid: Sequence[float],
    replicas: int,
    *,
    config: SamplerConfig | None = None,
    seed: int = 0,
    mode="star",
) -> list[dict]:
    """Estimate P[B(0, L-2) crossed to B(0, 2L)^c] on a grid of alpha values.

    One threshold sample per replica serves every alpha: the estimate at
    alpha is the ECDF of the per-sample thresholds, so each row is monotone
    in alpha by construction and all rows of one L share replicas.  Rows
    carry the mean residual bound of the underlying structures.
    """
    if not scales:
        raise ValueError("need at least one scale")
    grid = [float(a) for a in alpha_grid]
    if any(not 0.0 <= a <= 1.0 for a in grid):
        raise ValueError("alpha grid values must lie in [0, 1]")
    rows: list[dict] = []
    for k, L in enumerate(scales):
        samples, residuals = threshold_samples(
            d, R, int(L), replicas, config=config, seed=seed, mode=mode,
            index_base=k * replicas,
        )
        rows.extend(curve_rows(int(L), samples, residuals, grid))
    return rows


def curve_rows(
    L: int,
    samples: Sequence[ThresholdSample],
    residuals: Sequence[float],
    alpha_grid: Sequence[float],
) -> list[dict]:
    """Assemble ECDF curve rows for one scale from its threshold samples."""
    stars = np.array([t.alpha_star for t in samples])
    rb = float(np.mean(residuals))
    rows = []
    for a in alpha_grid:
        p = float(np.mean(stars <= a))
        se = math.sqrt(p * (1.0 - p) / len(stars))
        rows.append(
            {
                "L": int(L),
                "alpha": float(a),
                "p_hat": p,
                "se": se,
                "residual_bound": rb,
                "n": len(stars),
            }
        )
    return rows


def crossing_probability_direct(
    d: int,
    R: int,
    L: int,
    alpha: float,
    replicas: int,
    *,
    config: SamplerConfig | None = None,
    seed: int = 0,
    mode="star",
    index_base: int = 0,
) -> tuple[float, float]:
    """Direct per-alpha crossing estimate (realize each replica, then test).

    With the same seed this reproduces the ECDF value exactly, threshold by
    threshold; with an independent seed it is an independent estimator.
    """
    window, spec = _curve_geometry(d, L, mode)
    cfg = config if config is not None else SamplerConfig(seed=seed)
    hits = 0
    for i in range(replicas):
        s = sample_structure(window, d, R, config=cfg, rng=replica_rng(seed, index_base + i))
        if has_crossing(realize_config(s, alpha), spec):
            hits += 1
    p = hits / replicas
    return p, math.sqrt(p * (1.0 - p) / replicas)


def threshold_quantile_summary(values: Sequence[float], quantile: float) -> dict:
    """Quantile of finite threshold samples with an order-statistic CI.

    The confidence interval takes the order statistics at rank
    n*q -/+ 1.96*sqrt(n q (1-q)), the standard distribution-free interval
    for a quantile.
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    finite = sorted(float(v) for v in values if math.isfinite(v))
    n = len(finite)
    if n < 2:
        raise ValueError("need at least two finite threshold samples")
    point = float(np.quantile(finite, quantile))
    spread = 1.96 * math.sqrt(n * quantile * (1.0 - quantile))
    lo = min(max(int(math.floor(n * quantile - spread)), 0), n - 1)
    hi = min(max(int(math.ceil(n * quantile + spread)), 0), n - 1)
    return {
        "n": n,
        "quantile": quantile,
        "value": point,
        "ci_lo": finite[lo],
        "ci_hi": finite[hi],
    }


def alpha_c_scan(
    d: int,
    R: int,
    scales: Sequence[int],
    quantile: float = 0.5,
    *,
    replicas: int = 100,
    config: SamplerConfig | None = None,
    seed: int = 0,
    mode="star",
) -> dict:
    """Finite-size pseudo-critical values: threshold quantiles per scale.

    Exploratory output only.  The quantiles describe the sampled windows;
    nothing here estimates an infinite-volume critical point, and the report
    says so.  The trend is a least-squares slope of the quantile against
    log L across the requested scales.
    """
    if len(scales) < 2:
        raise ValueError("need at least two scales for a scan")
    rows: list[dict] = []
    for k, L in enumerate(scales):
        samples, residuals = threshold_samples(
            d, R, int(L), replicas, config=config, seed=seed, mode=mode,
            index_base=k * replicas,
        )
        rows.append(scan_row(int(L), samples, residuals, quantile))
    values = np.array([r["value"] for r in rows])
    logL = np.log([r["L"] for r in rows])
    slope = float(np.polyfit(logL, values, 1)[0])
    return {
        "rows": rows,
        "quantile": quantile,
        "trend_slope_vs_logL": slope,
        "exploratory": True,
        "note": "finite-size pseudo-critical values; no infinite-volume claim",
    }


def scan_row(
    L: int,
    samples: Sequence[ThresholdSample],
    residuals: Sequence[float],
    quantile: float,
) -> dict:
    """Per-scale scan summary from threshold samples."""
    stars = [t.alpha_star for t in samples]
    summary = threshold_quantile_summary(stars, quantile)
    summary.update(
        {
            "L": int(L),
            "n_never": sum(1 for v in stars if math.isinf(v)),
            "residual_bound": float(np.mean(residuals)),
        }
    )
    return summary


def write_crossing_csv(rows: Sequence[dict], path) -> None:
    """Crossing-curve rows as CSV with header L,alpha,p_hat,se,residual_bound,n."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["L", "alpha", "p_hat", "se", "residual_bound", "n"])
        for r in rows:
            writer.writerow(
                [r["L"], r["alpha"], r["p_hat"], r["se"], r["residual_bound"], r["n"]]
            )


def write_threshold_csv(samples_by_scale: dict[int, Sequence[ThresholdSample]], path) -> None:
    """Threshold samples as CSV with header L,alpha_star,seed.

    The seed column carries each sample's structure reference (root seed and
    replica index); a sample that never crosses writes the literal "never".
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["L", "alpha_star", "seed"])
        for L in sorted(samples_by_scale):
            for t in samples_by_scale[L]:
                star = "never" if t.never else repr(t.alpha_star)
                writer.writerow([L, star, t.structure_ref])


# ---------------------------------------------------------------------------
# bottom-scale inclusion check


def verify_bottom_scale_inclusion(
    d: int,
    R: int,
    L: int,
    replicas: int,
    *,
    alpha: float = 0.5,
    seed: int = 0,
    T: float | None = None,
) -> dict:
    """Pathwise check of the bottom-scale crossing inclusion.

    Each replica runs coalescing walks from every site of B(0, 2L+1) up to
    time T = L^(2 - 1/(4d)) and realizes the configuration from the classes
    at T.  The crossing event {B(0,L) star-connected to B(0,2L)^c} must then
    be covered by the union, over x in B(0, 2L), of the displacement events
    E_x = {walk from x moved farther than L/4 by T} and, over star-adjacent
    pairs x, y in B(0, 2L), of
    F_xy = E_x^c n E_y^c n {walks from x, y never met by T, both occupied}.
    The inclusion holds path by path for any T because a crossing path
    either contains two far-apart sites whose walks met (forcing a large
    displacement by the meeting time) or an adjacent pair whose walks stayed
    apart; the report counts any violation, which must be zero.

    Also reports beta_hat, the empirical probability of E_0, against the
    closed-form displacement bound (which is only informative once
    T/(L/4)^2 is small; at desk scales it may exceed 1, and the report
    flags that).
    """
    if L < 3:
        raise ValueError("inclusion geometry needs L >= 3")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    epsilon = 1.0 / (4 * d)
    if T is None:
        T = float(L) ** (2.0 - epsilon)
    origin = (0,) * d
    window = Window(center=origin, radius=2 * L + 1)
    sites = enumerate_region(window)
    n = len(sites)
    shape = (2 * window.radius + 1,) * d
    coords = np.array(sites, dtype=np.int64)
    dist = np.abs(coords).max(axis=1)
    in_ball = (dist <= 2 * L).reshape(shape)
    center_idx = sites.index(origin)
    threshold = L / 4.0
    spec = CrossingSpec(annulus=Annulus(center=origin, inner=L, outer=2 * L), mode="star")
    offsets = _positive_offsets(d, Connectivity.STAR)
    kernel = StepKernel(d, R)

    t0 = time.perf_counter()
    violations: list[int] = []
    left_count = right_count = e_union_count = f_only_count = beta_hits = 0
    for i in range(replicas):
        stream = UniformBlocks(replica_rng(seed, i))
        engine = EventEngine(sites, kernel, "coalescing", stream=stream,
                             track_displacement_until=T)
        engine.run(T)
        rep = engine.rep_index()
        marks = {r: stream.take() for r in sorted({int(v) for v in rep})}
        u_site = np.array([marks[int(v)] for v in rep])
        bits = (u_site <= alpha).astype(np.uint8)
        cfg = SiteConfiguration(sites=sites, alpha=alpha, bits=bits, window=window)

        left = has_crossing(cfg, spec)
        e_flags = (engine.maxdisp > threshold).reshape(shape)
        e_any = bool((e_flags & in_ball).any())
        occ = bits.astype(bool).reshape(shape)
        rep_grid = rep.reshape(shape)
        f_any = False
        for off in offsets:
            a, b = _offset_slices(shape, off)
            pair = (
                occ[a] & occ[b]
                & (rep_grid[a] != rep_grid[b])
                & ~e_flags[a] & ~e_flags[b]
                & in_ball[a] & in_ball[b]
            )
            if pair.any():
                f_any = True
                break
        right = e_any or f_any
        left_count += left
        right_count += right
        e_union_count += e_any
        f_only_count += left and not e_any
        beta_hits += bool(e_flags.flat[center_idx])
        if left and not right:
            violations.append(i)

    beta_hat = beta_hits / replicas
    beta_se = math.sqrt(beta_hat * (1.0 - beta_hat) / replicas)
    beta_bound = displacement_bound(d, T, threshold)
    beta_ok = beta_hat <= beta_bound + 3.0 * beta_se
    return {
        "d": d,
        "R": R,
        "L": L,
        "alpha": alpha,
        "epsilon": epsilon,
        "T": T,
        "replicas": replicas,
        "n_violations": len(violations),
        "violations": violations,
        "left_count": left_count,
        "right_count": right_count,
        "e_union_count": e_union_count,
        "f_only_count": f_only_count,
        "beta_hat": beta_hat,
        "beta_se": beta_se,
        "beta_bound": beta_bound,
        "beta_bound_vacuous": beta_bound >= 1.0,
        "beta_ok": beta_ok,
        "ok": not violations and beta_ok,
        "wall_time_s": time.perf_counter() - t0,
    }
