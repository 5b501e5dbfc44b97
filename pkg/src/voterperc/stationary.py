"""Sampling the stationary voter measure on finite site sets via duality.

A sample is produced by running coalescing walks from every site of the set
until an adaptive stop rule fires, then attaching one i.i.d. uniform mark to
each surviving coalescence class.  Thresholding the marks at level alpha
realizes a configuration whose law approximates the stationary measure with
1-density alpha; one structure realizes every alpha simultaneously, which
makes threshold curves exact ECDFs downstream.

The infinite-horizon class count is not computable, so the walks stop at the
first of: full coalescence, a union-bound residual (sum of pairwise meeting
probabilities h_R over surviving classes) dropping below a target, or a hard
time cap.  The residual is attached to every estimate as a truncation bias
bound.  Site marginals are exact Bernoulli(alpha) under any truncation, since
every class carries an independent uniform; only joint statistics carry bias.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .green import build_table
from .lattice import Site, Window, check_site, dist_linf, enumerate_region
from .seeding import UniformBlocks, replica_rng
from .walks import (
    EventEngine,
    StepKernel,
    batch_pair_meetings,
    coupled_coalescing_annihilating,
)


@dataclass(frozen=True)
class SamplerConfig:
    """Stop-rule and estimator knobs for structure sampling.

    ``horizon_cap = None`` means the per-call default 64 * diameter^2 of the
    site set (clamped below by 64).  ``pair_closure_heuristic`` merges each
    surviving class pair independently with probability h_R(separation) after
    the walks stop; it trades truncation error for an uncontrolled
    triple-interaction error and marks the output approximate.
    """

    eps_pair_residual: float = 1e-3
    horizon_cap: float | None = None
    escape_radius: int = 512
    pair_closure_heuristic: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.eps_pair_residual <= 0:
            raise ValueError("eps_pair_residual must be > 0")
        if self.horizon_cap is not None and self.horizon_cap <= 0:
            raise ValueError("horizon_cap must be > 0")
        if self.escape_radius < 1:
            raise ValueError("escape_radius must be >= 1")

    def resolve_horizon(self, sites: Sequence[Site]) -> float:
        if self.horizon_cap is not None:
            return float(self.horizon_cap)
        arr = np.asarray(sites, dtype=np.int64)
        diam = int((arr.max(axis=0) - arr.min(axis=0)).max()) if len(arr) > 1 else 0
        return float(max(64.0, 64.0 * diam * diam))


@dataclass
class Estimate:
    """Monte Carlo estimate with a standard error and a truncation bias bound."""

    value: float
    se: float
    bias_bound: float = 0.0
    n: int = 0
    extra: dict = field(default_factory=dict)


def _canonical_sites(window) -> tuple[list[Site], Window | None]:
    if isinstance(window, Window):
        return enumerate_region(window), window
    sites = sorted(check_site(p) for p in window)
    if not sites:
        raise ValueError("site set must be non-empty")
    if len(set(sites)) != len(sites):
        raise ValueError("sites must be distinct")
    return sites, None


@dataclass
class CoalescenceStructure:
    """Coalescence classes over a site set, with one uniform mark per class.

    ``rep_index[i]`` is the index of the minimal-index member of site i's
    class; ``class_uniform`` maps each representative index to its mark.
    ``residual_bound`` is the union bound on any further coalescence among
    surviving classes had the walks continued (0 after full coalescence).
    """

    sites: list[Site]
    rep_index: np.ndarray
    class_uniform: dict[int, float]
    residual_bound: float
    elapsed: float
    seed: int
    stop_reason: str  # absorbed | residual | horizon
    approximate: bool = False  # True when the pair-closure heuristic ran
    window: Window | None = None
    class_position: dict[int, Site] | None = None

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_classes(self) -> int:
        return len(self.class_uniform)

    def classes(self) -> dict[int, list[int]]:
        """Representative index -> sorted member indices."""
        out: dict[int, list[int]] = {}
        for i, r in enumerate(self.rep_index):
            out.setdefault(int(r), []).append(i)
        return out

    def to_json(self) -> str:
        payload = {
            "sites": [list(s) for s in self.sites],
            "rep_index": [int(r) for r in self.rep_index],
            "class_uniform": {str(k): v for k, v in self.class_uniform.items()},
            "residual_bound": self.residual_bound,
            "elapsed": self.elapsed,
            "seed": self.seed,
            "stop_reason": self.stop_reason,
            "approximate": self.approximate,
        }
        if self.window is not None:
            payload["window"] = {
                "center": list(self.window.center),
                "radius": self.window.radius,
                "norm": self.window.norm,
            }
        if self.class_position is not None:
            payload["class_position"] = {
                str(k): list(v) for k, v in self.class_position.items()
            }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "CoalescenceStructure":
        obj = json.loads(text)
        window = None
        if "window" in obj:
            w = obj["window"]
            window = Window(center=tuple(w["center"]), radius=w["radius"], norm=w["norm"])
        class_position = None
        if "class_position" in obj:
            class_position = {
                int(k): tuple(v) for k, v in obj["class_position"].items()
            }
        return cls(
            sites=[tuple(s) for s in obj["sites"]],
            rep_index=np.array(obj["rep_index"], dtype=np.int64),
            class_uniform={int(k): float(v) for k, v in obj["class_uniform"].items()},
            residual_bound=float(obj["residual_bound"]),
            elapsed=float(obj["elapsed"]),
            seed=int(obj["seed"]),
            stop_reason=obj["stop_reason"],
            approximate=bool(obj["approximate"]),
            window=window,
            class_position=class_position,
        )


@dataclass
class SiteConfiguration:
    """One realized 0/1 configuration over a site set (canonical site order)."""

    sites: list[Site]
    alpha: float
    bits: np.ndarray  # uint8, one entry per site
    window: Window | None = None

    def occupation_fraction(self) -> float:
        return float(self.bits.mean())

    def __getitem__(self, site: Sequence[int]) -> int:
        key = tuple(int(c) for c in site)
        return int(self.bits[self.sites.index(key)])

    def to_bytes(self) -> bytes:
        header = {
            "d": len(self.sites[0]),
            "alpha": self.alpha,
            "n": len(self.sites),
        }
        if self.window is not None:
            header["window"] = {
                "center": list(self.window.center),
                "radius": self.window.radius,
                "norm": self.window.norm,
            }
        else:
            header["sites"] = [list(s) for s in self.sites]
        head = json.dumps(header).encode()
        return head + b"\x00" + np.packbits(self.bits).tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SiteConfiguration":
        head, _, packed = blob.partition(b"\x00")
        obj = json.loads(head.decode())
        window = None
        if "window" in obj:
            w = obj["window"]
            window = Window(center=tuple(w["center"]), radius=w["radius"], norm=w["norm"])
            sites = enumerate_region(window)
        else:
            sites = [tuple(s) for s in obj["sites"]]
        bits = np.unpackbits(np.frombuffer(packed, dtype=np.uint8))[: obj["n"]]
        return cls(sites=sites, alpha=float(obj["alpha"]), bits=bits, window=window)


def _pair_residual(table, positions: np.ndarray, d: int, cap: float | None = None) -> float:
    """Union bound on further coalescence: sum of pairwise h_R (1 each for d <= 2)."""
    k = positions.shape[0]
    if k <= 1:
        return 0.0
    if d <= 2:
        return k * (k - 1) / 2.0  # recurrent: every pair meets
    return table.pair_residual(positions, cap=cap)


def sample_structure(
    window,
    d: int,
    R: int,
    config: SamplerConfig | None = None,
    rng: np.random.Generator | None = None,
) -> CoalescenceStructure:
    """Run coalescing walks from every site until the stop rule fires.

    The stop rule is the first of: a single surviving class, pairwise
    residual below ``config.eps_pair_residual``, or the horizon cap.  The
    achieved residual is recorded either way.  ``window`` may be a Window or
    any iterable of sites.
    """
    if config is None:
        config = SamplerConfig()
    sites, win = _canonical_sites(window)
    d0 = len(sites[0])
    if d0 != d:
        raise ValueError(f"sites have dimension {d0}, expected {d}")
    if rng is None:
        rng = replica_rng(config.seed, 0)
    stream = UniformBlocks(rng)
    eps = config.eps_pair_residual
    horizon = config.resolve_horizon(sites)
    table = build_table(d, R) if d >= 3 else None

    if len(sites) == 1:
        return CoalescenceStructure(
            sites=sites,
            rep_index=np.zeros(1, dtype=np.int64),
            class_uniform={0: stream.take()},
            residual_bound=0.0,
            elapsed=0.0,
            seed=config.seed,
            stop_reason="absorbed",
            window=win,
            class_position={0: sites[0]},
        )

    engine = EventEngine(sites, StepKernel(d, R), "coalescing", stream=stream)

    # geometric segment schedule: cheap residual checks early, few late
    seg = max(1.0, horizon / 1024.0)
    stop_reason = "horizon"
    residual = math.inf
    while True:
        t = min(seg, horizon)
        status = engine.run(t, until_absorbed=True)
        if status == 2:  # absorbed: single class
            stop_reason = "absorbed"
            residual = 0.0
            break
        residual = _pair_residual(table, engine.live_positions(), d, cap=eps)
        if residual <= eps:
            stop_reason = "residual"
            break
        if t >= horizon:
            stop_reason = "horizon"
            break
        seg *= 2.0

    rep = engine.rep_index()
    positions = {int(r): tuple(int(c) for c in engine.pos[r]) for r in np.unique(rep)}

    approximate = False
    if config.pair_closure_heuristic and len(positions) > 1 and d >= 3:
        # merge each surviving pair independently with its meeting probability
        approximate = True
        parent = {r: r for r in positions}

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        reps_sorted = sorted(positions)
        for ii, a in enumerate(reps_sorted):
            for b in reps_sorted[ii + 1 :]:
                u = stream.take()
                if u < table.hitting(positions[a], positions[b]):
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        lo, hi = min(ra, rb), max(ra, rb)
                        parent[hi] = lo
        rep = np.array([find(int(r)) for r in rep], dtype=np.int64)
        positions = {int(r): positions[int(r)] for r in np.unique(rep)}

    uniforms = {int(r): stream.take() for r in sorted(positions)}
    return CoalescenceStructure(
        sites=sites,
        rep_index=rep,
        class_uniform=uniforms,
        residual_bound=float(residual),
        elapsed=float(engine.clock),
        seed=config.seed,
        stop_reason=stop_reason,
        approximate=approximate,
        window=win,
        class_position=positions,
    )


def realize_config(s: CoalescenceStructure, alpha: float) -> SiteConfiguration:
    """Threshold the class marks: site is occupied iff its class mark <= alpha.

    The weak inequality makes per-sample crossing thresholds exact: the
    crossing event first occurs at alpha equal to some class mark, and
    occupancy at exactly that level must include the activating class.
    Marks live in [0, 1), so alpha = 1 is all-occupied surely and alpha = 0
    all-vacant unless a mark is exactly 0 (probability 2^-53 per class).
    Sites of one class always agree, and realizations are pointwise
    monotone in alpha on a fixed structure.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    marks = np.array([s.class_uniform[int(r)] for r in s.rep_index])
    bits = (marks <= alpha).astype(np.uint8)
    return SiteConfiguration(sites=s.sites, alpha=alpha, bits=bits, window=s.window)


def estimate_density(
    d: int,
    R: int,
    alpha: float,
    window,
    replicas: int,
    config: SamplerConfig | None = None,
    seed: int = 0,
) -> Estimate:
    """Mean occupation fraction over independent structure samples.

    Unbiased for alpha under any truncation setting: each class carries an
    independent uniform, so site marginals are Bernoulli(alpha) exactly.
    """
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    fractions = np.empty(replicas)
    residuals = np.empty(replicas)
    for i in range(replicas):
        s = sample_structure(window, d, R, config=config, rng=replica_rng(seed, i))
        fractions[i] = realize_config(s, alpha).occupation_fraction()
        residuals[i] = s.residual_bound
    return Estimate(
        value=float(fractions.mean()),
        se=float(fractions.std(ddof=1) / math.sqrt(replicas)),
        bias_bound=0.0,
        n=replicas,
        extra={"alpha": alpha, "mean_residual": float(residuals.mean())},
    )


def estimate_correlation(
    d: int,
    R: int,
    x: Sequence[int],
    replicas: int,
    method: str = "dual-pair",
    alpha: float = 0.5,
    config: SamplerConfig | None = None,
    seed: int = 0,
) -> Estimate:
    """Correlation of the occupation indicators at 0 and x; equals h_R(0, x).

    The correlation is alpha-free: Cov = alpha(1-alpha) h_R and both
    variances are alpha(1-alpha).  The dual-pair method resolves meetings of
    the difference walk directly; the window method computes the Pearson
    correlation of realized configurations on the two-site set.
    """
    if method not in ("dual-pair", "window"):
        raise ValueError("method must be 'dual-pair' or 'window'")
    if config is None:
        config = SamplerConfig()
    x = check_site(x, d)
    origin = (0,) * d
    if x == origin:
        return Estimate(value=1.0, se=0.0, bias_bound=0.0, n=0, extra={"method": method})
    if d <= 2:
        raise ValueError("correlation estimation needs d >= 3 (transient walks)")
    table = build_table(d, R)
    kernel = StepKernel(d, R)

    if method == "dual-pair":
        out = batch_pair_meetings(
            origin,
            x,
            kernel,
            escape_radius=float(config.escape_radius),
            n=replicas,
            rng=replica_rng(seed, 0),
        )
        met = out["status"] == 0
        p = float(met.mean())
        se = math.sqrt(max(p * (1 - p), 1.0 / replicas) / replicas)
        # an unresolved trial at l-inf separation m can still meet, with
        # probability at most h((m, 0, ..., 0)) (the axis point maximizes h
        # at fixed l-inf norm)
        resid = 0.0
        for m in out["final_separation"][~met]:
            sep = (int(m),) + (0,) * (d - 1)
            resid += table.hitting(sep) if m <= table.radius else table.far_bound
        return Estimate(
            value=p,
            se=float(se),
            bias_bound=float(resid / replicas),
            n=replicas,
            extra={"method": method, "escape_radius": config.escape_radius},
        )

    pairs = np.empty((replicas, 2))
    residuals = np.empty(replicas)
    for i in range(replicas):
        s = sample_structure([origin, x], d, R, config=config, rng=replica_rng(seed, i))
        cfg = realize_config(s, alpha)
        pairs[i] = cfg.bits
        residuals[i] = s.residual_bound
    v0, v1 = pairs.var(axis=0, ddof=1)
    if v0 == 0 or v1 == 0:
        raise ValueError("degenerate sample: all realizations identical; use more replicas")
    r = float(np.corrcoef(pairs.T)[0, 1])
    se = (1 - r * r) / math.sqrt(replicas - 1)
    # truncation removes exactly the post-stop meeting probability of this
    # pair, which is the recorded residual
    return Estimate(
        value=r,
        se=float(se),
        bias_bound=float(residuals.mean()),
        n=replicas,
        extra={"method": method, "alpha": alpha},
    )


def estimate_joint_occupation(
    A,
    d: int,
    R: int,
    alpha: float,
    replicas: int,
    config: SamplerConfig | None = None,
    seed: int = 0,
) -> dict:
    """Estimate of the probability that every site of A is occupied.

    By duality this is the mean of alpha^(number of classes).  The report
    carries the product lower bound alpha^|A| and the pairwise-meeting upper
    bound alpha^|A| * prod(1 + h_ij (alpha^-2 - 1)), each checked within
    3 SE + truncation bias.  Truncation can only raise the class count, so
    the raw estimate is biased downward by at most
    mean_residual * (alpha - alpha^|A|).
    """
    sites, _ = _canonical_sites(A)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    n_sites = len(sites)
    vals = np.empty(replicas)
    residuals = np.empty(replicas)
    for i in range(replicas):
        s = sample_structure(sites, d, R, config=config, rng=replica_rng(seed, i))
        vals[i] = alpha ** s.n_classes
        residuals[i] = s.residual_bound
    value = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    mean_residual = float(residuals.mean())
    bias = mean_residual * max(alpha - alpha ** n_sites, 0.0)

    lower = alpha ** n_sites
    upper = math.inf
    if 0.0 < alpha:
        table = build_table(d, R) if d >= 3 else None
        prod = 1.0
        for i in range(n_sites):
            for j in range(i + 1, n_sites):
                h = 1.0 if d <= 2 else table.hitting(sites[i], sites[j])
                prod *= 1.0 + h * (alpha ** -2 - 1.0)
        upper = lower * prod
    return {
        "value": value,
        "se": se,
        "bias_bound": bias,
        "mean_residual": mean_residual,
        "lower_bound": lower,
        "upper_bound": upper,
        "lower_ok": value >= lower - 3 * se - bias,
        "upper_ok": value <= upper + 3 * se + bias,
        "n": replicas,
        "alpha": alpha,
        "n_sites": n_sites,
    }


def check_annihilation_inequalities(
    X,
    d: int,
    R: int,
    alpha: float,
    lam: float,
    replicas: int,
    config: SamplerConfig | None = None,
    horizon: float | None = None,
    seed: int = 0,
) -> dict:
    """Pathwise and moment checks for annihilating vs coalescing systems.

    Part (a): on coupled runs sharing one arrow stream, the annihilating
    set stays inside the coalescing set at every event, so the live counts
    satisfy N' <= N pathwise and alpha^N <= alpha^(N') follows exactly.
    Part (b): the truncated annihilation count A satisfies
    E[exp(lam A)] <= prod over pairs of (1 + h_ij (exp(lam) - 1)), the exact
    moment of summing independent Bernoulli(h_ij) variables.  Truncation
    lowers the left side; the report bounds the gap by
    mean_residual * exp(lam * floor(|X|/2)).
    """
    sites, _ = _canonical_sites(X)
    if len(sites) > 8:
        raise ValueError("|X| > 8 exceeds the desk-scale replica budget")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if config is None:
        config = SamplerConfig()
    horizon = config.resolve_horizon(sites) if horizon is None else float(horizon)
    kernel = StepKernel(d, R)
    table = build_table(d, R) if d >= 3 else None

    # (a) coupled pathwise domination
    violations = 0
    a_coal = np.empty(replicas)
    a_annih = np.empty(replicas)
    for i in range(replicas):
        out = coupled_coalescing_annihilating(
            sites, kernel, horizon=horizon, rng=replica_rng(seed, i)
        )
        violations += out.violations
        for _, n_c, n_a in out.n_trace:
            if n_a > n_c:
                violations += 1
        a_coal[i] = alpha ** len(out.coalescing_sites)
        a_annih[i] = alpha ** len(out.annihilating_sites)
    part_a = {
        "replicas": replicas,
        "violations": violations,
        "pathwise_ok": violations == 0,
        "mean_alpha_N_coalescing": float(a_coal.mean()),
        "mean_alpha_N_annihilating": float(a_annih.mean()),
    }

    # (b) exponential moment of the annihilation count
    vals = np.empty(replicas)
    residuals = np.empty(replicas)
    for i in range(replicas):
        eng = EventEngine(
            sites,
            kernel,
            "annihilating",
            stream=UniformBlocks(replica_rng(seed, replicas + i)),
        )
        eng.run(horizon, until_absorbed=True)
        vals[i] = math.exp(lam * eng.annihilations)
        residuals[i] = _pair_residual(table, eng.live_positions(), d)
    lhs = float(vals.mean())
    lhs_se = float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    rhs = 1.0
    for i in range(len(sites)):
        for j in range(i + 1, len(sites)):
            h = 1.0 if d <= 2 else table.hitting(sites[i], sites[j])
            rhs *= 1.0 + h * (math.exp(lam) - 1.0)
    mean_residual = float(residuals.mean())
    bias = mean_residual * math.exp(lam * (len(sites) // 2))
    part_b = {
        "replicas": replicas,
        "lhs": lhs,
        "lhs_se": lhs_se,
        "rhs": rhs,
        "mean_residual": mean_residual,
        "bias_bound": bias,
        "ok": lhs <= rhs + 3 * lhs_se,
        "ok_with_bias": lhs + bias <= rhs + 3 * lhs_se,
    }
    return {
        "params": {
            "sites": sites,
            "d": d,
            "R": R,
            "alpha": alpha,
            "lambda": lam,
            "horizon": horizon,
            "seed": seed,
        },
        "a": part_a,
        "b": part_b,
    }


def check_symmetry(
    d: int,
    R: int,
    alpha: float,
    window,
    replicas: int,
    config: SamplerConfig | None = None,
    seed: int = 0,
) -> dict:
    """Two-sample comparison: 1 - xi at level alpha vs xi at level 1 - alpha.

    The flipped field at density alpha has the law of the field at density
    1 - alpha, so densities and adjacent-pair joint occupations must agree
    within Monte Carlo error (3 SE two-sample z).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    sites, _ = _canonical_sites(window)
    adj = [
        (i, j)
        for i in range(len(sites))
        for j in range(i + 1, len(sites))
        if dist_linf(sites[i], sites[j]) == 1
    ]

    def batch(level: float, flip: bool, index_base: int) -> tuple[np.ndarray, np.ndarray]:
        dens = np.empty(replicas)
        pair = np.empty(replicas)
        for i in range(replicas):
            s = sample_structure(
                sites, d, R, config=config, rng=replica_rng(seed, index_base + i)
            )
            bits = realize_config(s, level).bits
            if flip:
                bits = 1 - bits
            dens[i] = bits.mean()
            if adj:
                pair[i] = np.mean([bits[a] * bits[b] for a, b in adj])
            else:
                pair[i] = 0.0
        return dens, pair

    dens_f, pair_f = batch(alpha, flip=True, index_base=0)
    dens_p, pair_p = batch(1.0 - alpha, flip=False, index_base=replicas)

    def two_sample(a: np.ndarray, b: np.ndarray) -> dict:
        se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
        diff = float(a.mean() - b.mean())
        return {
            "mean_flipped": float(a.mean()),
            "mean_direct": float(b.mean()),
            "diff": diff,
            "se": se,
            "ok": abs(diff) <= 3 * se + 1e-12,
        }

    return {
        "alpha": alpha,
        "replicas": replicas,
        "density": two_sample(dens_f, dens_p),
        "adjacent_pair": two_sample(pair_f, pair_p),
        "n_adjacent_pairs": len(adj),
    }
