"""Batch experiment driver: config resolution, seeding, dispatch, reports.

Every subcommand resolves its configuration with the precedence
flags > JSON config file > built-in defaults, echoes the resolved values
into a ``RunReport`` JSON printed on stdout, and optionally writes a data
file (``--out``).  Replica i always draws from a counter-based stream keyed
by (seed, i), so results do not depend on scheduling order and reruns with
identical config and seed reproduce every data file byte for byte (the
report's wall time is the only field that varies).

Exit codes: 0 success, 1 a checked invariant or inequality failed
(falsification signal), 2 configuration or usage error.

The ``VOTERPERC_WORKERS`` environment variable bounds the worker pool used
for per-scale parallelism in ``crossing``, ``threshold``, and ``scan``;
outputs are identical for any worker count because each scale's replica
streams are derived from its own index block.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .green import build_table, default_table_radius, validate_kernel_bounds
from .lattice import Window, check_site, enumerate_region, enumerate_sphere, sphere_size
from .percolation import (
    alpha_threshold,
    crossing_curve,
    curve_rows,
    has_crossing,
    label_clusters,
    scan_row,
    threshold_quantile_summary,
    threshold_samples,
    verify_bottom_scale_inclusion,
    write_crossing_csv,
    write_threshold_csv,
)
from .renorm import (
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
    sample_embedding,
    validate_admissible_pair,
    validate_embedding,
)
from .seeding import PER_REPLICA_RULE, replica_rng
from .stationary import (
    SamplerConfig,
    check_annihilation_inequalities,
    estimate_correlation,
    estimate_density,
    estimate_joint_occupation,
    realize_config,
    sample_structure,
)
from .walks import StepKernel, coupled_coalescing_annihilating

REQ = object()


# ---------------------------------------------------------------------------
# value converters (idempotent: accept CLI strings or JSON-native values)


def _site(v):
    if isinstance(v, str):
        v = [c for c in v.replace(" ", "").split(",") if c]
    return check_site([int(c) for c in v])


def _sites(v):
    if isinstance(v, str):
        return [_site(tok) for tok in v.split(";") if tok.strip()]
    return [_site(x) for x in v]


def _floats(v):
    if isinstance(v, str):
        return [float(tok) for tok in v.replace(" ", "").split(",") if tok]
    return [float(x) for x in (v if isinstance(v, (list, tuple)) else [v])]


def _ints(v):
    if isinstance(v, str):
        return [int(tok) for tok in v.replace(" ", "").split(",") if tok]
    return [int(x) for x in (v if isinstance(v, (list, tuple)) else [v])]


def _opt_float(v):
    if v is None or (isinstance(v, str) and v.lower() in ("", "none")):
        return None
    return float(v)


def _opt_int(v):
    if v is None or (isinstance(v, str) and v.lower() in ("", "none")):
        return None
    return int(v)


def _choice(*allowed):
    def conv(v):
        if v not in allowed:
            raise ValueError(f"expected one of {allowed}, got {v!r}")
        return v

    return conv


# ---------------------------------------------------------------------------
# per-subcommand schemas: key -> (converter, default | REQ)

_SAMPLER_KEYS = {
    "eps_pair_residual": (float, 1e-3),
    "horizon_cap": (_opt_float, None),
    "escape_radius": (int, 512),
}

SCHEMAS: dict[str, dict] = {
    "density": {
        "d": (int, 3),
        "R": (int, 1),
        "alpha": (float, REQ),
        "window": (int, 8),
        "replicas": (int, 200),
        "seed": (int, REQ),
        **_SAMPLER_KEYS,
    },
    "corr": {
        "d": (int, 3),
        "R": (int, 1),
        "x": (_site, REQ),
        "replicas": (int, 10000),
        "method": (_choice("dual-pair", "window"), "dual-pair"),
        "alpha": (float, 0.5),
        "seed": (int, REQ),
        **_SAMPLER_KEYS,
    },
    "joint": {
        "d": (int, 3),
        "R": (int, 1),
        "sites": (_sites, REQ),
        "alpha": (float, REQ),
        "replicas": (int, 2000),
        "seed": (int, REQ),
        **_SAMPLER_KEYS,
    },
    "crossing": {
        "d": (int, 3),
        "R": (int, 1),
        "L": (_ints, REQ),
        "alphas": (_floats, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]),
        "replicas": (int, 200),
        "mode": (_choice("star", "nearest"), "star"),
        "seed": (int, REQ),
        **_SAMPLER_KEYS,
    },
    "threshold": {
        "d": (int, 3),
        "R": (int, 1),
        "L": (_ints, REQ),
        "replicas": (int, 100),
        "mode": (_choice("star", "nearest"), "star"),
        "quantile": (float, 0.5),
        "seed": (int, REQ),
        **_SAMPLER_KEYS,
    },
    "scan": {
        "d": (int, 3),
        "R": (int, 1),
        "L": (_ints, REQ),
        "quantile": (float, 0.5),
        "replicas": (int, 100),
        "mode": (_choice("star", "nearest"), "star"),
        "seed": (int, REQ),
        **_SAMPLER_KEYS,
    },
    "green": {
        "d": (int, 3),
        "R": (int, 1),
        "radius": (_opt_int, None),
        "resolution": (_opt_int, None),
        "x": (_site, None),
        "seed": (int, 0),
    },
    "bounds": {
        "d": (int, 3),
        "R": (int, 1),
        "spatial_radius": (int, 16),
        "T_grid": (_floats, [0.0, 1.0, 4.0, 16.0, 64.0]),
        "t_grid": (_floats, [1.0, 4.0, 16.0, 64.0]),
        "mc_budget": (int, 20000),
        "seed": (int, REQ),
    },
    "renorm count": {
        "d": (int, 3),
        "ell": (int, 6),
        "N": (int, REQ),
        "seed": (int, 0),
    },
    "renorm enumerate": {
        "d": (int, 3),
        "ell": (int, 6),
        "N": (int, REQ),
        "L": (int, 1),
        "limit": (int, 0),
        "seed": (int, 0),
    },
    "renorm extract": {
        "d": (int, 3),
        "ell": (int, 6),
        "N": (int, REQ),
        "L": (int, 1),
        "path_file": (str, None),
        "ray": (_opt_int, None),
        "seed": (int, 0),
    },
    "renorm admissible": {
        "d": (int, 3),
        "ell": (int, 6),
        "N": (int, 0),
        "L": (int, 1),
        "embedding": (str, None),
        "limit": (int, 0),
        "checks": (int, 200),
        "seed": (int, 0),
    },
    "couple": {
        "d": (int, 3),
        "R": (int, 1),
        "sites": (_sites, REQ),
        "alpha": (float, 0.5),
        "lam": (float, 0.7),
        "replicas": (int, 300),
        "horizon": (_opt_float, None),
        "seed": (int, REQ),
        **_SAMPLER_KEYS,
    },
    "claim64": {
        "d": (int, 3),
        "R": (int, 1),
        "L": (int, REQ),
        "alpha": (float, 0.5),
        "replicas": (int, 200),
        "T": (_opt_float, None),
        "seed": (int, REQ),
    },
    "validate": {
        "seed": (int, 0),
        "green_table": (str, None),
    },
}

_STOCHASTIC = {
    "density", "corr", "joint", "crossing", "threshold", "scan", "bounds",
    "couple", "claim64",
}


# ---------------------------------------------------------------------------
# report plumbing


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        v = float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def _result(name, value, se=None, bias_bound=None):
    return {"name": name, "value": value, "se": se, "bias_bound": bias_bound}


def _report(cfg: dict, results: list[dict], t0: float) -> dict:
    return {
        "config": _jsonable(cfg),
        "results": _jsonable(results),
        "seeds": {"root": cfg.get("seed"), "per_replica_rule": PER_REPLICA_RULE},
        "wall_time_s": round(time.perf_counter() - t0, 6),
        "version": __version__,
    }


def _sampler(cfg: dict) -> SamplerConfig:
    return SamplerConfig(
        eps_pair_residual=cfg["eps_pair_residual"],
        horizon_cap=cfg["horizon_cap"],
        escape_radius=cfg["escape_radius"],
        seed=cfg["seed"],
    )


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("VOTERPERC_WORKERS", "1")))
    except ValueError:
        return 1


def _threshold_job(params):
    d, R, L, replicas, config, seed, mode, index_base = params
    return threshold_samples(
        d, R, L, replicas, config=config, seed=seed, mode=mode, index_base=index_base
    )


def _per_scale_samples(cfg: dict) -> list[tuple[int, list, list]]:
    """Threshold samples per scale, index block k*replicas for scale k.

    The block rule matches the sequential library path, so any worker count
    yields identical samples.
    """
    jobs = [
        (cfg["d"], cfg["R"], int(L), cfg["replicas"], _sampler(cfg), cfg["seed"],
         cfg["mode"], k * cfg["replicas"])
        for k, L in enumerate(cfg["L"])
    ]
    workers = _workers()
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outs = list(pool.map(_threshold_job, jobs))
    else:
        outs = [_threshold_job(j) for j in jobs]
    return [(int(L), s, r) for L, (s, r) in zip(cfg["L"], outs)]


def _write_json(path: str, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2)
        fh.write("\n")


def _write_results_csv(path: str, results: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["name", "value", "se", "bias_bound"])
        for r in results:
            wr.writerow([r["name"], repr(r["value"]) if isinstance(r["value"], float) else r["value"],
                         "" if r["se"] is None else repr(r["se"]),
                         "" if r["bias_bound"] is None else repr(r["bias_bound"])])


def _emit(cfg: dict, results: list[dict], payload=None, writer=None) -> None:
    """Write the data file when --out is set.

    ``writer`` is a callable(path) using a subcommand-specific CSV layout;
    with ``--format json`` the payload (or the results table) is written as
    JSON instead.
    """
    out = cfg.get("out")
    if not out:
        return
    if cfg.get("format") == "json":
        _write_json(out, payload if payload is not None else results)
    elif writer is not None:
        writer(out)
    else:
        _write_results_csv(out, results)


# ---------------------------------------------------------------------------
# subcommand handlers: cfg -> (exit_code, results, payload, writer)


def _run_density(cfg):
    est = estimate_density(
        cfg["d"], cfg["R"], cfg["alpha"], Window(center=(0,) * cfg["d"], radius=cfg["window"]),
        cfg["replicas"], config=_sampler(cfg), seed=cfg["seed"],
    )
    results = [
        _result("density", est.value, est.se, est.bias_bound),
        _result("mean_residual", est.extra["mean_residual"]),
        _result("abs_error_vs_alpha", abs(est.value - cfg["alpha"])),
    ]
    return 0, results, {"estimate": est.__dict__}, None


def _run_corr(cfg):
    est = estimate_correlation(
        cfg["d"], cfg["R"], cfg["x"], cfg["replicas"], method=cfg["method"],
        alpha=cfg["alpha"], config=_sampler(cfg), seed=cfg["seed"],
    )
    results = [_result("correlation", est.value, est.se, est.bias_bound)]
    if cfg["d"] >= 3:
        table = build_table(cfg["d"], cfg["R"])
        sep = cfg["x"]
        h = table.hitting(sep) if max(abs(c) for c in sep) <= table.radius else table.far_bound
        results.append(_result("h_quadrature", h))
        results.append(_result("abs_gap", abs(est.value - h)))
    return 0, results, {"estimate": est.__dict__}, None


def _run_joint(cfg):
    rep = estimate_joint_occupation(
        cfg["sites"], cfg["d"], cfg["R"], cfg["alpha"], cfg["replicas"],
        config=_sampler(cfg), seed=cfg["seed"],
    )
    results = [
        _result("joint_occupation", rep["value"], rep["se"], rep["bias_bound"]),
        _result("lower_bound", rep["lower_bound"]),
        _result("upper_bound", rep["upper_bound"]),
        _result("lower_ok", rep["lower_ok"]),
        _result("upper_ok", rep["upper_ok"]),
    ]
    code = 0 if (rep["lower_ok"] and rep["upper_ok"]) else 1
    return code, results, rep, None


def _run_crossing(cfg):
    rows = []
    for L, samples, residuals in _per_scale_samples(cfg):
        rows.extend(curve_rows(L, samples, residuals, cfg["alphas"]))
    results = [
        _result(f"p[L={r['L']},alpha={r['alpha']:g}]", r["p_hat"], r["se"], r["residual_bound"])
        for r in rows
    ]
    return 0, results, rows, lambda path: write_crossing_csv(rows, path)


def _run_threshold(cfg):
    by_scale = {}
    results = []
    for L, samples, residuals in _per_scale_samples(cfg):
        by_scale[L] = samples
        stars = [t.alpha_star for t in samples]
        summary = threshold_quantile_summary(stars, cfg["quantile"])
        results.append(
            _result(
                f"alpha_star_q{cfg['quantile']:g}[L={L}]",
                summary["value"],
                (summary["ci_hi"] - summary["ci_lo"]) / 2.0,
                float(np.mean(residuals)),
            )
        )
        results.append(_result(f"n_never[L={L}]", sum(1 for v in stars if math.isinf(v))))
    return 0, results, None, lambda path: write_threshold_csv(by_scale, path)


def _run_scan(cfg):
    if len(cfg["L"]) < 2:
        raise ValueError("scan needs at least two scales (--L with two or more values)")
    rows = [
        scan_row(L, samples, residuals, cfg["quantile"])
        for L, samples, residuals in _per_scale_samples(cfg)
    ]
    values = np.array([r["value"] for r in rows])
    slope = float(np.polyfit(np.log([r["L"] for r in rows]), values, 1)[0])
    report = {
        "rows": rows,
        "quantile": cfg["quantile"],
        "trend_slope_vs_logL": slope,
        "exploratory": True,
        "note": "finite-size pseudo-critical values; no infinite-volume claim",
    }
    results = [
        _result(
            f"alpha_c_hat[L={r['L']}]", r["value"],
            (r["ci_hi"] - r["ci_lo"]) / 2.0, r["residual_bound"],
        )
        for r in rows
    ] + [_result("trend_slope_vs_logL", slope)]

    def writer(path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["L", "quantile", "value", "ci_lo", "ci_hi", "n", "n_never", "residual_bound"])
            for r in rows:
                wr.writerow([r["L"], r["quantile"], repr(r["value"]), repr(r["ci_lo"]),
                             repr(r["ci_hi"]), r["n"], r["n_never"], repr(r["residual_bound"])])

    return 0, results, report, writer


def _run_green(cfg):
    table = build_table(cfg["d"], cfg["R"], radius=cfg["radius"], resolution=cfg["resolution"])
    results = [
        _result("g0", table.g0),
        _result("far_bound", table.far_bound),
        _result("first_step_residual", table.first_step_residual()),
        _result("table_radius", table.radius),
    ]
    if cfg["x"] is not None:
        results.append(_result("green", table.green(cfg["x"]), table.green_error(cfg["x"])))
        results.append(_result("hitting", table.hitting(cfg["x"])))
    return 0, results, None, table.to_csv


def _run_bounds(cfg):
    rep = validate_kernel_bounds(
        d=cfg["d"], R=cfg["R"], spatial_radius=cfg["spatial_radius"],
        T_grid=cfg["T_grid"], t_grid=cfg["t_grid"], mc_budget=cfg["mc_budget"],
        seed=cfg["seed"],
    )
    results = [
        _result("green_ratio_c", rep["green_ratio"]["c_hat"]),
        _result("green_ratio_C", rep["green_ratio"]["C_hat"]),
        _result("green_difference_C", rep["green_difference"]["C_hat"]),
        _result("heat_kernel_C", rep["heat_kernel"]["C_hat"]),
        _result("kernel_diff_sum_C", rep["kernel_diff_sum"]["C_hat"]),
    ]
    disp = rep["displacement"]
    if "empirical" in disp:
        results.append(_result("displacement_empirical", disp["empirical"], disp["se"]))
        results.append(_result("displacement_closed_form", disp["closed_form"]))
        results.append(_result("displacement_ok", disp["ok"]))
    return 0, results, rep, None


def _run_renorm_count(cfg):
    n = count_embeddings(cfg["d"], cfg["ell"], cfg["N"])
    return 0, [_result("count", n)], {"count": n}, None


def _run_renorm_enumerate(cfg):
    s = Scales(L=cfg["L"], ell=cfg["ell"], N=cfg["N"])
    expected = count_embeddings(cfg["d"], cfg["ell"], cfg["N"])
    emitted = []
    total = 0
    bad = 0
    for t in enumerate_embeddings(cfg["d"], cfg["ell"], cfg["N"], L=cfg["L"]):
        if total < cfg["limit"]:
            if validate_embedding(t, s):
                bad += 1
            emitted.append(json.loads(t.to_json()))
        total += 1
    ok = total == expected and bad == 0
    results = [
        _result("count", total),
        _result("count_formula", expected),
        _result("count_matches", ok),
        _result("validated", len(emitted)),
    ]
    return (0 if ok else 1), results, emitted, None


def _run_renorm_extract(cfg):
    if (cfg["path_file"] is None) == (cfg["ray"] is None):
        raise ValueError("provide exactly one of --path-file or --ray")
    s = Scales(L=cfg["L"], ell=cfg["ell"], N=cfg["N"])
    if cfg["ray"] is not None:
        path = [(x,) + (0,) * (cfg["d"] - 1) for x in range(cfg["ray"] + 1)]
    else:
        with open(cfg["path_file"]) as fh:
            path = [tuple(int(c) for c in p) for p in json.load(fh)]
    t = extract_embedding(path, s)
    problems = validate_embedding(t, s)
    results = [
        _result("n_nodes", len(t.mapping)),
        _result("n_leaves", len(t.leaves())),
        _result("valid", not problems),
    ]
    payload = json.loads(t.to_json())
    return (0 if not problems else 1), results, payload, None


def _host_embedding(cfg) -> ProperEmbedding:
    if cfg["embedding"]:
        with open(cfg["embedding"]) as fh:
            return ProperEmbedding.from_json(fh.read())
    d, N = cfg["d"], cfg["N"]
    if N == 0:
        return ProperEmbedding(mapping={(): (0,) * d})
    s = Scales(L=cfg["L"], ell=cfg["ell"], N=N)
    if N != 1:
        raise ValueError("built-in host embeddings cover N <= 1; pass --embedding for deeper trees")
    l1 = s.scale(1)
    e1 = (l1,) + (0,) * (d - 1)
    e2 = (0, 2 * l1) + (0,) * (d - 2) if d >= 2 else (2 * l1,)
    return ProperEmbedding(mapping={(): (0,) * d, (1,): e1, (2,): e2})


def _run_renorm_admissible(cfg):
    t = _host_embedding(cfg)
    s = Scales(L=cfg["L"], ell=cfg["ell"], N=t.N)
    problems = validate_embedding(t, s)
    if problems:
        raise ValueError(f"host embedding invalid: {problems[0]}")
    count = count_admissible_pairs(t, cfg["L"])
    bound = admissible_count_bound(t, cfg["L"])
    n_checks = min(cfg["checks"], count)
    stride = max(1, count // max(n_checks, 1))
    bad = 0
    for idx in range(0, count, stride):
        pair = admissible_pair_at(t, cfg["L"], idx)
        if validate_admissible_pair(pair, t, cfg["L"]):
            bad += 1
    emitted = []
    if cfg["limit"] > 0:
        for i, pair in enumerate(enumerate_admissible_pairs(t, cfg["L"])):
            if i >= cfg["limit"]:
                break
            emitted.append({"X": [list(x) for x in pair.X], "Y": [list(y) for y in pair.Y]})
    ok = bad == 0 and count <= bound
    results = [
        _result("count", count),
        _result("upper_bound", bound),
        _result("bound_ok", count <= bound),
        _result("checked", math.ceil(count / stride)),
        _result("check_failures", bad),
    ]
    payload = {"count": count, "bound": bound, "pairs": emitted}
    return (0 if ok else 1), results, payload, None


def _run_couple(cfg):
    rep = check_annihilation_inequalities(
        cfg["sites"], cfg["d"], cfg["R"], cfg["alpha"], cfg["lam"], cfg["replicas"],
        config=_sampler(cfg), horizon=cfg["horizon"], seed=cfg["seed"],
    )
    a, b = rep["a"], rep["b"]
    results = [
        _result("pathwise_violations", a["violations"]),
        _result("pathwise_ok", a["pathwise_ok"]),
        _result("moment_lhs", b["lhs"], b["lhs_se"], b["bias_bound"]),
        _result("moment_rhs", b["rhs"]),
        _result("moment_ok", b["ok"]),
    ]
    code = 0 if (a["pathwise_ok"] and b["ok"]) else 1
    return code, results, rep, None


def _run_claim64(cfg):
    rep = verify_bottom_scale_inclusion(
        cfg["d"], cfg["R"], cfg["L"], cfg["replicas"], alpha=cfg["alpha"],
        seed=cfg["seed"], T=cfg["T"],
    )
    results = [
        _result("n_violations", rep["n_violations"]),
        _result("left_count", rep["left_count"]),
        _result("right_count", rep["right_count"]),
        _result("beta_hat", rep["beta_hat"], rep["beta_se"]),
        _result("beta_bound", rep["beta_bound"]),
        _result("beta_bound_vacuous", rep["beta_bound_vacuous"]),
        _result("ok", rep["ok"]),
    ]
    return (0 if rep["ok"] else 1), results, rep, None


# ---------------------------------------------------------------------------
# validate: named invariant suite


def _inv_lattice_shells():
    for d in (1, 2, 3):
        for r in (1, 2, 5):
            assert sphere_size(d, r) == len(enumerate_sphere((0,) * d, r))


def _inv_seeding_streams():
    a = replica_rng(9, 3).random(4)
    b = replica_rng(9, 3).random(4)
    c = replica_rng(9, 4).random(4)
    assert np.array_equal(a, b), "replica stream not reproducible"
    assert not np.array_equal(a, c), "replica streams not distinct"


def _inv_green_identity():
    table = build_table(3, 1)
    assert abs(table.first_step_residual()) <= 1e-4, table.first_step_residual()


def _green_table_file_check(path):
    def check():
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        assert header[:3] == ["x1", "x2", "x3"] and "green" in header, "unexpected header"
        vals = {}
        for row in body:
            key = tuple(int(c) for c in row[:3])
            vals[key] = float(row[3])
        g0 = vals[(0, 0, 0)]
        assert g0 > 1.0, "g(0,0) must exceed 1"
        assert abs(g0 - 1.0 - vals[(1, 0, 0)]) <= 1e-4, "first-step identity violated"
        for key, v in vals.items():
            assert v > 0.0, f"non-positive entry at {key}"
            mirror = tuple(sorted(key))
            assert abs(v - vals[mirror]) <= 1e-9 * max(1.0, abs(v)), (
                f"permutation symmetry violated at {key}"
            )
        axis = sorted(k[0] for k in vals if k[1] == 0 and k[2] == 0)
        seq = [vals[(a, 0, 0)] for a in axis]
        assert all(x > y for x, y in zip(seq, seq[1:])), "axis decay violated"

    return check


def _inv_coupled_domination():
    kernel = StepKernel(3, 1)
    sites = [(0, 0, 0), (2, 0, 0), (0, 2, 0), (1, 1, 1)]
    for i in range(20):
        out = coupled_coalescing_annihilating(sites, kernel, horizon=30.0, seed=1000 + i)
        assert out.violations == 0
        assert all(n_a <= n_c for _, n_c, n_a in out.n_trace)


def _inv_realize_monotone():
    s = sample_structure(
        Window(center=(0, 0, 0), radius=3), 3, 1,
        config=SamplerConfig(horizon_cap=100.0), rng=replica_rng(42, 0),
    )
    prev = None
    for a in np.linspace(0.0, 1.0, 21):
        bits = realize_config(s, float(a)).bits
        if prev is not None:
            assert (prev <= bits).all(), "realization not monotone in alpha"
        prev = bits


def _inv_threshold_identity():
    from .lattice import Annulus
    from .percolation import CrossingSpec

    window = Window(center=(0, 0, 0), radius=7)
    spec = CrossingSpec(annulus=Annulus(center=(0, 0, 0), inner=1, outer=6), mode="star")
    for i in range(2):
        s = sample_structure(
            window, 3, 1, config=SamplerConfig(horizon_cap=60.0), rng=replica_rng(271, i)
        )
        t = alpha_threshold(s, spec)
        for a in np.linspace(0.02, 0.98, 17):
            assert has_crossing(realize_config(s, float(a)), spec) == (float(a) >= t.alpha_star)


def _inv_label_engines_agree():
    rng = np.random.default_rng(5)
    for _ in range(20):
        window = Window(center=(0, 0), radius=4)
        sites = enumerate_region(window)
        bits = rng.random(len(sites)) < 0.55
        from .stationary import SiteConfiguration

        cfg = SiteConfiguration(sites=sites, bits=bits, alpha=0.55, window=window)
        a = label_clusters(cfg, mode="star", engine="grid")
        b = label_clusters(cfg, mode="star", engine="reference")
        assert np.array_equal(a.labels, b.labels)


def _inv_renorm_counts():
    assert count_embeddings(3, 6, 1) == 2_994_628
    for d in (1, 2):
        assert sum(1 for _ in enumerate_embeddings(d, 6, 1)) == count_embeddings(d, 6, 1)


def _inv_renorm_extraction():
    s = Scales(L=1, ell=6, N=2)
    path = [(x, 0, 0) for x in range(2 * s.scale(2) + 1)]
    t = extract_embedding(path, s)
    assert validate_embedding(t, s) == []


def _inv_renorm_spread_out():
    rng = np.random.default_rng(12)
    s = Scales(L=1, ell=6, N=3)
    for _ in range(25):
        rep = check_spread_out(sample_embedding(3, 6, 3, rng=rng), s)
        assert rep["ok"], rep


def _inv_admissible_pinned():
    t = ProperEmbedding(mapping={(): (0, 0, 0)})
    count = count_admissible_pairs(t, 1)
    assert count == 1161
    pairs = list(enumerate_admissible_pairs(t, 1))
    assert len(pairs) == count
    assert all(validate_admissible_pair(p, t, 1) == [] for p in pairs)


def _inv_report_determinism():
    base = {
        "d": 3, "R": 1, "alpha": 0.4, "window": 2, "replicas": 8, "seed": 99,
        "eps_pair_residual": 1e-3, "horizon_cap": 40.0, "escape_radius": 256,
    }
    _, r1, _, _ = _run_density(dict(base))
    _, r2, _, _ = _run_density(dict(base))
    assert json.dumps(_jsonable(r1)) == json.dumps(_jsonable(r2)), "results not reproducible"


def _run_validate(cfg):
    checks = [
        ("lattice-shell-arithmetic", _inv_lattice_shells),
        ("seeding-replica-streams", _inv_seeding_streams),
        ("green-first-step-identity", _inv_green_identity),
        ("walks-coupled-domination", _inv_coupled_domination),
        ("stationary-realize-monotone", _inv_realize_monotone),
        ("percolation-threshold-identity", _inv_threshold_identity),
        ("percolation-label-engines-agree", _inv_label_engines_agree),
        ("renorm-embedding-counts", _inv_renorm_counts),
        ("renorm-extraction-ray", _inv_renorm_extraction),
        ("renorm-spread-out-sampled", _inv_renorm_spread_out),
        ("renorm-admissible-pinned", _inv_admissible_pinned),
        ("report-determinism", _inv_report_determinism),
    ]
    if cfg["green_table"]:
        checks.insert(3, ("green-table-file", _green_table_file_check(cfg["green_table"])))
    results = []
    first_failure = None
    for name, fn in checks:
        try:
            fn()
        except Exception as exc:
            results.append(_result(name, False))
            results[-1]["error"] = f"{type(exc).__name__}: {exc}"
            if first_failure is None:
                first_failure = name
            print(f"FAIL {name}: {exc}", file=sys.stderr)
        else:
            results.append(_result(name, True))
            print(f"PASS {name}", file=sys.stderr)
    if first_failure is not None:
        print(f"first failing invariant: {first_failure}", file=sys.stderr)
    return (0 if first_failure is None else 1), results, None, None


_HANDLERS = {
    "density": _run_density,
    "corr": _run_corr,
    "joint": _run_joint,
    "crossing": _run_crossing,
    "threshold": _run_threshold,
    "scan": _run_scan,
    "green": _run_green,
    "bounds": _run_bounds,
    "renorm count": _run_renorm_count,
    "renorm enumerate": _run_renorm_enumerate,
    "renorm extract": _run_renorm_extract,
    "renorm admissible": _run_renorm_admissible,
    "couple": _run_couple,
    "claim64": _run_claim64,
    "validate": _run_validate,
}


# ---------------------------------------------------------------------------
# parser and dispatch


def _add_schema_flags(sub: argparse.ArgumentParser, schema: dict) -> None:
    for key in schema:
        flag = "--" + key.replace("_", "-")
        sub.add_argument(flag, default=argparse.SUPPRESS, metavar=key.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voterperc",
        description=(
            "Experiment driver for coalescing-walk sampling of voter-model "
            "stationary measures, crossing statistics, Green-function tables, "
            "and tree-embedding combinatorics."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--config", help="JSON file with default option values")
        sub.add_argument("--out", help="path for the data file")
        sub.add_argument("--format", choices=("csv", "json"), default="csv",
                         help="data-file format (default csv)")

    for name in ("density", "corr", "joint", "crossing", "threshold", "scan",
                 "green", "bounds", "couple", "claim64", "validate"):
        sub = subs.add_parser(name)
        common(sub)
        _add_schema_flags(sub, SCHEMAS[name])

    renorm = subs.add_parser("renorm")
    rsubs = renorm.add_subparsers(dest="renorm_op", required=True)
    for op in ("count", "enumerate", "extract", "admissible"):
        sub = rsubs.add_parser(op)
        common(sub)
        _add_schema_flags(sub, SCHEMAS[f"renorm {op}"])
    return parser


def _resolve(command: str, args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    schema = SCHEMAS[command]
    raw = {k: v for k, v in vars(args).items()
           if k not in ("command", "renorm_op", "config", "out", "format")}
    file_cfg = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config file {config_path}: {exc}")
        unknown = set(file_cfg) - set(schema)
        if unknown:
            parser.error(f"config file keys not valid for '{command}': {sorted(unknown)}")

    resolved = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            source = raw[key]
        elif key in file_cfg:
            source = file_cfg[key]
        elif default is REQ:
            parser.error(f"--{key.replace('_', '-')} is required for '{command}'")
        else:
            resolved[key] = default
            continue
        try:
            resolved[key] = conv(source) if source is not None else None
        except (ValueError, TypeError) as exc:
            parser.error(f"bad value for --{key.replace('_', '-')}: {exc}")
    resolved["out"] = getattr(args, "out", None)
    resolved["format"] = getattr(args, "format", "csv")
    resolved["workers"] = _workers()
    resolved["subcommand"] = command
    return resolved


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command if args.command != "renorm" else f"renorm {args.renorm_op}"
    cfg = _resolve(command, args, parser)
    t0 = time.perf_counter()
    try:
        code, results, payload, writer = _HANDLERS[command](cfg)
    except ExtractionError as exc:
        print(f"falsification: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(cfg, results, payload, writer)
    echo = {k: v for k, v in cfg.items() if k != "workers" or v != 1}
    print(json.dumps(_report(echo, results, t0), indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main())
