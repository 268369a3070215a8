"""Experiment runner: orchestration, artifact persistence, manifest, report.

Every artifact is written to `<name>.partial` and atomically renamed, so a
crash never leaves a clean-looking partial file.  A run writes a manifest
last; identical (config, seed) produce byte-identical data files regardless
of the worker-count flag.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy
import scipy.linalg as sla

from . import __version__
from .config import ExperimentConfig
from .green import frac_moment, appendix_limit_check, resolvent_entry, walk_expansion_diag
from .lattice import ModelParams, assemble_hamiltonian, enumerate_box, sample_disorder, weight_sum
from .pointprocess import (
    BorelSet,
    PointConfiguration,
    counting_distribution,
    gap_statistics,
    poisson_gof,
    superposition_distance,
)
from .spectral import (
    InvariantViolation,
    SLICING_THRESHOLD,
    SolverError,
    count_below,
    eigenvalues,
    empirical_ids,
    estimate_N1_prime,
    sandwich_counts,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_IO = 4


class RunError(RuntimeError):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv_atomic(path: Path, header, rows):
    tmp = path.with_name(path.name + ".partial")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(x) for x in row) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise RunError(f"failed writing {path}: {exc}", EXIT_IO) from exc


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    return obj


def write_json_atomic(path: Path, obj):
    tmp = path.with_name(path.name + ".partial")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(_jsonify(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise RunError(f"failed writing {path}: {exc}", EXIT_IO) from exc


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def set_workers(workers: int | None):
    """Parallelism knob; Monte Carlo results are invariant to it by design."""
    if workers is None:
        return None
    import numba

    effective = max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(effective)
    return effective


def window_configs(params: ModelParams, E: float, lo: float, hi: float, n_samples: int, seed: int):
    """Per-sample rescaled eigenvalue configurations restricted to [lo, hi)."""
    box = enumerate_box(params)
    scale = params.scale
    e_lo, e_hi = E + lo / scale, E + hi / scale
    use_banded = box.n_sites > SLICING_THRESHOLD and params.d > 1
    out = []
    for k in range(n_samples):
        h = assemble_hamiltonian(box, params.alpha, sample_disorder(box, seed, k))
        if use_banded:
            w = sla.eig_banded(
                h.to_lower_banded(), lower=True, eigvals_only=True,
                select="v", select_range=(e_lo, e_hi),
            )
            w = w[(w >= e_lo) & (w < e_hi)]
        else:
            full = eigenvalues(h).eigenvalues
            w = full[(full >= e_lo) & (full < e_hi)]
        out.append(PointConfiguration(points=scale * (w - E), center_E=E, scale=scale))
    return out


# ---------------------------------------------------------------------------
# experiment implementations: each returns (summary dict with "checks")


def _run_spectrum(cfg: ExperimentConfig, out: Path) -> dict:
    box = enumerate_box(cfg.model)
    rows = []
    checks = []
    trace_ok = True
    sandwich_ok = True
    for k in range(cfg.n_samples):
        sample = sample_disorder(box, cfg.seed, k)
        h = assemble_hamiltonian(box, cfg.model.alpha, sample)
        spec = eigenvalues(h)
        rows.extend((k, j, ev) for j, ev in enumerate(spec.eigenvalues))
        tr_err = abs(spec.eigenvalues.sum() - h.diag.sum()) / max(1.0, abs(h.diag.sum()))
        trace_ok &= tr_err <= 1e-9
        for E in np.quantile(spec.eigenvalues, [0.25, 0.5, 0.75]):
            try:
                sandwich_counts(box, cfg.model.alpha, sample, float(E))
            except InvariantViolation:
                sandwich_ok = False
    write_csv_atomic(out / "eigenvalues.csv", ["sample_index", "j", "eigenvalue"], rows)
    checks.append({"name": "trace_identity_1e-9", "passed": bool(trace_ok)})
    checks.append({"name": "counting_sandwich", "passed": bool(sandwich_ok)})
    return {"checks": checks, "n_samples": cfg.n_samples}


def _run_ids(cfg: ExperimentConfig, out: Path) -> dict:
    start, stop, num = cfg.E_grid
    grid = np.linspace(start, stop, num)
    est = empirical_ids(cfg.model, grid, cfg.n_samples, cfg.seed, bin_width=cfg.bin_width)
    rows = [
        (E, nu, se, f, cfg.n_samples)
        for E, nu, se, f in zip(est.energies, est.nu_L, est.stderr, est.f_L)
    ]
    write_csv_atomic(out / "ids.csv", ["E", "nu_L_mean", "nu_L_stderr", "f_L", "n_samples"], rows)
    monotone = bool(np.all(np.diff(est.nu_L) >= 0))
    cap = float(np.pi * weight_sum(enumerate_box(cfg.model)) / cfg.model.scale)
    se_f = np.sqrt(np.maximum(est.f_L, 1e-300) / (cfg.n_samples * cfg.model.scale * est.bin_width))
    cap_ok = bool(np.all(est.f_L <= cap + 3 * se_f))
    checks = [
        {"name": "nu_monotone", "passed": monotone},
        {"name": "density_cap_pi_C", "passed": cap_ok, "cap": cap},
    ]
    write_json_atomic(out / "summary.json", {
        "bin_width": est.bin_width, "cap": cap, "checks": checks,
    })
    return {"checks": checks, "bin_width": est.bin_width}


def _run_poisson(cfg: ExperimentConfig, out: Path) -> dict:
    dist = counting_distribution(
        cfg.model, cfg.E, cfg.B, cfg.n_samples, cfg.seed,
        use_blocks=cfg.use_blocks, epsilon=cfg.epsilon, delta=cfg.delta,
    )
    lam_plugin = dist.mean
    gof = poisson_gof(dist, lam_plugin, lambda_source="plugin")
    ks = dist.counts_support
    from scipy import stats

    ref = stats.poisson.pmf(ks, lam_plugin)
    se = np.sqrt(dist.pmf * (1 - dist.pmf) / dist.n_samples)
    rows = list(zip(ks, dist.pmf, ref, se))
    write_csv_atomic(out / "counts.csv", ["k", "empirical_pmf", "poisson_pmf", "stderr"], rows)

    checks = [{"name": f"tv<=%s" % _fmt(cfg.tv_threshold),
               "passed": bool(gof.tv_distance <= cfg.tv_threshold),
               "tv": gof.tv_distance}]
    gof_payload = {
        "lambda_plugin": lam_plugin,
        "tv_distance": gof.tv_distance,
        "chi2": gof.chi2, "dof": gof.dof, "p_value": gof.p_value,
        "mean": dist.mean, "mean_stderr": dist.mean_stderr,
        "second_factorial_moment": dist.second_factorial_moment,
        "n_samples": dist.n_samples,
        "use_blocks": cfg.use_blocks,
    }
    if cfg.lambda_external is not None:
        gof_ext = poisson_gof(dist, cfg.lambda_external, lambda_source="external")
        gof_payload["external"] = {
            "lambda": cfg.lambda_external,
            "tv_distance": gof_ext.tv_distance,
            "chi2": gof_ext.chi2, "dof": gof_ext.dof, "p_value": gof_ext.p_value,
        }
    if cfg.check_intensity:
        dens = estimate_N1_prime(cfg.model, cfg.E, cfg.n_samples, cfg.seed,
                                 window_schedule=cfg.window_schedule)
        predicted = dens.value * cfg.B.total_length
        pred_se = dens.stderr * cfg.B.total_length
        combined = float(np.hypot(pred_se, dist.mean_stderr))
        gap = abs(dist.mean - predicted)
        gof_payload["intensity_check"] = {
            "n1_prime": dens.value, "n1_prime_stderr": dens.stderr,
            "window": dens.window,
            "predicted_mean": predicted, "observed_mean": dist.mean,
            "combined_sigma": combined,
        }
        checks.append({"name": "mean_matches_intensity_3sigma",
                       "passed": bool(gap <= 3 * combined),
                       "gap": gap, "combined_sigma": combined})
    if cfg.spacing_samples > 0:
        n_spacing = min(cfg.spacing_samples, cfg.n_samples)
        configs = window_configs(cfg.model, cfg.E, cfg.B.lo, cfg.B.hi, n_spacing, cfg.seed)
        try:
            spacing = gap_statistics(configs, BorelSet.from_pairs([(cfg.B.lo, cfg.B.hi)]))
            s_sorted = np.sort(spacing.spacings)
            emp_cdf = np.arange(1, s_sorted.shape[0] + 1) / s_sorted.shape[0]
            exp_cdf = 1.0 - np.exp(-spacing.lam * s_sorted)
            write_csv_atomic(out / "spacing.csv", ["s", "empirical_cdf", "exp_cdf"],
                             list(zip(s_sorted, emp_cdf, exp_cdf)))
            gof_payload["spacing"] = {
                "ks_distance": spacing.ks_distance, "lambda": spacing.lam,
                "n_spacings": spacing.n_spacings,
            }
        except Exception as exc:  # too few points is a report item, not a failure
            gof_payload["spacing"] = {"error": str(exc)}
    gof_payload["checks"] = checks
    write_json_atomic(out / "gof.json", gof_payload)
    return {"checks": checks, "tv_distance": gof.tv_distance, "lambda_plugin": lam_plugin}


def _run_superposition(cfg: ExperimentConfig, out: Path) -> dict:
    L_values = cfg.L_values or [cfg.model.L]
    rows = []
    means = []
    for L in L_values:
        params = ModelParams(d=cfg.model.d, alpha=cfg.model.alpha, L=L)
        res = superposition_distance(
            params, cfg.E, cfg.z, cfg.n_samples, cfg.seed,
            epsilon=cfg.epsilon, delta=cfg.delta,
        )
        rows.append((L, res.M, res.mean, res.stderr, res.n_samples))
        means.append(res.mean)
    write_csv_atomic(out / "superposition.csv",
                     ["L", "M", "distance_mean", "distance_stderr", "n_samples"], rows)
    decreasing = bool(all(means[i + 1] < means[i] for i in range(len(means) - 1)))
    checks = [{"name": "distance_decreasing_in_L", "passed": decreasing, "means": means}]
    write_json_atomic(out / "summary.json", {
        "L_values": L_values, "means": means, "z": cfg.z, "epsilon": cfg.epsilon,
        "checks": checks,
    })
    return {"checks": checks, "means": means}


def _run_wegner_minami(cfg: ExperimentConfig, out: Path) -> dict:
    from .spectral import check_wegner_minami

    rows = []
    all_ok = True
    for a, b in cfg.intervals:
        wegner, minami = check_wegner_minami(cfg.model, (a, b), cfg.n_samples, cfg.seed)
        for rep in (wegner, minami):
            rows.append((a, b, rep.bound_name, rep.empirical, rep.stderr,
                         rep.bound, rep.satisfied, rep.n_samples))
            all_ok &= rep.satisfied
    write_csv_atomic(out / "bound_checks.csv",
                     ["a", "b", "bound_name", "empirical", "stderr", "bound",
                      "satisfied", "n_samples"], rows)
    checks = [{"name": "wegner_minami_3sigma", "passed": bool(all_ok)}]
    write_json_atomic(out / "summary.json", {"checks": checks})
    return {"checks": checks}


def _run_green_expansion(cfg: ExperimentConfig, out: Path) -> dict:
    box = enumerate_box(cfg.model)
    res = walk_expansion_diag(box, cfg.model.alpha, cfg.z, cfg.n, cfg.K, M=cfg.M)
    vals = np.empty(cfg.n_samples, dtype=complex)
    for k in range(cfg.n_samples):
        h = assemble_hamiltonian(box, cfg.model.alpha, sample_disorder(box, cfg.seed, k))
        vals[k] = resolvent_entry(h, cfg.z, cfg.n, cfg.n)
    mc_mean = complex(vals.mean())
    mc_se = float(np.hypot(vals.real.std(ddof=1), vals.imag.std(ddof=1)) / np.sqrt(cfg.n_samples))
    gap = abs(res.value - mc_mean)
    ok = bool(gap <= res.tail_bound + 3 * mc_se)
    checks = [{"name": "series_matches_mc_within_tail+3sigma", "passed": ok,
               "gap": gap, "tail_bound": res.tail_bound, "mc_stderr": mc_se}]
    write_json_atomic(out / "walk.json", {
        "value": res.value, "K": res.K, "tail_bound": res.tail_bound,
        "paths_enumerated": res.paths_enumerated, "regime": res.regime,
        "mc_mean": mc_mean, "mc_stderr": mc_se, "n_samples": cfg.n_samples,
        "checks": checks,
    })
    return {"checks": checks}


def _run_frac_moment(cfg: ExperimentConfig, out: Path) -> dict:
    rep = frac_moment(cfg.model, cfg.z, cfg.s, cfg.pairs, cfg.n_samples, cfg.seed)
    rows = [(pm.distance, pm.moment, pm.stderr) for pm in rep.pairs]
    write_csv_atomic(out / "decay.csv", ["distance", "moment", "stderr"], rows)
    checks = [
        {"name": "beta_positive_95", "passed": rep.beta_positive_95,
         "beta_hat": rep.beta_hat, "beta_stderr": rep.beta_stderr},
        {"name": "diagonal_bound_3sigma", "passed": rep.uniform_bound_ok},
    ]
    write_json_atomic(out / "frac_moment.json", {
        "s": rep.s, "z": rep.z, "beta_hat": rep.beta_hat,
        "beta_stderr": rep.beta_stderr, "beta_positive_95": rep.beta_positive_95,
        "uniform_bound_ok": rep.uniform_bound_ok, "n_samples": rep.n_samples,
        "pairs": [
            {"n": list(pm.n), "m": list(pm.m), "distance": pm.distance,
             "moment": pm.moment, "stderr": pm.stderr, "bound": pm.bound}
            for pm in rep.pairs
        ],
        "checks": checks,
    })
    return {"checks": checks, "beta_hat": rep.beta_hat}


def _run_appendix_phi(cfg: ExperimentConfig, out: Path) -> dict:
    rep = appendix_limit_check(cfg.model.d, cfg.model.alpha, cfg.L_values, cfg.z)
    rows = list(zip(rep.L_values, rep.im_phi, [rep.target] * len(rep.L_values), rep.errors))
    write_csv_atomic(out / "appendix.csv", ["L", "Im_phi", "target", "error"], rows)
    slope_ok = bool(abs(rep.slope - rep.slope_reference) <= 0.25 * abs(rep.slope_reference))
    checks = [
        {"name": "error_monotone_decreasing", "passed": rep.monotone},
        {"name": "slope_within_25pct", "passed": slope_ok,
         "slope": rep.slope, "reference": rep.slope_reference},
    ]
    write_json_atomic(out / "summary.json", {
        "C": rep.C, "target": rep.target, "branch_note": rep.branch_note,
        "slope": rep.slope, "slope_reference": rep.slope_reference,
        "checks": checks,
    })
    return {"checks": checks, "slope": rep.slope}


_RUNNERS = {
    "spectrum": _run_spectrum,
    "ids": _run_ids,
    "poisson": _run_poisson,
    "superposition": _run_superposition,
    "wegner-minami": _run_wegner_minami,
    "green-expansion": _run_green_expansion,
    "frac-moment": _run_frac_moment,
    "appendix-phi": _run_appendix_phi,
}


def run(cfg: ExperimentConfig, workers: int | None = None, out_dir: str | None = None) -> Path:
    """Execute one experiment; returns the manifest path.

    SPECLAB_SEED overrides the config seed (recorded in the manifest).
    """
    t0 = time.time()
    env_seed = os.environ.get("SPECLAB_SEED")
    seed_overridden = False
    if env_seed is not None:
        try:
            seed = int(env_seed)
            if not 0 <= seed < 2**64:
                raise ValueError
        except ValueError:
            raise RunError(f"SPECLAB_SEED must be an integer in [0, 2^64), got {env_seed!r}",
                           EXIT_CONFIG)
        cfg = replace(cfg, seed=seed)
        seed_overridden = True
    effective_workers = set_workers(workers)

    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe.partial"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise RunError(f"output directory {out} is not writable: {exc}", EXIT_IO) from exc

    try:
        summary = _RUNNERS[cfg.experiment](cfg, out)
    except RunError:
        raise
    except (InvariantViolation, SolverError) as exc:
        raise RunError(f"invariant violation during run: {exc}", EXIT_INVARIANT) from exc
    except OSError as exc:
        raise RunError(f"I/O failure during run: {exc}", EXIT_IO) from exc

    artifacts = {}
    for p in sorted(out.iterdir()):
        if p.suffix in (".csv", ".json") and p.name != "manifest.json" and not p.name.endswith(".partial"):
            artifacts[p.name] = sha256_file(p)
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.raw,
        "seed_used": cfg.seed,
        "seed_overridden_by_env": seed_overridden,
        "workers_requested": workers,
        "workers_effective": effective_workers,
        "artifacts": artifacts,
        "wall_clock_s": time.time() - t0,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "speclab": __version__,
        },
        "summary": summary,
        "status": "ok",
    }
    write_json_atomic(out / "manifest.json", manifest)
    return out / "manifest.json"


def report(manifest_paths) -> tuple[str, int]:
    """One line per run: experiment, key metrics, pass/fail verdict."""
    lines = []
    exit_code = EXIT_OK
    header = f"{'run':<40} {'experiment':<16} {'verdict':<8} details"
    rows = []
    for path in manifest_paths:
        p = Path(path)
        try:
            manifest = json.loads(p.read_text())
            checks = manifest.get("summary", {}).get("checks", [])
            passed = all(c.get("passed", False) for c in checks) if checks else True
            details = "; ".join(
                c["name"] + ("" if c.get("passed") else "(FAIL)")
                + (f" tv={c['tv']:.4f}" if "tv" in c else "")
                for c in checks
            )
            verdict = "pass" if passed else "FAIL"
            if not passed:
                exit_code = 1
            rows.append(f"{str(p.parent)[-40:]:<40} {manifest['experiment']:<16} {verdict:<8} {details}")
        except (OSError, ValueError, KeyError) as exc:
            rows.append(f"{str(p)[-40:]:<40} {'?':<16} {'FAIL':<8} unreadable manifest: {exc}")
            exit_code = 1
    if rows:
        lines.append(header)
        lines.extend(rows)
    return "\n".join(lines), exit_code
