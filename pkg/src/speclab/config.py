"""Experiment configuration: JSON schema, validation with aggregated errors."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeError, ModelParams
from .pointprocess import BorelSet, PointProcessError

EXPERIMENTS = (
    "spectrum",
    "ids",
    "poisson",
    "superposition",
    "wegner-minami",
    "green-expansion",
    "frac-moment",
    "appendix-phi",
)

# experiments whose rescaling needs d - alpha > 0
_NEEDS_SCALING = {"ids", "poisson", "superposition"}

_KNOWN_KEYS = {
    "experiment", "model", "E", "E_grid", "B", "n_samples", "seed",
    "epsilon", "delta", "z", "z_d", "s", "K", "M", "n", "pairs",
    "L_values", "intervals", "use_blocks", "bin_width", "tv_threshold",
    "spacing_samples", "check_intensity", "lambda_external", "output_dir",
    "window_schedule",
}


class ConfigError(ValueError):
    """Aggregated configuration problems; .errors lists every one found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    experiment: str
    model: ModelParams | None
    seed: int
    n_samples: int = 1
    E: float | None = None
    E_grid: tuple | None = None  # (start, stop, num)
    B: BorelSet | None = None
    epsilon: float = 0.4
    delta: float = 8.0
    z: complex | None = None
    s: float | None = None
    K: int | None = None
    M: float | None = None
    n: tuple | None = None
    pairs: list | None = None
    L_values: list | None = None
    intervals: list | None = None
    use_blocks: bool = False
    bin_width: float | None = None
    tv_threshold: float = 0.08
    spacing_samples: int = 200
    check_intensity: bool = True
    lambda_external: float | None = None
    window_schedule: list | None = None
    output_dir: str = "out"
    raw: dict = field(default_factory=dict)


def _reject_duplicates(pairs):
    seen = set()
    out = {}
    for k, v in pairs:
        if k in seen:
            raise ValueError(f"duplicate key {k!r}")
        seen.add(k)
        out[k] = v
    return out


def parse_config(text: str, experiment: str | None = None) -> ExperimentConfig:
    """Validate a JSON config; every problem found is reported at once."""
    errors: list[str] = []
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicates)
    except ValueError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["top-level config must be a JSON object"])

    for key in raw:
        if key not in _KNOWN_KEYS:
            errors.append(f"unknown key {key!r}")

    exp = raw.get("experiment", experiment)
    if exp is None:
        errors.append("missing required key 'experiment'")
    elif exp not in EXPERIMENTS:
        errors.append(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    if experiment is not None and exp is not None and exp != experiment:
        errors.append(f"config experiment {exp!r} conflicts with requested {experiment!r}")

    model = None
    m = raw.get("model")
    if m is None:
        errors.append("missing required key 'model' ({d, alpha, L})")
    elif not isinstance(m, dict) or set(m) != {"d", "alpha", "L"}:
        errors.append("model must be an object with exactly the keys d, alpha, L")
    else:
        try:
            if not isinstance(m["d"], int) or isinstance(m["d"], bool):
                raise LatticeError(f"d must be an integer, got {m['d']!r}")
            if not isinstance(m["L"], int) or isinstance(m["L"], bool):
                raise LatticeError(f"L must be an integer, got {m['L']!r}")
            model = ModelParams(d=m["d"], alpha=float(m["alpha"]), L=m["L"])
        except (LatticeError, TypeError, ValueError) as exc:
            errors.append(f"invalid model: {exc}")
    if model is not None and exp in _NEEDS_SCALING and not model.d - model.alpha > 0:
        errors.append(
            f"experiment {exp!r} needs d - alpha > 0 (rescaling by L^(d-alpha)); "
            f"got d={model.d}, alpha={model.alpha}"
        )

    seed = raw.get("seed")
    if seed is None:
        errors.append("missing required key 'seed'")
    elif not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        errors.append(f"seed must be an integer in [0, 2^64), got {seed!r}")
        seed = 0

    def _optional_number(key, lo=None, hi=None, strict_lo=False, strict_hi=False):
        v = raw.get(key)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            errors.append(f"{key} must be a number, got {v!r}")
            return None
        v = float(v)
        if lo is not None and (v <= lo if strict_lo else v < lo):
            errors.append(f"{key} must be {'>' if strict_lo else '>='} {lo}, got {v}")
        if hi is not None and (v >= hi if strict_hi else v > hi):
            errors.append(f"{key} must be {'<' if strict_hi else '<='} {hi}, got {v}")
        return v

    n_samples = raw.get("n_samples", 1)
    if not isinstance(n_samples, int) or isinstance(n_samples, bool) or n_samples < 1:
        errors.append(f"n_samples must be a positive integer, got {n_samples!r}")
        n_samples = 1

    E = _optional_number("E")
    epsilon = _optional_number("epsilon", lo=0.0, hi=1.0, strict_lo=True, strict_hi=True)
    delta = _optional_number("delta", lo=0.0, strict_lo=True)
    s = _optional_number("s", lo=0.0, hi=1.0, strict_lo=True, strict_hi=True)
    bin_width = _optional_number("bin_width", lo=0.0, strict_lo=True)
    tv_threshold = _optional_number("tv_threshold", lo=0.0, strict_lo=True)
    lambda_external = _optional_number("lambda_external", lo=0.0, strict_lo=True)

    def _complex_pair(key):
        v = raw.get(key)
        if v is None:
            return None
        if (
            not isinstance(v, (list, tuple)) or len(v) != 2
            or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in v)
        ):
            errors.append(f"{key} must be a [re, im] pair of numbers, got {v!r}")
            return None
        return complex(v[0], v[1])

    z = _complex_pair("z")
    z_d = _complex_pair("z_d")
    if z is not None and z_d is not None:
        errors.append("give exactly one of 'z' or 'z_d', not both")
    if z_d is not None and model is not None:
        z = z_d + 2 * model.d

    B = None
    if "B" in raw:
        try:
            B = BorelSet.from_pairs(raw["B"])
        except (PointProcessError, TypeError, ValueError) as exc:
            errors.append(f"invalid B: {exc}")

    E_grid = None
    if "E_grid" in raw:
        g = raw["E_grid"]
        if (
            not isinstance(g, (list, tuple)) or len(g) != 3
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in g)
            or not g[1] > g[0] or not int(g[2]) >= 2
        ):
            errors.append(f"E_grid must be [start, stop, num>=2] with stop > start, got {g!r}")
        else:
            E_grid = (float(g[0]), float(g[1]), int(g[2]))

    intervals = None
    if "intervals" in raw:
        iv = raw["intervals"]
        ok = isinstance(iv, list) and iv and all(
            isinstance(p, (list, tuple)) and len(p) == 2 and p[1] > p[0] for p in iv
        )
        if not ok:
            errors.append(f"intervals must be a nonempty list of [a, b] pairs with b > a, got {iv!r}")
        else:
            intervals = [(float(a), float(b)) for a, b in iv]

    L_values = None
    if "L_values" in raw:
        lv = raw["L_values"]
        ok = isinstance(lv, list) and lv and all(
            isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in lv
        )
        if not ok:
            errors.append(f"L_values must be a nonempty list of positive integers, got {lv!r}")
        else:
            L_values = sorted(lv)

    pairs = None
    if "pairs" in raw:
        pv = raw["pairs"]
        ok = isinstance(pv, list) and pv and all(
            isinstance(p, (list, tuple)) and len(p) == 2 for p in pv
        )
        if not ok:
            errors.append(f"pairs must be a list of [n, m] coordinate pairs, got {pv!r}")
        else:
            pairs = [(tuple(np.atleast_1d(a).tolist()) if not isinstance(a, (list, tuple)) else tuple(a),
                      tuple(np.atleast_1d(b).tolist()) if not isinstance(b, (list, tuple)) else tuple(b))
                     for a, b in pv]

    n_site = None
    if "n" in raw:
        nv = raw["n"]
        if isinstance(nv, int) and not isinstance(nv, bool):
            n_site = (nv,)
        elif isinstance(nv, (list, tuple)) and all(isinstance(x, int) for x in nv):
            n_site = tuple(nv)
        else:
            errors.append(f"n must be an integer coordinate or coordinate list, got {nv!r}")

    K = raw.get("K")
    if K is not None and (not isinstance(K, int) or isinstance(K, bool) or K < 0):
        errors.append(f"K must be a nonnegative integer, got {K!r}")
        K = None
    M = _optional_number("M", lo=0.0, strict_lo=True)

    window_schedule = None
    if "window_schedule" in raw:
        wsv = raw["window_schedule"]
        ok = isinstance(wsv, list) and wsv and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0 for x in wsv
        )
        if not ok:
            errors.append(f"window_schedule must be a list of positive numbers, got {wsv!r}")
        else:
            window_schedule = [float(x) for x in wsv]

    for key, default in (("use_blocks", False), ("check_intensity", True)):
        v = raw.get(key, default)
        if not isinstance(v, bool):
            errors.append(f"{key} must be a boolean, got {v!r}")

    spacing_samples = raw.get("spacing_samples", 200)
    if not isinstance(spacing_samples, int) or isinstance(spacing_samples, bool) or spacing_samples < 0:
        errors.append(f"spacing_samples must be a nonnegative integer, got {spacing_samples!r}")
        spacing_samples = 0

    output_dir = raw.get("output_dir", "out")
    if not isinstance(output_dir, str):
        errors.append(f"output_dir must be a string, got {output_dir!r}")
        output_dir = "out"

    # per-experiment required keys
    required = {
        "spectrum": ["model", "seed"],
        "ids": ["model", "seed", "E_grid", "n_samples"],
        "poisson": ["model", "seed", "E", "B", "n_samples"],
        "superposition": ["model", "seed", "E", "z", "n_samples"],
        "wegner-minami": ["model", "seed", "intervals", "n_samples"],
        "green-expansion": ["model", "seed", "z", "K", "n"],
        "frac-moment": ["model", "seed", "z", "s", "pairs", "n_samples"],
        "appendix-phi": ["model", "L_values"],
    }
    if exp in required:
        present = {
            "model": model is not None, "seed": raw.get("seed") is not None,
            "E": E is not None, "E_grid": E_grid is not None, "B": B is not None,
            "n_samples": "n_samples" in raw, "z": z is not None, "K": K is not None,
            "n": n_site is not None, "s": s is not None, "pairs": pairs is not None,
            "intervals": intervals is not None, "L_values": L_values is not None,
        }
        for key in required[exp]:
            if not present.get(key, True):
                errors.append(f"experiment {exp!r} requires key {key!r}")
    if exp == "superposition" and z is not None and not z.imag > 0:
        errors.append(f"superposition needs Im z > 0, got z = {z}")
    if exp == "frac-moment" and z is not None and z.imag == 0:
        errors.append("frac-moment needs Im z != 0")

    if errors:
        raise ConfigError(errors)

    return ExperimentConfig(
        experiment=exp,
        model=model,
        seed=int(seed),
        n_samples=int(n_samples),
        E=E,
        E_grid=E_grid,
        B=B,
        epsilon=epsilon if epsilon is not None else 0.4,
        delta=delta if delta is not None else 8.0,
        z=z,
        s=s,
        K=K,
        M=M,
        n=n_site,
        pairs=pairs,
        L_values=L_values,
        intervals=intervals,
        use_blocks=bool(raw.get("use_blocks", False)),
        bin_width=bin_width,
        tv_threshold=tv_threshold if tv_threshold is not None else 0.08,
        spacing_samples=spacing_samples,
        check_intensity=bool(raw.get("check_intensity", True)),
        lambda_external=lambda_external,
        window_schedule=window_schedule,
        output_dir=output_dir,
        raw=raw,
    )
