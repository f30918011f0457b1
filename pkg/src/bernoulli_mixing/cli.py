"""Command-line orchestration: configs, sweeps, checks and reports.

Every command reads a JSON config (flags override it), writes its data files
atomically into ``--out`` and finishes with a ``manifest_<command>.json``.
Exit status: 0 success, 1 a checked inequality failed, 2 bad config,
3 file-system error, 4 anything else.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bounds import _uniform_base, check_pcmix, relate_tmix_tdis, theoretical_time_bounds
from .bump import eigen_constants, verify_eigen_inequality, verify_envelope_persistence
from .density import Evolution
from .errors import (
    CheckFailure,
    ConfigError,
    InsufficientData,
    MapError,
    MixingError,
    UnsupportedError,
)
from .grid import SpectralField
from .kernels import KINDS, kernel_stats, make_kernel
from .maps import make_map, preset, validate_map
from .metrics import (
    SWEEP_COLUMNS,
    density_tv_trace,
    fit_scaling,
    grid_size_for,
    histogram_tv_trace,
    measure_tdis,
    measure_tmix,
    simulate_ensemble,
    sweep,
)
from .spectral_expanding import decay_check, decay_csv, geometric_sum, iterate_spectrum

COMMANDS = (
    "validate",
    "sweep-mix",
    "sweep-dis",
    "verify-eigen",
    "verify-pcmix",
    "verify-duality",
    "spectral",
    "mc-crosscheck",
    "report",
)
CSV_SCHEMA_VERSION = 1
PRESETS = ("doubling", "intro3", "quad2d", "identity")

# accepted config keys with a one-line description (also rendered in the README)
CONFIG_KEYS = {
    "preset": "named map: doubling, intro3, quad2d or identity",
    "map": 'explicit map: {"d", "branches": [{"origin", "side", "D", "e"}]} with D a signed permutation matrix',
    "kernel": "kernel spec, e.g. {\"kind\": \"gaussian\"}; epsilon comes from the sweep list",
    "epsilons": "list of noise amplitudes, each in (0, 1/4]",
    "deltas": "list of thresholds, each in (0, 1)",
    "delta_prime": "second threshold for the duality check (default 0.5)",
    "grid_exp": "grid size target 2**K (rounded up to a size aligned with the map)",
    "seed": "integer seed in [0, 2**64), required for every command except validate and report",
    "profile": "bump profile for verify-eigen: sine or tent",
    "word": "cylinder word for the persistence check in verify-eigen",
    "p": "norm exponent for verify-pcmix: 1 or 2",
    "samples": "number of random fields for verify-pcmix (default 20)",
    "grid_tol": "relative grid tolerance added to the pcMix bound (default 0)",
    "particles": "Monte Carlo particle count (default 100000)",
    "steps": "number of steps for mc-crosscheck and spectral horizons",
    "start": "start point for mc-crosscheck (default 0.3 per axis)",
    "bins": "histogram bins per axis for mc-crosscheck (default 256)",
    "tolerance": "allowed sup gap between the two TV traces (default 0.05)",
    "record_timing": "fill the wall_ms CSV column (breaks byte-identical reruns)",
}

_DEFAULT_EPS = {
    "sweep-mix": [2.0**-e for e in range(5, 13)],
    "sweep-dis": [2.0**-e for e in range(5, 11)],
    "verify-duality": [2.0**-e for e in range(5, 10)],
    "verify-eigen": [0.05, 0.02, 0.01],
    "verify-pcmix": [2.0**-8],
    "spectral": [2.0**-6, 2.0**-8, 2.0**-10],
    "mc-crosscheck": [2.0**-8],
}
_DEFAULT_KERNEL = {"verify-pcmix": "ball"}
_DEFAULT_GRID_EXP = {"spectral": 12, "mc-crosscheck": 14}


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    command: str
    preset: Optional[str]
    map_spec: Optional[dict]
    kernel: dict
    epsilons: list
    deltas: list
    grid_exp: Optional[int]
    seed: Optional[int]
    out: Path
    workers: int
    options: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        """Everything that influences the data files (not ``out`` or ``workers``)."""
        return {
            "command": self.command,
            "preset": self.preset,
            "map": self.map_spec,
            "kernel": self.kernel,
            "epsilons": self.epsilons,
            "deltas": self.deltas,
            "grid_exp": self.grid_exp,
            "seed": self.seed,
            "options": self.options,
        }

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def phi(self):
        try:
            if self.map_spec is not None:
                return make_map(self.map_spec, name=self.map_spec.get("name", "custom"))
            return preset(self.preset)
        except MixingError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad map spec: {exc}") from exc

    def kernel_template(self, d: int, eps: float = 0.1):
        spec = dict(self.kernel)
        spec["epsilon"] = eps
        try:
            return make_kernel(spec, d=d)
        except (KeyError, TypeError, ValueError, UnsupportedError) as exc:
            raise ConfigError(f"bad kernel spec: {exc}") from exc

    def grid(self, phi) -> Optional[int]:
        k = self.grid_exp if self.grid_exp is not None else _DEFAULT_GRID_EXP.get(self.command)
        return None if k is None else grid_size_for(phi, 2**k)

    def opt(self, key, default=None):
        return self.options.get(key, default)


def _number_list(raw, key) -> list:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{key} must be a nonempty list of numbers")
    try:
        return [float(x) for x in raw]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must contain numbers") from exc


def build_config(command: str, raw: dict, args=None) -> ExperimentConfig:
    """Validate ``raw`` (plus flag overrides in ``args``) into a config."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    raw = dict(raw)
    if args is not None:
        for key in ("preset", "seed", "grid_exp"):
            val = getattr(args, key, None)
            if val is not None:
                raw[key] = val
        if getattr(args, "preset", None) is not None:
            raw.pop("map", None)

    map_spec = raw.get("map")
    name = raw.get("preset")
    if map_spec is None and name is None:
        name = "doubling"
    if map_spec is not None and not isinstance(map_spec, dict):
        raise ConfigError("map must be an object")
    if map_spec is None and name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")

    kernel = raw.get("kernel", {"kind": _DEFAULT_KERNEL.get(command, "gaussian")})
    if isinstance(kernel, str):
        kernel = {"kind": kernel}
    if not isinstance(kernel, dict) or kernel.get("kind") not in KINDS or kernel.get("kind") == "grid":
        raise ConfigError(f"kernel kind must be one of {[k for k in KINDS if k != 'grid']}")
    kernel = {k: v for k, v in kernel.items() if k != "epsilon"}

    eps = _number_list(raw.get("epsilons", _DEFAULT_EPS.get(command, [2.0**-8])), "epsilons")
    for e in eps:
        if not 0 < e <= 0.25:
            raise ConfigError(f"epsilon {e} outside (0, 1/4]")
    deltas = _number_list(raw.get("deltas", [0.5]), "deltas")
    for dl in deltas:
        if not 0 < dl < 1:
            raise ConfigError(f"delta {dl} outside (0, 1)")

    grid_exp = raw.get("grid_exp")
    if grid_exp is not None and (not isinstance(grid_exp, int) or isinstance(grid_exp, bool) or not 4 <= grid_exp <= 24):
        raise ConfigError("grid_exp must be an integer in [4, 24]")

    seed = raw.get("seed")
    if seed is None and command not in ("validate", "report"):
        raise ConfigError("seed is mandatory (config key 'seed' or --seed)")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64):
        raise ConfigError("seed must be an integer in [0, 2**64)")

    options = {k: raw[k] for k in CONFIG_KEYS if k in raw and k not in ("preset", "map", "kernel", "epsilons", "deltas", "grid_exp", "seed")}
    if "profile" in options and options["profile"] not in ("sine", "tent"):
        raise ConfigError("profile must be 'sine' or 'tent'")
    if "p" in options and options["p"] not in (1, 2):
        raise ConfigError("p must be 1 or 2")
    if "delta_prime" in options and not 0 < float(options["delta_prime"]) < 1:
        raise ConfigError("delta_prime outside (0, 1)")
    for key in ("samples", "particles", "steps", "bins"):
        if key in options and (not isinstance(options[key], int) or options[key] < 1):
            raise ConfigError(f"{key} must be a positive integer")

    out = Path(getattr(args, "out", None) or "runs")
    workers = getattr(args, "workers", None) or os.cpu_count() or 1
    if workers < 1:
        raise ConfigError("workers must be positive")
    return ExperimentConfig(command, None if map_spec is not None else name, map_spec, kernel, eps, deltas, grid_exp, seed, out, int(workers), options)


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# output helpers


def atomic_write(path: Path, data) -> str:
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(blob).hexdigest()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows: list, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def two_column(x, y, header: str) -> str:
    lines = [f"# {header}"]
    lines += [f"{float(a)!r} {float(b)!r}" for a, b in zip(x, y) if b is not None]
    return "\n".join(lines) + "\n"


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (complex, np.complexfloating)):
        return [o.real, o.imag]
    if isinstance(o, tuple):
        return list(o)
    if hasattr(o, "as_dict"):
        return o.as_dict()
    return str(o)


def _tag(x: float) -> str:
    return repr(float(x)).replace(".", "p").replace("-", "m")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class CommandResult:
    files: dict = field(default_factory=dict)  # name -> str/bytes, or callable(path) for figures
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


@dataclass
class RunManifest:
    command: str
    config_hash: str
    version: str
    csv_schema_version: int
    files: dict
    wall_seconds: float
    checks: list
    passed: bool
    warnings: list
    config: dict

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# commands


def _cmd_validate(cfg: ExperimentConfig) -> CommandResult:
    phi = cfg.phi()
    res = CommandResult()
    try:
        rep = validate_map(phi)
    except MapError as exc:
        res.files["validate.json"] = _json({"name": phi.name, "valid": False, "error": f"{type(exc).__name__}: {exc}"})
        res.checks.append(Check("map is a valid Bernoulli map", False, f"{type(exc).__name__}: {exc}"))
        res.summary = {"map": phi.name, "valid": False}
        return res
    info = rep.as_dict()
    info["name"] = phi.name
    res.files["validate.json"] = _json(info)
    res.checks.append(Check("map is a valid Bernoulli map", bool(rep.valid), f"p_min={rep.p_min} p_max={rep.p_max}"))
    res.summary = {"map": phi.name, "p_min": str(rep.p_min), "p_max": str(rep.p_max), "valid": bool(rep.valid)}
    return res


def _sweep_common(cfg: ExperimentConfig, kind: str) -> CommandResult:
    phi = cfg.phi()
    template = cfg.kernel_template(phi.d)
    m = cfg.grid(phi)
    column = "t_mix" if kind == "mix" else "t_dis"
    stem = "sweep_mix" if kind == "mix" else "sweep_dis"
    res = CommandResult()
    all_rows, per_delta = [], {}
    for delta in cfg.deltas:
        rows = sweep(phi, template, cfg.epsilons, delta, kind, m=m, workers=cfg.workers)
        pts = [(r["epsilon"], r[column]) for r in rows]
        try:
            fit = fit_scaling(pts).as_dict()
        except InsufficientData as exc:
            fit = None
            res.warnings.append(f"delta={delta}: slope fit skipped ({exc})")
        diags = []
        ts = [r[column] for r in rows]
        mono = all(b >= a for a, b in zip(ts, ts[1:]))
        res.checks.append(Check(f"{column} nondecreasing as eps shrinks (delta={delta})", mono, str(ts)))
        for r in rows:
            meas = r.pop("_measurement")
            if not cfg.opt("record_timing", False):
                r["wall_ms"] = None
            lo, up = r["theory_lower"], r["theory_upper"]
            ok = (lo is None or lo <= r[column]) and (up is None or r[column] <= up)
            res.checks.append(Check(f"theory sandwich at eps={r['epsilon']!r} delta={delta}", ok, f"{lo} <= {r[column]} <= {up}"))
            wit = meas.diagnostics.get("witness")
            if isinstance(wit, dict) and "holds" in wit:
                res.checks.append(Check(f"lower-bound witness at eps={r['epsilon']!r} delta={delta}", bool(wit["holds"]), _json(wit).strip()))
            diags.append({"epsilon": r["epsilon"], "witness": wit})
        x = [abs(math.log(r["epsilon"])) for r in rows]
        res.files[f"{stem}_delta{_tag(delta)}.dat"] = two_column(x, ts, f"abs_ln_eps {column}")
        per_delta[repr(delta)] = {"fit": fit, "witnesses": diags}
        all_rows += rows
    try:
        a, gamma = eigen_constants(template, "sine")
    except UnsupportedError:
        a = gamma = None
    theory = None
    if float(phi.p_max) < 1:
        theory = theoretical_time_bounds(phi, template.with_epsilon(cfg.epsilons[0]), cfg.deltas[0], a, gamma).as_dict()
        theory.pop("extras", None)
    res.files[f"{stem}.csv"] = to_csv(all_rows, SWEEP_COLUMNS)
    res.files[f"{stem}.json"] = _json(
        {
            "map": phi.name,
            "kernel": cfg.kernel,
            "m": m,
            "kind": kind,
            "rows": all_rows,
            "per_delta": per_delta,
            "theory_at_first_eps": theory,
            "family": "family-worst-case over point masses on a 32-point start lattice plus the witness cylinder" if kind == "mix" else "power iteration, 3 seeds",
        }
    )
    res.summary = {"rows": len(all_rows), "fits": {k: v["fit"] for k, v in per_delta.items()}}
    return res


def _cmd_sweep_mix(cfg):
    return _sweep_common(cfg, "mix")


def _cmd_sweep_dis(cfg):
    return _sweep_common(cfg, "dis")


def _cmd_verify_eigen(cfg: ExperimentConfig) -> CommandResult:
    d = int(cfg.kernel.get("d", 1))
    kernel = cfg.kernel_template(d)
    profile = cfg.opt("profile", "sine")
    m = 2**cfg.grid_exp if cfg.grid_exp is not None else None
    res = CommandResult()
    cert = verify_eigen_inequality(kernel, profile, cfg.epsilons, m=m, raise_on_failure=False)
    out = {"certificate": cert.as_dict(), "persistence": []}
    res.checks.append(Check(f"eigen inequality ({kernel.kind}, {profile}, d={d})", bool(cert.passed), f"a={cert.a} gamma={cert.gamma}"))
    word = cfg.opt("word")
    if word is not None:
        phi = cfg.phi()
        if phi.d != d:
            raise ConfigError("persistence check needs the kernel dimension to match the map")
        for eps in cfg.epsilons:
            try:
                rep = verify_envelope_persistence(phi, kernel.with_epsilon(eps), tuple(word), profile, raise_on_failure=False)
            except ValueError as exc:
                res.warnings.append(f"persistence skipped at eps={eps!r}: {exc}")
                continue
            out["persistence"].append(rep.as_dict())
            res.checks.append(Check(f"envelope persistence for {tuple(word)} at eps={eps!r}", bool(rep.passed), f"beta={rep.beta_theory:.4g} measured={rep.beta_measured:.4g}"))
    rows = [dict(r) for r in out["certificate"]["rows"]]
    cols = list(rows[0]) if rows else ["epsilon"]
    res.files["verify_eigen.csv"] = to_csv(rows, cols)
    res.files["verify_eigen.json"] = _json(out)
    res.summary = {"passed": bool(cert.passed), "a": cert.a, "gamma": cert.gamma}
    return res


def _cmd_verify_pcmix(cfg: ExperimentConfig) -> CommandResult:
    phi = cfg.phi()
    template = cfg.kernel_template(phi.d)
    p = int(cfg.opt("p", 1))
    n = int(cfg.opt("samples", 20))
    m = cfg.grid(phi) or grid_size_for(phi, 2**14 if phi.d == 1 else 2**8)
    res = CommandResult()
    reports, rows = [], []
    for eps in cfg.epsilons:
        for delta in cfg.deltas:
            rep = check_pcmix(phi, template.with_epsilon(eps), delta, p, n, cfg.seed, m, grid_tol=float(cfg.opt("grid_tol", 0.0)))
            reports.append(rep)
            for r in rep["rows"]:
                rows.append({"epsilon": eps, "delta": delta, **r})
            res.checks.append(
                Check(f"pcMix leakage bound eps={eps!r} delta={delta} p={p}", rep["violations"] == 0, f"max_ratio={rep['max_ratio']!r} factor={rep['leakage_factor']!r}")
            )
    cols = list(rows[0]) if rows else ["epsilon"]
    res.files["verify_pcmix.csv"] = to_csv(rows, cols)
    res.files["verify_pcmix.json"] = _json({"map": phi.name, "m": m, "p": p, "reports": reports})
    res.summary = {"violations": sum(r["violations"] for r in reports)}
    return res


def _cmd_verify_duality(cfg: ExperimentConfig) -> CommandResult:
    phi = cfg.phi()
    template = cfg.kernel_template(phi.d)
    m = cfg.grid(phi)
    delta = cfg.deltas[0]
    dprime = float(cfg.opt("delta_prime", 0.5))
    seeds = tuple(cfg.seed + i for i in range(3))
    tdis, tq, tp, bk = {}, {}, {}, {}
    for eps in cfg.epsilons:
        k = template.with_epsilon(eps)
        tdis[eps] = measure_tdis(phi, k, delta, m=m, seeds=seeds, witness=False).t
        mq, mp = measure_tmix(phi, k, [delta**2 / 4, dprime], m=m, witness=False)
        tq[eps], tp[eps] = mq.t, mp.t
        bk[eps] = kernel_stats(k, 1.0, math.pi).bold_K
    rel = relate_tmix_tdis(cfg.epsilons, tdis, tq, tp, delta, dprime, bk, phi.d)
    res = CommandResult()
    for r in rel["rows"]:
        r["bold_K"] = bk[r["epsilon"]]
    res.checks.append(Check(f"duality inequalities on {phi.name}", rel["violations"] == 0, f"violations={rel['violations']}"))
    res.files["verify_duality.csv"] = to_csv(rel["rows"], list(rel["rows"][0]))
    res.files["verify_duality.json"] = _json({"map": phi.name, "m": m, **rel})
    res.summary = {"violations": rel["violations"]}
    return res


def _mode_support_check(N: int, d: int, eps: float, n: int) -> dict:
    """Push a small multi-mode field and compare with the closed forms."""
    entries = {}
    for j, k in enumerate([(1,), (-1,), (2,), (-2,), (3,), (-3,)]):
        kk = k + (0,) * (d - 1)
        entries[kk] = 1.0 / (j + 1)
    g = SpectralField.from_modes(d, 3, entries)
    out = iterate_spectrum(N, d, eps, g, n)
    modes = out.modes().reshape(-1, d)
    vals = out.coeffs.reshape(-1)
    support_ok = all(all(int(c) % N**n == 0 for c in k) for k, v in zip(modes, vals) if v != 0)
    S = geometric_sum(N, n)
    closed = (N ** (2 * n) - 1) // (N * N - 1)
    worst = 0.0
    for k, c in entries.items():
        got = out.coefficient(tuple(x * N**n for x in k))
        k2 = sum(x * x for x in k)
        expect = -2 * math.pi**2 * eps**2 * k2 * closed
        worst = max(worst, abs(math.log(abs(got) / c) - expect))
    return {"n": n, "support_ok": support_ok, "geometric_sum_exact": S == closed, "max_exponent_error": worst}


def _cmd_spectral(cfg: ExperimentConfig) -> CommandResult:
    phi = cfg.phi()
    N = _uniform_base(phi)
    if N is None:
        raise ConfigError("spectral needs a uniformly expanding map x -> N x")
    if cfg.kernel.get("kind") != "gaussian" or "covariance" in cfg.kernel:
        raise ConfigError("spectral needs the standard Gaussian kernel")
    d = phi.d
    m = cfg.grid(phi)
    horizon = int(cfg.opt("steps", 12))
    seeds = tuple(cfg.seed + i for i in range(3))
    res = CommandResult()
    rows = []
    for eps in cfg.epsilons:
        for delta in cfg.deltas:
            rep = decay_check(N, d, eps, delta, horizon)
            grid_t = measure_tdis(phi, cfg.kernel_template(d, eps), delta, m=m, seeds=seeds, witness=False).t
            ms = _mode_support_check(N, d, eps, min(3, horizon))
            rows.append(
                {
                    "epsilon": eps,
                    "delta": delta,
                    "t_dis_spectral": rep["t_dis"],
                    "t_dis_grid": grid_t,
                    "t_dis_alt_denominator": rep["t_dis_alt_denominator"],
                    "corollary_leading": rep["corollary_leading"],
                    "C_theory": rep["C_theory"],
                    "corollary_ok": rep["corollary_ok"],
                    "double_exponential_ok": rep["double_exponential_ok"],
                    "mode_support_ok": ms["support_ok"],
                    "max_exponent_error": ms["max_exponent_error"],
                }
            )
            res.files[f"spectral_eps{_tag(eps)}_delta{_tag(delta)}.csv"] = decay_csv(rep)
            res.files[f"spectral_eps{_tag(eps)}_delta{_tag(delta)}.dat"] = two_column(
                [r["n"] for r in rep["rows"]], [r["log_norm_exponent"] for r in rep["rows"]], "n log_norm_exponent"
            )
            tag = f"eps={eps!r} delta={delta}"
            res.checks += [
                Check(f"spectral t_dis equals grid t_dis at {tag}", rep["t_dis"] == grid_t, f"{rep['t_dis']} vs {grid_t} (m={m})"),
                Check(f"double-exponential signature at {tag}", rep["double_exponential_ok"]),
                Check(f"closed-form threshold at {tag}", rep["corollary_ok"]),
                Check(f"mode support and exponents at {tag}", ms["support_ok"] and ms["geometric_sum_exact"] and ms["max_exponent_error"] <= 1e-12, str(ms)),
            ]
    cols = list(rows[0])
    res.files["spectral.csv"] = to_csv(rows, cols)
    res.files["spectral.json"] = _json({"N": N, "d": d, "m": m, "rows": rows})
    res.summary = {"rows": rows}
    return res


def _start_indicator(m: int, bins: int, start, d: int) -> np.ndarray:
    idx = [int(math.floor(float(c) * bins)) % bins for c in start]
    r = m // bins
    vals = np.zeros((m,) * d)
    vals[tuple(slice(i * r, (i + 1) * r) for i in idx)] = float(bins) ** d
    return vals


def _cmd_mc(cfg: ExperimentConfig) -> CommandResult:
    phi = cfg.phi()
    d = phi.d
    m = cfg.grid(phi)
    bins = int(cfg.opt("bins", 256))
    if m % bins:
        raise ConfigError(f"bins={bins} must divide the grid size {m}")
    steps = int(cfg.opt("steps", 20))
    particles = int(cfg.opt("particles", 100_000))
    tol = float(cfg.opt("tolerance", 0.05))
    start = cfg.opt("start", [0.3] * d)
    start = [start] * d if np.isscalar(start) else list(start)
    res = CommandResult()
    rows = []
    for eps in cfg.epsilons:
        k = cfg.kernel_template(d, eps)
        hist = simulate_ensemble(phi, k, steps, particles, cfg.seed, bins, start=start, start_m=bins)
        again = simulate_ensemble(phi, k, steps, particles, cfg.seed, bins, start=start, start_m=bins)
        tv_mc = histogram_tv_trace(hist, d)
        evo = Evolution(phi, k, m)
        tv_de = density_tv_trace(evo, _start_indicator(m, bins, start, d), steps, coarse_m=bins)
        gap = float(np.max(np.abs(tv_mc - tv_de)))
        for n in range(steps + 1):
            rows.append({"epsilon": eps, "n": n, "tv_particles": float(tv_mc[n]), "tv_density": float(tv_de[n]), "abs_diff": float(abs(tv_mc[n] - tv_de[n]))})
        res.files[f"mc_eps{_tag(eps)}.dat"] = two_column(range(steps + 1), tv_mc, "n tv_particles")
        res.files[f"density_eps{_tag(eps)}.dat"] = two_column(range(steps + 1), tv_de, "n tv_density")
        res.checks += [
            Check(f"particle and density TV traces agree at eps={eps!r}", gap <= tol, f"sup gap {gap:.4g} <= {tol}"),
            Check(f"particle run is seed-deterministic at eps={eps!r}", bool(np.array_equal(hist, again))),
        ]
    res.files["mc_crosscheck.csv"] = to_csv(rows, ["epsilon", "n", "tv_particles", "tv_density", "abs_diff"])
    res.summary = {"max_gap": max(r["abs_diff"] for r in rows)}
    return res


# ---------------------------------------------------------------------------
# report


def _read_plot(path: Path):
    x, y = [], []
    for line in path.read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        a, b = line.split()
        x.append(float(a))
        y.append(float(b))
    return x, y


def emit_report(out: Path) -> tuple:
    """Summarise every manifest in ``out``.

    Figures are written directly; returns ``(report, warnings, files)`` where
    ``files`` maps the remaining output names to their contents.
    """
    from . import plotting

    manifests = []
    for p in sorted(Path(out).glob("manifest_*.json")):
        if p.name == "manifest_report.json":
            continue
        manifests.append(json.loads(p.read_text()))
    warn = []
    report = {"version": __version__, "commands": {}, "sandwich": [], "figures": []}
    files = {}
    if not manifests:
        warn.append("InsufficientData: no completed manifests found; nothing to report")
        report["warning"] = warn[-1]
    for man in manifests:
        report["commands"][man["command"]] = {
            "passed": man["passed"],
            "checks": man["checks"],
            "config_hash": man["config_hash"],
            "warnings": man.get("warnings", []),
        }
    for stem, column in (("sweep_mix", "t_mix"), ("sweep_dis", "t_dis")):
        js = Path(out) / f"{stem}.json"
        if not js.exists():
            continue
        data = json.loads(js.read_text())
        series, theory = {}, {}
        by_delta = {}
        for r in data["rows"]:
            by_delta.setdefault(r["delta"], []).append(r)
            report["sandwich"].append(
                {
                    "kind": column,
                    "epsilon": r["epsilon"],
                    "delta": r["delta"],
                    "lower": r["theory_lower"],
                    "measured": r[column],
                    "upper": r["theory_upper"],
                    "ok": (r["theory_lower"] is None or r["theory_lower"] <= r[column])
                    and (r["theory_upper"] is None or r[column] <= r["theory_upper"]),
                }
            )
        for delta, rows in sorted(by_delta.items()):
            x = [abs(math.log(r["epsilon"])) for r in rows]
            series[f"measured delta={delta}"] = (x, [r[column] for r in rows])
            lo = [r["theory_lower"] for r in rows]
            if all(v is not None for v in lo):
                theory[f"lower delta={delta}"] = (x, lo)
                files[f"report_{stem}_lower_delta{_tag(delta)}.dat"] = two_column(x, lo, f"abs_ln_eps {column}_lower")
            files[f"report_{stem}_delta{_tag(delta)}.dat"] = two_column(x, [r[column] for r in rows], f"abs_ln_eps {column}")
            fit = data["per_delta"].get(repr(delta), {}).get("fit")
            if fit is None:
                warn.append(f"InsufficientData: {stem} delta={delta} has too few points for a slope fit")
        report["commands"].setdefault(stem.replace("_", "-"), {})["fits"] = {k: v["fit"] for k, v in data["per_delta"].items()}
        if series:
            report["figures"].append(
                ("fig", stem, series, theory, f"{column} vs |ln eps| ({data['map']})")
            )
    spec_csvs = sorted(Path(out).glob("spectral_eps*.dat"))
    if spec_csvs:
        report["figures"].append(("decay", "spectral", {p.stem: _read_plot(p) for p in spec_csvs}, None, "exact log-norm decay"))
    mc = sorted(Path(out).glob("mc_eps*.dat"))
    if mc:
        traces = {}
        for p in mc:
            traces[p.stem] = _read_plot(p)[1]
            dp = p.with_name(p.name.replace("mc_", "density_"))
            if dp.exists():
                traces[dp.stem] = _read_plot(dp)[1]
        report["figures"].append(("tv", "mc_crosscheck", traces, None, "particle vs density TV"))

    figs = report.pop("figures")
    report["figures"] = []
    for kind, stem, series, theory, title in figs:
        path = Path(out) / f"report_{stem}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        if kind == "fig":
            plotting.times_vs_eps(path, series, title, theory)
        elif kind == "decay":
            plotting.decay_curves(path, series, title)
        else:
            plotting.tv_traces(path, series, title)
        report["figures"].append(path.name)
    report["all_passed"] = all(c["passed"] for c in report["commands"].values() if "passed" in c)
    report["warnings"] = warn
    files["report.json"] = _json(report)
    files["report.txt"] = _report_text(report)
    return report, warn, files


def _report_text(report: dict) -> str:
    lines = [f"bernoulli-mixing report (version {report['version']})", ""]
    if report.get("warning"):
        lines.append(f"WARNING {report['warning']}")
    for name, info in sorted(report["commands"].items()):
        if "passed" in info:
            lines.append(f"[{'PASS' if info['passed'] else 'FAIL'}] {name}")
            for c in info["checks"]:
                lines.append(f"    {'ok  ' if c['passed'] else 'FAIL'} {c['name']}")
        for delta, fit in (info.get("fits") or {}).items():
            if fit:
                lines.append(f"    slope per unit log2(1/eps) at delta={delta}: {fit['slope']:.4f}")
    if report["sandwich"]:
        lines += ["", "theory sandwich (lower <= measured <= upper):"]
        for r in report["sandwich"]:
            lines.append(f"    {r['kind']} eps={r['epsilon']:.6g} delta={r['delta']}: {r['lower']} <= {r['measured']} <= {r['upper']}  {'ok' if r['ok'] else 'VIOLATED'}")
    for w in report["warnings"]:
        lines.append(f"WARNING {w}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# driver

_HANDLERS = {
    "validate": _cmd_validate,
    "sweep-mix": _cmd_sweep_mix,
    "sweep-dis": _cmd_sweep_dis,
    "verify-eigen": _cmd_verify_eigen,
    "verify-pcmix": _cmd_verify_pcmix,
    "verify-duality": _cmd_verify_duality,
    "spectral": _cmd_spectral,
    "mc-crosscheck": _cmd_mc,
}


def run_command(name: str, cfg: ExperimentConfig) -> RunManifest:
    """Run one command, write its files and manifest; raise CheckFailure on a failed check."""
    t0 = time.perf_counter()
    out = Path(cfg.out)
    if name == "report":
        report, warn, files = emit_report(out)
        checks, passed = [], True
        figures = {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in report["figures"]}
        for w in warn:
            warnings.warn(w)
    else:
        result = _HANDLERS[name](cfg)
        files = result.files
        checks = [c.__dict__ for c in result.checks]
        passed = all(c.passed for c in result.checks)
        warn = result.warnings
    hashes = {fname: atomic_write(out / fname, blob) for fname, blob in sorted(files.items())}
    if name == "report":
        hashes.update(figures)
    manifest = RunManifest(
        command=name,
        config_hash=cfg.hash(),
        version=__version__,
        csv_schema_version=CSV_SCHEMA_VERSION,
        files=hashes,
        wall_seconds=time.perf_counter() - t0,
        checks=checks,
        passed=passed,
        warnings=warn,
        config=cfg.canonical(),
    )
    atomic_write(out / f"manifest_{name}.json", _json(manifest.as_dict()))
    if not passed:
        failed = [c["name"] for c in checks if not c["passed"]]
        raise CheckFailure(f"{len(failed)} check(s) failed: {failed}")
    return manifest


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bernoulli-mixing", description="Mixing and dissipation experiments for noisy Bernoulli maps.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="JSON config file")
    ap.add_argument("--out", type=Path, help="output directory (default ./runs)")
    ap.add_argument("--seed", type=int, help="integer seed in [0, 2**64)")
    ap.add_argument("--workers", type=int, help="worker threads for sweeps (default: CPU count)")
    ap.add_argument("--preset", help=f"named map, one of {PRESETS}")
    ap.add_argument("--grid-exp", dest="grid_exp", type=int, help="grid size target 2**K")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        cfg = build_config(args.command, raw, args)
        manifest = run_command(args.command, cfg)
    except CheckFailure as exc:
        print(f"CHECK FAILED: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - the exit code contract maps everything else to 4
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    for c in manifest.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    if args.command == "validate":
        cfg_phi = cfg.phi()
        print(f"{cfg_phi.name}: p_min={cfg_phi.p_min} p_max={cfg_phi.p_max}")
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(manifest.files)} file(s) to {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
