"""Config validation, named scenarios and report files.

A run is described by a flat JSON-compatible mapping (only ``perturbation``
nests). :func:`run_scenario` writes every output into ``output_dir`` plus a
``manifest.json`` with the resolved config, library versions and sha256
checksums; on failure the manifest is still written, with status FAILED.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .dynamics import evolve
from .errors import ConfigError, DNLSError
from .lattice import Boundary, LatticeField, Window, field_to_csv
from .linear import (
    ResolventPoint,
    Side,
    default_lambda_grid,
    kato_growth_free_delta,
    kato_growth_origin_removed,
    resolvent_bound_scan,
    strichartz_survey,
    weighted_resolvent_norms,
)
from .modulation import ProfileCache, Tracker, decompose, richardson_track, scattering_extract
from .soliton import OMEGA_MIN, A_MAX, assemble_from_series, q_prime_scan, series_solve, solve_profile, verify_asymptotics

SCENARIOS = ("soliton_build", "asymptotics", "linear_estimates", "stability_run", "scattering")
INTEGRATORS = ("strang", "strang_frozen")

DEFAULT_PERTURBATION = {"sites": {"0": [1.0, 0.0], "1": [0.5, 0.0], "-1": [0.5, 0.0], "2": [0.0, 0.25], "-3": [-0.25, 0.0]}}

DEFAULTS = {
    "omega_star": 50.0,
    "epsilon": 1e-3,
    "perturbation": DEFAULT_PERTURBATION,
    "T": 200.0,
    "dt": 0.01,
    "window": "auto",
    "core": 20,
    "seed": 0,
    "output_dir": "runs/out",
    "integrator": "strang_frozen",
    "stride": 1,
    "track": True,
    "rate_levels": 1,
    "tail_fraction": 0.1,
    "mask_width": 0,
    "mask_strength": 0.0,
    "omega_grid": [50.0, 100.0, 200.0, 400.0],
    "a_weight": 1.0,
    "profile_N": 40,
    "profile_tol": 1e-12,
    "lambda_points": 241,
    "stz_samples": 50,
    "stz_T_list": [50.0, 100.0, 200.0],
    "stz_dt": 0.1,
}


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    omega_star: float
    epsilon: float
    perturbation: dict
    T: float
    dt: float
    window: int
    core: int
    seed: int
    output_dir: str
    integrator: str
    stride: int
    track: bool
    rate_levels: int
    tail_fraction: float
    mask_width: int
    mask_strength: float
    omega_grid: tuple
    a_weight: float
    profile_N: int
    profile_tol: float
    lambda_points: int
    stz_samples: int
    stz_T_list: tuple
    stz_dt: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["omega_grid"] = list(self.omega_grid)
        d["stz_T_list"] = list(self.stz_T_list)
        return d


def auto_window(T: float, core: int) -> int:
    """Margin rule ``N >= core + 2T + 10``."""
    return int(core + math.ceil(2.0 * T) + 10)


def _num(raw, key, kind=float):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ConfigError(key, f"expected an integer, got {v!r}")
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    return v


def _check_perturbation(p):
    if not isinstance(p, dict) or len(p) != 1 or not ({"sites"} >= set(p) or {"random"} >= set(p)):
        raise ConfigError("perturbation", "expected {'sites': {...}} or {'random': {...}}")
    if "sites" in p:
        sites = p["sites"]
        if not isinstance(sites, dict) or not sites:
            raise ConfigError("perturbation.sites", "expected a non-empty mapping site -> [re, im]")
        for x, a in sites.items():
            try:
                int(x)
            except (TypeError, ValueError):
                raise ConfigError(f"perturbation.sites.{x}", "site labels must be integers") from None
            if not (isinstance(a, (list, tuple)) and len(a) == 2 and all(isinstance(c, (int, float)) for c in a)):
                raise ConfigError(f"perturbation.sites.{x}", "amplitude must be [re, im]")
    else:
        r = p["random"]
        if not isinstance(r, dict) or set(r) - {"radius"}:
            raise ConfigError("perturbation.random", "only the key 'radius' is allowed (the run seed is used)")
        rad = r.get("radius", 3)
        if isinstance(rad, bool) or not isinstance(rad, int) or rad < 0:
            raise ConfigError("perturbation.random.radius", "expected a non-negative integer")


def validate_config(raw: dict) -> RunConfig:
    """Fill defaults, check types and ranges, resolve the auto window."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    allowed = set(DEFAULTS) | {"scenario"}
    for k in raw:
        if k not in allowed:
            raise ConfigError(k, f"unknown key {k!r}")
    if "scenario" not in raw:
        raise ConfigError("scenario", "missing required key")
    if raw["scenario"] not in SCENARIOS:
        raise ConfigError("scenario", f"must be one of {SCENARIOS}, got {raw['scenario']!r}")
    d = dict(DEFAULTS)
    d.update(raw)
    out = {"scenario": d["scenario"]}
    for k in ("omega_star", "epsilon", "T", "dt", "tail_fraction", "mask_strength", "a_weight", "profile_tol",
              "stz_dt"):
        out[k] = _num(d, k)
    for k in ("core", "seed", "stride", "rate_levels", "mask_width", "profile_N", "lambda_points", "stz_samples"):
        out[k] = _num(d, k, int)
    if out["epsilon"] < 0:
        raise ConfigError("epsilon", "must be >= 0")
    if out["T"] <= 0:
        raise ConfigError("T", "must be > 0")
    if out["dt"] <= 0:
        raise ConfigError("dt", "must be > 0")
    if out["dt"] > 0.05:
        raise ConfigError("dt", "must be <= 0.05")
    if out["omega_star"] < OMEGA_MIN:
        raise ConfigError("omega_star", f"must be >= {OMEGA_MIN}")
    if out["stride"] < 1:
        raise ConfigError("stride", "must be >= 1")
    nsteps = out["T"] / (out["dt"] * out["stride"])
    if abs(nsteps - round(nsteps)) > 1e-9 * max(1.0, nsteps):
        raise ConfigError("T", "must be a multiple of dt * stride")
    if out["rate_levels"] not in (1, 2, 3):
        raise ConfigError("rate_levels", "must be 1, 2 or 3")
    if not 0 < out["tail_fraction"] <= 0.5:
        raise ConfigError("tail_fraction", "must lie in (0, 0.5]")
    if out["core"] < 2:
        raise ConfigError("core", "must be >= 2")
    if out["mask_width"] < 0 or out["mask_strength"] < 0:
        raise ConfigError("mask_width" if out["mask_width"] < 0 else "mask_strength", "must be >= 0")
    if d["integrator"] not in INTEGRATORS:
        raise ConfigError("integrator", f"must be one of {INTEGRATORS}")
    out["integrator"] = d["integrator"]
    if not isinstance(d["track"], bool):
        raise ConfigError("track", "must be true or false")
    out["track"] = d["track"]
    if not isinstance(d["output_dir"], str) or not d["output_dir"]:
        raise ConfigError("output_dir", "must be a non-empty path string")
    out["output_dir"] = d["output_dir"]
    _check_perturbation(d["perturbation"])
    out["perturbation"] = json.loads(json.dumps(d["perturbation"]))
    for k in ("omega_grid", "stz_T_list"):
        g = d[k]
        if not isinstance(g, (list, tuple)) or not g or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in g):
            raise ConfigError(k, "expected a non-empty list of numbers")
        out[k] = tuple(float(v) for v in g)
    need = auto_window(out["T"], out["core"])
    if d["window"] == "auto":
        out["window"] = need
    else:
        w = d["window"]
        if isinstance(w, bool) or not isinstance(w, int) or w < 2:
            raise ConfigError("window", "expected 'auto' or an integer half width >= 2")
        if w < need and out["mask_width"] == 0:
            raise ConfigError("window", f"half width {w} violates the margin rule (needs >= {need} without a mask)")
        out["window"] = w
    return RunConfig(**out)


# report bundle ---------------------------------------------------------------

@dataclass
class ReportBundle:
    scenario: str
    output_dir: Path
    summary: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    status: str = "complete"

    def write_text(self, name: str, text: str) -> Path:
        p = self.output_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        if name not in self.files:
            self.files.append(name)
        return p

    def write_json(self, name: str, doc) -> Path:
        return self.write_text(name, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "artifact": pkg}


def write_manifest(bundle: ReportBundle, cfg: RunConfig, error: str | None = None) -> Path:
    doc = {
        "status": bundle.status,
        "scenario": bundle.scenario,
        "config": cfg.to_dict(),
        "versions": _versions(),
        "files": {name: _sha256(bundle.output_dir / name) for name in sorted(bundle.files)},
    }
    if error is not None:
        doc["error"] = error
    p = bundle.output_dir / "manifest.json"
    p.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return p


def verify_manifest(output_dir) -> dict:
    """Map of ``file -> problem`` for missing or modified outputs (empty when intact)."""
    out_dir = Path(output_dir)
    doc = json.loads((out_dir / "manifest.json").read_text())
    problems = {}
    for name, digest in doc["files"].items():
        p = out_dir / name
        if not p.exists():
            problems[name] = "missing"
        elif _sha256(p) != digest:
            problems[name] = "checksum mismatch"
    return problems


# scenarios -------------------------------------------------------------------

def perturbation_vector(cfg: RunConfig, window: Window) -> np.ndarray:
    """Perturbation direction scaled to l^2 norm ``epsilon``."""
    p = np.zeros(window.size, dtype=np.complex128)
    pert = cfg.perturbation
    if "sites" in pert:
        for x, (re, im) in pert["sites"].items():
            p[window.index(int(x))] += re + 1j * im
    else:
        rad = int(pert["random"].get("radius", 3))
        rng = np.random.default_rng(cfg.seed)
        n = 2 * rad + 1
        p[window.N - rad : window.N + rad + 1] = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    nrm = float(np.linalg.norm(p))
    if nrm == 0.0:
        raise ConfigError("perturbation", "perturbation direction is zero")
    return cfg.epsilon * p / nrm


def _soliton_build(cfg: RunConfig, b: ReportBundle):
    win = Window(cfg.profile_N)
    prof = solve_profile(cfg.omega_star, win, tol=cfg.profile_tol)
    b.write_text("profile.csv", _csv(["x", "phi", "dphi", "d2phi"],
                                     zip(win.sites.tolist(), prof.phi, prof.dphi, prof.d2phi)))
    b.summary.update(omega=prof.omega, residual_norm=prof.residual_norm, dphi_residual=prof.dphi_residual,
                     d2phi_residual=prof.d2phi_residual, q_prime=prof.q_prime, iterations=prof.iterations,
                     N=cfg.profile_N)
    a = 1.0 / cfg.omega_star
    if a <= A_MAX:
        s = series_solve(a, J=10)
        ser = assemble_from_series(s, win).values.real
        core = slice(win.N - 5, win.N + 6)
        b.summary["series_max_rel_diff_core"] = float(np.max(np.abs(ser[core] - prof.phi[core]) / np.abs(prof.phi[core])))
    b.data["profiles"] = {prof.omega: prof}


def _asymptotics(cfg: RunConfig, b: ReportBundle):
    rep = verify_asymptotics(cfg.omega_grid, a_weight=cfg.a_weight, window=Window(cfg.profile_N), tol=1e-10)
    b.write_text("asymptotics.csv", rep.to_csv())
    qs = q_prime_scan([1e2, 1e3, 1e4])
    b.write_text("q_prime.csv", _csv(["omega", "q_prime_times_omega_2_3"], qs))
    b.summary.update(omega_grid=list(rep.omega), R1=rep.R1, R2=rep.R2, R1_spread=rep.R1_spread,
                     R2_spread=rep.R2_spread, decay_slope=rep.slope, q_prime_scaled=[q for _, q in qs])
    b.data["decay"] = {om: (xs, lp, sl) for (om, (xs, lp)), sl in zip(rep.decay.items(), rep.slope)}


def _linear_estimates(cfg: RunConfig, b: ReportBundle):
    grid = default_lambda_grid(cfg.lambda_points)
    scan = resolvent_bound_scan(grid)
    b.write_text("resolvent.csv", scan.to_csv())
    edge = {}
    for side in (Side.PLUS, Side.MINUS):
        o, f = weighted_resolvent_norms(ResolventPoint(1e-4, side))
        edge[side.value] = {"odd": o, "full": f, "ratio": f / o}
    rep = strichartz_survey(samples=cfg.stz_samples, T_list=cfg.stz_T_list, dt=cfg.stz_dt, seed=cfg.seed)
    b.write_text("strichartz.csv", rep.to_csv())
    Ts = list(cfg.stz_T_list)
    kd = kato_growth_free_delta(Ts, cfg.stz_dt)
    ko = kato_growth_origin_removed(Ts, cfg.stz_dt)
    b.write_text("kato.csv", _csv(["T", "free_delta", "origin_removed"], [(T, kd[T], ko[T]) for T in sorted(kd)]))
    T0, T1 = min(Ts), max(Ts)
    b.summary.update(
        sup_odd_resolvent=scan.sup_odd(), edge_contrast=edge,
        stz_ratio_max={str(T): rep.max_ratio(T, "stz") for T in Ts},
        kato_ratio_max={str(T): rep.max_ratio(T, "kato") for T in Ts},
        stz_growth=rep.max_ratio(T1, "stz") / rep.max_ratio(T0, "stz") - 1.0,
        kato_growth=rep.max_ratio(T1, "kato") / rep.max_ratio(T0, "kato") - 1.0,
        free_delta_kato_growth=kd[T1] / kd[T0] - 1.0,
    )
    b.data["strichartz"] = rep
    b.data["resolvent"] = scan


def _snap(t: float, h: float) -> float:
    return round(round(t / h) * h, 9)


def _dynamics(cfg: RunConfig, b: ReportBundle):
    win = Window(cfg.window, Boundary.PERIODIC)
    cache = ProfileCache(win)
    base = cache.get(cfg.omega_star)
    p = perturbation_vector(cfg, win) if cfg.epsilon > 0 else np.zeros(win.size)
    u0 = LatticeField(win, base.phi + p)
    st0 = decompose(u0, 0.0, cfg.omega_star, cache=cache)
    potential = cache.get(st0.omega).phi ** 6 if cfg.integrator == "strang_frozen" else None
    mask = {"width": cfg.mask_width, "strength": cfg.mask_strength} if cfg.mask_width > 0 else None
    h = cfg.dt * cfg.stride
    T = cfg.T
    dyadic = sorted({_snap(T / 2**k, h) for k in range(5)} - {0.0})
    n_tail = 10
    tail = sorted({_snap(T * (1 - cfg.tail_fraction * j / n_tail), h) for j in range(n_tail + 1)})
    tracker = Tracker(win, st0.theta_unwrapped, st0.omega, cache=cache, keep=set(dyadic) | set(tail)) if cfg.track else None
    hooks = [tracker] if tracker else []
    nsteps = int(round(T / cfg.dt))
    traj, trace = evolve(u0, T, cfg.dt, stride=cfg.stride, store_stride=nsteps, hooks=hooks, potential=potential,
                         mask=mask, probes=("mass", "energy", "l2", "l2_weighted_minus1"))
    b.write_text("trace.csv", trace.to_csv())
    m = trace.array("mass")
    E = trace.array("energy")
    b.summary.update(omega_star=cfg.omega_star, epsilon=cfg.epsilon, N=win.N, boundary=win.boundary.value,
                     integrator=traj.integrator, initial_theta=st0.theta_unwrapped, initial_omega=st0.omega,
                     mass_drift=float(np.max(np.abs(m / m[0] - 1.0))),
                     energy_drift=float(np.max(np.abs(E - E[0]))),
                     absorbing_mask=mask)
    b.write_text("final_state.csv", field_to_csv(traj.field(len(traj) - 1)))
    if tracker is None:
        return
    res = tracker.result()
    b.write_text("track.csv", res.to_csv())
    t = res.times
    om = res.array("omega")
    sel = t >= T * (1 - cfg.tail_fraction) - 1e-9
    om_plus = float(np.mean(om[sel]))
    om_std = float(np.std(om[sel]))
    scat = scattering_extract(res, dyadic)
    xi_T = scattering_extract(res, tail)
    final = xi_T.xi_plus[-1].values
    tail_res = max(float(np.linalg.norm(x.values - final)) for x in xi_T.xi_plus)
    b.write_json("scattering.json", scat.to_json())
    b.write_text("xi_plus.csv", field_to_csv(scat.final))
    succ = scat.successive_defects()
    rates = np.abs(res.array("rate_theta")) + np.abs(res.array("rate_omega"))
    eta = res.array("eta_l2wm1")
    bound = om ** (-1.0 / 3.0) * eta**2 + eta**7
    ok = bound > 0
    C45 = float(np.max(rates[ok] / bound[ok])) if np.any(ok) else math.nan
    b.summary.update(
        omega_plus=om_plus, omega_plus_std=om_std, log_omega_shift=abs(math.log(cfg.omega_star) - math.log(om_plus)),
        omega_shift=abs(om_plus - cfg.omega_star), xi_plus_norm=scat.xi_plus_norm, tail_residual_max=tail_res,
        dyadic_times=dyadic, cauchy_defects=succ,
        cauchy_ratios=[a / b_ if b_ > 0 else math.nan for a, b_ in zip(succ, succ[1:])],
        xi_l2_max=float(np.max(res.array("xi_l2"))),
        omega_total_variation=float(np.sum(np.abs(np.diff(np.log(om))))),
        rate_bound_C=C45, rate_mismatch=res.rate_mismatch(),
        detA_min=float(np.min(res.array("detA"))),
        XT_final=res.columns["XT_running"][-1],
    )
    b.data["track"] = res
    b.data["scattering"] = scat
    if cfg.rate_levels > 1:
        tracks = [res]
        for lvl in range(1, cfg.rate_levels):
            m_ = 2**lvl
            tr = Tracker(win, st0.theta_unwrapped, st0.omega, cache=cache)
            evolve(u0, T, cfg.dt / m_, stride=cfg.stride * m_, store_stride=nsteps * m_, hooks=[tr],
                   potential=potential, mask=mask, probes=())
            tracks.append(tr.result())
        ext = richardson_track(tracks)
        b.summary["rate_mismatch_extrapolated"] = ext.rate_mismatch()
        b.summary["rate_levels"] = cfg.rate_levels


RUNNERS = {
    "soliton_build": _soliton_build,
    "asymptotics": _asymptotics,
    "linear_estimates": _linear_estimates,
    "stability_run": _dynamics,
    "scattering": _dynamics,
}


def run_scenario(cfg: RunConfig | dict) -> ReportBundle:
    """Run one scenario, write its outputs and manifest, return the bundle."""
    if isinstance(cfg, dict):
        cfg = validate_config(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    b = ReportBundle(cfg.scenario, out)
    b.summary["scenario"] = cfg.scenario
    try:
        RUNNERS[cfg.scenario](cfg, b)
        emit_plot_data(b)
        b.write_json("summary.json", b.summary)
    except DNLSError as exc:
        b.status = "FAILED"
        if exc.args:
            exc.args = (f"[{cfg.scenario}] {exc.args[0]}",) + exc.args[1:]
        b.write_json("summary.json", b.summary)
        write_manifest(b, cfg, error=f"{type(exc).__name__}: {exc}")
        raise
    write_manifest(b, cfg)
    return b


def emit_plot_data(bundle: ReportBundle) -> list[Path]:
    """One tidy CSV per figure class present in the bundle's data."""
    d = bundle.data
    paths = []
    if "track" in d:
        r = d["track"]
        paths.append(bundle.write_text("plots/omega_vs_t.csv", _csv(["t", "omega"], zip(r.columns["t"], r.columns["omega"]))))
        paths.append(bundle.write_text("plots/xi_norms_vs_t.csv", _csv(
            ["t", "xi_l2", "xi_l2wm1"], zip(r.columns["t"], r.columns["xi_l2"], r.columns["xi_l2wm1"]))))
    if "strichartz" in d:
        rep = d["strichartz"]
        rows = [(T, rep.max_ratio(T, "stz"), rep.max_ratio(T, "kato")) for T in rep.T_list]
        paths.append(bundle.write_text("plots/strichartz_ratio_vs_T.csv", _csv(["T", "stz_ratio_max", "kato_ratio_max"], rows)))
    if "resolvent" in d:
        paths.append(bundle.write_text("plots/resolvent_norm_vs_lambda.csv", d["resolvent"].to_csv()))
    if "decay" in d:
        rows = []
        for om, (xs, lp, sl) in d["decay"].items():
            rows += [(int(x), float(v), sl, om) for x, v in zip(xs, lp)]
        paths.append(bundle.write_text("plots/profile_decay_vs_x.csv", _csv(["x", "log_phi", "fit_slope", "omega"], rows)))
    return paths
