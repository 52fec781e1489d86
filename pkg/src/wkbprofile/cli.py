"""Command-line entry point: ``wkbprofile <command> [--config PATH] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import profile_solver as ps
from .boundary_spectral import lopatinskii_scan, strictly_dissipative_check
from .char_variety import (
    eigen_structure,
    frequency_operators,
    group_velocity,
    sphere_points,
    velocity_bound,
    verify_lax,
)
from .errors import ConfigParse, WKBError
from .lattice_resonance import (
    LiftCache,
    box_directions,
    check_assumptions,
    enumerate_resonances,
    partition_frequency_sets,
    resonance_csv,
)
from .system_model import LinearizedSystem, linearize, system_from_dict

log = logging.getLogger("wkbprofile")

COMMANDS = ("analyze", "assumptions", "resonances", "gamma", "solve", "demo-euler", "verify")


@dataclass
class RunConfig:
    system: dict = field(default_factory=lambda: {"builtin": "euler2d"})
    seed: int = 0
    box_radius: int = 6
    harmonic_bound: int = 6
    res_tol: float = 1e-9
    C0: float | None = None
    identity_tol: float = 1e-10
    samples: dict = field(default_factory=lambda: {"analyze": 1000, "kl": 2000, "sphere": 2000, "velocity": 1000})
    small_divisor_radius: int = 40
    harmonics: int = 8
    resonant_box: int = 1
    grid: dict = field(default_factory=lambda: {"T": 0.5, "Ly": 1.0, "nt": 33, "ny": 16, "cfl": 1.0})
    epsilon: float = 0.1
    psi: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    forcing: list = field(default_factory=list)
    picard: dict = field(default_factory=lambda: {"tol": 1e-8, "max_iter": 50})
    out: str = "out"
    format: str = "csv"

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigParse(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for k, v in doc.items():
            default = getattr(cfg, k)
            if isinstance(default, dict) and isinstance(v, dict) and k != "system":
                merged = dict(default)
                merged.update(v)
                v = merged
            setattr(cfg, k, v)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if int(self.box_radius) < 1:
            raise ConfigParse("box_radius must be >= 1")
        if int(self.harmonic_bound) < 1 or int(self.harmonics) < 1:
            raise ConfigParse("harmonic bounds must be >= 1")
        for name in ("res_tol", "identity_tol", "epsilon"):
            if not float(getattr(self, name)) > 0:
                raise ConfigParse(f"{name} must be positive")
        if not float(self.picard.get("tol", 1e-8)) > 0:
            raise ConfigParse("picard.tol must be positive")
        if self.C0 is not None and not float(self.C0) > 0:
            raise ConfigParse("C0 must be positive")
        if self.format not in ("csv", "bin"):
            raise ConfigParse("format must be csv or bin")
        for key in ("T", "Ly", "nt", "ny"):
            if key not in self.grid:
                raise ConfigParse(f"grid.{key} is required")


def demo_config() -> RunConfig:
    """Euler defaults forced on the two boundary phases and one mixed-region direction."""
    cfg = RunConfig()
    cfg.forcing = [
        {"n": [1, 0], "amplitude": [0.01, 0.0], "t_center": 0.2, "t_width": 0.06, "t_on": 0.05,
         "y_center": 0.5, "y_width": 0.08},
        {"n": [0, 1], "amplitude": [0.0, 0.01], "t_center": 0.25, "t_width": 0.06, "t_on": 0.05,
         "y_center": 0.5, "y_width": 0.08},
        {"n": [7, -6], "amplitude": [0.005, 0.005], "t_center": 0.2, "t_width": 0.06, "t_on": 0.05,
         "y_center": 0.5, "y_width": 0.08},
    ]
    cfg.box_radius = 1
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigParse(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigParse("config must be a JSON object")
    return RunConfig.from_dict(doc)


# ----------------------------------------------------------------------------
# helpers

def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set)):
        items = sorted(x, key=repr) if isinstance(x, set) else x
        return [_jsonable(v) for v in items]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _check(name: str, value: Any, tolerance: Any, ok: bool) -> dict:
    return {"name": name, "value": value, "tolerance": tolerance, "pass": bool(ok)}


class Timer:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.times: dict[str, float] = {}

    def run(self, name: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.times[name] = time.perf_counter() - t0

    def attach(self, doc: dict) -> dict:
        if self.enabled:
            doc["timings"] = self.times
        return doc


def _system(cfg: RunConfig) -> LinearizedSystem:
    system = system_from_dict(cfg.system)
    return linearize(system)


def _euler_params(lin: LinearizedSystem):
    meta = getattr(lin.system, "meta", {}) or {}
    return meta.get("params") if lin.system.name == "euler2d" else None


# ----------------------------------------------------------------------------
# commands

def analyze_checks(lin: LinearizedSystem, n_samples: int, tol: float, seed: int) -> list[dict]:
    """Eigen-structure, projector and Lax identities over sampled frequencies."""
    from .euler2d import closed_form_tau

    params = _euler_params(lin)
    pts = sphere_points(lin.d, n_samples, seed)
    rng = np.random.default_rng(seed)
    eig_err = 0.0
    proj = {"partial_inverse": 0.0, "pitilde_annihilates": 0.0, "completeness": 0.0}
    lax = {"time": 0.0, "polarization": 0.0}
    for pt in pts:
        es = eigen_structure(lin, pt[:-1], pt[-1])
        if params is not None and lin.d == 2:
            ref = np.array(closed_form_tau(params, pt[0], pt[1]))
            eig_err = max(eig_err, float(np.max(np.abs(es.taus - ref)) / max(np.max(np.abs(ref)), 1e-300)))
        proj["completeness"] = max(proj["completeness"], float(np.linalg.norm(es.pis.sum(axis=0) - np.eye(lin.N))))
        k = int(rng.integers(lin.N))
        alpha = np.concatenate([[es.taus[k]], pt])
        pi, pit, Q = frequency_operators(lin, alpha)
        La = lin.L(alpha)
        Lt = lin.AdInv @ La
        proj["partial_inverse"] = max(proj["partial_inverse"], float(np.linalg.norm(Q @ La - (np.eye(lin.N) - pi))))
        proj["pitilde_annihilates"] = max(proj["pitilde_annihilates"], float(np.linalg.norm(pit @ Lt)))
        if abs(group_velocity(lin, es, k)[-1]) > 1e-3:
            rep = verify_lax(lin, es, k)
            for key, val in rep.items():
                lax[key] = max(lax.get(key, 0.0), val)
    checks = []
    if params is not None:
        checks.append(_check("eigenvalue_closed_form", eig_err, 1e-12, eig_err <= 1e-12))
    for key, val in proj.items():
        checks.append(_check(f"projector_{key}", val, tol, val <= tol))
    for key, val in lax.items():
        checks.append(_check(f"lax_{key}", val, tol, val <= tol))
    return checks


def cmd_analyze(cfg: RunConfig, out: Path, timer: Timer) -> int:
    try:
        lin = _system(cfg)
        checks = timer.run("analyze", analyze_checks, lin, int(cfg.samples.get("analyze", 1000)),
                           float(cfg.identity_tol), int(cfg.seed))
    except WKBError as exc:
        checks = [_check("eigen_structure", str(exc), None, False)]
    doc = timer.attach({"checks": checks})
    _write_json(out / "verify.json", doc)
    return 0 if all(c["pass"] for c in checks) else 1


def cmd_assumptions(cfg: RunConfig, out: Path, timer: Timer) -> int:
    try:
        lin = linearize(system_from_dict(cfg.system)) if cfg.system.get("builtin") != "euler2d" else _euler_loose(cfg)
        rep = timer.run("assumptions", check_assumptions, lin, int(cfg.box_radius), cfg.C0, int(cfg.harmonic_bound),
                        int(cfg.samples.get("kl", 2000)), int(cfg.samples.get("sphere", 2000)),
                        int(cfg.small_divisor_radius), int(cfg.seed))
        checks = rep["checks"]
        params = _euler_params(lin)
        if params is not None and params.M < 1:
            from .euler2d import dissipative_margin

            E = np.array([params.v0, 0.0, params.u0])
            sd = strictly_dissipative_check(lin, lin.B, lin.system.symmetrizer, kernel_vector=E)
            exact = dissipative_margin(params)
            ok = sd["pass"] and abs(sd["margin"] - exact) <= 1e-12 * max(1.0, abs(exact))
            checks.append(_check("strictly_dissipative", {"margin": sd["margin"], "closed_form": exact}, 1e-12, ok))
    except WKBError as exc:
        checks = [_check("assumptions", f"{type(exc).__name__}: {exc}", None, False)]
    doc = timer.attach({"checks": checks})
    _write_json(out / "assumptions.json", doc)
    return 0 if all(c["pass"] for c in checks) else 1


def _euler_loose(cfg: RunConfig) -> LinearizedSystem:
    """Euler system built without the subsonic precondition so that the report shows the failure."""
    from .euler2d import EulerParams, build_euler

    doc = dict(cfg.system)
    params = dict(doc.get("params", {}))
    try:
        p = EulerParams(**params)
    except TypeError as exc:
        raise ConfigParse(f"invalid euler2d params: {exc}") from exc
    system = build_euler(p, strict=False)
    if doc.get("B") is not None or doc.get("zetas") is not None or doc.get("equilibrium") is not None:
        system = system_from_dict(doc)
    return linearize(system)


def cmd_resonances(cfg: RunConfig, out: Path, timer: Timer) -> int:
    lin = _system(cfg)
    cache = LiftCache(lin)
    table = timer.run("enumerate", enumerate_resonances, lin, int(cfg.box_radius), int(cfg.harmonic_bound),
                      float(cfg.res_tol), cfg.C0, cache)
    (out / "resonances.csv").write_text(resonance_csv(table))
    incoming = [m for m in table.modes if m.cls == "incoming"]
    checks = []
    try:
        part = partition_frequency_sets(table, incoming)
        ok = True
        info = {k: sorted([list(map(list, [kk[0]])) + [kk[1]] for kk in v]) for k, v in part.items()}
    except WKBError as exc:
        ok, info = False, {"error": str(exc)}
    types = table.types()
    ns = table.non_self()
    checks.append(_check("partition_closure", None, None, ok))
    checks.append(_check("type2_count", int(np.sum(types[ns] == "2")) if ns.size else 0, 0,
                         not ns.size or not np.any(types[ns] == "2")))
    doc = timer.attach({"checks": checks, "partition": info, "C0": table.C0, "box_radius": table.box_radius,
                        "harmonic_bound": table.harmonic_bound, "rows": len(table), "non_self_rows": int(ns.size),
                        "near_misses": len(table.near_misses)})
    _write_json(out / "partition.json", doc)
    return 0 if all(c["pass"] for c in checks) else 1


def cmd_gamma(cfg: RunConfig, out: Path, timer: Timer) -> int:
    """Interaction coefficients for every non-self resonance; Euler adds the closed-form comparison."""
    from .euler2d import euler_gamma

    lin = _system(cfg)
    table = timer.run("enumerate", enumerate_resonances, lin, int(cfg.box_radius), int(cfg.harmonic_bound),
                      float(cfg.res_tol), cfg.C0)
    params = _euler_params(lin)
    rows = ["p_n,p_lambda,q_n,q_lambda,r_n,gamma_pq,gamma_pr,closed_form_abs"]
    worst_cancel = 0.0
    worst_rel = 0.0
    for i in table.non_self():
        p, q, r = table.modes[table.ip[i]], table.modes[table.iq[i]], table.modes[table.ir[i]]
        lp, lq = int(table.lp[i]), int(table.lq[i])
        gpq, gpr = complex(table.gamma_pq[i]), complex(table.gamma_pr[i])
        worst_cancel = max(worst_cancel, abs(gpq + gpr) / max(abs(gpq), 1e-300))
        cf = ""
        if params is not None and lin.m == 2 and p.branch == q.branch == r.branch == 1:
            a = (lp * p.n0[0], lp * p.n0[1])
            b = (lq * q.n0[0], lq * q.n0[1])
            ref = euler_gamma(params, a[0], a[1], b[0], b[1])
            cf = repr(abs(ref))
            worst_rel = max(worst_rel, abs(abs(gpq) - abs(ref)) / max(abs(ref), 1e-300))
        rows.append(f"{';'.join(map(str, p.n0))},{lp},{';'.join(map(str, q.n0))},{lq},"
                    f"{';'.join(map(str, r.n0))},{gpq.real!r},{gpr.real!r},{cf}")
    (out / "gamma.csv").write_text("\n".join(rows) + "\n")
    checks = [_check("cancellation", worst_cancel, 1e-10, worst_cancel <= 1e-10)]
    if params is not None:
        checks.append(_check("closed_form_magnitude", worst_rel, 1e-8, worst_rel <= 1e-8))
    _write_json(out / "gamma.json", timer.attach({"checks": checks}))
    return 0 if all(c["pass"] for c in checks) else 1


# ----------------------------------------------------------------------------
# solve

def build_grid(cfg: RunConfig, modes, Vstar: float) -> ps.SlowGrid:
    g = cfg.grid
    T, Ly, nt, ny = float(g["T"]), float(g["Ly"]), int(g["nt"]), int(g["ny"])
    Xd = float(g.get("Xd") or 2.0 * Vstar * T)
    cfl = float(g.get("cfl", 1.0))
    dt = T / (nt - 1)
    nx = g.get("nx")
    if nx is None:
        speed = min((abs(m.dxitau) for m in modes), default=1.0)
        nx = int(math.ceil(Xd / (cfl * speed * dt) - 1e-9)) + 1
        Xd = max(Xd, 2.0 * Vstar * T)
    return ps.SlowGrid(T, Ly, Xd, nt, ny, int(nx))


def _write_fields(out: Path, field: ps.ProfileField, tag: str, fmt: str) -> list[str]:
    grid = field.grid
    names = []
    if fmt == "bin":
        arr = np.stack([field.sigma.real, field.sigma.imag], axis=-1).astype("<f8")
        name = f"fields_{tag}.bin"
        (out / name).write_bytes(arr.tobytes(order="C"))
        sidecar = {"file": name, "shape": list(arr.shape), "order": ["mode", "lambda", "t", "y", "x_d", "re_im"],
                   "dtype": "float64 little-endian", "lambda_values": list(range(1, field.harmonics + 1)),
                   "modes": [{"n0": list(m.n0), "root_index": m.root_index, "xi0": m.xi0} for m in field.modes],
                   "grid": {"T": grid.T, "Ly": grid.Ly, "Xd": grid.Xd, "nt": grid.nt, "ny": grid.ny, "nx": grid.nx}}
        _write_json(out / f"fields_{tag}.json", sidecar)
        return [name]
    t, y, x = np.meshgrid(grid.t, grid.y, grid.x, indexing="ij")
    for k, m in enumerate(field.modes):
        name = f"fields_{tag}_{'_'.join(map(str, m.n0))}_{m.root_index}.csv".replace("-", "m")
        with open(out / name, "w") as fh:
            fh.write("t,y,xd,lambda,re,im\n")
            for lam in range(1, field.harmonics + 1):
                s = field.sigma[k, lam - 1]
                block = np.column_stack([t.ravel(), y.ravel(), x.ravel(), np.full(s.size, lam),
                                         s.real.ravel(), s.imag.ravel()])
                np.savetxt(fh, block, delimiter=",", fmt=["%.17g", "%.17g", "%.17g", "%d", "%.17g", "%.17g"])
        names.append(name)
    return names


def run_solve(cfg: RunConfig, out: Path, timer: Timer, threads: int | None = None) -> int:
    lin = _system(cfg)
    cache = LiftCache(lin)
    L = int(cfg.harmonics)
    checks: list[dict] = []
    diag: dict[str, Any] = {}
    Vstar = timer.run("velocity_bound", velocity_bound, lin, int(cfg.samples.get("velocity", 1000)), int(cfg.seed))
    diag["velocity_bound"] = Vstar

    table = timer.run("enumerate", enumerate_resonances, lin, int(cfg.resonant_box), int(cfg.harmonic_bound),
                      float(cfg.res_tol), cfg.C0, cache)
    incoming = [m for m in table.modes if m.cls == "incoming"]
    part = partition_frequency_sets(table, incoming)
    box = set(box_directions(lin.m, int(cfg.resonant_box)))
    res_modes = [m for m in table.modes if m.key in part["F_inc_res"] and m.n0 in box]
    res_modes.sort(key=lambda m: m.key)

    forced_dirs = sorted({ps.normalize_direction(f["n"])[0] for f in cfg.forcing})
    forced_incoming = [m for n0 in forced_dirs for m in cache(n0).modes if m.cls == "incoming"]
    grid = build_grid(cfg, res_modes + forced_incoming, Vstar)
    diag["grid"] = {"T": grid.T, "Ly": grid.Ly, "Xd": grid.Xd, "nt": grid.nt, "ny": grid.ny, "nx": grid.nx}

    G = ps.gaussian_forcing(grid, cfg.forcing, lin.B.shape[0]) if cfg.forcing else ps.BoundaryForcing({}, grid)
    G.check_y_support()
    provider = lambda n0: (cache(n0).dec, cache(n0).modes)  # noqa: E731
    traces = timer.run("traces", ps.boundary_traces, provider, lin.B, G, L)
    res_keys = {m.key for m in res_modes}
    H_res, h_non = traces.split(res_keys)
    diag["trace_energy"] = traces.energy(grid)
    diag["forcing_energy"] = G.norm2()

    cs = ps.build_coupling(lin, res_modes, table, L)
    H = np.zeros((len(res_modes), L, grid.nt, grid.ny), complex)
    for k, m in enumerate(res_modes):
        if m.key in H_res:
            H[k] = H_res[m.key]
    pic = timer.run("resonant", ps.solve_resonant_system, H, cs, grid, Vstar,
                    float(cfg.picard.get("tol", 1e-8)), int(cfg.picard.get("max_iter", 50)))
    U = pic.field
    diag["picard"] = {"iterations": pic.iterations, "updates": pic.updates, "halvings": pic.halvings}
    fs = ps.finite_speed_check(U, Vstar)
    checks.append(_check("finite_speed_resonant", fs["leakage"], fs["tolerance"], fs["pass"]))
    en = ps.energy_diagnostic(U, U, None)
    diag["energy_trace"] = en["energy"]
    checks.append(_check("energy_constant_resonant", en["C"], None, en["pass"]))
    zero = max((float(np.max(np.abs(ps.zero_harmonic_source(cs, U.sigma[..., i])))) for i in range(grid.nx)),
               default=0.0)
    checks.append(_check("zero_mean", zero, 1e-12, zero <= 1e-12))

    burgers_modes = [traces.modes[k] for k in sorted(h_non)]

    def solve_one(mode):
        g = ps.gamma_base(lin, mode.E, mode.zeta, mode.E, mode.pitilde, mode.E)[0]
        return ps.solve_burgers_mode(mode, g, h_non[mode.key], grid, L,
                                     float(cfg.picard.get("tol", 1e-8)), int(cfg.picard.get("max_iter", 50)))

    with ThreadPoolExecutor(max_workers=threads or os.cpu_count() or 1) as pool:
        burgers = timer.run("burgers", lambda: list(pool.map(solve_one, burgers_modes)))
    for mode, f in zip(burgers_modes, burgers):
        fs = ps.finite_speed_check(f, Vstar)
        checks.append(_check(f"finite_speed_burgers_{mode.n0}_{mode.root_index}", fs["leakage"], fs["tolerance"],
                             fs["pass"]))

    ev = ps.assemble_evanescent(G, provider, lin.B, chi_support=0.25 * grid.Xd, psi=np.asarray(cfg.psi, float))
    for n, rep in ev.decay_report().items():
        checks.append(_check(f"evanescent_decay_{n}", rep["fitted"], rep["mu"], rep["pass"]))

    parts = ([U] if res_modes else []) + burgers
    if parts or ev.traces:
        try:
            u0 = ps.assemble_leading_profile(parts, ev, float(cfg.epsilon), lin.zetas, x_indices=[0],
                                            aliasing_guard=None)[..., 0]
            resid = ps.boundary_residual(u0, lin.B, G, lin.zetas, float(cfg.epsilon))
            scale = max(math.sqrt(G.norm2()), 1e-300)
            checks.append(_check("boundary_residual", resid, 1e-8 * max(scale, 1.0), resid <= 1e-8 * max(scale, 1.0)))
        except WKBError as exc:
            checks.append(_check("boundary_residual", f"{type(exc).__name__}: {exc}", None, False))

    files = []
    if res_modes:
        files += _write_fields(out, U, "resonant", cfg.format)
    for mode, f in zip(burgers_modes, burgers):
        files += _write_fields(out, f, f"burgers_{'_'.join(map(str, mode.n0))}_{mode.root_index}", cfg.format)
    diag["files"] = files
    diag["resonant_modes"] = [{"n0": list(m.n0), "root_index": m.root_index, "xi0": m.xi0} for m in res_modes]
    diag["burgers_modes"] = [{"n0": list(m.n0), "root_index": m.root_index, "xi0": m.xi0} for m in burgers_modes]
    doc = timer.attach({"checks": checks, **diag})
    _write_json(out / "diagnostics.json", doc)
    return 0 if all(c["pass"] for c in checks) else 1


def cmd_solve(cfg: RunConfig, out: Path, timer: Timer, threads: int | None = None) -> int:
    try:
        return run_solve(cfg, out, timer, threads)
    except WKBError as exc:
        _write_json(out / "diagnostics.json",
                    timer.attach({"checks": [_check("solve", f"{type(exc).__name__}: {exc}", None, False)]}))
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def cmd_verify(cfg: RunConfig, out: Path, timer: Timer) -> int:
    codes = {
        "analyze": cmd_analyze(cfg, out, timer),
        "assumptions": cmd_assumptions(cfg, out, timer),
        "resonances": cmd_resonances(cfg, out, timer),
    }
    _write_json(out / "summary.json", timer.attach({"checks": [_check(k, v, 0, v == 0) for k, v in codes.items()]}))
    return 0 if not any(codes.values()) else 1


# ----------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wkbprofile", description="Leading WKB profiles for hyperbolic boundary problems")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", help="output directory (default from config, else ./out)")
    ap.add_argument("--format", choices=("csv", "bin"), help="field output format")
    ap.add_argument("--seed", type=int, help="seed for sampled sweeps")
    ap.add_argument("--box", type=int, help="lattice box radius")
    ap.add_argument("--harmonics", type=int, help="harmonic bound for the resonance search")
    ap.add_argument("--tol", type=float, help="resonance tolerance")
    ap.add_argument("--threads", type=int, help="worker threads for independent Burgers modes")
    ap.add_argument("--timings", action="store_true", help="record wall-clock timings in reports")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = demo_config() if args.command == "demo-euler" and args.config is None else load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.box is not None:
            cfg.box_radius = args.box
        if args.harmonics is not None:
            cfg.harmonic_bound = args.harmonics
        if args.tol is not None:
            cfg.res_tol = args.tol
        if args.format is not None:
            cfg.format = args.format
        cfg.validate()
    except ConfigParse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    timer = Timer(args.timings)
    try:
        if args.command == "analyze":
            code = cmd_analyze(cfg, out, timer)
        elif args.command == "assumptions":
            code = cmd_assumptions(cfg, out, timer)
        elif args.command == "resonances":
            code = cmd_resonances(cfg, out, timer)
        elif args.command == "gamma":
            code = cmd_gamma(cfg, out, timer)
        elif args.command == "verify":
            code = cmd_verify(cfg, out, timer)
        else:
            code = cmd_solve(cfg, out, timer, args.threads)
    except WKBError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if code:
        print(f"{args.command}: one or more checks failed (see {out})", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
