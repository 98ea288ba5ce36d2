"""Command line driver: ``floquet-if <command> --config run.yaml``.

Every command writes CSV artifacts plus ``metadata.json`` into the output
directory.  CSV bodies depend only on the configuration, so reruns are
byte-identical; the timestamp lives in the metadata file alone.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from . import kernels
from ._version import __version__
from .bath import correlation_samples, fit_exponentials, ohmic_bath
from .benchmark import (compare_trajectories, expectations, magnus_effective_model,
                        redfield_propagate)
from .config import ConfigError, RunConfig, load_config
from .core import ComplexTensor
from .embedding import (IFCache, PseudomodeSpec, build_environment_generator,
                        build_semigroup_if, cache_key, if_diagnostics)
from .engine import (TrotterGrid, assemble_floquet_propagator, assemble_step_propagators,
                     floquet_spectrum, propagate_quench, steady_state, write_csv,
                     write_spectrum_csv, write_trajectory_csv)
from .errors import FloquetIFError
from .models import SX, SY, SZ, ground_state, ket_density, singlet, single_spin, two_spin
from .observables import (concurrence, concurrence_map, heat_current_density,
                          period_averaged_concurrence, spectral_analysis,
                          steady_two_time_correlation, write_concurrence_csv, write_heat_csv,
                          write_spectral_csv)

log = logging.getLogger("floquet_if")

ENV_OUT = "FLOQUET_IF_OUT"
ENV_WORKERS = "FLOQUET_IF_WORKERS"

COMMANDS = ("fit-bath", "build-if", "quench", "spectrum", "steady", "heat-current",
            "total-current-sweep", "concurrence-map", "spectral-analysis", "benchmark")


# -- model and IF construction (module level so worker processes can unpickle them) --------

def make_model(system: dict, omega_d=None, eps=None):
    wd = system["omega_d"] if omega_d is None else omega_d
    ed = system["eps"] if eps is None else eps
    if system["model"] == "single-spin":
        return single_spin(system["omega"], system["drive"], ed, wd, system["phase"])
    return two_spin(system["omega"], ed, wd, system["phase"], sector=system["sector"])


def initial_state(system: dict, model):
    name = system["initial"]
    d = model.d
    if name == "ground":
        return ground_state(model.H_static)
    if system["model"] == "single-spin":
        if name in ("up", "down"):
            return ket_density(1, 0) if name == "up" else ket_density(0, 1)
        raise ConfigError("system.initial", f"{name!r} is not a single-spin state")
    if name in ("00", "up"):
        amps = np.eye(d)[0]
    elif name in ("11", "down"):
        amps = np.eye(d)[d - 1]
    elif name == "singlet" and d == 4:
        amps = singlet()
    else:
        raise ConfigError("system.initial", f"{name!r} is not available in this sector")
    return ket_density(*amps)


@dataclass(frozen=True, eq=False)
class IFBuilder:
    """Picklable dt -> SemiGroupIF factory backed by the on-disk cache."""

    fit: object
    pm: PseudomodeSpec
    S: np.ndarray
    d: int
    cache_root: str | None

    def key(self, dt):
        return cache_key(dict(self.fit.bath), self.fit, self.pm, dt, self.S)

    def __call__(self, dt):
        cache = IFCache(self.cache_root) if self.cache_root else None
        key = self.key(dt)
        if cache is not None:
            sg = cache.lookup(key)
            if sg is not None:
                return sg
        gen = build_environment_generator(self.fit, self.pm, self.S, self.d)
        sg = build_semigroup_if(gen, dt)
        if cache is not None:
            cache.store(key, sg)
        return sg


def total_current_point(omega_d, system, builder, dt_target, tau_max, heat, grid_opts,
                        bath_cfg):
    """(total, continuous, delta, flag, message) at one drive frequency."""
    try:
        bath = ohmic_bath(bath_cfg["alpha"], bath_cfg["omega_c"], bath_cfg["temperature"])
        model = make_model(system, omega_d=omega_d)
        grid = TrotterGrid.for_model(model, dt_target)
        fp = assemble_step_propagators(builder(grid.dt), model, grid, grid_opts["substeps"],
                                       grid_opts["magnus_order"])
        ss = steady_state(fp)
        corr = steady_two_time_correlation(fp, ss, _tau_grid(tau_max, grid),
                                           decay_threshold=grid_opts["decay_threshold"])
        omegas = np.linspace(heat["omega_max"] / heat["n_omega"], heat["omega_max"],
                             heat["n_omega"])
        h = heat_current_density(corr, bath, omegas, n_max=heat["n_max"])
        cont = float(np.trapezoid(h.continuous, omegas))
        return h.total, cont, float(h.delta_weights.sum()), 0, ""
    except Exception as exc:  # per-point failures are flagged, not fatal
        return float("nan"), float("nan"), float("nan"), 1, f"{type(exc).__name__}: {exc}"


def _tau_grid(tau_max, grid):
    return grid.period * max(1, int(round(tau_max / grid.period)))


# -- run context ----------------------------------------------------------------------------

class Run:
    def __init__(self, cfg: RunConfig, out: Path, workers: int, use_cache: bool):
        self.cfg = cfg
        self.out = out
        self.workers = workers
        self.use_cache = use_cache and cfg.cache.enabled
        self.artifacts = []
        self.extra = {}
        self._fit = None

    @property
    def c(self):
        return self.cfg.to_dict()

    @property
    def bath(self):
        b = self.cfg.bath
        return ohmic_bath(b.alpha, b.omega_c, b.temperature)

    @property
    def fit(self):
        if self._fit is None:
            b = self.cfg.bath
            self._fit = fit_exponentials(self.bath, b.n_terms, window=b.window, refine=b.refine,
                                         max_error=b.max_error)
        return self._fit

    def model(self, **kw):
        return make_model(self.c["system"], **kw)

    def builder(self, model):
        b = self.cfg.bath
        pm = PseudomodeSpec.uniform(b.n_terms, b.cutoff, b.depth)
        root = self.cfg.cache.path if self.use_cache else None
        return IFBuilder(self.fit, pm, np.array(model.S), model.d, root)

    def propagator(self, model, dt_target=None):
        g = self.cfg.grid
        grid = TrotterGrid.for_model(model, g.dt if dt_target is None else dt_target)
        sg = self.builder(model)(grid.dt)
        return assemble_step_propagators(sg, model, grid, g.substeps, g.magnus_order)

    def mapper(self):
        if self.workers <= 1:
            return map, None
        pool = ProcessPoolExecutor(max_workers=self.workers)
        return pool.map, pool

    def csv(self, name, header, rows):
        path = self.out / name
        write_csv(path, header, rows)
        self.artifacts.append(name)
        return path

    def track(self, name):
        self.artifacts.append(name)
        return self.out / name

    def write_metadata(self, command):
        g = self.cfg.grid
        meta = {
            "command": command,
            "code_version": __version__,
            "kernel_backend": kernels.BACKEND,
            "config": self.c,
            "fit_hash": self._fit.content_hash() if self._fit is not None else None,
            "fit_max_error": self._fit.max_error if self._fit is not None else None,
            "tolerances": {
                "expm": 1e-12,
                "eig_condition_threshold": self.cfg.spectral.condition_threshold,
                "steady_degeneracy": 1e-8,
                "decay_threshold": g.decay_threshold,
                "positivity": self.cfg.spectral.positivity_tol,
                "redfield_trace_drift": 1e-6,
            },
            "methods": {
                "trotter": "symmetric split, system channel by Magnus order "
                           f"{g.magnus_order} with {g.substeps} substeps per half step",
                "redfield": "time-local (Redfield-II), no secular approximation, "
                            "closed-form kernel per exponential term, RK4",
            },
            "artifacts": {name: _sha256(self.out / name) for name in sorted(self.artifacts)},
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        meta.update(self.extra)
        (self.out / "metadata.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")


def _sha256(path):
    h = hashlib.sha256()
    p = Path(path)
    if p.is_dir():
        for f in sorted(p.rglob("*")):
            if f.is_file():
                h.update(f.read_bytes())
    else:
        h.update(p.read_bytes())
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def _observables(model):
    if model.d == 2:
        return {"sx": SX, "sy": SY, "sz": SZ}
    return {"s": np.array(model.S)}


def _state_rows(model, times, states):
    obs = _observables(model)
    cols = {k: np.einsum("ij,nji->n", op, states).real for k, op in obs.items()}
    header = ["t"] + list(cols)
    if model.d > 2:
        header.append("concurrence")
        cols["concurrence"] = np.array([concurrence(r) for r in model.lift_state(states)])
    return header, zip(times, *cols.values())


# -- commands ---------------------------------------------------------------------------------

def cmd_fit_bath(run: Run):
    fit = run.fit
    fit.save(run.track("fit.txt"))
    t = np.linspace(0, fit.window, 401)
    exact = correlation_samples(run.bath, t)
    approx = fit(t)
    run.csv("correlation.csv", ["t", "re_c", "im_c", "re_fit", "im_fit", "abs_error"],
            zip(t, exact.real, exact.imag, approx.real, approx.imag, np.abs(exact - approx)))


def cmd_build_if(run: Run):
    model = run.model()
    grid = TrotterGrid.for_model(model, run.cfg.grid.dt)
    builder = run.builder(model)
    sg = builder(grid.dt)
    (run.out / "if").mkdir(exist_ok=True)
    for name, arr in (("q", sg.q), ("v_l", sg.v_l), ("v_r", sg.v_r)):
        ComplexTensor(arr).save(run.out / "if" / f"{name}.fift")
    run.track("if")
    diag = if_diagnostics(sg)
    sv = diag.pop("singular_values")
    run.csv("if_singular_values.csv", ["index", "singular_value"],
            ((str(i), s) for i, s in enumerate(sv)))
    run.extra["if_diagnostics"] = diag
    run.extra["cache_key"] = builder.key(grid.dt)


def cmd_quench(run: Run):
    model = run.model()
    fp = run.propagator(model)
    traj = propagate_quench(fp, initial_state(run.c["system"], model), run.cfg.grid.n_steps)
    header, rows = _state_rows(model, traj.times, traj.states)
    run.csv("trajectory.csv", header, rows)


def cmd_spectrum(run: Run):
    fp = assemble_floquet_propagator(run.propagator(run.model()))
    write_spectrum_csv(run.track("spectrum.csv"), floquet_spectrum(fp))
    run.extra["spectrum"] = {"condition": fp.spectrum.condition,
                             "degenerate": fp.spectrum.degenerate}


def cmd_steady(run: Run):
    model = run.model()
    fp = run.propagator(model)
    ss = steady_state(fp)
    times = fp.grid.dt * np.arange(fp.M)
    header, rows = _state_rows(model, times, ss.micromotion)
    run.csv("micromotion.csv", header, rows)
    avg = {k: float(np.einsum("ij,nji->n", op, ss.micromotion).real.mean())
           for k, op in _observables(model).items()}
    if model.d > 2:
        avg["concurrence"] = period_averaged_concurrence(model, ss)
    run.extra["period_average"] = avg
    run.extra["steady_diagnostics"] = ss.diagnostics


def _heat(run: Run, model):
    fp = run.propagator(model)
    ss = steady_state(fp)
    corr = steady_two_time_correlation(fp, ss, _tau_grid(run.cfg.grid.tau_max, fp.grid),
                                       decay_threshold=run.cfg.grid.decay_threshold)
    h = run.cfg.heat
    omegas = np.linspace(h.omega_max / h.n_omega, h.omega_max, h.n_omega)
    return heat_current_density(corr, run.bath, omegas, n_max=h.n_max), corr


def cmd_heat_current(run: Run):
    hcs, corr = _heat(run, run.model())
    write_heat_csv(run.track("heat_density.csv"), run.track("heat_delta.csv"), hcs)
    run.extra["total_current"] = hcs.total
    run.extra["correlation_diagnostics"] = corr.diagnostics


def _require(grid, name):
    if not grid:
        raise ConfigError(name, "this command needs a non-empty grid")
    return grid


def cmd_total_current_sweep(run: Run):
    omega_ds = _require(run.cfg.sweep.omega_d, "sweep.omega_d")
    c = run.c
    work = partial(total_current_point, system=c["system"], builder=run.builder(run.model()),
                   dt_target=run.cfg.grid.dt, tau_max=run.cfg.grid.tau_max, heat=c["heat"],
                   grid_opts=c["grid"], bath_cfg=c["bath"])
    run.fit  # fit once in the parent; workers receive it through the builder
    mapper, pool = run.mapper()
    try:
        results = list(mapper(work, omega_ds))
    finally:
        if pool is not None:
            pool.shutdown()
    run.csv("total_current.csv", ["omega_d", "total", "continuous", "delta", "flag"],
            ((wd, r[0], r[1], r[2], str(r[3])) for wd, r in zip(omega_ds, results)))
    run.extra["failures"] = {repr(float(wd)): r[4] for wd, r in zip(omega_ds, results) if r[3]}


def cmd_concurrence_map(run: Run):
    omega_ds = _require(run.cfg.sweep.omega_d, "sweep.omega_d")
    eps_ds = _require(run.cfg.sweep.eps, "sweep.eps")
    builder = run.builder(run.model())
    factory = partial(_factory, run.c["system"])
    mapper, pool = run.mapper()
    try:
        cmap = concurrence_map(omega_ds, eps_ds, builder, factory, run.cfg.grid.dt,
                               mapper=mapper)
    finally:
        if pool is not None:
            pool.shutdown()
    write_concurrence_csv(run.track("concurrence_map.csv"), cmap)
    run.extra["failures"] = cmap.diagnostics["failures"]


def _factory(system, omega_d, eps):
    return make_model(system, omega_d=omega_d, eps=eps)


def cmd_spectral_analysis(run: Run):
    model = run.model().undriven()
    sg = run.builder(model)(run.cfg.grid.dt)
    sp = run.cfg.spectral
    sa = spectral_analysis(sg, model, initial_state(run.c["system"], model), n_scan=sp.n_scan,
                           condition_threshold=sp.condition_threshold,
                           positivity_tol=sp.positivity_tol, substeps=run.cfg.grid.substeps)
    write_spectral_csv(run.track("spectral_modes.csv"), sa)
    run.extra["spectral_diagnostics"] = sa.diagnostics


def cmd_benchmark(run: Run):
    model = run.model()
    if model.d != 2:
        raise ConfigError("system.model", "the Redfield benchmark needs the single-spin model")
    rho0 = initial_state(run.c["system"], model)
    b = run.cfg.benchmark
    fp = run.propagator(model)
    n = int(np.ceil(b.t_final / fp.grid.dt - 1e-12))
    exact = propagate_quench(fp, rho0, n)
    em = magnus_effective_model(model)
    approx = redfield_propagate(em, run.bath, rho0, b.t_final, b.dt_me, fit=run.fit)
    obs = _observables(model)
    ea, ra = expectations(exact, obs), expectations(approx, obs)
    write_trajectory_csv(run.track("exact_trajectory.csv"), ea[0], ea[1])
    write_trajectory_csv(run.track("redfield_trajectory.csv"), ra[0], ra[1])
    metrics = compare_trajectories(ea, ra)
    run.csv("benchmark_metrics.csv", ["observable", "max_abs_dev", "mean_abs_dev"],
            ((k, v["max"], v["mean"]) for k, v in metrics.items()))
    run.extra["omega_eff"] = em.omega_eff


HANDLERS = {
    "fit-bath": cmd_fit_bath,
    "build-if": cmd_build_if,
    "quench": cmd_quench,
    "spectrum": cmd_spectrum,
    "steady": cmd_steady,
    "heat-current": cmd_heat_current,
    "total-current-sweep": cmd_total_current_sweep,
    "concurrence-map": cmd_concurrence_map,
    "spectral-analysis": cmd_spectral_analysis,
    "benchmark": cmd_benchmark,
}


def build_parser():
    p = argparse.ArgumentParser(prog="floquet-if",
                                description="Floquet influence-functional simulator")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", help=f"output directory (env {ENV_OUT}, else output.directory)")
    p.add_argument("--workers", type=int,
                   help=f"sweep worker processes (env {ENV_WORKERS}, default: all cores)")
    p.add_argument("--no-cache", action="store_true", help="do not read or write the IF cache")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_workers(arg):
    if arg is not None:
        n = arg
    elif os.environ.get(ENV_WORKERS):
        try:
            n = int(os.environ[ENV_WORKERS])
        except ValueError:
            raise ConfigError(ENV_WORKERS, "must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("--workers", "must be >= 1")
    return n


def run(command, config_path, out=None, workers=None, use_cache=True) -> int:
    cfg = load_config(config_path)
    out_dir = Path(out or os.environ.get(ENV_OUT) or cfg.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.output.directory = str(out_dir)
    r = Run(cfg, out_dir, resolve_workers(workers), use_cache)
    HANDLERS[command](r)
    r.write_metadata(command)
    failures = r.extra.get("failures")
    if failures:
        log.warning("%d sweep point(s) failed; see metadata.json", len(failures))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run(args.command, args.config, args.out, args.workers, not args.no_cache)
    except FloquetIFError as exc:
        print(f"floquet-if: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
