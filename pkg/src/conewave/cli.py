"""Command-line driver.

Usage::

    conewave <command> --config run.json [--out DIR] [--threads K] [--verbose]

Every command writes ``<out>/<command>.json`` (also printed on stdout) plus
tensor artifacts.  Exit codes: 0 ok, 1 computational failure, 2 bad config.
Errors are reported as JSON ``{"code", "message", ...}``.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io, kernels
from .besov import (BesovError, BesovParams, besov_record, make_lattice, make_partition, mixed_norm, norm_continuous,
                    norm_discrete)
from .cone import ConeError, parse_cone
from .frames import (FrameError, bupu_coefficients, frame_ratio, make_bupu, make_wellspread, reconstruct,
                     sample_coefficients)
from .oracle import OracleError, TestSignalSpec, make_test_signal
from .spectral import Spectrum, default_node_step, node_grid
from .transform import TransformError, analyze, default_h_step, make_wavelet

log = logging.getLogger("conewave")

COMMANDS = ("cone-info", "wavelet-build", "transform", "besov", "lattice", "frame-bounds", "reconstruct",
            "selftest")
METHODS = ("T1-neumann", "T2-neumann", "frame-cg")

DEFAULTS = {
    "cone": None,
    "grid": {"radius": 2.0, "refine": 1},
    "wavelet": {"sharpness": 1.0},
    "besov": {"p": 2.0, "q": 2.0, "s": 0.0},
    "lattice": {"delta": 0.5, "R": 2.0, "extent": 2.0},
    "sampling": {"epsilon": 0.5, "beta": 0.5, "extent": 6.0, "mode": "nyquist", "epsilons": None},
    "method": "T1-neumann",
    "iteration": {"max_iter": 100, "tol": 1e-10},
    "seeds": [0],
    "signal": {"kind": "test", "path": None, "n_bumps": 3, "radius": 0.6},
    "threads": 1,
    "selftest": {"criteria": None, "cones": None},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated run configuration; ``s_prime`` is derived, never read."""

    cone: object
    grid: dict
    wavelet: dict
    besov: BesovParams
    lattice: dict
    sampling: dict
    method: str
    iteration: dict
    seeds: list
    signal: dict
    threads: int
    selftest: dict
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = copy.deepcopy(DEFAULTS)
        for k, v in d.items():
            if isinstance(DEFAULTS[k], dict):
                if not isinstance(v, dict):
                    raise ConfigError(f"{k!r} must be an object")
                bad = set(v) - set(DEFAULTS[k])
                if k == "besov" and "s_prime" in v:
                    raise ConfigError("s_prime is derived from (p, q, s) and cannot be set")
                if bad:
                    raise ConfigError(f"unknown keys in {k!r}: {sorted(bad)}")
                cfg[k].update(v)
            else:
                cfg[k] = v
        if not isinstance(cfg["cone"], str):
            raise ConfigError("'cone' must be a cone string such as \"orthant:r=2\" or \"spd2\"")
        try:
            cone = parse_cone(cfg["cone"])
        except ConeError as exc:
            raise ConfigError(str(exc)) from None
        b = cfg["besov"]
        try:
            params = BesovParams.for_cone(cone, _num(b, "p"), _num(b, "q"), _num(b, "s"))
        except BesovError as exc:
            raise ConfigError(str(exc)) from None
        _positive(cfg["grid"], "radius")
        if not isinstance(cfg["grid"]["refine"], int) or cfg["grid"]["refine"] < 1:
            raise ConfigError("grid.refine must be a positive integer")
        _positive(cfg["wavelet"], "sharpness")
        _positive(cfg["lattice"], "delta")
        if _num(cfg["lattice"], "extent") < 0:
            raise ConfigError("lattice.extent must be nonnegative")
        if _num(cfg["lattice"], "R") < 2:
            raise ConfigError("lattice.R must be >= 2")
        for key in ("epsilon", "beta", "extent"):
            _positive(cfg["sampling"], key)
        if cfg["sampling"]["mode"] not in ("nyquist", "act"):
            raise ConfigError("sampling.mode must be 'nyquist' or 'act'")
        eps = cfg["sampling"]["epsilons"]
        if eps is not None and (not isinstance(eps, list) or not eps or
                                not all(isinstance(e, (int, float)) and e > 0 for e in eps)):
            raise ConfigError("sampling.epsilons must be a non-empty list of positive numbers")
        if cfg["method"] not in METHODS:
            raise ConfigError(f"method must be one of {list(METHODS)}")
        if not isinstance(cfg["iteration"]["max_iter"], int) or cfg["iteration"]["max_iter"] < 1:
            raise ConfigError("iteration.max_iter must be a positive integer")
        _num(cfg["iteration"], "tol")
        seeds = cfg["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        sig = cfg["signal"]
        if sig["kind"] not in ("test", "zero", "file"):
            raise ConfigError("signal.kind must be 'test', 'zero' or 'file'")
        if sig["kind"] == "file" and not isinstance(sig["path"], str):
            raise ConfigError("signal.path is required for signal.kind = 'file'")
        if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
            raise ConfigError("threads must be a positive integer")
        st = cfg["selftest"]
        if st["criteria"] is not None and not (isinstance(st["criteria"], list) and
                                               all(isinstance(c, int) and 1 <= c <= 10 for c in st["criteria"])):
            raise ConfigError("selftest.criteria must be a list of criterion numbers 1-10")
        if st["cones"] is not None:
            if st["cones"] == "all":
                pass
            elif not isinstance(st["cones"], list):
                raise ConfigError("selftest.cones must be a list of cone strings or \"all\"")
            else:
                for c in st["cones"]:
                    try:
                        parse_cone(c)
                    except (ConeError, AttributeError):
                        raise ConfigError(f"bad cone string {c!r} in selftest.cones") from None
        return cls(cone, cfg["grid"], cfg["wavelet"], params, cfg["lattice"], cfg["sampling"], cfg["method"],
                   cfg["iteration"], seeds, sig, cfg["threads"], st, cfg)


def _num(d, key):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ConfigError(f"{key!r} must be a finite number")
    return float(v)


def _positive(d, key):
    if _num(d, key) <= 0:
        raise ConfigError(f"{key!r} must be positive")
    return float(d[key])


class RunFailure(Exception):
    """Computational failure with a machine-readable payload."""

    def __init__(self, code, message, **extra):
        super().__init__(message)
        self.payload = {"code": code, "message": message, **extra}


# ----------------------------------------------------------------- helpers


def _grid(cfg: RunConfig):
    return node_grid(cfg.cone, cfg.grid["radius"], refine=cfg.grid["refine"])


def _wavelet(cfg: RunConfig, grid=None):
    return make_wavelet(cfg.cone, grid if grid is not None else _grid(cfg), sharpness=cfg.wavelet["sharpness"])


def _signal(cfg: RunConfig, grid, seed: int) -> Spectrum:
    sig = cfg.signal
    if sig["kind"] == "zero":
        return Spectrum(grid, np.zeros(grid.size))
    if sig["kind"] == "file":
        f = io.load_spectrum(sig["path"])
        if f.cone.name != cfg.cone.name:
            raise ConfigError(f"signal file is on cone {f.cone.name}, config says {cfg.cone.name}")
        if f.grid.size != grid.size or not np.array_equal(f.grid.idx, grid.idx):
            # move onto the requested grid by interpolation
            f = Spectrum(grid, f.grid.interpolate(f.values, grid.xi))
        return f
    return make_test_signal(TestSignalSpec(seed=seed, n_bumps=sig["n_bumps"], radius=sig["radius"]), cfg.cone,
                            grid)


def _wellspread(cfg: RunConfig, epsilon=None):
    s = cfg.sampling
    return make_wellspread(cfg.cone, s["epsilon"] if epsilon is None else epsilon, extent=s["extent"],
                           beta=s["beta"], mode=s["mode"])


# ---------------------------------------------------------------- commands


def cmd_cone_info(cfg: RunConfig, out: Path) -> dict:
    c = cfg.cone
    g = _grid(cfg)
    return {"cone": c.name, "kind": c.kind, "n": c.n, "r": c.r, "rank_ratio": c.r / c.n, "e": c.e,
            "det_e": float(c.determinant(c.e[None])[0]), "node_step": default_node_step(c, cfg.grid["refine"]),
            "grid_radius": cfg.grid["radius"], "node_count": g.size, "h_step": default_h_step(c),
            "besov": {"p": cfg.besov.p, "q": cfg.besov.q, "s": cfg.besov.s, "s_prime": cfg.besov.s_prime}}


def cmd_wavelet_build(cfg: RunConfig, out: Path) -> dict:
    W = _wavelet(cfg)
    io.save_spectrum(out / "psi_hat", W.psi_hat)
    return {"cone": cfg.cone.name, "sharpness": W.sharpness, "grid_size": W.grid.size,
            "admissibility_constant": W.admissibility_constant, "admissibility_halved": W.refined_constant,
            "raw_constant": W.raw_constant, "inner_radius": W.inner_radius, "outer_radius": W.outer_radius,
            "artifacts": ["psi_hat"]}


def cmd_transform(cfg: RunConfig, out: Path) -> dict:
    g = _grid(cfg)
    W = _wavelet(cfg, g)
    l2_params = BesovParams.for_cone(cfg.cone, 2, 2, 0)
    rows = []
    for seed in cfg.seeds:
        f = _signal(cfg, g, seed)
        F = analyze(f, W)
        io.save_spectrum(out / f"signal_{seed}", f)
        io.save_field(out / f"field_{seed}", F)
        l2 = mixed_norm(F, l2_params).value  # s' = -1: the L2(G) norm
        rows.append({"seed": seed, "n_h_samples": len(F.hs), "signal_l2": f.norm(), "field_l2": l2,
                     "artifacts": [f"signal_{seed}", f"field_{seed}"]})
    return {"cone": cfg.cone.name, "grid_size": g.size, "signals": rows}


def cmd_besov(cfg: RunConfig, out: Path) -> dict:
    g = _grid(cfg)
    W = _wavelet(cfg, g)
    lat = cfg.lattice
    P = make_partition(cfg.cone, make_lattice(cfg.cone, lat["delta"], lat["R"], lat["extent"], grid=g), g)
    rows = []
    for seed in cfg.seeds:
        f = _signal(cfg, g, seed)
        d = norm_discrete(f, P, cfg.besov)
        c = norm_continuous(f, W, cfg.besov)
        ratio = d.value / c.value if c.value > 0 else None
        rows.append({"seed": seed, "discrete": besov_record(cfg.besov, d), "continuous": besov_record(cfg.besov, c),
                     "ratio": ratio})
    return {"cone": cfg.cone.name, "signals": rows}


def cmd_lattice(cfg: RunConfig, out: Path) -> dict:
    g = _grid(cfg)
    lat = cfg.lattice
    L = make_lattice(cfg.cone, lat["delta"], lat["R"], lat["extent"], grid=g)
    P = make_partition(cfg.cone, L, g)
    io.save_partition(out / "partition", P, out / "cone_lattice")
    region = cfg.cone.distance_to_e(g.xi) <= L.extent
    psum = P.values.sum(axis=0)
    return {"cone": cfg.cone.name, "n_points": len(L.points), "delta": L.delta, "R": L.R, "extent": L.extent,
            "spacing": L.spacing, "min_separation": L.min_separation, "covering_radius": L.covering_radius,
            "partition_sum_error": float(np.abs(psum[region] - 1).max()) if region.any() else 0.0,
            "artifacts": ["cone_lattice", "partition"]}


def cmd_frame_bounds(cfg: RunConfig, out: Path) -> dict:
    W = _wavelet(cfg)
    eps = cfg.sampling["epsilons"] or [cfg.sampling["epsilon"]]
    rows, sigs = [], None
    for k, e in enumerate(eps):
        ws = _wellspread(cfg, e)
        if sigs is None:
            sigs = [_signal(cfg, ws.window, s) for s in cfg.seeds]
        r = np.array([frame_ratio(f, W, ws, cfg.besov) for f in sigs])
        if k == len(eps) - 1:
            io.save_sequence(out / "sequence", sample_coefficients(sigs[0], W, ws, cfg.besov))
        fin = r[np.isfinite(r)]
        rows.append({"epsilon": ws.epsilon, "n_points": len(ws), "ratios": r,
                     "A1": float(fin.min()) if len(fin) else None, "A2": float(fin.max()) if len(fin) else None,
                     "A2_over_A1": float(fin.max() / fin.min()) if len(fin) and fin.min() > 0 else None})
    return {"cone": cfg.cone.name, "besov": {"p": cfg.besov.p, "q": cfg.besov.q, "s": cfg.besov.s,
                                             "s_prime": cfg.besov.s_prime},
            "beta": cfg.sampling["beta"], "extent": cfg.sampling["extent"], "ladder": rows,
            "artifacts": ["sequence"]}


def cmd_reconstruct(cfg: RunConfig, out: Path) -> dict:
    W = _wavelet(cfg)
    ws = _wellspread(cfg)
    bupu = make_bupu(ws)
    f = _signal(cfg, ws.window, cfg.seeds[0])
    data = bupu_coefficients(f, W, ws) if cfg.method == "T2-neumann" else sample_coefficients(f, W, ws)
    io.save_sequence(out / "sequence", data)
    it = cfg.iteration
    try:
        g, rep = reconstruct(data, cfg.method, W, ws, bupu, max_iter=it["max_iter"], tol=it["tol"], reference=f)
    except FrameError as exc:
        raise RunFailure("diverged", str(exc), report=exc.report) from None
    io.save_spectrum(out / "reconstruction", g)
    rep = dict(rep, n_points=len(ws), artifacts=["sequence", "reconstruction"])
    if not rep["converged"]:
        io.write_json(out / "reconstruct.json", rep)
        raise RunFailure("not_converged", f"residual {rep['residuals'][-1]:.3g} above tol after "
                         f"{rep['iterations']} iterations", report=rep)
    return rep


def cmd_selftest(cfg: RunConfig, out: Path) -> dict:
    from .acceptance import run_suite

    cones = cfg.selftest["cones"]
    cones = None if cones == "all" else (cones or [cfg.cone.name])
    rep = run_suite(cfg.selftest["criteria"], cones)
    for r in rep["criteria"]:
        # timings vary run to run; keep the report byte-stable
        log.info("criterion %d took %.1fs", r["id"], r.pop("seconds"))
    if not rep["passed"]:
        io.write_json(out / "selftest.json", rep)
        raise RunFailure("selftest_failed", "one or more acceptance criteria failed", report=rep)
    return rep


HANDLERS = {"cone-info": cmd_cone_info, "wavelet-build": cmd_wavelet_build, "transform": cmd_transform,
            "besov": cmd_besov, "lattice": cmd_lattice, "frame-bounds": cmd_frame_bounds,
            "reconstruct": cmd_reconstruct, "selftest": cmd_selftest}


# -------------------------------------------------------------------- main


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        raise ConfigError("--config is required")
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return RunConfig.from_dict(raw)


def run(command: str, cfg: RunConfig, out: Path) -> tuple[int, dict]:
    """Run one command; returns ``(exit code, report or error payload)``."""
    out.mkdir(parents=True, exist_ok=True)
    kernels.set_threads(cfg.threads)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        threadpool_limits = None
    try:
        if threadpool_limits is not None:
            with threadpool_limits(limits=cfg.threads):
                rep = HANDLERS[command](cfg, out)
        else:
            rep = HANDLERS[command](cfg, out)
    except ConfigError as exc:
        return 2, {"code": "bad_config", "message": str(exc)}
    except RunFailure as exc:
        return 1, exc.payload
    except (FrameError, TransformError, BesovError, OracleError, io.IOFormatError) as exc:
        payload = {"code": "computation_failed", "message": str(exc), "error": type(exc).__name__}
        if getattr(exc, "report", None):
            payload["report"] = exc.report
        return 1, payload
    io.write_json(out / f"{command}.json", rep)
    return 0, rep


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conewave", description="Wavelet analysis on symmetric cones.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", default="conewave-out", help="output directory (default: conewave-out)")
    p.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    p.add_argument("--verbose", action="store_true", help="progress logging on stderr")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            cfg.threads = args.threads
    except ConfigError as exc:
        code, rep = 2, {"code": "bad_config", "message": str(exc)}
    else:
        code, rep = run(args.command, cfg, out)
    if code != 0:
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "error.json", rep)
    sys.stdout.write(io.dumps(rep) + "\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
