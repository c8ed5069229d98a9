"""Desk-scale acceptance suite.

Each check returns a record ``{id, name, passed, threshold, measured,
seconds}``; :func:`run_suite` runs a selection and collects them.  The
suite is shared by ``conewave selftest`` and ``tests/test_acceptance.py``.
"""
from __future__ import annotations

import logging
import time
from typing import Callable, Iterable, Optional

import numpy as np

from .besov import (BesovParams, continuous_h_samples, default_spatial_policy, fft_box, make_lattice,
                    make_partition, mixed_norm, norm_continuous, norm_discrete)
from .cone import ConeModel, parse_cone
from .frames import (FrameError, bupu_coefficients, frame_ratio, make_bupu, make_wellspread, reconstruct,
                     sample_coefficients)
from .oracle import (TestSignalSpec, bruteforce_group_convolution, classical_besov_1d, make_test_signal,
                     newhaar_ratios, random_bumps)
from .spectral import NodeGrid, default_node_step, node_grid
from .transform import (CoefficientField, GroupPoint, HSamples, analyze, group_convolve, group_exp, make_wavelet,
                        rep_apply, rep_derivative, voice_at, voice_field)

__all__ = ["CRITERIA", "ALL_CONES", "run_suite", "run_criterion"]

log = logging.getLogger(__name__)

ALL_CONES = ("orthant:r=1", "orthant:r=2", "spd2")
ORTHANTS = ("orthant:r=1", "orthant:r=2")

_WAVELETS: dict = {}


def _wavelet(cone: ConeModel):
    if cone.name not in _WAVELETS:
        _WAVELETS[cone.name] = make_wavelet(cone)
    return _WAVELETS[cone.name]


def _rel_l2(grid, a, b):
    return float(np.sqrt(np.sum(grid.weights * np.abs(a - b) ** 2) / np.sum(grid.weights * np.abs(b) ** 2)))


# ------------------------------------------------------------- criteria


def admissibility(cones):
    """Admissibility constant 1 and stable under one quadrature halving."""
    out = {}
    for c in cones:
        W = _wavelet(c)
        out[c.name] = {"constant": W.admissibility_constant, "halved": W.refined_constant,
                       "deviation": abs(W.admissibility_constant - 1.0),
                       "halving_change": abs(W.admissibility_constant - W.refined_constant)}
    ok = all(v["deviation"] <= 1e-6 and v["halving_change"] <= 1e-6 for v in out.values())
    return ok, {"constant": "1 +- 1e-6", "halving_change": 1e-6}, out


def reproducing(cones, seeds=(0, 1, 2)):
    """Sup-norm relative residual of W f * W psi - W f on a spatial raster."""
    out = {}
    for c in cones:
        W = _wavelet(c)
        G = voice_field(W.psi_hat, W)
        ax = np.linspace(-3, 3, 9 if c.n < 3 else 5)
        P = np.stack(np.meshgrid(*([ax] * c.n), indexing="ij"), -1).reshape(-1, c.n)
        res = []
        for seed in seeds:
            F = analyze(make_test_signal(TestSignalSpec(seed=seed), c, W.grid), W)
            A, B = F.evaluate_all(P), group_convolve(F, G).evaluate_all(P)
            res.append(float(np.abs(A - B).max() / np.abs(A).max()))
        out[c.name] = {"residuals": res, "max": max(res)}
    return all(v["max"] <= 5e-3 for v in out.values()), {"residual": 5e-3}, out


def covariance(cones, n_levels=6, n_points=5):
    """W(pi(g0) f)(g) = W f(g0^-1 g) for a lattice-aligned g0."""
    out = {}
    rng = np.random.default_rng(4)
    for c in cones:
        W = _wavelet(c)
        f = make_test_signal(TestSignalSpec(seed=3, n_bumps=1 if c.kind == "spd2" else 3), c, W.grid)
        st = W.grid.step
        # spd2: only diagonal h permute the node lattice exactly
        th0 = np.array([3, -5, 0][: c.n] if c.kind == "orthant" else [2, 0, -3]) * st
        g0 = GroupPoint.make(c, th0, np.array([0.3, -0.7, 0.2][: c.n]))
        hs = HSamples(c, [0.25] * c.n, rng.integers(-2, 3, size=(n_levels, c.n)))
        F2 = analyze(rep_apply(g0, f), W, hs)
        err, scale = 0.0, 0.0
        for j in range(len(hs)):
            x = rng.uniform(-2, 2, size=(n_points, c.n))
            pts = [g0.inv() @ GroupPoint.make(c, hs.theta[j], xx) for xx in x]
            rhs = voice_at(f, W, np.array([p.h.theta for p in pts]), np.array([p.x for p in pts]))
            err = max(err, float(np.abs(F2.evaluate(j, x) - rhs).max()))
            scale = max(scale, float(np.abs(rhs).max()))
        out[c.name] = {"max_error": err, "max_value": scale, "g0_theta": th0}
    return all(v["max_error"] <= 1e-8 for v in out.values()), {"max_error": 1e-8}, out


PQS = [(p, q, s) for p in (1, 2) for q in (1, 2) for s in (-1, 0, 1)]
COARSE_FACTOR = {"orthant": 2.0, "spd2": 1.5}  # spd2 at 2x has < 8 samples across B_1/2


def _equivalence_constant(c, grid, seeds):
    W = make_wavelet(c, grid)
    P = make_partition(c, make_lattice(c, grid=grid), grid)
    ratios = []
    for seed in seeds:
        f = make_test_signal(TestSignalSpec(seed=seed), c, grid)
        cd, cc = {}, {}
        for p, q, s in PQS:
            bp = BesovParams.for_cone(c, p, q, s)
            ratios.append(norm_discrete(f, P, bp, band_cache=cd).value /
                          norm_continuous(f, W, bp, band_cache=cc).value)
    r = np.array(ratios)
    return float(max(r.max(), 1.0 / r.min())), float(r.min()), float(r.max())


def norm_equivalence(cones, seeds=range(10)):
    """discrete/continuous ratios inside one [1/C, C]; C stable under refinement."""
    out = {}
    for c in cones:
        fine = node_grid(c, 2.0)
        coarse = NodeGrid.ball(c, default_node_step(c) * COARSE_FACTOR[c.kind], 2.0)
        Cc, lo_c, hi_c = _equivalence_constant(c, coarse, seeds)
        Cf, lo, hi = _equivalence_constant(c, fine, seeds)
        out[c.name] = {"C": Cf, "ratio_min": lo, "ratio_max": hi, "C_coarse": Cc,
                       "coarse_ratio_range": [lo_c, hi_c], "refinement_change": abs(Cf - Cc) / Cf,
                       "grid_sizes": [coarse.size, fine.size]}
    ok = all(np.isfinite(v["C"]) and v["refinement_change"] <= 0.1 for v in out.values())
    return ok, {"refinement_change": 0.1}, out


def coorbit_exponent(cones, seeds=range(5), pqs=((2, 2, 0.5), (1, 2, -1), (2, 1, 1), (1, 1, 0))):
    """mixed_norm(W f, s') / norm_continuous(f, s) constant over the ensemble."""
    out = {}
    for c in cones:
        W = _wavelet(c)
        ratios = {pqs_: [] for pqs_ in pqs}
        for seed in seeds:
            f = make_test_signal(TestSignalSpec(seed=seed), c, W.grid)
            F = analyze(f, W)
            cache = {}
            for p, q, s in pqs:
                bp = BesovParams.for_cone(c, p, q, s)
                cont = norm_continuous(f, W, bp, band_cache=cache).value
                ratios[(p, q, s)].append(mixed_norm(F, bp).value / cont)
        spreads = {f"{p},{q},{s}": float(np.ptp(r) / np.mean(r)) for (p, q, s), r in ratios.items()}
        allr = np.concatenate(list(ratios.values()))
        out[c.name] = {"spread_per_params": spreads, "spread_all": float(np.ptp(allr) / allr.mean()),
                       "mean_ratio": float(allr.mean())}
    return all(v["spread_all"] <= 1e-2 for v in out.values()), {"spread": 1e-2}, out


def haar_adjoint(cones, count=6):
    out = {}
    for c in cones:
        r = newhaar_ratios(c, random_bumps(c, count, seed=1), step=0.02 if c.n < 3 else 0.03)
        out[c.name] = {"ratios": r, "mean": float(r.mean()), "spread": float(np.ptp(r) / r.mean())}
    ok = all(v["spread"] <= 1e-3 for v in out.values())
    ok &= all(abs(v["mean"] - 1) <= 1e-6 for k, v in out.items() if k.startswith("orthant"))
    return ok, {"spread": 1e-3, "orthant_value": "1 +- 1e-6"}, out


FRAME_SETTINGS = {"orthant:r=1": dict(extent=6.0, signals=20), "orthant:r=2": dict(extent=6.0, signals=20)}


def frame_bounds(cones, eps0=1.0, halvings=3, params=(2, 2, 0)):
    """A2/A1 of ||sample coefficients|| / ||f||_coorbit over an ensemble and an eps ladder."""
    out = {}
    for c in cones:
        st = FRAME_SETTINGS[c.name]
        W = _wavelet(c)
        bp = BesovParams.for_cone(c, *params)
        sigs, coorbit, rows = None, None, []
        for k in range(halvings + 1):
            ws = make_wellspread(c, eps0 / 2 ** k, extent=st["extent"])
            if sigs is None:
                sigs = [make_test_signal(TestSignalSpec(seed=s), c, ws.window) for s in range(st["signals"])]
                coorbit = [mixed_norm(analyze(f, W), bp).value for f in sigs]
            r = np.array([frame_ratio(f, W, ws, bp, coorbit=n) for f, n in zip(sigs, coorbit)])
            rows.append({"epsilon": ws.epsilon, "n_points": len(ws), "A1": float(r.min()), "A2": float(r.max()),
                         "A2_over_A1": float(r.max() / r.min())})
        q = [row["A2_over_A1"] for row in rows]
        out[c.name] = {"ladder": rows, "s_prime": bp.s_prime,
                       "non_increasing": all(b <= 1.05 * a for a, b in zip(q, q[1:])),
                       "finite": bool(np.isfinite(q[0]))}
    ok = all(v["finite"] and v["non_increasing"] for v in out.values())
    return ok, {"A2_over_A1_growth": 0.05, "s_prime": -1.0}, out


RECON_SETTINGS = {"orthant:r=1": dict(extent=12.0), "orthant:r=2": dict(extent=10.0)}
METHODS = ("T1-neumann", "T2-neumann")


def _recon_data(method, f, W, ws):
    return sample_coefficients(f, W, ws) if method == "T1-neumann" else bupu_coefficients(f, W, ws)


def reconstruction(cones, eps0=1.0, halvings=3, seed=1, ladder_iter=3):
    """Converged error at the finest eps, fixed-budget error ladder, and coarse-set flagging."""
    out = {}
    for c in cones:
        st = RECON_SETTINGS[c.name]
        W = _wavelet(c)
        f = make_test_signal(TestSignalSpec(seed=seed), c, node_grid(c, 0.8))
        ladder = {m: [] for m in METHODS}
        finest = {}
        for k in range(halvings + 1):
            ws = make_wellspread(c, eps0 / 2 ** k, extent=st["extent"])
            bupu = make_bupu(ws)
            for m in METHODS:
                data = _recon_data(m, f, W, ws)
                ladder[m].append(reconstruct(data, m, W, ws, bupu, max_iter=ladder_iter, tol=0.0,
                                             reference=f)[1]["final_error"])
                if k == halvings:
                    rep = reconstruct(data, m, W, ws, bupu, max_iter=50, tol=1e-4, reference=f)[1]
                    finest[m] = {"epsilon": ws.epsilon, "iterations": rep["iterations"],
                                 "final_error": rep["final_error"], "residual": rep["residuals"][-1]}
        coarse = make_wellspread(c, float(np.log(2)), extent=st["extent"], beta=2.0)
        flagged = {}
        for m in METHODS:
            try:
                reconstruct(_recon_data(m, f, W, coarse), m, W, coarse, make_bupu(coarse), reference=f)
                flagged[m] = None
            except FrameError as exc:
                flagged[m] = exc.report.get("divergence")
        out[c.name] = {"extent": st["extent"], "finest": finest, "ladder_iterations": ladder_iter,
                       "ladder_epsilons": [eps0 / 2 ** k for k in range(halvings + 1)], "ladder_errors": ladder,
                       "coarse_epsilon": float(np.log(2)), "coarse_beta": 2.0, "coarse_flag": flagged}
    ok = True
    for v in out.values():
        ok &= all(r["final_error"] <= 1e-2 and r["iterations"] <= 50 for r in v["finest"].values())
        ok &= all(all(a > b for a, b in zip(e, e[1:])) for e in v["ladder_errors"].values())
        ok &= all(flag is not None for flag in v["coarse_flag"].values())
    return ok, {"final_error": 1e-2, "max_iter": 50}, out


CLASSICAL_PQS = ((2, 2, 0.5), (1, 2, -1), (1, 1, 1), (2, 1, 0))


def classical_reduction(cones, seeds=(0, 1, 2)):
    c = parse_cone("orthant:r=1")
    W = _wavelet(c)
    worst = 0.0
    for p, q, s in CLASSICAL_PQS:
        bp = BesovParams.for_cone(c, p, q, s)
        for seed in seeds:
            f = make_test_signal(TestSignalSpec(seed=seed), c, W.grid)
            fc = f.compact()
            hs = continuous_h_samples(c, fc.grid.xi)
            box = fft_box(fc.grid.xi, default_spatial_policy(c))
            a = norm_continuous(f, W, bp).value
            b = classical_besov_1d(f.source, p, q, s, hs.theta[:, 0], hs.step[0], fc.grid.xi[:, 0],
                                   fc.grid.weights, (box.axes[0], box.padded[0]))
            worst = max(worst, abs(a - b) / abs(b))
    return worst <= 1e-10, {"relative_difference": 1e-10}, {"orthant:r=1": {"max_relative_difference": worst}}


def oracle_equivalences(cones, n_field=24):
    out = {}
    for c in cones:
        W = _wavelet(c)
        rng = np.random.default_rng(11)
        g = node_grid(c, 2.0)
        G = voice_field(make_test_signal(TestSignalSpec(seed=2), c, g), W)
        hs = HSamples(c, [0.25] * c.n, rng.integers(-2, 3, size=(6, c.n)))
        F = CoefficientField(hs, x=rng.uniform(-1, 1, size=(n_field, c.n)), hidx=rng.integers(0, 6, n_field),
                             values=rng.normal(size=n_field) + 1j * rng.normal(size=n_field),
                             weights=rng.uniform(0.1, 1, n_field))
        a = group_convolve(F, G).values
        b = bruteforce_group_convolution(F, G).values
        conv = float(np.abs(a - b).max() / np.abs(b).max())
        d = np.array([0.3, -0.2, 0.5][: c.n])
        x = np.array([0.1, 0.4, -0.3][: c.n])
        D = rep_derivative(d, x, W.psi_hat)

        def fd_err(t):
            p = rep_apply(group_exp(c, d, x, t), W.psi_hat)
            m = rep_apply(group_exp(c, d, x, -t), W.psi_hat)
            return _rel_l2(W.grid, (p.values - m.values) / (2 * t), D.values)

        e1, e2 = fd_err(1e-2), fd_err(5e-3)
        out[c.name] = {"convolution_difference": conv, "fd_error": fd_err(1e-4),
                       "fd_order": float(np.log2(e1 / e2)), "field_points": n_field}
    ok = all(v["convolution_difference"] <= 1e-10 and v["fd_error"] <= 1e-6 and abs(v["fd_order"] - 2) <= 0.2
             for v in out.values())
    return ok, {"convolution_difference": 1e-10, "fd_error": 1e-6, "fd_order": "2 +- 0.2"}, out


# name, check, cones it applies to
CRITERIA: dict[int, tuple[str, Callable, tuple]] = {
    1: ("admissibility", admissibility, ALL_CONES),
    2: ("reproducing formula", reproducing, ALL_CONES),
    3: ("covariance", covariance, ALL_CONES),
    4: ("norm equivalence", norm_equivalence, ALL_CONES),
    5: ("coorbit exponent", coorbit_exponent, ALL_CONES),
    6: ("Haar-adjoint constant", haar_adjoint, ALL_CONES),
    7: ("frame bounds", frame_bounds, ORTHANTS),
    8: ("reconstruction", reconstruction, ORTHANTS),
    9: ("classical reduction", classical_reduction, ("orthant:r=1",)),
    10: ("oracle equivalences", oracle_equivalences, ALL_CONES),
}


def run_criterion(cid: int, cones: Optional[Iterable[str]] = None) -> dict:
    """Run one criterion on the intersection of ``cones`` with its cone list."""
    name, check, applies = CRITERIA[cid]
    wanted = applies if cones is None else tuple(c for c in applies if c in set(cones))
    rec = {"id": cid, "name": name, "cones": list(wanted)}
    if not wanted:
        rec.update(status="skipped", passed=None, seconds=0.0)
        return rec
    t0 = time.perf_counter()
    try:
        ok, threshold, measured = check([parse_cone(c) for c in wanted])
        rec.update(status="pass" if ok else "fail", passed=bool(ok), threshold=threshold, measured=measured)
    except Exception as exc:  # reported, not raised: one failing suite must not hide the others
        log.exception("criterion %d raised", cid)
        rec.update(status="error", passed=False, error=f"{type(exc).__name__}: {exc}")
    rec["seconds"] = time.perf_counter() - t0
    log.info("criterion %d (%s): %s in %.1fs", cid, name, rec["status"], rec["seconds"])
    return rec


def run_suite(criteria: Optional[Iterable[int]] = None, cones: Optional[Iterable[str]] = None) -> dict:
    ids = sorted(CRITERIA) if criteria is None else list(criteria)
    recs = [run_criterion(i, cones) for i in ids]
    return {"criteria": recs, "passed": all(r["passed"] is not False for r in recs)}
