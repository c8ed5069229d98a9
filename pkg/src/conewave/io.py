"""Tensor + JSON sidecar storage and deterministic JSON output.

Every artifact is a raw little-endian ``float64`` or ``complex128`` file
``<stem>.bin`` next to a header ``<stem>.json`` holding
``{shape, kind, dtype, grid_spacing, origin, cone, h_chart_coords, weights}``
plus kind-specific fields needed to rebuild the object.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .besov import BesovParams, ConeLattice, FrequencyPartition
from .cone import parse_cone
from .frames import SequenceData, WellSpreadSet, make_wellspread
from .spectral import NodeGrid, Spectrum
from .transform import CoefficientField, HSamples

__all__ = ["IOFormatError", "dumps", "write_json", "save_tensor", "load_tensor", "save_spectrum", "load_spectrum",
           "save_field", "load_field", "wellspread_header", "wellspread_from_header", "save_sequence",
           "load_sequence", "save_lattice", "load_lattice", "save_partition", "load_partition"]

_DTYPES = {"float64": "<f8", "complex128": "<c16"}


class IOFormatError(ValueError):
    pass


# ----------------------------------------------------------------- JSON


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = f"{x:.17g}"
    # keep floats recognisable as floats
    return s if any(c in s for c in ".en") else s + ".0"


def _encode(obj, indent, level):
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = ", " if indent is None else ","
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return "null" if obj is None else ("true" if obj else "false")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return _encode([obj.real, obj.imag], indent, level)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, Path):
        return json.dumps(str(obj))
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(str(k)) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric rows stay on one line
        if all(isinstance(v, (int, float, np.integer, np.floating)) for v in obj):
            return "[" + ", ".join(_encode(v, None, 0) for v in obj) + "]"
        return "[" + sep.join(pad + _encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: Optional[int] = 2) -> str:
    """JSON text with every float written to 17 significant digits.

    Non-finite floats become ``null``; complex numbers become ``[re, im]``.
    Output depends only on the input, so identical runs give identical bytes.
    """
    return _encode(obj, indent, 0)


def write_json(path, obj):
    Path(path).write_text(dumps(obj) + "\n")


# --------------------------------------------------------------- tensors


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".bin", ".json") else p


def save_tensor(path, array, kind: str, cone=None, grid_spacing=None, origin=None, h_chart_coords=None,
                weights=None, **extra) -> Path:
    """Write ``array`` as ``<stem>.bin`` with header ``<stem>.json``; returns the stem."""
    a = np.asarray(array)
    dtype = "complex128" if np.iscomplexobj(a) else "float64"
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".bin").write_bytes(np.ascontiguousarray(a, dtype=_DTYPES[dtype]).tobytes())
    header = {"shape": list(a.shape), "kind": kind, "dtype": dtype,
              "grid_spacing": grid_spacing, "origin": origin,
              "cone": None if cone is None else cone.name,
              "h_chart_coords": h_chart_coords, "weights": weights}
    header.update(extra)
    write_json(stem.with_suffix(".json"), header)
    return stem


def load_tensor(path):
    """Read a tensor and its header; returns ``(array, header)``."""
    stem = _stem(path)
    try:
        header = json.loads(stem.with_suffix(".json").read_text())
        raw = stem.with_suffix(".bin").read_bytes()
    except FileNotFoundError as exc:
        raise IOFormatError(f"missing tensor file: {exc.filename}") from None
    if header.get("dtype") not in _DTYPES:
        raise IOFormatError(f"unsupported dtype {header.get('dtype')!r}")
    a = np.frombuffer(raw, dtype=_DTYPES[header["dtype"]])
    shape = tuple(header["shape"])
    if a.size != int(np.prod(shape)):
        raise IOFormatError(f"tensor has {a.size} entries, header says shape {shape}")
    return a.reshape(shape).astype(a.dtype.newbyteorder("=")), header


def _expect(header, kind):
    if header.get("kind") != kind:
        raise IOFormatError(f"expected a {kind!r} tensor, found {header.get('kind')!r}")


def _grid_header(grid: NodeGrid) -> dict:
    return {"node_step": grid.step, "node_idx": grid.idx}


def _grid_from(cone, header) -> NodeGrid:
    return NodeGrid(cone, np.array(header["node_step"], dtype=float),
                    np.array(header["node_idx"], dtype=np.int64).reshape(-1, cone.n))


def _hs_from(cone, header) -> HSamples:
    return HSamples(cone, np.array(header["h_step"], dtype=float),
                    np.array(header["h_idx"], dtype=np.int64).reshape(-1, cone.n))


# -------------------------------------------------------------- objects


def save_spectrum(path, f: Spectrum) -> Path:
    """Signal spectrum on its node grid (closed-form sources are not stored)."""
    g = f.grid
    return save_tensor(path, f.values, "spectrum", cone=g.cone, grid_spacing=g.step, origin=g.lo * g.step,
                       weights=g.weights, **_grid_header(g))


def load_spectrum(path) -> Spectrum:
    a, h = load_tensor(path)
    _expect(h, "spectrum")
    cone = parse_cone(h["cone"])
    return Spectrum(_grid_from(cone, h), a)


def save_field(path, F: CoefficientField) -> Path:
    """Coefficient field in spectral (J, M) or point form (values per sample)."""
    hs = F.hs
    common = dict(cone=F.cone, h_chart_coords=hs.theta, h_step=hs.step, h_idx=hs.idx)
    if F.is_spectral:
        return save_tensor(path, F.spec, "coefficient_field", grid_spacing=F.grid.step,
                           origin=F.grid.lo * F.grid.step, weights=hs.weights, form="spectral",
                           **_grid_header(F.grid), **common)
    return save_tensor(path, F.point_values(), "coefficient_field", weights=F.weights, form="points",
                       x=F.x, hidx=F.hidx, **common)


def load_field(path) -> CoefficientField:
    a, h = load_tensor(path)
    _expect(h, "coefficient_field")
    cone = parse_cone(h["cone"])
    hs = _hs_from(cone, h)
    if h.get("form") == "spectral":
        return CoefficientField(hs, _grid_from(cone, h), a)
    return CoefficientField(hs, x=np.array(h["x"], dtype=float).reshape(-1, cone.n),
                            hidx=np.array(h["hidx"], dtype=np.int64), values=a,
                            weights=np.array(h["weights"], dtype=float))


def wellspread_header(ws: WellSpreadSet) -> dict:
    """Everything needed to rebuild ``ws`` exactly."""
    return {"cone": ws.cone.name, "epsilon": ws.epsilon, "beta": ws.beta, "extent": ws.extent, "mode": ws.mode,
            "quad_sub": ws.quad_sub, "h_step": ws.hs.step, "h_idx": ws.hs.idx, "A": ws.A, "kmin": ws.kmin,
            "kmax": ws.kmax, "n_points": len(ws), "window": _grid_header(ws.window)}


def wellspread_from_header(h: dict) -> WellSpreadSet:
    cone = parse_cone(h["cone"])
    window = _grid_from(cone, h["window"])
    ws = make_wellspread(cone, h["epsilon"], extent=h["extent"], beta=h["beta"], window=window, mode=h["mode"],
                         h_region=np.array(h["h_idx"], dtype=np.int64).reshape(-1, cone.n),
                         quad_sub=h["quad_sub"], budget=max(int(h["n_points"]), 1))
    if len(ws) != h["n_points"] or not np.allclose(ws.A, np.array(h["A"]).reshape(ws.A.shape), rtol=1e-14):
        raise IOFormatError("stored well-spread set does not rebuild to the same points")
    return ws


def save_sequence(path, sd: SequenceData) -> Path:
    """Sequence coefficients with their well-spread set in the header."""
    params = None if sd.params is None else {"p": sd.params.p, "q": sd.params.q, "s": sd.params.s,
                                             "rank_ratio": sd.params.rank_ratio}
    return save_tensor(path, sd.values, "sequence", cone=sd.ws.cone, h_chart_coords=sd.ws.hs.theta,
                       weights=sd.ws.tile_weights(), coefficient_kind=sd.kind, besov=params,
                       wellspread=wellspread_header(sd.ws))


def load_sequence(path) -> SequenceData:
    a, h = load_tensor(path)
    _expect(h, "sequence")
    ws = wellspread_from_header(h["wellspread"])
    b = h.get("besov")
    params = None if b is None else BesovParams(b["p"], b["q"], b["s"], b["rank_ratio"])
    return SequenceData(ws, a, params, h["coefficient_kind"])


def save_lattice(path, lat: ConeLattice) -> Path:
    return save_tensor(path, lat.points, "cone_lattice", cone=lat.cone, grid_spacing=lat.spacing,
                       delta=lat.delta, R=lat.R, extent=lat.extent, min_separation=lat.min_separation,
                       covering_radius=lat.covering_radius)


def load_lattice(path) -> ConeLattice:
    a, h = load_tensor(path)
    _expect(h, "cone_lattice")
    sep = h["min_separation"]
    return ConeLattice(parse_cone(h["cone"]), a, h["delta"], h["R"], h["extent"], np.array(h["grid_spacing"]),
                       math.inf if sep is None else sep, h["covering_radius"])


def save_partition(path, P: FrequencyPartition, lattice_path=None) -> Path:
    """Partition values (J, M) on the node grid; the lattice is saved alongside."""
    stem = _stem(path)
    lat_stem = save_lattice(lattice_path or stem.with_name(stem.name + "_lattice"), P.lattice)
    return save_tensor(stem, P.values, "partition", cone=P.cone, grid_spacing=P.grid.step,
                       origin=P.grid.lo * P.grid.step, weights=P.grid.weights, eta=P.eta,
                       sharpness=P.sharpness, lattice=lat_stem.name, **_grid_header(P.grid))


def load_partition(path) -> FrequencyPartition:
    a, h = load_tensor(path)
    _expect(h, "partition")
    stem = _stem(path)
    lat = load_lattice(stem.with_name(h["lattice"]))
    grid = _grid_from(lat.cone, h)
    return FrequencyPartition(lat, grid, a, h["eta"], h["sharpness"])
