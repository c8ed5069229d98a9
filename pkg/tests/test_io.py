import json

import numpy as np
import pytest

from conewave.besov import BesovParams, make_lattice, make_partition
from conewave.cone import parse_cone
from conewave.frames import make_wellspread, sample_coefficients, sequence_norm
from conewave.io import (IOFormatError, dumps, load_field, load_lattice, load_partition, load_sequence,
                         load_spectrum, load_tensor, save_field, save_lattice, save_partition, save_sequence,
                         save_spectrum, save_tensor)
from conewave.oracle import TestSignalSpec, make_test_signal
from conewave.spectral import node_grid
from conewave.transform import analyze, make_wavelet

ORTH1 = parse_cone("orthant:r=1")
ORTH2 = parse_cone("orthant:r=2")


def test_dumps_seventeen_digits_and_determinism():
    x = 0.1 + 0.2
    text = dumps({"a": x, "b": [1, 2.0], "c": float("nan"), "d": 1e-300, "z": 1 + 2j})
    rec = json.loads(text)
    assert "0.30000000000000004" in text
    assert rec["a"] == x and rec["b"] == [1, 2.0] and rec["c"] is None and rec["d"] == 1e-300
    assert rec["z"] == [1.0, 2.0]
    assert dumps({"a": x}) == dumps({"a": x})
    with pytest.raises(TypeError):
        dumps({"a": object()})


def test_tensor_roundtrip_is_little_endian(tmp_path):
    a = np.arange(6, dtype=float).reshape(2, 3) + 0.5j
    stem = save_tensor(tmp_path / "t.bin", a, "demo", grid_spacing=[0.1])
    raw = (tmp_path / "t.bin").read_bytes()
    assert raw == a.astype("<c16").tobytes()
    b, h = load_tensor(stem)
    assert np.array_equal(a, b) and h["kind"] == "demo" and h["shape"] == [2, 3]
    for key in ("shape", "kind", "grid_spacing", "origin", "cone", "h_chart_coords", "weights"):
        assert key in h


def test_tensor_errors(tmp_path):
    with pytest.raises(IOFormatError, match="missing"):
        load_tensor(tmp_path / "nothing")
    save_tensor(tmp_path / "t", np.zeros(4), "demo")
    h = json.loads((tmp_path / "t.json").read_text())
    h["shape"] = [5]
    (tmp_path / "t.json").write_text(json.dumps(h))
    with pytest.raises(IOFormatError, match="header says"):
        load_tensor(tmp_path / "t")
    save_tensor(tmp_path / "u", np.zeros(4), "demo")
    with pytest.raises(IOFormatError, match="expected a 'spectrum'"):
        load_spectrum(tmp_path / "u")


def test_spectrum_and_field_roundtrip(tmp_path):
    g = node_grid(ORTH2, 2.0)
    f = make_test_signal(TestSignalSpec(seed=1), ORTH2, g)
    save_spectrum(tmp_path / "f", f)
    f2 = load_spectrum(tmp_path / "f")
    assert np.array_equal(f2.values, f.values) and np.array_equal(f2.grid.xi, g.xi)
    W = make_wavelet(ORTH2, g)
    F = analyze(f, W)
    save_field(tmp_path / "F", F)
    F2 = load_field(tmp_path / "F")
    assert np.array_equal(F2.spec, F.spec) and np.array_equal(F2.hs.theta, F.hs.theta)
    x = np.array([[0.3, -0.2]])
    assert np.allclose(F2.evaluate(3, x), F.evaluate(3, x), atol=0)


def test_lattice_and_partition_roundtrip(tmp_path):
    g = node_grid(ORTH1, 2.0)
    lat = make_lattice(ORTH1, grid=g)
    P = make_partition(ORTH1, lat, g)
    save_partition(tmp_path / "P", P)
    P2 = load_partition(tmp_path / "P")
    assert np.array_equal(P2.values, P.values) and np.array_equal(P2.lattice.points, lat.points)
    assert P2.eta == P.eta and P2.lattice.covering_radius == lat.covering_radius
    save_lattice(tmp_path / "L", lat)
    assert load_lattice(tmp_path / "L").min_separation == lat.min_separation


def test_sequence_roundtrip_rebuilds_wellspread(tmp_path):
    ws = make_wellspread(ORTH1, 0.5, extent=3.0)
    W = make_wavelet(ORTH1)
    params = BesovParams.for_cone(ORTH1, 2, 2, 0)
    sd = sample_coefficients(make_test_signal(TestSignalSpec(seed=2), ORTH1, ws.window), W, ws, params)
    save_sequence(tmp_path / "seq", sd)
    sd2 = load_sequence(tmp_path / "seq")
    assert np.array_equal(sd2.values, sd.values) and sd2.kind == sd.kind
    assert np.array_equal(sd2.ws.A, ws.A) and np.array_equal(sd2.ws.points()[1], ws.points()[1])
    assert sequence_norm(sd2) == sequence_norm(sd)
