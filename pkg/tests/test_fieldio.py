import numpy as np
import pytest
from hypothesis import given, strategies as st

from anisovie.fieldio import read_field, write_field, write_slice_csv
from anisovie.grid import make_grid


@pytest.mark.parametrize("shape", [(), (3,), (3, 3)])
def test_round_trip_is_bit_identical(tmp_path, rng, shape):
    g = make_grid(5)
    a = rng.standard_normal(shape + g.shape) + 1j * rng.standard_normal(shape + g.shape)
    write_field(tmp_path / "f.bin", a, g)
    b, g2 = read_field(tmp_path / "f.bin")
    assert g2 == g
    assert b.shape == a.shape and b.tobytes() == a.tobytes()


def test_header_layout(tmp_path):
    g = make_grid(3)
    write_field(tmp_path / "f.bin", np.zeros(g.shape), g)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:8] == b"ANISOVIE" and len(raw) == 64 + 16 * 27
    assert int.from_bytes(raw[12:16], "little") == 3


def test_single_precision_option(tmp_path):
    g = make_grid(4)
    a = np.full(g.shape, 1 / 3 + 0j)
    write_field(tmp_path / "f.bin", a, g, precision=8)
    b, _ = read_field(tmp_path / "f.bin")
    assert b.dtype == np.complex64 and abs(b[0, 0, 0] - 1 / 3) < 1e-7


def test_corrupt_files_are_rejected(tmp_path):
    g = make_grid(3)
    write_field(tmp_path / "f.bin", np.zeros(g.shape), g)
    raw = bytearray((tmp_path / "f.bin").read_bytes())
    (tmp_path / "short.bin").write_bytes(raw[:-16])
    with pytest.raises(ValueError, match="payload"):
        read_field(tmp_path / "short.bin")
    raw[0:8] = b"NOTAFILE"
    (tmp_path / "magic.bin").write_bytes(raw)
    with pytest.raises(ValueError, match="magic"):
        read_field(tmp_path / "magic.bin")
    with pytest.raises(ValueError):
        write_field(tmp_path / "x.bin", np.zeros((4, 4, 4)), g)


def test_slice_csv_layout(tmp_path):
    g = make_grid(4)
    v = np.arange(64, dtype=complex).reshape(g.shape) * (1 + 2j)
    rows = write_slice_csv(tmp_path / "s.csv", v, g, axis=2, index=1)
    text = (tmp_path / "s.csv").read_bytes()
    assert b"\r" not in text
    lines = text.decode().splitlines()
    assert lines[0] == "x,y,z,re,im" and rows == 16 == len(lines) - 1
    x, y, z, re, im = map(float, lines[1 + 4 * 2 + 3].split(","))
    assert (x, y, z) == (0.625, 0.875, 0.375)
    assert re == v[2, 3, 1].real and im == v[2, 3, 1].imag
    with pytest.raises(ValueError):
        write_slice_csv(tmp_path / "t.csv", v, g, axis=0, index=4)


@given(n=st.integers(2, 6), seed=st.integers(0, 2 ** 16))
def test_round_trip_property(tmp_path_factory, n, seed):
    g = make_grid(n)
    r = np.random.default_rng(seed)
    a = r.standard_normal((3,) + g.shape) * 10.0 ** r.integers(-300, 300) + 0j
    p = tmp_path_factory.mktemp("rt") / "f.bin"
    write_field(p, a, g)
    assert read_field(p)[0].tobytes() == a.tobytes()
