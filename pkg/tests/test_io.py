import numpy as np
import pytest

from catheter3d.errors import FormatError, InvalidConfig
from catheter3d.io import (
    parse_kv, read_activation, read_electrogram, read_kv, read_pgm, read_points, read_ppm, read_recon,
    read_report, read_tracks, tracks_array, write_activation, write_electrogram, write_pgm, write_points,
    write_ppm, write_recon, write_report, write_tracks,
)


def test_parse_kv():
    v = parse_kv("# comment\na = 1\n\nb=two # trailing\n")
    assert v == {"a": "1", "b": "two"}
    with pytest.raises(InvalidConfig):
        parse_kv("novalue")
    with pytest.raises(InvalidConfig):
        parse_kv("a=1\na=2")
    with pytest.raises(InvalidConfig):
        parse_kv("=1")


def test_read_kv(tmp_path):
    p = tmp_path / "g.cfg"
    p.write_text("f_mm = 1000\n")
    assert read_kv(p) == {"f_mm": "1000"}


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(13, 17)).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    back = read_pgm(tmp_path / "a.pgm")
    assert back.shape == (13, 17)
    assert np.array_equal(np.rint(back * 255).astype(np.uint8), img)


def test_pgm_header_comments(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    assert np.array_equal(read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])


def test_pgm_errors(tmp_path):
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "bad.pgm")
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "short.pgm")
    (tmp_path / "deep.pgm").write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "deep.pgm")


def test_ppm_round_trip(tmp_path, rng):
    rgb = rng.integers(0, 256, size=(5, 9, 3)).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", rgb)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), rgb)
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "b.ppm", rgb.astype(float))


def test_tracks_round_trip(tmp_path, rng):
    tr = rng.uniform(0, 512, size=(4, 6, 2))
    write_tracks(tmp_path / "t.csv", tr, frames=[2, 3, 5, 7])
    frames = read_tracks(tmp_path / "t.csv")
    assert sorted(frames) == [2, 3, 5, 7]
    assert np.max(np.abs(tracks_array(frames) - tr)) <= 5e-7
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "frame,electrode,u_px,v_px"


def test_tracks_bad_header(tmp_path):
    (tmp_path / "t.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_tracks(tmp_path / "t.csv")


def test_points_and_recon(tmp_path, rng):
    pts = rng.normal(size=(7, 3))
    write_points(tmp_path / "p.csv", pts)
    assert np.max(np.abs(read_points(tmp_path / "p.csv") - pts)) <= 5e-7
    pos = rng.normal(size=(3, 4, 3))
    write_recon(tmp_path / "r.csv", pos, [True, False, True, True], [0.1, 0.2, 0.3, 0.4])
    assert np.max(np.abs(read_recon(tmp_path / "r.csv") - pos)) <= 5e-7
    head = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert head == "frame,electrode,x_mm,y_mm,z_mm,converged,residual_norm"


def test_negative_zero_is_normalised(tmp_path):
    write_points(tmp_path / "p.csv", np.array([[-1e-9, 0.0, 1.0]]))
    assert "-0.000000" not in (tmp_path / "p.csv").read_text()


def test_activation_round_trip(tmp_path, rng):
    pos = rng.normal(size=(3, 3))
    write_activation(tmp_path / "a.csv", ["a", "b", "c"], pos, [1.0, 2.5, -3.0])
    ids, p, lat = read_activation(tmp_path / "a.csv")
    assert ids == ["a", "b", "c"] and np.allclose(lat, [1.0, 2.5, -3.0])
    write_activation(tmp_path / "d.csv", ["a", "a"], pos[:2], [1.0, 2.0])
    with pytest.raises(FormatError):
        read_activation(tmp_path / "d.csv")


def test_electrogram_round_trip(tmp_path, rng):
    v = rng.normal(size=250)
    write_electrogram(tmp_path / "e.csv", v, 1000.0)
    eg = read_electrogram(tmp_path / "e.csv")
    assert eg.fs == 1000.0 and np.max(np.abs(eg.samples - v)) <= 5e-7


def test_report_round_trip(tmp_path):
    rows = [{"dz_init": 1, "n_images": 3, "view": "LAT", "mean": 1.0, "min": 0.5, "max": 2.0,
             "rms_accumulated": 3.25}]
    write_report(tmp_path / "r.tsv", rows)
    assert read_report(tmp_path / "r.tsv") == [{**rows[0], "dz_init": 1.0}]
    text = (tmp_path / "r.tsv").read_text()
    assert text.startswith("dz_init\tn_images\tview\tmean\tmin\tmax\trms_accumulated\n")
