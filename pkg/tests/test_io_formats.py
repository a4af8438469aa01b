import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangethermal.geometry import Extrinsics, Intrinsics, TaitBryanAngles
from rangethermal.io_formats import (
    FormatError,
    decode_calibration,
    decode_depth,
    decode_pgm,
    decode_temperature_csv,
    encode_calibration,
    encode_depth,
    encode_pgm,
    encode_temperature_csv,
    encode_visualization,
    format_scene,
    parse_key_values,
    parse_scene,
    read_curve,
    read_depth,
    read_mask,
    read_temperature,
    read_tracks,
    write_curve,
    write_depth,
    write_mask,
    write_temperature,
    write_tracks,
)
from rangethermal.simulation import DEFAULT_K_IR, DEFAULT_K_TOF, default_scene


def _random_depth(rng, h=120, w=160):
    d = rng.integers(1, 65536, (h, w)) / 1000.0
    d[rng.random((h, w)) < 0.05] = np.nan
    return d


# --- PGM ------------------------------------------------------------------


def test_depth_round_trip_bitwise(tmp_path):
    d = _random_depth(np.random.default_rng(0))
    write_depth(tmp_path / "d.pgm", d)
    back = read_depth(tmp_path / "d.pgm")
    np.testing.assert_array_equal(back, d)
    assert back.tobytes() == d.tobytes()


def test_depth_file_layout():
    buf = encode_depth(np.array([[1.0, np.nan], [0.258, 65.535]]))
    assert buf.startswith(b"P5\n2 2\n65535\n")
    body = buf[len(b"P5\n2 2\n65535\n") :]
    # big-endian 16-bit millimeters, 0 for invalid
    assert body == bytes([0x03, 0xE8, 0, 0, 0x01, 0x02, 0xFF, 0xFF])


def test_depth_quantized_to_millimeters():
    back = decode_depth(encode_depth(np.array([[1.23449, 2.0004, 0.0001]])))
    np.testing.assert_array_equal(back, [[1.234, 2.0, 0.001]])


def test_depth_out_of_range():
    with pytest.raises(FormatError):
        encode_depth(np.array([[70.0]]))


def test_truncated_pgm_rejected():
    buf = encode_depth(np.full((4, 5), 2.0))
    for cut in (1, 5, len(buf) - 1):
        with pytest.raises(FormatError):
            decode_depth(buf[:cut])


@pytest.mark.parametrize(
    "buf",
    [
        b"P2\n2 2\n255\n\0\0\0\0",
        b"P5\nx 2\n255\n\0\0\0\0",
        b"P5\n2 2\n0\n\0\0\0\0",
        b"P5\n70000 1\n255\n",
        b"P5\n2 2\n255\n\0\0\0\0\0",
        b"P5\n1 1\n10\n\x20",
    ],
)
def test_malformed_pgm(buf):
    with pytest.raises(FormatError):
        decode_pgm(buf)


def test_pgm_comments():
    data, maxval, comments = decode_pgm(b"P5\n# hello\n2 # trailing\n1\n255\n\x01\x02")
    assert comments == ["hello", "trailing"]
    np.testing.assert_array_equal(data, [[1, 2]])


def test_eight_bit_depth_rejected():
    with pytest.raises(FormatError):
        decode_depth(encode_pgm(np.ones((2, 2), dtype=np.uint8), 255))


def test_mask_round_trip(tmp_path):
    m = np.random.default_rng(1).random((30, 40)) < 0.3
    write_mask(tmp_path / "m.pgm", m)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.pgm"), m)
    (tmp_path / "bad.pgm").write_bytes(encode_pgm(np.full((2, 2), 7, dtype=np.uint8), 255))
    with pytest.raises(FormatError):
        read_mask(tmp_path / "bad.pgm")


def test_visualization_mapping():
    buf = encode_visualization(np.array([[10.0, 20.0, 30.0, np.nan]]))
    data, maxval, comments = decode_pgm(buf)
    np.testing.assert_array_equal(data, [[0, 128, 255, 0]])
    assert comments == ["tmin=10.0 tmax=30.0 degC"]
    data, _, _ = decode_pgm(encode_visualization(np.array([[0.0, 50.0]]), tmin=10, tmax=20))
    np.testing.assert_array_equal(data, [[0, 255]])


# --- temperature CSV ------------------------------------------------------


def test_temperature_round_trip_exact(tmp_path):
    t = np.random.default_rng(2).normal(25, 10, (16, 16))
    t[3, 4] = np.nan
    write_temperature(tmp_path / "t.csv", t)
    back = read_temperature(tmp_path / "t.csv")
    assert back.tobytes() == t.tobytes()
    raw = (tmp_path / "t.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")


def test_six_significant_digits_within_tolerance():
    t = np.random.default_rng(3).uniform(-40, 99.99, (16, 16))
    back = decode_temperature_csv(encode_temperature_csv(t, digits=6))
    assert np.max(np.abs(back - t)) <= 1e-4


@pytest.mark.parametrize(
    "text, line",
    [("1,2\n3,x\n", 2), ("1,2\n3\n", 2), ("1,inf\n", 1), ("", None), ("1,2\n3,4", 2)],
)
def test_bad_csv(text, line):
    with pytest.raises(FormatError) as exc:
        decode_temperature_csv(text, "t.csv")
    assert exc.value.line == line


def test_infinite_temperature_not_written():
    with pytest.raises(FormatError):
        encode_temperature_csv(np.array([[1.0, math.inf]]))


# --- key/value, calibration, scene ----------------------------------------


def test_key_values():
    kv = parse_key_values("# comment\na = 1\n\nb.c=two # trailing\n")
    assert kv == {"a": "1", "b.c": "two"}
    for bad in ("a 1\n", "a = 1\na = 2\n", "= 3\n", "a =\n"):
        with pytest.raises(FormatError):
            parse_key_values(bad)


def test_calibration_round_trip():
    ext = Extrinsics(TaitBryanAngles(0.1234567890123, -0.02, 1e-17), (0.05, -0.001, 0.0))
    K_ir, K_tof, back = decode_calibration(encode_calibration(DEFAULT_K_IR, DEFAULT_K_TOF, ext))
    assert (K_ir, K_tof, back) == (DEFAULT_K_IR, DEFAULT_K_TOF, ext)


def test_calibration_key_checks():
    text = encode_calibration(DEFAULT_K_IR, DEFAULT_K_TOF, Extrinsics())
    with pytest.raises(FormatError, match="unknown"):
        decode_calibration(text + "extra = 1\n")
    with pytest.raises(FormatError, match="missing"):
        decode_calibration("\n".join(l for l in text.splitlines() if not l.startswith("t.z")))
    with pytest.raises(FormatError):
        decode_calibration(text.replace("ir.fx = 15.0", "ir.fx = -1.0"))
    with pytest.raises(FormatError):
        decode_calibration(text.replace("t.x = 0.0", "t.x = nan"))


def test_scene_round_trip():
    spec = default_scene(seed=9)
    assert parse_scene(format_scene(spec)) == spec


def test_scene_parse_example():
    spec = parse_scene("# room\ncanvas 40 30\nbackground 5 19.5\nnoise 0 0.25 3\nrect 1 2 3 4 2.0 30  # box\ndisc 20 15 4 1.5 60\n")
    assert (spec.width, spec.height, spec.background_depth, spec.seed) == (40, 30, 5.0, 3)
    assert len(spec.primitives) == 2 and spec.primitives[1].temp == 60.0


@pytest.mark.parametrize(
    "text",
    ["sphere 1 2 3\n", "rect 1 2 3\n", "canvas 10.5 3\n", "rect 1 2 3 4 -1 20\n", "disc 1 2 x 1 20\n", "noise 0 0 1.5\n"],
)
def test_scene_errors(text):
    with pytest.raises(FormatError):
        parse_scene(text)


# --- reports --------------------------------------------------------------


def test_curve_and_tracks_round_trip(tmp_path):
    ranks, cum = np.arange(1, 6), np.cumsum(np.random.default_rng(4).random(5))
    write_curve(tmp_path / "c.csv", ranks, cum)
    r2, c2 = read_curve(tmp_path / "c.csv")
    np.testing.assert_array_equal(r2, ranks)
    assert c2.tobytes() == cum.tobytes()
    rows = [(5, 0, 12.5, 30.25, 34.0, True), (5, 1, 100.0, 60.0, 20.5, False), (6, 2, 1.0, 2.0, math.nan, None)]
    write_tracks(tmp_path / "t.csv", rows)
    back = read_tracks(tmp_path / "t.csv")
    assert back[:2] == rows[:2]
    assert back[2][5] is None and math.isnan(back[2][4])
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "frame,track_id,u,v,mean_temp_C,is_person"


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_random_rasters_round_trip(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 40, 2)
    d = _random_depth(rng, h, w)
    assert decode_depth(encode_depth(d)).tobytes() == d.tobytes()
    t = rng.normal(20, 30, (h, w))
    assert decode_temperature_csv(encode_temperature_csv(t)).tobytes() == t.tobytes()
