"""On-disk formats.

=============  ==========================================================
depth image    binary PGM (P5), 16 bit, millimeters, 0 = invalid
thermal/fused  CSV of decimal degC, one raster row per line, ``nan`` = invalid
mask           binary PGM (P5), 8 bit, 0 / 255
visualization  binary PGM (P5), 8 bit, linear gray ramp between the
               ``tmin``/``tmax`` given in a header comment
calibration    ``key = value`` lines (also used for config files)
scene          one primitive per line, see :func:`parse_scene`
=============  ==========================================================

16-bit PGM samples are big-endian as Netpbm requires; all text output uses
LF line endings. Parse failures raise :class:`FormatError` naming the line
or byte offset.
"""

from __future__ import annotations

import math
import os
import re
from pathlib import Path

import numpy as np

from .geometry import Extrinsics, Intrinsics, TaitBryanAngles
from .simulation import Disc, Rect, SceneSpec

MAX_DIMENSION = 1 << 16
MAX_DEPTH_MM = 65535


class FormatError(ValueError):
    def __init__(self, message: str, source: str | os.PathLike | None = None, line: int | None = None,
                 offset: int | None = None):
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.offset = offset


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------


def encode_pgm(data: np.ndarray, maxval: int, comments: tuple[str, ...] = ()) -> bytes:
    data = np.asarray(data)
    h, w = data.shape
    header = "P5\n" + "".join(f"# {c}\n" for c in comments) + f"{w} {h}\n{maxval}\n"
    dtype = ">u2" if maxval > 255 else "u1"
    return header.encode("ascii") + data.astype(dtype).tobytes()


_TOKEN = re.compile(rb"\s*((?:#[^\n]*\n\s*)*)(\S+)")


def decode_pgm(buf: bytes, source=None) -> tuple[np.ndarray, int, list[str]]:
    """Parse a binary PGM. Returns ``(samples, maxval, comments)``."""
    if not buf.startswith(b"P5"):
        raise FormatError("not a binary PGM (missing P5 magic)", source, offset=0)
    pos = 2
    values = []
    comments: list[str] = []
    for name in ("width", "height", "maxval"):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise FormatError(f"truncated header, expected {name}", source, offset=pos)
        for c in re.findall(rb"#([^\n]*)\n", m.group(1)):
            comments.append(c.decode("ascii", "replace").strip())
        tok = m.group(2)
        if not tok.isdigit():
            raise FormatError(f"bad {name} {tok[:20]!r}", source, offset=m.start(2))
        values.append(int(tok))
        pos = m.end()
    w, h, maxval = values
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise FormatError("missing whitespace after maxval", source, offset=pos)
    pos += 1
    if not (1 <= w <= MAX_DIMENSION and 1 <= h <= MAX_DIMENSION):
        raise FormatError(f"dimensions {w}x{h} out of range", source)
    if not 1 <= maxval <= 65535:
        raise FormatError(f"maxval {maxval} out of range", source)
    nbytes = 2 if maxval > 255 else 1
    need = w * h * nbytes
    if len(buf) - pos != need:
        raise FormatError(f"expected {need} bytes of pixel data, found {len(buf) - pos}", source, offset=pos)
    data = np.frombuffer(buf, dtype=">u2" if nbytes == 2 else "u1", count=w * h, offset=pos)
    data = data.reshape(h, w).astype(np.int64)
    if data.max(initial=0) > maxval:
        raise FormatError(f"sample exceeds maxval {maxval}", source)
    return data, maxval, comments


def encode_depth(depth: np.ndarray) -> bytes:
    """Depth in meters (NaN or <= 0 invalid) to 16-bit millimeter PGM bytes."""
    depth = np.asarray(depth, dtype=float)
    valid = np.isfinite(depth) & (depth > 0)
    mm = np.where(valid, np.rint(np.where(valid, depth, 0) * 1000.0), 0)
    if np.any(mm > MAX_DEPTH_MM):
        raise FormatError(f"depth beyond {MAX_DEPTH_MM / 1000} m cannot be stored")
    mm = np.where(valid, np.maximum(mm, 1), 0)
    return encode_pgm(mm.astype(np.uint16), MAX_DEPTH_MM)


def decode_depth(buf: bytes, source=None) -> np.ndarray:
    data, maxval, _ = decode_pgm(buf, source)
    if maxval <= 255:
        raise FormatError("depth images must be 16-bit PGM", source)
    return np.where(data > 0, data / 1000.0, np.nan)


def write_depth(path, depth: np.ndarray) -> None:
    Path(path).write_bytes(encode_depth(depth))


def read_depth(path) -> np.ndarray:
    return decode_depth(Path(path).read_bytes(), path)


def write_mask(path, mask: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(np.where(np.asarray(mask, dtype=bool), 255, 0), 255))


def read_mask(path) -> np.ndarray:
    data, maxval, _ = decode_pgm(Path(path).read_bytes(), path)
    if maxval != 255 or not np.all((data == 0) | (data == 255)):
        raise FormatError("mask must be 8-bit with samples 0 or 255", path)
    return data == 255


def encode_visualization(temps: np.ndarray, tmin: float | None = None, tmax: float | None = None) -> bytes:
    """8-bit gray image: ``gray = round(255 * (T - tmin) / (tmax - tmin))``, clipped; NaN is 0."""
    temps = np.asarray(temps, dtype=float)
    ok = np.isfinite(temps)
    if tmin is None:
        tmin = float(temps[ok].min()) if ok.any() else 0.0
    if tmax is None:
        tmax = float(temps[ok].max()) if ok.any() else 1.0
    span = tmax - tmin if tmax > tmin else 1.0
    gray = np.clip(np.rint(255.0 * (np.where(ok, temps, tmin) - tmin) / span), 0, 255)
    gray = np.where(ok, gray, 0)
    return encode_pgm(gray.astype(np.uint8), 255, (f"tmin={tmin!r} tmax={tmax!r} degC",))


def write_visualization(path, temps, tmin=None, tmax=None) -> None:
    Path(path).write_bytes(encode_visualization(temps, tmin, tmax))


# ---------------------------------------------------------------------------
# temperature CSV
# ---------------------------------------------------------------------------


def _fmt(x: float, digits: int | None) -> str:
    if not math.isfinite(x):
        if math.isnan(x):
            return "nan"
        raise FormatError(f"cannot store non-finite temperature {x}")
    return repr(float(x)) if digits is None else f"{x:.{digits}g}"


def encode_temperature_csv(temps: np.ndarray, digits: int | None = None) -> str:
    """Row-major CSV. ``digits=None`` writes the shortest exact round-trip form."""
    temps = np.asarray(temps, dtype=float)
    if temps.ndim != 2:
        raise FormatError(f"expected a 2D raster, got shape {temps.shape}")
    return "".join(",".join(_fmt(x, digits) for x in row) + "\n" for row in temps.tolist())


def decode_temperature_csv(text: str, source=None) -> np.ndarray:
    rows = []
    width = None
    for n, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        row = []
        for tok in line.split(","):
            tok = tok.strip()
            try:
                x = float(tok)
            except ValueError:
                raise FormatError(f"not a number: {tok[:20]!r}", source, line=n) from None
            if math.isinf(x):
                raise FormatError(f"non-finite value {tok!r}", source, line=n)
            row.append(x)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(f"row has {len(row)} values, expected {width}", source, line=n)
        rows.append(row)
    if not rows:
        raise FormatError("empty raster", source)
    if width > MAX_DIMENSION or len(rows) > MAX_DIMENSION:
        raise FormatError(f"raster {width}x{len(rows)} too large", source)
    if not text.endswith("\n"):
        raise FormatError("file truncated (missing final newline)", source, line=len(text.split("\n")))
    return np.array(rows, dtype=float)


def write_temperature(path, temps: np.ndarray, digits: int | None = None) -> None:
    Path(path).write_text(encode_temperature_csv(temps, digits), encoding="ascii", newline="\n")


def read_temperature(path) -> np.ndarray:
    return decode_temperature_csv(Path(path).read_text(encoding="ascii"), path)


# ---------------------------------------------------------------------------
# key = value files (calibration, config)
# ---------------------------------------------------------------------------


def parse_key_values(text: str, source=None) -> dict[str, str]:
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise FormatError(f"expected 'key = value', got {raw.strip()!r}", source, line=n)
        if key in out:
            raise FormatError(f"duplicate key {key!r}", source, line=n)
        out[key] = value
    return out


def format_key_values(items: dict) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in items.items())


_INTRINSIC_FIELDS = ("fx", "fy", "cx", "cy", "width", "height")
CALIBRATION_KEYS = (
    tuple(f"ir.{f}" for f in _INTRINSIC_FIELDS)
    + tuple(f"tof.{f}" for f in _INTRINSIC_FIELDS)
    + ("t.x", "t.y", "t.z", "angles.a1", "angles.a2", "angles.a3")
)


def encode_calibration(K_ir: Intrinsics, K_tof: Intrinsics, ext: Extrinsics) -> str:
    items: dict = {}
    for prefix, K in (("ir", K_ir), ("tof", K_tof)):
        for f in _INTRINSIC_FIELDS:
            v = getattr(K, f)
            items[f"{prefix}.{f}"] = int(v) if f in ("width", "height") else float(v)
    for axis, v in zip("xyz", ext.t):
        items[f"t.{axis}"] = float(v)
    for name in ("a1", "a2", "a3"):
        items[f"angles.{name}"] = float(getattr(ext.angles, name))
    return format_key_values(items)


def decode_calibration(text: str, source=None) -> tuple[Intrinsics, Intrinsics, Extrinsics]:
    """Returns ``(K_ir, K_tof, extrinsics)``; unknown or missing keys are errors."""
    kv = parse_key_values(text, source)
    unknown = sorted(set(kv) - set(CALIBRATION_KEYS))
    if unknown:
        raise FormatError(f"unknown calibration keys: {', '.join(unknown)}", source)
    missing = [k for k in CALIBRATION_KEYS if k not in kv]
    if missing:
        raise FormatError(f"missing calibration keys: {', '.join(missing)}", source)

    def num(key, kind=float):
        try:
            x = kind(kv[key])
        except ValueError:
            raise FormatError(f"bad value for {key}: {kv[key]!r}", source) from None
        if not math.isfinite(x):
            raise FormatError(f"non-finite value for {key}", source)
        return x

    try:
        Ks = [
            Intrinsics(**{f: num(f"{p}.{f}", int if f in ("width", "height") else float) for f in _INTRINSIC_FIELDS})
            for p in ("ir", "tof")
        ]
        ext = Extrinsics(
            TaitBryanAngles(num("angles.a1"), num("angles.a2"), num("angles.a3")),
            (num("t.x"), num("t.y"), num("t.z")),
        )
    except FormatError:
        raise
    except ValueError as e:
        raise FormatError(str(e), source) from None
    return Ks[0], Ks[1], ext


def write_calibration(path, K_ir: Intrinsics, K_tof: Intrinsics, ext: Extrinsics) -> None:
    Path(path).write_text(encode_calibration(K_ir, K_tof, ext), encoding="ascii", newline="\n")


def read_calibration(path) -> tuple[Intrinsics, Intrinsics, Extrinsics]:
    return decode_calibration(Path(path).read_text(encoding="ascii"), path)


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

_SCENE_ARITY = {"canvas": 2, "background": 2, "noise": 3, "rect": 6, "disc": 5}


def parse_scene(text: str, source=None) -> SceneSpec:
    """Parse a scene description.

    ::

        canvas W H
        background depth temp
        noise sigma_depth sigma_temp seed
        rect x y w h depth temp
        disc cx cy r depth temp

    ``#`` starts a comment. Header lines are optional and default to the
    :class:`SceneSpec` defaults.
    """
    fields: dict = {}
    prims = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        kind, args = line[0], line[1:]
        if kind not in _SCENE_ARITY:
            raise FormatError(f"unknown scene directive {kind!r}", source, line=n)
        if len(args) != _SCENE_ARITY[kind]:
            raise FormatError(f"{kind} takes {_SCENE_ARITY[kind]} values, got {len(args)}", source, line=n)
        try:
            vals = [float(a) for a in args]
        except ValueError:
            raise FormatError(f"non-numeric value in {raw.strip()!r}", source, line=n) from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError("non-finite value", source, line=n)
        if kind == "canvas":
            if not all(v.is_integer() for v in vals):
                raise FormatError("canvas size must be integers", source, line=n)
            fields["width"], fields["height"] = int(vals[0]), int(vals[1])
        elif kind == "background":
            fields["background_depth"], fields["background_temp"] = vals
        elif kind == "noise":
            if not vals[2].is_integer():
                raise FormatError("seed must be an integer", source, line=n)
            fields["sigma_depth"], fields["sigma_temp"], fields["seed"] = vals[0], vals[1], int(vals[2])
        elif kind == "rect":
            prims.append(Rect(*vals))
        else:
            prims.append(Disc(*vals))
    spec = SceneSpec(primitives=tuple(prims), **fields)
    try:
        spec.validate()
    except ValueError as e:
        raise FormatError(str(e), source) from None
    return spec


def format_scene(spec: SceneSpec) -> str:
    lines = [
        f"canvas {spec.width} {spec.height}",
        f"background {spec.background_depth!r} {spec.background_temp!r}",
        f"noise {spec.sigma_depth!r} {spec.sigma_temp!r} {spec.seed}",
    ]
    for p in spec.primitives:
        if isinstance(p, Rect):
            lines.append(f"rect {p.x!r} {p.y!r} {p.w!r} {p.h!r} {p.depth!r} {p.temp!r}")
        else:
            lines.append(f"disc {p.cx!r} {p.cy!r} {p.r!r} {p.depth!r} {p.temp!r}")
    return "\n".join(lines) + "\n"


def read_scene(path) -> SceneSpec:
    return parse_scene(Path(path).read_text(encoding="utf-8"), path)


def write_scene(path, spec: SceneSpec) -> None:
    Path(path).write_text(format_scene(spec), encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def write_curve(path, ranks, cumulative) -> None:
    lines = ["rank,cumulative_error\n"] + [f"{int(r)},{float(c)!r}\n" for r, c in zip(ranks, cumulative)]
    Path(path).write_text("".join(lines), encoding="ascii", newline="\n")


def read_curve(path) -> tuple[np.ndarray, np.ndarray]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "rank,cumulative_error":
        raise FormatError("missing 'rank,cumulative_error' header", path, line=1)
    ranks, cum = [], []
    for n, line in enumerate(lines[1:], start=2):
        try:
            r, c = line.split(",")
            ranks.append(int(r))
            cum.append(float(c))
        except ValueError:
            raise FormatError(f"bad curve row {line!r}", path, line=n) from None
    return np.array(ranks), np.array(cum)


def write_report(path, items: dict) -> None:
    Path(path).write_text(format_key_values(items), encoding="utf-8", newline="\n")


def read_report(path) -> dict[str, str]:
    return parse_key_values(Path(path).read_text(encoding="utf-8"), path)


def write_tracks(path, rows) -> None:
    """Rows of ``(frame, track_id, u, v, mean_temp_C, is_person)``."""
    out = ["frame,track_id,u,v,mean_temp_C,is_person\n"]
    for frame, tid, u, v, temp, person in rows:
        flag = "" if person is None else str(int(bool(person)))
        out.append(f"{frame},{tid},{u:.3f},{v:.3f},{_fmt(temp, 6)},{flag}\n")
    Path(path).write_text("".join(out), encoding="ascii", newline="\n")


def read_tracks(path) -> list[tuple]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "frame,track_id,u,v,mean_temp_C,is_person":
        raise FormatError("missing tracks header", path, line=1)
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 6:
            raise FormatError(f"expected 6 fields, got {len(parts)}", path, line=n)
        try:
            person = None if parts[5] == "" else bool(int(parts[5]))
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]), person))
        except ValueError:
            raise FormatError(f"bad tracks row {line!r}", path, line=n) from None
    return rows
