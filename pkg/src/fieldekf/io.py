"""File formats: PGM images, CSV tables, key-value configs and map sidecars."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from fieldekf.camera import GaussianBumps, MapModel


# -- PGM --------------------------------------------------------------------

def write_pgm(path, data: np.ndarray, maxval: int = 65535) -> None:
    """Binary PGM (P5) of integer samples; 16-bit samples are big-endian per the format."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if data.min() < 0 or data.max() > maxval:
        raise ValueError("PGM samples out of range")
    dtype = ">u2" if maxval > 255 else "u1"
    rows, cols = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data, dtype=dtype).tobytes())


def _pgm_tokens(raw: bytes, count: int):
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a P2 or P5 PGM; returns (integer samples, maxval)."""
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(raw, 4)
    cols, rows, maxval = int(w), int(h), int(maxval)
    if magic == b"P5":
        dtype = ">u2" if maxval > 255 else "u1"
        count = rows * cols
        if len(raw) - offset < count * np.dtype(dtype).itemsize:
            raise ValueError(f"{path}: truncated PGM data")
        data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    elif magic == b"P2":
        data = np.array(raw[offset:].split(), dtype=np.int64)[: rows * cols]
    else:
        raise ValueError(f"{path}: not a PGM file")
    if data.size != rows * cols:
        raise ValueError(f"{path}: truncated PGM data")
    return data.reshape(rows, cols).astype(np.int64), maxval


def quantize(values: np.ndarray, lo: float = 0.0, hi: float = 1.0, maxval: int = 65535):
    """Affine map [lo, hi] -> [0, maxval] with rounding; returns (codes, clipped count)."""
    scaled = (np.asarray(values, dtype=float) - lo) / (hi - lo) * maxval
    clipped = int(((scaled < -0.5) | (scaled > maxval + 0.5)).sum())
    return np.clip(np.rint(scaled), 0, maxval).astype(np.int64), clipped


def dequantize(codes: np.ndarray, lo: float = 0.0, hi: float = 1.0, maxval: int = 65535) -> np.ndarray:
    return lo + codes.astype(float) / maxval * (hi - lo)


def quantization_error(lo: float = 0.0, hi: float = 1.0, maxval: int = 65535) -> float:
    """Largest rounding error of ``quantize`` inside the range."""
    return 0.5 * (hi - lo) / maxval


# -- CSV --------------------------------------------------------------------

def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in row])


def read_csv(path, required):
    """Read a numeric CSV; returns (columns dict of float arrays, header).

    Raises ValueError naming the file and line on malformed content.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise ValueError(f"{path}:1: missing columns {missing}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, j].copy() for j, name in enumerate(header)}, header


# -- key-value configs ------------------------------------------------------

def read_keyvalue(path) -> dict:
    """``key = value`` or ``key value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        else:
            parts = line.split(None, 1)
            key, value = parts[0], parts[1] if len(parts) > 1 else ""
        out[key.strip()] = value.strip()
    return out


def write_keyvalue(path, values: dict) -> None:
    lines = []
    for key, value in values.items():
        if isinstance(value, (float, np.floating)):
            value = repr(float(value))
        elif isinstance(value, (np.integer, bool)):
            value = str(value)
        elif isinstance(value, (list, tuple)):
            value = " ".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- maps -------------------------------------------------------------------

def _r(v) -> str:
    return repr(float(v))


def write_map(directory, map_model: MapModel, name: str = "map") -> Path:
    """Write ``<name>.pgm`` (16-bit) plus the ``<name>.txt`` metadata sidecar."""
    directory = Path(directory)
    codes, _ = quantize(map_model.intensity)
    write_pgm(directory / f"{name}.pgm", codes)
    lines = [
        f"pitch {_r(map_model.pitch[0])} {_r(map_model.pitch[1])}",
        f"origin {_r(map_model.origin[0])} {_r(map_model.origin[1])}",
    ]
    if map_model.elevation is not None:
        lo, hi = float(map_model.elevation.min()), float(map_model.elevation.max())
        if hi <= lo:
            hi = lo + 1.0
        ecodes, _ = quantize(map_model.elevation, lo, hi)
        write_pgm(directory / f"{name}_elevation.pgm", ecodes)
        lines.append(f"elevation {name}_elevation.pgm {_r(lo)} {_r(hi)}")
    if map_model.analytic is not None:
        b = map_model.analytic
        lines.append(f"bumps_offset {_r(b.offset)}")
        lines.append(f"bumps_gain {_r(b.gain)}")
        for (cx, cy), w, a in zip(b.centers, b.widths, b.amplitudes):
            lines.append(f"bump {_r(cx)} {_r(cy)} {_r(w)} {_r(a)}")
    sidecar = directory / f"{name}.txt"
    sidecar.write_text("\n".join(lines) + "\n")
    return sidecar


def read_map(pgm_path, sidecar_path=None, mode: str = "raster") -> MapModel:
    pgm_path = Path(pgm_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else pgm_path.with_suffix(".txt")
    codes, maxval = read_pgm(pgm_path)
    intensity = dequantize(codes, 0.0, 1.0, maxval)
    pitch = (1.0, 1.0)
    origin = (0.0, 0.0)
    elevation = None
    bumps = []
    offset, gain = 0.0, 1.0
    for lineno, line in enumerate(sidecar_path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        key, vals = parts[0], parts[1:]
        try:
            if key == "pitch":
                pitch = (float(vals[0]), float(vals[1]))
            elif key == "origin":
                origin = (float(vals[0]), float(vals[1]))
            elif key == "elevation":
                ecodes, emax = read_pgm(sidecar_path.parent / vals[0])
                elevation = dequantize(ecodes, float(vals[1]), float(vals[2]), emax)
            elif key == "bumps_offset":
                offset = float(vals[0])
            elif key == "bumps_gain":
                gain = float(vals[0])
            elif key == "bump":
                bumps.append([float(v) for v in vals[:4]])
            else:
                raise ValueError(f"unknown key {key!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{sidecar_path}:{lineno}: {exc}") from None
    analytic = None
    if bumps or "bumps_gain" in sidecar_path.read_text():
        arr = np.array(bumps, dtype=float).reshape(-1, 4)
        analytic = GaussianBumps(arr[:, :2], arr[:, 2], arr[:, 3], offset, gain)
    return MapModel(intensity, pitch, origin, elevation, analytic, mode if analytic is not None else "raster")
