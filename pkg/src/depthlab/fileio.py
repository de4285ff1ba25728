"""Bit-exact file IO: grayscale PFM grids, ASCII PLY point clouds, flow
fields stored as one PFM per channel, and diff-stable JSON reports.

PFM layout: three newline-terminated header lines ("Pf", "<width> <height>",
"<scale>") followed by float32 rows stored bottom-to-top, left-to-right.
A negative scale marks little-endian payloads. NaN encodes a masked-out
pixel.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .core import DepthMap, PointCloud
from .errors import ParseError, ValidationError

PathLike = Union[str, Path]


def _read_header_line(buf: bytes, pos: int) -> tuple[bytes, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise ParseError("unterminated PFM header line", offset=pos)
    return buf[pos:end], end + 1


def read_pfm_grid(path: PathLike) -> np.ndarray:
    """Read a grayscale PFM into a float32 (h, w) array, top row first."""
    buf = Path(path).read_bytes()
    tag, pos = _read_header_line(buf, 0)
    if tag == b"PF":
        raise ParseError("color PFM not supported, expected grayscale 'Pf'", offset=0)
    if tag != b"Pf":
        raise ParseError(f"bad PFM magic {tag!r}", offset=0)

    dims_at = pos
    dims, pos = _read_header_line(buf, pos)
    parts = dims.split()
    try:
        width, height = int(parts[0]), int(parts[1])
    except (IndexError, ValueError):
        raise ParseError(f"bad PFM dimensions line {dims!r}", offset=dims_at) from None
    if len(parts) != 2 or width <= 0 or height <= 0:
        raise ParseError(f"bad PFM dimensions line {dims!r}", offset=dims_at)

    scale_at = pos
    scale_line, pos = _read_header_line(buf, pos)
    try:
        scale = float(scale_line)
    except ValueError:
        raise ParseError(f"bad PFM scale line {scale_line!r}", offset=scale_at) from None
    if scale == 0:
        raise ParseError("PFM scale must be nonzero", offset=scale_at)

    n_bytes = width * height * 4
    payload = buf[pos:pos + n_bytes]
    if len(payload) < n_bytes:
        raise ParseError(
            f"truncated PFM payload: expected {n_bytes} bytes, got {len(payload)}",
            offset=pos + len(payload),
        )
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    grid = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    # rows are stored bottom-to-top
    return np.ascontiguousarray(grid[::-1]).astype("<f4")


def write_pfm_grid(grid: np.ndarray, path: PathLike) -> None:
    """Write a float32 (h, w) grid as little-endian grayscale PFM."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValidationError("PFM grid must be 2-D")
    height, width = grid.shape
    data = np.ascontiguousarray(grid[::-1].astype("<f4"))
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(data.tobytes())


def read_pfm(path: PathLike) -> DepthMap:
    """Read a PFM depth map. NaN (and nonpositive) entries become invalid."""
    grid = read_pfm_grid(path).astype(np.float64)
    mask = np.isfinite(grid) & (grid > 0)
    values = np.where(mask, grid, np.nan)
    return DepthMap(values, mask)


def write_pfm(depth: DepthMap, path: PathLike) -> None:
    """Write a depth map as PFM; masked-out pixels are stored as NaN."""
    grid = np.where(depth.mask, depth.values, np.nan).astype(np.float32)
    write_pfm_grid(grid, path)


def _fmt_num(x: float) -> str:
    # integral floats print as integers ("0 0 1"), others as shortest repr
    f = float(x)
    if f.is_integer():
        return str(int(f))
    return repr(f)


def write_ply(cloud: PointCloud, path: PathLike) -> None:
    """Write an ASCII PLY; one vertex line per point, colors when present."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if cloud.colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    for i in range(len(cloud)):
        x, y, z = cloud.points[i]
        vertex = f"{_fmt_num(x)} {_fmt_num(y)} {_fmt_num(z)}"
        if cloud.colors is not None:
            r, g, b = cloud.colors[i]
            vertex += f" {r} {g} {b}"
        lines.append(vertex)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_flow_channels(dx: np.ndarray, dy: np.ndarray, mask: np.ndarray,
                        prefix: PathLike) -> None:
    """Write a flow field as <prefix>.dx.pfm / <prefix>.dy.pfm (NaN = invalid)."""
    prefix = str(prefix)
    write_pfm_grid(np.where(mask, dx, np.nan).astype(np.float32), prefix + ".dx.pfm")
    write_pfm_grid(np.where(mask, dy, np.nan).astype(np.float32), prefix + ".dy.pfm")


def read_flow_channels(prefix: PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read <prefix>.dx.pfm / <prefix>.dy.pfm; returns (dx, dy, mask) float64/bool."""
    prefix = str(prefix)
    dx = read_pfm_grid(prefix + ".dx.pfm").astype(np.float64)
    dy = read_pfm_grid(prefix + ".dy.pfm").astype(np.float64)
    if dx.shape != dy.shape:
        raise ValidationError(
            f"flow channel shapes differ: {dx.shape} vs {dy.shape}"
        )
    mask = np.isfinite(dx) & np.isfinite(dy)
    return dx, dy, mask


def save_arrays_npz(path: PathLike, **arrays) -> None:
    """np.savez with a fixed zip timestamp, so identical arrays give
    byte-identical files (np.load reads them as usual)."""
    import io
    import zipfile

    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def dump_json(obj, path: PathLike) -> None:
    """Write JSON with sorted keys and full-precision (round-trip) floats."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_json(path: PathLike):
    return json.loads(Path(path).read_text(encoding="utf-8"))
