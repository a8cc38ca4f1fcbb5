"""On-disk formats: silhouette frames, pose JSON and Contour-Pose containers."""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

FOREGROUND_THRESHOLD = 127


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


_PGM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\d+)")


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    pos = 2
    values = []
    for _ in range(3):
        m = _PGM_TOKEN.match(blob, pos)
        if not m:
            raise FormatError(f"{path}: malformed PGM header")
        values.append(int(m.group(1)))
        pos = m.end()
    w, h, maxval = values
    pos += 1  # single whitespace byte before the raster
    dtype = np.uint8 if maxval < 256 else ">u2"
    n = w * h
    data = np.frombuffer(blob, dtype=dtype, count=n, offset=pos)
    if data.size != n:
        raise FormatError(f"{path}: truncated raster")
    return data.reshape(h, w)


def read_mask(path: str | Path) -> np.ndarray:
    """Binary mask from an 8-bit PGM or PNG; values above 127 are foreground."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        img = read_pgm(path)
    elif path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            img = np.asarray(im.convert("L"))
    else:
        raise FormatError(f"unsupported mask format: {path}")
    return img > FOREGROUND_THRESHOLD


def mask_files(directory: str | Path) -> list[Path]:
    d = Path(directory)
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".pgm", ".png"))
    if not files:
        raise FormatError(f"{d}: no .pgm or .png frames")
    return files


def read_mask_dir(directory: str | Path) -> np.ndarray:
    return np.stack([read_mask(p) for p in mask_files(directory)])


def read_pose_json(path: str | Path) -> dict:
    """Pose document ``{"frames": [{"keypoints": [[x, y, conf] x 17]}], ...}``.

    Returns a dict with ``keypoints`` (T, 17, 3) and any metadata keys.
    """
    doc = json.loads(Path(path).read_text())
    try:
        kps = np.array([f["keypoints"] for f in doc["frames"]], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed pose JSON") from exc
    if kps.ndim != 3 or kps.shape[2] != 3:
        raise FormatError(f"{path}: keypoints must be [x, y, conf] triples")
    meta = {k: v for k, v in doc.items() if k != "frames"}
    return {"keypoints": kps, **meta}


# .cpz container -------------------------------------------------------------------

CPZ_MAGIC = b"CPZ1"
_CPZ_HEADER = struct.Struct("<4sIII")


def cpz_dumps(points: np.ndarray, anchors: int) -> bytes:
    pts = np.asarray(points, dtype="<f4")
    if pts.ndim != 3 or pts.shape[2] != 2:
        raise FormatError(f"expected (T, P, 2) points, got {pts.shape}")
    t, p, _ = pts.shape
    return _CPZ_HEADER.pack(CPZ_MAGIC, t, anchors, p) + np.ascontiguousarray(pts).tobytes()


def cpz_loads(blob: bytes) -> tuple[np.ndarray, int]:
    if len(blob) < _CPZ_HEADER.size:
        raise FormatError("truncated .cpz header")
    magic, t, v, p = _CPZ_HEADER.unpack_from(blob)
    if magic != CPZ_MAGIC:
        raise FormatError("not a CPZ1 container")
    n = t * p * 2
    if len(blob) != _CPZ_HEADER.size + 4 * n:
        raise FormatError(f".cpz size {len(blob)} does not match T={t}, P={p}")
    pts = np.frombuffer(blob, dtype="<f4", count=n, offset=_CPZ_HEADER.size).reshape(t, p, 2)
    return pts.astype(np.float32), v
