"""File formats: PNG images, PFM depth maps, PLY point clouds, CSV logs,
and a small binary checkpoint container with a version header."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

CHECKPOINT_MAGIC = b"AFCK"
CHECKPOINT_VERSION = 1


def write_png(path, image) -> None:
    """Save an (H, W, 3) float array in [0, 1] as 8-bit RGB."""
    arr = np.asarray(image, dtype=np.float64)
    arr = np.clip(arr * 255.0 + 0.5, 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    """Load an 8-bit RGB PNG as (H, W, 3) float32 in [0, 1]."""
    arr = np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_pfm(path, data, scale: float = 1.0) -> None:
    """Save an (H, W) float array as grayscale PFM (little-endian, bottom-up)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("PFM writer expects a single-channel map")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode())
        f.write(f"{-abs(scale)}\n".encode())  # negative scale marks little-endian
        f.write(arr[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise ValueError(f"not a grayscale PFM file: {header!r}")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * 4), dtype=dtype).reshape(h, w)
    return np.ascontiguousarray(data[::-1]).astype(np.float32)


def write_ply(path, points, colors) -> None:
    """Save an ASCII PLY of (N, 3) points with (N, 3) colors in [0, 1]."""
    pts = np.asarray(points, dtype=np.float64)
    cols = np.clip(np.asarray(colors, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(pts)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write("end_header\n")
        for p, c in zip(pts, cols):
            f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def append_csv_row(path, header, row) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new:
            writer.writerow(header)
        writer.writerow(row)


def save_checkpoint(path, meta: dict, arrays: dict) -> None:
    """Write named arrays plus a JSON meta block to one binary file.

    Layout: magic, u32 version, u64 header length, JSON header (meta and an
    array index with dtype/shape), then the raw array bytes in index order.
    """
    index = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        index.append({"name": name, "dtype": str(a.dtype), "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta, "arrays": index}).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (meta, {name: array})."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen))
        arrays = {}
        for entry in header["arrays"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            dtype = np.dtype(entry["dtype"])
            data = np.frombuffer(f.read(count * dtype.itemsize), dtype=dtype)
            arrays[entry["name"]] = data.reshape(entry["shape"]).copy()
    return header["meta"], arrays
