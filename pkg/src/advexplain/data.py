"""Datasets: PPM/PGM directories with a labels.csv, or seeded synthetic blob images."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Rng, gaussian

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray
    provenance: str
    names: list[str]

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(zip(self.images, self.labels))


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 3
    per_class: int = 100
    side: int = 16
    seed: int = 7


def blob_centers(classes: int, side: int) -> list[tuple[float, float]]:
    """Class blob centres spaced evenly on a circle of radius side/4 around the image centre."""
    mid = (side - 1) / 2.0
    r = side / 4.0
    return [
        (mid + r * np.sin(2 * np.pi * c / classes), mid + r * np.cos(2 * np.pi * c / classes))
        for c in range(classes)
    ]


def synthetic_blobs(spec: SyntheticSpec) -> Dataset:
    """Gaussian bump (peak 1, std side/6) at a class-specific spot on N(0.1, 0.02^2) noise."""
    if spec.classes < 2 or spec.per_class < 1 or spec.side < 2:
        raise ValueError(f"invalid synthetic spec {spec}")
    s = spec.side
    rng = Rng(spec.seed).fork("synthetic-blobs")
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    std = s / 6.0
    images, labels, names = [], [], []
    for c, (cy, cx) in enumerate(blob_centers(spec.classes, s)):
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * std**2))
        for i in range(spec.per_class):
            noise = gaussian(rng, (s, s), 0.1, 0.02)
            images.append(np.clip(noise + blob, 0.0, 1.0)[None])
            labels.append(c)
            names.append(f"class{c}_{i:04d}")
    return Dataset(np.stack(images), np.asarray(labels), "synthetic-blobs", names)


# --- netpbm -------------------------------------------------------------------


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    toks, i = [], 0
    while len(toks) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i >= len(data):
            raise ValueError("truncated header")
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        toks.append(data[i:j])
        i = j
    return toks, i


def read_netpbm(path) -> np.ndarray:
    """Read a PGM/PPM file (P2, P3, P5, P6) as a (C, H, W) float array in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported image format {magic!r}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    (w, h, maxval), end = _tokens(data[2:], 3)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    count = w * h * channels
    if magic in (b"P2", b"P3"):
        vals, _ = _tokens(data[2 + end :], count)
        arr = np.array([int(v) for v in vals], dtype=np.float64)
    else:
        body = data[2 + end + 1 :]
        dtype = ">u1" if maxval < 256 else ">u2"
        need = count * np.dtype(dtype).itemsize
        if len(body) < need:
            raise ValueError(f"{path}: truncated pixel data")
        arr = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    return (arr.reshape(h, w, channels) / maxval).transpose(2, 0, 1)


def write_netpbm(path, img, maxval: int = 255) -> None:
    """Write a (C, H, W) array in [0, 1] as binary PGM (C=1) or PPM (C=3)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.shape[0] not in (1, 3):
        raise ValueError("netpbm output needs 1 or 3 channels")
    magic = b"P5" if img.shape[0] == 1 else b"P6"
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).transpose(1, 2, 0)
    dtype = ">u1" if maxval < 256 else ">u2"
    header = magic + f"\n{img.shape[2]} {img.shape[1]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + q.astype(dtype).tobytes())


def write_dataset(ds: Dataset, directory, maxval: int = 65535) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = ".pgm" if ds.images.shape[1] == 1 else ".ppm"
    with open(directory / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label"])
        for name, img, label in zip(ds.names, ds.images, ds.labels):
            write_netpbm(directory / f"{name}{suffix}", img, maxval)
            writer.writerow([f"{name}{suffix}", int(label)])


def load_directory(directory, num_classes: int | None = None) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"{directory}: not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"{directory}: no PGM/PPM images found")
    label_file = directory / "labels.csv"
    if not label_file.exists():
        raise ValueError(f"{label_file}: missing")
    labels: dict[str, int] = {}
    with open(label_file, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip() == "filename":
                continue
            try:
                labels[row[0].strip()] = int(row[1])
            except (IndexError, ValueError):
                raise ValueError(f"{label_file}: bad row {row}") from None
    images, ys = [], []
    for f in files:
        if f.name not in labels:
            raise ValueError(f"{f}: no label row in labels.csv")
        try:
            img = read_netpbm(f)
        except (OSError, ValueError) as exc:
            raise ValueError(f"{f}: unreadable ({exc})") from None
        if images and img.shape != images[0].shape:
            raise ValueError(f"{f}: shape {img.shape} differs from {images[0].shape}")
        if num_classes is not None and not 0 <= labels[f.name] < num_classes:
            raise ValueError(f"{f}: label {labels[f.name]} out of range")
        images.append(img)
        ys.append(labels[f.name])
    return Dataset(np.stack(images), np.asarray(ys), "ppm-dir", [f.name for f in files])


def load_dataset(source) -> Dataset:
    """Load from a directory path or generate from a :class:`SyntheticSpec`."""
    if isinstance(source, SyntheticSpec):
        return synthetic_blobs(source)
    return load_directory(source)
