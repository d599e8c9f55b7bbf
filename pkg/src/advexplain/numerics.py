"""Array primitives, the seeded generator, and the image transforms used by the attacks.

Arrays are plain :class:`numpy.ndarray` objects computed in float64. The TSR1
file format stores them as little-endian float32.

Random streams
--------------
:class:`Rng` is a keyed counter-based generator: Philox-4x64 with the 128-bit
key ``seed | stream << 64`` and a counter starting at zero. Every raw 64-bit
word ``r`` maps to a uniform double ``(r >> 11) * 2**-53`` in ``[0, 1)``.
Normal samples use Box-Muller on consecutive uniform pairs ``(u1, u2)``,
emitting ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)`` with
``r = sqrt(-2*log(1 - u1))``. Integer draws use ``lo + floor(u * (hi - lo + 1))``.
These rules are fixed; changing any of them changes every seeded experiment.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import fft as _fft

from ._validation import as_array, check_image, check_same_shape

_MASK64 = (1 << 64) - 1
_TWO_POW_M53 = 2.0**-53

TSR_MAGIC = b"TSR1"


class Rng:
    """Deterministic random stream addressed by ``(seed, stream)``."""

    def __init__(self, seed: int = 0, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._bits = np.random.Philox(key=self.seed | (self.stream << 64))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def clone(self) -> "Rng":
        """Copy including the current counter position."""
        other = Rng(self.seed, self.stream)
        other._bits.state = self._bits.state
        return other

    def fork(self, name: str) -> "Rng":
        """Independent child stream; depends only on (seed, stream, name)."""
        digest = hashlib.blake2b(f"{self.stream}/{name}".encode(), digest_size=8).digest()
        return Rng(self.seed, int.from_bytes(digest, "little"))

    def raw(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        return self._bits.random_raw(n)

    def random(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def integers(self, lo: int, hi: int, size: int | None = None):
        """Uniform integers in the closed range ``[lo, hi]``."""
        if hi < lo:
            raise ValueError("hi must be >= lo")
        n = 1 if size is None else size
        u = self.random(n)
        out = np.minimum(lo + np.floor(u * (hi - lo + 1)).astype(np.int64), hi)
        return int(out[0]) if size is None else out


def _shape_tuple(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def uniform(rng: Rng, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    if lo > hi:
        raise ValueError("uniform requires lo <= hi")
    shape = _shape_tuple(shape)
    u = rng.random(int(np.prod(shape)))
    out = lo + (hi - lo) * u
    if hi > lo:
        out = np.minimum(out, np.nextafter(hi, lo))
    return out.reshape(shape)


def gaussian(rng: Rng, shape, mean: float = 0.0, sigma: float = 1.0) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    shape = _shape_tuple(shape)
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u = rng.random(2 * pairs)
    r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    theta = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return (mean + sigma * z[:n]).reshape(shape)


def sign(t) -> np.ndarray:
    return np.sign(as_array(t, "t"))


def project_linf(x0, x, eps: float, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Clamp ``x`` into the L-inf ball of radius ``eps`` around ``x0``, then into ``[lo, hi]``."""
    x0 = np.asarray(x0, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    check_same_shape(x0, x, ("x0", "x"))
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if lo > hi:
        raise ValueError("lo must be <= hi")
    return np.clip(np.clip(x, x0 - eps, x0 + eps), lo, hi)


def norm(t, p=2) -> float:
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise ValueError("norm of an empty array is undefined")
    flat = np.abs(t.ravel())
    if p == 1:
        return float(flat.sum())
    if p == 2:
        top = flat.max()
        if top == 0:
            return 0.0
        scaled = flat / top  # avoids under/overflow in the squares
        return float(top * np.sqrt(np.dot(scaled, scaled)))
    if p in (np.inf, "inf"):
        return float(flat.max())
    raise ValueError(f"unsupported norm order {p!r}")


def l1_normalize(g: np.ndarray) -> np.ndarray:
    """``g / ||g||_1``; a zero array stays zero."""
    s = np.abs(g).sum()
    if s == 0:
        return np.zeros_like(g)
    return g / s


def _check_spatial(t: np.ndarray) -> None:
    if t.ndim < 2:
        raise ValueError(f"expected trailing (H, W) dims, got shape {t.shape}")


def dct2(t) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the last two axes."""
    t = as_array(t, "t")
    _check_spatial(t)
    return _fft.dctn(t, type=2, norm="ortho", axes=(-2, -1))


def idct2(t) -> np.ndarray:
    """Inverse of :func:`dct2` (orthonormal DCT-III)."""
    t = as_array(t, "t")
    _check_spatial(t)
    return _fft.idctn(t, type=2, norm="ortho", axes=(-2, -1))


# --- image transforms -------------------------------------------------------
#
# The ``_plan`` helpers return ``(output, vjp)`` where ``vjp`` maps a gradient
# with respect to the output back onto the input. Attack strategies need the
# chain rule through each transform; the public wrappers only return images.

VJP = Callable[[np.ndarray], np.ndarray]


def _resize_pad_plan(img: np.ndarray, rng: Rng, low_frac: float) -> tuple[np.ndarray, VJP]:
    if not 0 < low_frac <= 1:
        raise ValueError("low_frac must lie in (0, 1]")
    C, H, W = img.shape
    h = rng.integers(int(np.ceil(low_frac * H)), H)
    w = rng.integers(int(np.ceil(low_frac * W)), W)
    top = rng.integers(0, H - h)
    left = rng.integers(0, W - w)
    rows = (np.arange(h) * H) // h
    cols = (np.arange(w) * W) // w
    out = np.zeros_like(img)
    out[:, top : top + h, left : left + w] = img[:, rows[:, None], cols[None, :]]

    def vjp(g: np.ndarray) -> np.ndarray:
        gin = np.zeros_like(g)
        np.add.at(gin, (slice(None), rows[:, None], cols[None, :]), g[:, top : top + h, left : left + w])
        return gin

    return out, vjp


def resize_pad(img, rng: Rng, low_frac: float = 0.9) -> np.ndarray:
    """Nearest-neighbour downscale to a random size, pasted at a random offset on zeros."""
    out, _ = _resize_pad_plan(check_image(img), rng, low_frac)
    return out


def translate(img, dy: int, dx: int) -> np.ndarray:
    img = check_image(img)
    _, H, W = img.shape
    if abs(dy) >= H or abs(dx) >= W:
        raise ValueError(f"shift ({dy}, {dx}) out of range for {H}x{W} image")
    out = np.zeros_like(img)
    src_y = slice(max(0, -dy), H - max(0, dy))
    src_x = slice(max(0, -dx), W - max(0, dx))
    dst_y = slice(max(0, dy), H - max(0, -dy))
    dst_x = slice(max(0, dx), W - max(0, -dx))
    out[:, dst_y, dst_x] = img[:, src_y, src_x]
    return out


def gaussian_kernel(size: int = 7, std: float = 3.0) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel size must be a positive odd integer")
    d = np.arange(size) - size // 2
    g = np.exp(-(d**2) / (2.0 * std**2))
    k = np.outer(g, g)
    return k / k.sum()


def conv2d_same(img, kernel) -> np.ndarray:
    """Zero-padded 2-D convolution applied independently to each channel."""
    img = as_array(img, "img")
    kernel = as_array(kernel, "kernel")
    _check_spatial(img)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError("kernel must be square")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    r = k // 2
    H, W = img.shape[-2:]
    pad = [(0, 0)] * (img.ndim - 2) + [(r, r), (r, r)]
    padded = np.pad(img, pad)
    out = np.zeros_like(img)
    for u in range(k):
        for v in range(k):
            y0, x0 = 2 * r - u, 2 * r - v
            out += kernel[u, v] * padded[..., y0 : y0 + H, x0 : x0 + W]
    return out


BLOCK_OPS = ("identity", "vflip", "hflip", "scale", "noise")


def _block_bounds(n: int, splits: int) -> list[tuple[int, int]]:
    size = n // splits
    edges = [i * size for i in range(splits)] + [n]
    return list(zip(edges[:-1], edges[1:]))


def _block_transform_plan(
    img: np.ndarray, rng: Rng, splits: int, ops: Sequence[str] = BLOCK_OPS
) -> tuple[np.ndarray, VJP]:
    if splits < 1:
        raise ValueError("splits must be >= 1")
    unknown = set(ops) - set(BLOCK_OPS)
    if not ops or unknown:
        raise ValueError(f"invalid block ops {tuple(ops)}")
    out = img.copy()
    steps = []
    for ys in _block_bounds(img.shape[1], splits):
        for xs in _block_bounds(img.shape[2], splits):
            sl = (slice(None), slice(*ys), slice(*xs))
            block = img[sl]
            op = ops[rng.integers(0, len(ops) - 1)]
            if op == "vflip":
                out[sl] = block[:, ::-1, :]
                steps.append((sl, op, None))
            elif op == "hflip":
                out[sl] = block[:, :, ::-1]
                steps.append((sl, op, None))
            elif op == "scale":
                s = float(uniform(rng, (), 0.5, 1.5))
                raw = block * s
                out[sl] = np.clip(raw, 0.0, 1.0)
                steps.append((sl, op, s * ((raw >= 0.0) & (raw <= 1.0))))
            elif op == "noise":
                raw = block + gaussian(rng, block.shape, 0.0, 0.05)
                out[sl] = np.clip(raw, 0.0, 1.0)
                steps.append((sl, op, ((raw >= 0.0) & (raw <= 1.0)).astype(np.float64)))

    def vjp(g: np.ndarray) -> np.ndarray:
        gin = g.copy()
        for sl, op, factor in steps:
            if op == "vflip":
                gin[sl] = g[sl][:, ::-1, :]
            elif op == "hflip":
                gin[sl] = g[sl][:, :, ::-1]
            else:
                gin[sl] = g[sl] * factor
        return gin

    return out, vjp


def block_transform(img, rng: Rng, splits: int = 3, ops: Sequence[str] = BLOCK_OPS) -> np.ndarray:
    """Apply one randomly chosen structure-preserving op to each of ``splits**2`` blocks."""
    out, _ = _block_transform_plan(check_image(img), rng, splits, ops)
    return out


# --- TSR1 serialization -----------------------------------------------------


def write_tensor(path, t) -> None:
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("refusing to write non-finite tensor")
    header = TSR_MAGIC + struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
    Path(path).write_bytes(header + t.astype("<f4").tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != TSR_MAGIC:
        raise ValueError(f"{path}: not a TSR1 file")
    (rank,) = struct.unpack_from("<I", data, 4)
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(data) - offset != 4 * count:
        raise ValueError(f"{path}: payload size does not match shape {dims}")
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    return arr.astype(np.float64).reshape(dims)
