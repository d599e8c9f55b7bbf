"""Input checks shared by the estimators and the functional API."""

from __future__ import annotations

import numpy as np


def as_array(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_image(x, name: str = "img") -> np.ndarray:
    """Return ``x`` as a float64 (C, H, W) array or raise."""
    arr = as_array(x, name)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (C, H, W), got {arr.shape}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, names: tuple[str, str] = ("a", "b")) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {names[0]}{a.shape} vs {names[1]}{b.shape}")


def check_label(y, num_classes: int) -> int:
    y = int(y)
    if not 0 <= y < num_classes:
        raise ValueError(f"label {y} out of range for {num_classes} classes")
    return y


def check_batch(X, input_shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce a batch of samples to shape (N, *input_shape)."""
    arr = as_array(X, "X")
    if arr.ndim < 2:
        raise ValueError(f"expected a batch of samples, got shape {arr.shape}")
    if input_shape is not None and arr.shape[1:] != tuple(input_shape):
        if int(np.prod(arr.shape[1:])) != int(np.prod(input_shape)):
            raise ValueError(
                f"sample shape {arr.shape[1:]} incompatible with model input {tuple(input_shape)}"
            )
        arr = arr.reshape((arr.shape[0],) + tuple(input_shape))
    return arr
