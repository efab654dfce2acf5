"""Input-validation helpers shared by estimators, service, and CLI."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .scenes import Dataset, IMAGE_ERROR_HINT, VocabularyError


def as_dataset(source) -> Dataset:
    """Accept a Dataset, a manifest path, or a directory holding manifest.json."""
    if isinstance(source, Dataset):
        return source
    if isinstance(source, (str, Path)):
        return Dataset.load(source)
    raise TypeError(f"expected Dataset or path, got {type(source).__name__}")


def check_image_batch(images, expected_shape=(3, 64, 64)) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != expected_shape:
        raise ValueError(IMAGE_ERROR_HINT.format(got=arr.shape))
    if not np.isfinite(arr).all():
        raise ValueError("image batch contains non-finite values")
    return arr


def check_tokens(dataset: Dataset, text) -> list:
    """Tokenize text against the dataset vocabulary; raises VocabularyError."""
    return dataset.tokenize(text)


def check_positive_int(name: str, value, upper=None) -> int:
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if v < 1 or (upper is not None and v > upper):
        bound = f" and <= {upper}" if upper is not None else ""
        raise ValueError(f"{name} must be >= 1{bound}, got {v}")
    return v


__all__ = ["as_dataset", "check_image_batch", "check_tokens", "check_positive_int",
           "VocabularyError"]
