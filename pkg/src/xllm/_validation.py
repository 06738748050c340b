"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils.validation import check_array

from .errors import DataError, DimensionError, LengthError


def check_frames(X, d_in: int, min_length: int = 1) -> list[np.ndarray]:
    """A sequence of ``[U_i, d_in]`` finite float arrays, each at least ``min_length`` frames."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if len(X) == 0:
        raise LengthError("no utterances given")
    out = []
    for i, x in enumerate(X):
        try:
            arr = check_array(x, dtype=np.float64, ensure_min_samples=1)
        except ValueError as exc:
            raise DataError(f"utterance {i}: {exc}") from None
        if arr.shape[1] != d_in:
            raise DimensionError(f"utterance {i} has {arr.shape[1]} features per frame, expected {d_in}")
        if arr.shape[0] < min_length:
            raise LengthError(f"utterance {i} has {arr.shape[0]} frames, needs at least {min_length}")
        out.append(arr)
    return out


def check_transcripts(y, n: int, alphabet: str | None = None) -> list[str]:
    y = list(y)
    if len(y) != n:
        raise DataError(f"{len(y)} transcripts for {n} utterances")
    for i, t in enumerate(y):
        if not isinstance(t, str) or not t:
            raise LengthError(f"transcript {i} must be a non-empty string")
        if alphabet is not None and set(t) - set(alphabet):
            raise DataError(f"transcript {i} uses symbols outside the alphabet: {sorted(set(t) - set(alphabet))}")
    return y


def check_pixels(x, size: int, channels: int = 3, ndim: int = 3) -> np.ndarray:
    """An ``[H, W, C]`` image (``ndim=3``) or ``[F, H, W, C]`` clip (``ndim=4``) of finite floats."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if arr.shape[-3:] != (size, size, channels):
        raise DimensionError(f"expected trailing shape {(size, size, channels)}, got {arr.shape[-3:]}")
    if not np.all(np.isfinite(arr)):
        raise DataError("pixels contain NaN or infinity")
    return arr


def check_instruction(text) -> str:
    if not isinstance(text, str) or not text.strip():
        raise LengthError("instruction must be a non-empty string")
    return text


def check_query(item: dict, size: int, d_in: int) -> dict:
    """One prediction request: ``instruction`` plus any of ``image``, ``video``, ``speech``."""
    if not isinstance(item, dict):
        raise DataError("each request must be a dict")
    unknown = set(item) - {"instruction", "image", "video", "speech"}
    if unknown:
        raise DataError(f"unknown request fields {sorted(unknown)}")
    out = {"instruction": check_instruction(item.get("instruction"))}
    if item.get("image") is not None:
        out["image"] = check_pixels(item["image"], size)
    if item.get("video") is not None:
        out["video"] = check_pixels(item["video"], size, ndim=4)
    if item.get("speech") is not None:
        out["speech"] = check_frames([item["speech"]], d_in)[0]
    return out


def check_sequence_of_queries(X: Sequence[dict], size: int, d_in: int) -> list[dict]:
    if isinstance(X, dict):
        X = [X]
    return [check_query(x, size, d_in) for x in X]
