"""Fixed-stride clip sampling: the temporal subsequences fed to the network.

A clip takes every stride-th frame starting from a small random offset, so
over many epochs training sees most of each sequence while each step stays
within a fixed memory budget. With the defaults (210 frames, stride 7,
clip length 30) the seven possible clips partition the sequence exactly.
Evaluation always uses the deterministic start-0 clip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .renderer import VideoSequence


class ClipTooLong(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class ClipSpec:
    """Clip geometry; start is 0-based in [0, stride-1]."""

    sequence_length: int = 210
    stride: int = 7
    clip_length: int = 30
    start: int = 0

    def __post_init__(self):
        if min(self.sequence_length, self.stride, self.clip_length) < 1:
            raise ValueError("sequence_length, stride, and clip_length must be positive")
        if not (0 <= self.start < self.stride):
            raise ValueError(f"start must be in [0, stride), got {self.start}")
        last = self.start + self.stride * (self.clip_length - 1)
        if last > self.sequence_length - 1:
            raise ClipTooLong(
                f"clip reaches frame {last} of a {self.sequence_length}-frame sequence"
            )


def _valid_starts(sequence_length: int, stride: int, clip_length: int) -> int:
    """Number of start offsets whose clip stays inside the sequence."""
    span = stride * (clip_length - 1)
    if span > sequence_length - 1:
        raise ClipTooLong(
            f"clip of {clip_length} frames at stride {stride} does not fit in "
            f"{sequence_length} frames"
        )
    return min(stride, sequence_length - span)


def sample_training_clip(
    sequence_length: int, stride: int, clip_length: int, rng: np.random.Generator
) -> np.ndarray:
    """Frame indices of one training clip with a uniformly random start offset."""
    n_starts = _valid_starts(sequence_length, stride, clip_length)
    start = int(rng.integers(0, n_starts))
    return np.arange(start, start + stride * clip_length, stride, dtype=np.int64)


def sample_eval_clip(sequence_length: int, stride: int, clip_length: int) -> np.ndarray:
    """Frame indices of the deterministic evaluation clip (start 0)."""
    _valid_starts(sequence_length, stride, clip_length)
    return np.arange(0, stride * clip_length, stride, dtype=np.int64)


def gather_clip(seq: VideoSequence, indices, dtype=np.float32) -> np.ndarray:
    """Stack the selected frames into a (3, T, H, W) tensor scaled to [0, 1]."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= seq.frame_count):
        raise IndexOutOfRange(
            f"clip indices must lie in [0, {seq.frame_count}), got "
            f"[{indices.min()}, {indices.max()}]"
        )
    frames = seq.frames[indices]  # (T, H, W, 3)
    clip = frames.astype(dtype) / np.asarray(255.0, dtype=dtype)
    return np.ascontiguousarray(clip.transpose(3, 0, 1, 2))
