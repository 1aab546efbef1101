"""Sliding-window encoding of instance sequences."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class SequenceSample:
    """One data point: an ordered sequence of equal-length instance vectors.

    ``label`` is the binary target (+1/-1) and may be left as ``None`` until a
    task assigns it. ``cls`` is the full class id used for relevance.
    """

    modality: int
    instances: np.ndarray
    label: Optional[int] = None
    cls: Optional[int] = None

    def __post_init__(self):
        x = np.asarray(self.instances, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise InvalidArgumentError(
                "instances must be a non-empty list of equal-length non-empty vectors"
            )
        if self.label is not None and self.label not in (1, -1):
            raise InvalidArgumentError(f"label must be +1 or -1, got {self.label!r}")
        object.__setattr__(self, "instances", x)

    @property
    def dim(self) -> int:
        return self.instances.shape[1]

    def __len__(self):
        return self.instances.shape[0]

    def with_label(self, label):
        return SequenceSample(self.modality, self.instances, label, self.cls)


@dataclass(frozen=True, eq=False)
class WindowedSequence:
    windows: np.ndarray  # (n_windows, d * h)
    source_length: int

    def __len__(self):
        return self.windows.shape[0]


def window_count(seq_len: int, h: int) -> int:
    if seq_len < 1 or h < 1:
        raise InvalidArgumentError("sequence length and window size must be >= 1")
    return max(1, seq_len - h + 1)


def _window_matrix(x: np.ndarray, h: int) -> np.ndarray:
    n, d = x.shape
    if n < h:
        # right-pad with zero instances so one full window exists
        x = np.vstack([x, np.zeros((h - n, d))])
        n = h
    # row t holds x[t], ..., x[t+h-1] laid out back to back
    view = np.lib.stride_tricks.sliding_window_view(x, (h, d))[:, 0]
    return view.reshape(n - h + 1, d * h).copy()


def make_windows(sample: SequenceSample, h: int) -> WindowedSequence:
    """Concatenate every run of ``h`` consecutive instances into one vector.

    Sequences shorter than ``h`` are zero-padded on the right and produce
    exactly one window.

    >>> s = SequenceSample(1, [[1, 0], [0, 1], [2, 2]])
    >>> make_windows(s, 2).windows
    array([[1., 0., 0., 1.],
           [0., 1., 2., 2.]])
    """
    if not isinstance(h, (int, np.integer)) or h < 1:
        raise InvalidArgumentError(f"window size must be a positive integer, got {h!r}")
    return WindowedSequence(_window_matrix(sample.instances, int(h)), len(sample))


def stack_windows(samples, h: int):
    """Pad the windows of several same-modality samples into one tensor.

    Returns ``(windows, mask)`` with shapes ``(n, T, d*h)`` and ``(n, T)``,
    where ``T`` is the largest window count and ``mask`` marks real windows.
    """
    mats = [make_windows(s, h).windows for s in samples]
    if not mats:
        raise InvalidArgumentError("cannot stack an empty sample list")
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise InvalidArgumentError(f"samples disagree on window dimension: {sorted(dims)}")
    t_max = max(m.shape[0] for m in mats)
    out = np.zeros((len(mats), t_max, dims.pop()))
    mask = np.zeros((len(mats), t_max), dtype=bool)
    for i, m in enumerate(mats):
        out[i, : m.shape[0]] = m
        mask[i, : m.shape[0]] = True
    return out, mask
