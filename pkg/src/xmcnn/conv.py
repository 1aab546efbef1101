"""Convolution, tanh activation and max-pooling into the common space."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .windowing import SequenceSample, WindowedSequence, make_windows


def activate(x):
    return np.tanh(x)


def activate_grad(x):
    """Derivative of tanh, ``1 - tanh(x)**2``."""
    t = np.tanh(x)
    return 1.0 - t * t


def responses(windows, filters):
    """Pre-activations ``filters . y`` for every window.

    ``windows`` is ``(..., D)``; ``filters`` is one ``(D,)`` filter or a
    ``(u, D)`` bank, adding a trailing ``u`` axis. Each dot product is an
    elementwise product reduced along the last axis, so its rounding does not
    depend on the window's position; a BLAS product can round rows
    differently and break argmax ties under reordering.
    """
    if filters.ndim == 1:
        return np.sum(windows * filters, axis=-1)
    return np.sum(windows[..., None, :] * filters, axis=-1)


@dataclass(eq=False)
class FilterBank:
    """The ``u`` filters of one modality, stored row-wise as ``(u, d*h)``."""

    modality: int
    filters: np.ndarray
    h: int

    def __post_init__(self):
        self.filters = np.atleast_2d(np.asarray(self.filters, dtype=np.float64))
        if self.h < 1:
            raise InvalidArgumentError("window size must be >= 1")

    @property
    def u(self) -> int:
        return self.filters.shape[0]

    @property
    def dim(self) -> int:
        return self.filters.shape[1]

    def copy(self):
        return FilterBank(self.modality, self.filters.copy(), self.h)


@dataclass(frozen=True, eq=False)
class Embedding:
    values: np.ndarray  # (u,), each in (-1, 1)
    indicators: np.ndarray  # (u,), 0-based argmax window per filter


def _windows_of(windows):
    if isinstance(windows, WindowedSequence):
        return windows.windows
    return np.atleast_2d(np.asarray(windows, dtype=np.float64))


def conv_max_pool(windows, filt):
    """Max over windows of ``tanh(filt . y)``.

    Returns ``(value, index)``; on ties the smallest window index wins.
    """
    y = _windows_of(windows)
    w = np.asarray(filt, dtype=np.float64).ravel()
    if y.shape[1] != w.shape[0]:
        raise InvalidArgumentError(
            f"filter dimension {w.shape[0]} does not match window dimension {y.shape[1]}"
        )
    act = activate(responses(y, w))
    idx = int(np.argmax(act))  # first occurrence of the max
    return float(act[idx]), idx


def embed(sample: SequenceSample, bank: FilterBank) -> Embedding:
    if bank.modality != sample.modality:
        raise InvalidArgumentError(
            f"filter bank is for modality {bank.modality}, sample is modality {sample.modality}"
        )
    y = make_windows(sample, bank.h).windows
    if y.shape[1] != bank.dim:
        raise InvalidArgumentError(
            f"filter dimension {bank.dim} does not match window dimension {y.shape[1]}"
        )
    act = activate(responses(y, bank.filters))  # (T, u)
    idx = np.argmax(act, axis=0)
    return Embedding(act[idx, np.arange(bank.u)], idx)


def batch_embed(windows, mask, filters):
    """Vectorised :func:`embed` over a padded stack of samples.

    Parameters
    ----------
    windows : ndarray, shape (n, T, D)
    mask : ndarray of bool, shape (n, T)
    filters : ndarray, shape (u, D)

    Returns
    -------
    values : ndarray, shape (n, u)
    indicators : ndarray of int, shape (n, u)
    """
    act = activate(responses(windows, filters))  # (n, T, u)
    act = np.where(mask[:, :, None], act, -np.inf)
    idx = np.argmax(act, axis=1)
    values = np.take_along_axis(act, idx[:, None, :], axis=1)[:, 0, :]
    return values, idx


def score(embedding, v) -> float:
    z = embedding.values if isinstance(embedding, Embedding) else np.asarray(embedding, float)
    v = np.asarray(v, dtype=np.float64)
    if z.shape != v.shape:
        raise InvalidArgumentError(f"classifier shape {v.shape} does not match embedding {z.shape}")
    return float(v @ z)
