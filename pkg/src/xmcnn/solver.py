"""ADMM solver for the cross-modal convolutional embedding.

One outer iteration updates, in order, the classifier ``v`` (closed form),
the free embeddings ``Z`` (gradient descent), every filter (alternating
argmax-indicator refresh and gradient steps) and finally the multipliers.
Gradient steps use ``1/t`` with ``t`` the inner step counter, and are only
accepted when they do not increase the objective being descended; otherwise
the step is halved (at most ``max_halvings`` times) before the inner loop
gives up.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .conv import FilterBank, activate, activate_grad, batch_embed, responses
from .errors import DivergenceError, InvalidArgumentError, NumericalError
from .objective import (
    Hyperparams,
    ModelParams,
    TrainState,
    augmented_lagrangian,
    constraint_residual,
    relative_change,
    stack_labels,
)
from .relevance import GraphOperator, RelevanceMatrix, laplacian, right_multiply
from .windowing import stack_windows

logger = logging.getLogger(__name__)

# spawn-key prefixes so each random stream is independent of the others
FILTER_STREAM = 1


@dataclass
class SolverConfig:
    max_outer: int = 200
    max_inner: int = 50
    tol_lagrangian: float = 1e-6
    tol_residual: float = 1e-4
    seed: int = 0
    init_scale: float = 0.1
    threads: int = 1
    max_halvings: int = 20

    def __post_init__(self):
        if self.max_outer < 1 or self.max_inner < 1:
            raise InvalidArgumentError("iteration caps must be >= 1")
        if not (self.tol_lagrangian > 0 and self.tol_residual > 0):
            raise InvalidArgumentError("tolerances must be positive")
        if self.init_scale < 0:
            raise InvalidArgumentError("init_scale must be non-negative")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be >= 1")


@dataclass
class SolveReport:
    iterations: int
    trace: List[Tuple[float, float]] = field(default_factory=list)
    reason: str = "iteration-cap"
    state: Optional[TrainState] = None

    def write_trace(self, path):
        write_trace(path, self.trace)


def write_trace(path, trace):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# iteration lagrangian residual\n")
        for i, (lag, res) in enumerate(trace, 1):
            fh.write(f"{i} {lag!r} {res!r}\n")


@dataclass(eq=False)
class ModalityBlock:
    """Padded window tensor for every sample of one modality."""

    modality: int
    columns: np.ndarray  # global column of each sample
    windows: np.ndarray  # (n, T, d*h)
    mask: np.ndarray  # (n, T)
    h: int

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def dim(self) -> int:
        return self.windows.shape[2]


class TrainingData:
    """Samples grouped by modality, with global column indices.

    Column ``c`` of ``Z`` belongs to ``samples[c]``; the relevance matrix
    must use the same ordering.
    """

    def __init__(self, samples, hp: Hyperparams, modalities=None):
        self.samples = list(samples)
        self.theta = len(self.samples)
        mods = np.array([s.modality for s in self.samples], dtype=int)
        present = sorted(set(mods.tolist()))
        self.modalities = sorted(modalities) if modalities is not None else present
        self.blocks: Dict[int, ModalityBlock] = {}
        for j in self.modalities:
            cols = np.flatnonzero(mods == j)
            if cols.size == 0:
                raise InvalidArgumentError(f"modality {j} has no samples")
            h = hp.window(j)
            windows, mask = stack_windows([self.samples[c] for c in cols], h)
            self.blocks[j] = ModalityBlock(j, cols, windows, mask, h)
        stray = set(present) - set(self.modalities)
        if stray:
            raise InvalidArgumentError(f"samples reference unknown modalities {sorted(stray)}")
        if all(s.label is not None for s in self.samples):
            self.labels = stack_labels(self.samples)
        else:
            self.labels = None

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise InvalidArgumentError("training needs a +1/-1 label on every sample")
        return self.labels


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def init_filters(data: TrainingData, hp: Hyperparams, seed: int, init_scale: float):
    banks = {}
    for j, block in data.blocks.items():
        rng = _rng(seed, FILTER_STREAM, j)
        w = rng.uniform(-init_scale, init_scale, size=(hp.u, block.dim))
        banks[j] = FilterBank(j, w, block.h)
    return banks


def update_indicators(params: ModelParams, data: TrainingData, threads: int = 1):
    """Argmax-window table per modality and the filter embeddings ``Zbar``."""
    u = params.v.shape[0]
    zbar = np.zeros((u, data.theta))

    def one(j):
        block = data.blocks[j]
        return j, batch_embed(block.windows, block.mask, params.banks[j].filters)

    if threads > 1 and len(data.blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, data.modalities))
    else:
        results = [one(j) for j in data.modalities]
    indicators = {}
    for j, (values, idx) in results:
        zbar[:, data.blocks[j].columns] = values.T
        indicators[j] = idx
    return indicators, zbar


def refresh(params: ModelParams, state: TrainState, data: TrainingData, threads: int = 1):
    state.indicators, state.Zbar = update_indicators(params, data, threads)


def init_state(data: TrainingData, hp: Hyperparams, config: SolverConfig):
    """Random filters, ``v = 0``, ``Z = Zbar`` and ``A = 0``."""
    if data.theta == 0:
        raise InvalidArgumentError("no training samples")
    banks = init_filters(data, hp, config.seed, config.init_scale)
    params = ModelParams(banks, np.zeros(hp.u))
    indicators, zbar = update_indicators(params, data, config.threads)
    state = TrainState(zbar.copy(), zbar, np.zeros_like(zbar), indicators, 0)
    return params, state


# ---------------------------------------------------------------- v step


def v_gradient(v, Z, labels, lambda1):
    return 2.0 * Z @ (Z.T @ v - labels) + 2.0 * lambda1 * v


def update_v(Z, labels, lambda1):
    """Closed-form ridge solution ``(Z Z^T + lambda1 I)^{-1} Z eta``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64)
    if Z.shape[1] != labels.shape[0]:
        raise InvalidArgumentError(f"Z has {Z.shape[1]} columns but {labels.shape[0]} labels")
    if not np.all(np.isfinite(Z)):
        raise NumericalError("embeddings contain non-finite values")
    M = Z @ Z.T + lambda1 * np.eye(Z.shape[0])
    b = Z @ labels
    if not np.all(np.isfinite(M)):
        raise NumericalError("classifier system overflowed (embeddings too large)")
    try:
        factor = scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError:
        raise NumericalError(
            "classifier system Z Z^T + lambda1 I is numerically singular "
            f"(lambda1 = {lambda1}, max |Z| = {np.abs(Z).max():.3g})"
        ) from None
    return scipy.linalg.cho_solve(factor, b)


# ---------------------------------------------------------------- Z step


def z_gradient(params: ModelParams, state: TrainState, labels, L: GraphOperator, hp: Hyperparams):
    v = params.v
    Z = state.Z
    if Z.shape != (v.shape[0], labels.shape[0]) or L.size != Z.shape[1]:
        raise InvalidArgumentError(f"Z shape {Z.shape} inconsistent with v, labels or operator")
    grad = 2.0 * np.outer(v, v @ Z - labels)
    if hp.lambda2:
        grad += 4.0 * hp.lambda2 * right_multiply(Z, L)
    grad += state.A + hp.beta * (Z - state.Zbar)
    return grad


def _lagrangian_at(params, state, Z, labels, L, hp):
    trial = TrainState(Z, state.Zbar, state.A, state.indicators, state.outer_iter)
    return augmented_lagrangian(params, trial, labels, L, hp)


def update_z(params, state, labels, L, hp, config: SolverConfig):
    """Safeguarded gradient descent on the Lagrangian in ``Z``."""
    Z = state.Z.copy()
    f0 = _lagrangian_at(params, state, Z, labels, L, hp)
    for t in range(1, config.max_inner + 1):
        probe = TrainState(Z, state.Zbar, state.A)
        g = z_gradient(params, probe, labels, L, hp)
        if not np.any(g):
            break
        step = 1.0 / t
        for _ in range(config.max_halvings + 1):
            Zn = Z - step * g
            fn = _lagrangian_at(params, state, Zn, labels, L, hp)
            if fn <= f0:
                break
            step *= 0.5
        else:
            break
        decrease = relative_change(f0, fn)
        Z, f0 = Zn, fn
        if decrease < config.tol_lagrangian:
            break
    return Z


# ---------------------------------------------------------------- filter step


class FilterProblem:
    """Filter sub-problem for one filter of one modality, other variables fixed.

    ``z`` and ``alpha`` are the matching rows of ``Z`` and ``A`` restricted to
    the modality's samples.
    """

    def __init__(self, windows, mask, z, alpha, lambda1, beta):
        self.windows = windows
        self.mask = mask
        self.z = z
        self.alpha = alpha
        self.lambda1 = lambda1
        self.beta = beta
        self._rows = np.arange(windows.shape[0])

    def indicators(self, w):
        """Smallest argmax window per sample."""
        if self.windows.shape[0] == 0:
            return np.zeros(0, dtype=int)
        act = np.where(self.mask, activate(responses(self.windows, w)), -np.inf)
        return np.argmax(act, axis=1)

    def _selected(self, tau):
        return self.windows[self._rows, tau]

    def _value(self, w, pooled):
        r = self.z - pooled
        return (self.lambda1 * float(w @ w) + float(self.alpha @ r)
                + 0.5 * self.beta * float(r @ r))

    def objective(self, w, tau):
        """Objective with the argmax windows frozen at ``tau``."""
        return self._value(w, activate(responses(self._selected(tau), w)))

    def objective_max(self, w):
        """Objective with the true max-pooled response."""
        if self.windows.shape[0] == 0:
            return self._value(w, np.zeros(0))
        act = np.where(self.mask, activate(responses(self.windows, w)), -np.inf)
        return self._value(w, act.max(axis=1))

    def gradient(self, w, tau):
        y = self._selected(tau)
        pre = responses(y, w)
        s = activate(pre)
        ds = activate_grad(pre)
        coef = -(self.alpha + self.beta * (self.z - s)) * ds
        return 2.0 * self.lambda1 * w + coef @ y


def empty_filter_problem(dim, hp):
    """Problem for a modality without samples: only the ridge term remains."""
    return FilterProblem(np.zeros((0, 1, dim)), np.zeros((0, 1), bool),
                         np.zeros(0), np.zeros(0), hp.lambda1, hp.beta)


def filter_problem(state: TrainState, data: TrainingData, modality: int, k: int,
                   hp: Hyperparams) -> FilterProblem:
    block = data.blocks.get(modality)
    if block is None:
        return None
    cols = block.columns
    return FilterProblem(block.windows, block.mask, state.Z[k, cols], state.A[k, cols],
                         hp.lambda1, hp.beta)


def filter_gradient(w, tau, state, data, modality, k, hp):
    problem = filter_problem(state, data, modality, k, hp) or empty_filter_problem(len(w), hp)
    return problem.gradient(w, tau)


def descend_filter(problem: FilterProblem, w, config: SolverConfig):
    """Alternate indicator refresh and one safeguarded gradient step."""
    w = np.array(w, dtype=np.float64)
    for t in range(1, config.max_inner + 1):
        tau = problem.indicators(w)
        f0 = problem.objective(w, tau)
        g = problem.gradient(w, tau)
        if not np.any(g):
            break
        step = 1.0 / t
        accepted = False
        for _ in range(config.max_halvings + 1):
            wn = w - step * g
            if problem.objective(wn, tau) <= f0:
                f1 = problem.objective_max(wn)
                if f1 <= f0:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        w = wn
        if relative_change(f0, f1) < config.tol_lagrangian:
            break
    return w


def update_filters(params: ModelParams, state: TrainState, data: TrainingData, hp: Hyperparams,
                   config: SolverConfig) -> Dict[int, FilterBank]:
    """Update every filter in turn, modality-major then filter index."""
    banks = {}
    for j in sorted(params.banks):
        bank = params.banks[j].copy()
        for k in range(bank.u):
            problem = filter_problem(state, data, j, k, hp) or empty_filter_problem(bank.dim, hp)
            bank.filters[k] = descend_filter(problem, bank.filters[k], config)
        banks[j] = bank
    return banks


def filter_lagrangian(params: ModelParams, state: TrainState, data: TrainingData, hp: Hyperparams):
    """Filter-dependent part of the Lagrangian using true max-pooling."""
    total = 0.0
    for j, bank in params.banks.items():
        for k in range(bank.u):
            problem = filter_problem(state, data, j, k, hp) or empty_filter_problem(bank.dim, hp)
            total += problem.objective_max(bank.filters[k])
    return total


# ---------------------------------------------------------------- multipliers


def update_multipliers(state: TrainState, beta: float):
    return state.A + beta * (state.Z - state.Zbar)


# ---------------------------------------------------------------- driver


def solve(data: TrainingData, S, hp: Hyperparams, config: SolverConfig,
          callback: Optional[Callable] = None):
    """Run the ADMM loop.

    ``callback(stage, params, state)`` is invoked after each of the four
    updates with ``stage`` in ``{"v", "Z", "filters", "multipliers"}``.

    Returns ``(params, report)``; ``report.state`` holds the final state.
    """
    labels = data.require_labels()
    if isinstance(S, RelevanceMatrix):
        if hp.clamp_negative_relevance:
            S = S.without_negatives()
        L = laplacian(S)
    elif isinstance(S, GraphOperator):
        L = S
    else:
        raise InvalidArgumentError("S must be a RelevanceMatrix or GraphOperator")
    if L.size != data.theta:
        raise InvalidArgumentError(f"relevance matrix is {L.size}x{L.size}, data has {data.theta} samples")

    params, state = init_state(data, hp, config)
    report = SolveReport(0, [], "iteration-cap", state)
    prev = augmented_lagrangian(params, state, labels, L, hp)

    def emit(stage):
        if callback is not None:
            callback(stage, params, state)

    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, config.max_outer + 1):
            state.outer_iter = it
            try:
                refresh(params, state, data, config.threads)
                params.v = update_v(state.Z, labels, hp.lambda1)
                emit("v")
                state.Z = update_z(params, state, labels, L, hp, config)
                emit("Z")
                params.banks = update_filters(params, state, data, hp, config)
                refresh(params, state, data, config.threads)
                emit("filters")
                state.A = update_multipliers(state, hp.beta)
                emit("multipliers")
                lag = augmented_lagrangian(params, state, labels, L, hp)
            except NumericalError as exc:
                raise DivergenceError(f"outer iteration {it}: {exc}", report.trace) from exc
            res = constraint_residual(state)
            report.trace.append((lag, res))
            report.iterations = it
            logger.debug("iter %d lagrangian %.6g residual %.3g", it, lag, res)
            if relative_change(prev, lag) < config.tol_lagrangian and res < config.tol_residual:
                report.reason = "converged"
                break
            prev = lag
    return params, report


def embed_samples(samples, params: ModelParams) -> np.ndarray:
    """Embed samples into the common space, returned as ``(n, u)`` rows."""
    samples = list(samples)
    out = np.zeros((len(samples), params.v.shape[0]))
    mods = np.array([s.modality for s in samples])
    for j in sorted(set(mods.tolist())):
        if j not in params.banks:
            raise InvalidArgumentError(f"model has no filter bank for modality {j}")
        bank = params.banks[j]
        rows = np.flatnonzero(mods == j)
        windows, mask = stack_windows([samples[r] for r in rows], bank.h)
        if windows.shape[2] != bank.dim:
            raise InvalidArgumentError(
                f"modality {j}: window dimension {windows.shape[2]} does not match filters ({bank.dim})"
            )
        values, _ = batch_embed(windows, mask, bank.filters)
        out[rows] = values
    return out


def finite_diff_errors(fn, point, analytic, step=1e-5):
    """Per-coordinate relative error of ``analytic`` against central differences.

    The error at each coordinate is ``|fd - g| / (|g| + 1e-12)``.
    """
    if not step > 0:
        raise InvalidArgumentError("step must be positive")
    x = np.array(point, dtype=np.float64)
    g = np.asarray(analytic, dtype=np.float64)
    if g.shape != x.shape:
        raise InvalidArgumentError(f"gradient shape {g.shape} does not match point {x.shape}")
    flat = x.reshape(-1)
    errors = np.zeros(flat.size)
    for i, gi in enumerate(g.reshape(-1)):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(x)
        flat[i] = orig - step
        fm = fn(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value at coordinate {i}")
        errors[i] = abs((fp - fm) / (2.0 * step) - gi) / (abs(gi) + 1e-12)
    return errors.reshape(x.shape)


def finite_diff_check(fn, point, analytic, step=1e-5):
    """Largest relative error between central differences and ``analytic``."""
    errors = finite_diff_errors(fn, point, analytic, step)
    return float(errors.max()) if errors.size else 0.0
