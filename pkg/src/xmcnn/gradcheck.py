"""Finite-difference checks of the solver's analytic gradients on random instances."""

from dataclasses import dataclass

import numpy as np

from .conv import FilterBank
from .objective import Hyperparams, ModelParams, TrainState, augmented_lagrangian
from .relevance import RelevanceMatrix, laplacian
from .solver import TrainingData, filter_problem, finite_diff_errors, update_indicators, z_gradient
from .windowing import SequenceSample

GRADCHECK_STREAM = 21


@dataclass
class Instance:
    data: TrainingData
    params: ModelParams
    state: TrainState
    labels: np.ndarray
    L: object
    hp: Hyperparams


@dataclass
class CheckResult:
    kind: str
    trial: int
    error: float
    worst: tuple  # index of the worst coordinate


def random_instance(rng, max_u=4, max_theta=10, max_len=8, max_h=3) -> Instance:
    """Small random problem: 1-2 modalities, u <= 4, theta <= 10, |X| <= 8, h <= 3."""
    m = int(rng.integers(1, 3))
    u = int(rng.integers(1, max_u + 1))
    theta = int(rng.integers(2 * m, max_theta + 1))
    counts = np.full(m, theta // m)
    counts[: theta % m] += 1
    samples = []
    hs = {}
    for j in range(1, m + 1):
        d = int(rng.integers(1, 4))
        hs[j] = int(rng.integers(1, max_h + 1))
        for _ in range(counts[j - 1]):
            n = int(rng.integers(1, max_len + 1))
            label = int(rng.choice([-1, 1]))
            samples.append(SequenceSample(j, rng.normal(size=(n, d)), label))
    hp = Hyperparams(lambda1=float(rng.uniform(0.05, 1.0)), lambda2=float(rng.uniform(0.0, 0.5)),
                     beta=float(rng.uniform(0.5, 2.0)), u=u, h=hs)
    data = TrainingData(samples, hp)
    banks = {j: FilterBank(j, rng.normal(scale=0.5, size=(u, b.dim)), b.h)
             for j, b in data.blocks.items()}
    params = ModelParams(banks, rng.normal(size=u))
    indicators, zbar = update_indicators(params, data)
    Z = zbar + rng.normal(scale=0.3, size=zbar.shape)
    A = rng.normal(scale=0.5, size=zbar.shape)
    state = TrainState(Z, zbar, A, indicators)
    upper = np.triu(rng.integers(-1, 2, size=(theta, theta)), 1)
    S = RelevanceMatrix((upper + upper.T).astype(np.int8))
    return Instance(data, params, state, data.labels, laplacian(S), hp)


def check_z(inst: Instance, step=1e-5, inject_sign_error=False):
    def f(Z):
        return augmented_lagrangian(inst.params, TrainState(Z, inst.state.Zbar, inst.state.A),
                                    inst.labels, inst.L, inst.hp)

    g = z_gradient(inst.params, inst.state, inst.labels, inst.L, inst.hp)
    if inject_sign_error:
        g = g - 2.0 * inst.state.A
    return finite_diff_errors(f, inst.state.Z, g, step)


def check_filters(inst: Instance, step=1e-5, inject_sign_error=False):
    """Worst error over every filter, with argmax windows frozen at the start point."""
    worst, where = 0.0, None
    for j, bank in sorted(inst.params.banks.items()):
        for k in range(bank.u):
            problem = filter_problem(inst.state, inst.data, j, k, inst.hp)
            w0 = bank.filters[k]
            tau = problem.indicators(w0)
            g = problem.gradient(w0, tau)
            if inject_sign_error:
                g = g - 4.0 * problem.lambda1 * w0
            errors = finite_diff_errors(lambda w: problem.objective(w, tau), w0, g, step)
            i = int(np.argmax(errors))
            if where is None or errors[i] > worst:
                worst, where = float(errors[i]), (j, k, i)
    return worst, where


def run(trials=20, seed=0, step=1e-5, inject_sign_error=False):
    results = []
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(GRADCHECK_STREAM, t)))
        inst = random_instance(rng)
        errs = check_z(inst, step, inject_sign_error)
        idx = np.unravel_index(int(np.argmax(errs)), errs.shape)
        results.append(CheckResult("Z", t, float(errs[idx]), tuple(int(i) for i in idx)))
        worst, where = check_filters(inst, step, inject_sign_error)
        results.append(CheckResult("filter", t, worst, where))
    return results
