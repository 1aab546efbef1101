import math

import numpy as np
import pytest

from xmcnn.conv import FilterBank
from xmcnn.objective import Hyperparams, ModelParams, TrainState
from xmcnn.relevance import RelevanceMatrix, laplacian
from xmcnn.solver import TrainingData, update_indicators
from xmcnn.windowing import SequenceSample


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_samples(rng, counts=(3, 4), dims=(2, 3), max_len=6, labels=True):
    samples = []
    for j, (n, d) in enumerate(zip(counts, dims), 1):
        for _ in range(n):
            length = int(rng.integers(1, max_len + 1))
            label = int(rng.choice([-1, 1])) if labels else None
            samples.append(SequenceSample(j, rng.normal(size=(length, d)), label, int(rng.integers(1, 4))))
    return samples


def random_problem(rng, counts=(3, 4), dims=(2, 3), u=3, h=2, lambda1=0.3, lambda2=0.2, beta=1.5,
                   perturb=0.3):
    """Random data, filters, classifier, Z, A and symmetric S."""
    samples = random_samples(rng, counts, dims)
    hp = Hyperparams(lambda1=lambda1, lambda2=lambda2, beta=beta, u=u, h=h)
    data = TrainingData(samples, hp)
    banks = {j: FilterBank(j, rng.normal(scale=0.5, size=(u, b.dim)), b.h) for j, b in data.blocks.items()}
    params = ModelParams(banks, rng.normal(size=u))
    indicators, zbar = update_indicators(params, data)
    Z = zbar + perturb * rng.normal(size=zbar.shape)
    A = rng.normal(scale=0.5, size=zbar.shape)
    state = TrainState(Z, zbar, A, indicators)
    theta = len(samples)
    upper = np.triu(rng.integers(-1, 2, size=(theta, theta)), 1)
    S = RelevanceMatrix((upper + upper.T).astype(np.int8))
    return samples, data, params, state, S, laplacian(S), hp


def naive_pooled(instances, w, h):
    """Max over windows of tanh(w . window), looping over raw instances."""
    rows = [list(map(float, x)) for x in instances]
    d = len(rows[0])
    while len(rows) < h:
        rows.append([0.0] * d)
    best = -math.inf
    for t in range(len(rows) - h + 1):
        window = [value for row in rows[t:t + h] for value in row]
        best = max(best, math.tanh(sum(a * b for a, b in zip(window, w))))
    return best


def scalar_lagrangian(samples, params, Z, A, S, hp):
    """Augmented Lagrangian summed term by term from raw sequences."""
    theta = len(samples)
    u = len(params.v)
    zbar = [[naive_pooled(s.instances, params.banks[s.modality].filters[k], hp.window(s.modality))
             for k in range(u)] for s in samples]
    total = 0.0
    for i, s in enumerate(samples):
        pred = sum(params.v[k] * Z[k][i] for k in range(u))
        total += (s.label - pred) ** 2
    ridge = sum(x * x for x in params.v)
    for bank in params.banks.values():
        ridge += sum(x * x for row in bank.filters for x in row)
    total += hp.lambda1 * ridge
    pen = 0.0
    for a in range(theta):
        for b in range(theta):
            if S[a][b]:
                pen += S[a][b] * sum((Z[k][a] - Z[k][b]) ** 2 for k in range(u))
    total += hp.lambda2 * pen
    for i in range(theta):
        for k in range(u):
            e = Z[k][i] - zbar[i][k]
            total += A[k][i] * e + 0.5 * hp.beta * e * e
    return total
