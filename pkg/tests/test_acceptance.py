"""Acceptance criteria, one PASS/FAIL line per criterion.

Run under pytest (``pytest tests/test_acceptance.py -v``; the verdict lines
bypass output capture) or directly with ``python3 tests/test_acceptance.py``.
"""

import sys
import tempfile
import time
from fractions import Fraction
from functools import lru_cache
from itertools import permutations, product
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from click.testing import CliRunner

from xmcnn import gradcheck
from xmcnn.cli import main
from xmcnn.conv import FilterBank, conv_max_pool, embed
from xmcnn.data import generate_synthetic, load_model, save_model
from xmcnn.errors import DivergenceError
from xmcnn.evaluation import cross_modal_results, summarize_all
from xmcnn.metrics import RankedList, break_even_point, mean_average_precision, precision_at, recall_at
from xmcnn.objective import Hyperparams, ModelParams, TrainState, augmented_lagrangian, joint_objective
from xmcnn.relevance import RelevanceMatrix, laplacian, relevance_from_labels
from xmcnn.solver import SolverConfig, TrainingData, embed_samples, init_state, solve, v_gradient
from xmcnn.windowing import SequenceSample, make_windows

GRAD_TOL = 1e-5
GRAD_SECONDS = 5.0
V_GRAD_TOL = 1e-8
LAGRANGIAN_TOL = 1e-12
METRIC_SECONDS = 10.0
LAPLACIAN_TOL = 1e-12
MAP_FACTOR = 1.5
RESIDUAL_FACTOR = 0.1
MAX_OUTER = 50
E2E_SECONDS = 60.0

REFERENCE = dict(modalities=2, classes=2, per_class=20, dims=(4, 6), separation=4.0, seed=7)


def reference_set():
    return generate_synthetic(**REFERENCE)


# ------------------------------------------------------------------ checks


def check_gradient_oracle():
    start = time.perf_counter()
    result = CliRunner().invoke(main, ["grad-check", "--trials", "20", "--tol", str(GRAD_TOL)])
    elapsed = time.perf_counter() - start
    worst = max(r.error for r in gradcheck.run(trials=20))
    ok = result.exit_code == 0 and worst <= GRAD_TOL and elapsed < GRAD_SECONDS
    return ok, f"max rel err {worst:.2e} (tol {GRAD_TOL:g}), exit {result.exit_code}, {elapsed:.2f}s"


def check_closed_form_v():
    ds = reference_set()
    hp = Hyperparams(u=8, h=2, clamp_negative_relevance=True)
    data = TrainingData(ds.samples, hp)
    norms = []

    def record(stage, params, state):
        if stage == "v":
            norms.append(float(np.linalg.norm(v_gradient(params.v, state.Z, data.labels, hp.lambda1))))

    solve(data, relevance_from_labels(ds.classes), hp,
          SolverConfig(max_outer=10, tol_lagrangian=1e-300, tol_residual=1e-300, seed=7), record)
    worst = max(norms)
    ok = len(norms) == 10 and worst <= V_GRAD_TOL
    return ok, f"{len(norms)} v updates, max gradient norm {worst:.2e} (tol {V_GRAD_TOL:g})"


def check_lagrangian_consistency():
    worst = 0.0
    for t in range(50):
        inst = gradcheck.random_instance(np.random.default_rng(np.random.SeedSequence(3, spawn_key=(t,))))
        Zbar = inst.state.Zbar
        at = TrainState(Zbar.copy(), Zbar, np.zeros_like(Zbar))
        lag = augmented_lagrangian(inst.params, at, inst.labels, inst.L, inst.hp)
        joint = joint_objective(inst.params, Zbar, inst.labels, inst.L, inst.hp)
        worst = max(worst, abs(lag - joint))
    return worst <= LAGRANGIAN_TOL, f"50 instances, max |difference| {worst:.2e} (tol {LAGRANGIAN_TOL:g})"


@lru_cache(maxsize=None)
def metric_oracle(delta):
    """Rational Prec@k, Reca@k, database-normalised AP and BEPRP for a rank-ordered relevance tuple."""
    D, R = len(delta), sum(delta)
    counts = [sum(delta[:k]) for k in range(1, D + 1)]
    prec = [Fraction(c, k) for k, c in enumerate(counts, 1)]
    reca = [Fraction(c, R) for c in counts] if R else None
    ap = sum(p for p, d in zip(prec, delta) if d) / D
    bep = None
    if R:
        gaps = [abs(p - r) for p, r in zip(prec, reca)]
        bep = prec[gaps.index(min(gaps))]
    return ([float(p) for p in prec], reca and [float(r) for r in reca], float(ap),
            None if bep is None else float(bep))


def check_metric_oracles():
    start = time.perf_counter()
    cases = mismatches = 0
    for D in range(1, 7):
        dist = np.arange(D, dtype=float)
        for judg in product((False, True), repeat=D):
            j = np.array(judg)
            for perm in permutations(range(D)):
                rl = RankedList(0, np.array(perm), dist)
                prec, reca, ap, bep = metric_oracle(tuple(judg[i] for i in perm))
                got_prec = [precision_at(rl, j, k) for k in range(1, D + 1)]
                bad = got_prec != prec or mean_average_precision([rl], [j]) != ap
                if reca is not None:
                    bad |= [recall_at(rl, j, k) for k in range(1, D + 1)] != reca
                    bad |= break_even_point(rl, j) != bep
                mismatches += bad
                cases += 1
    elapsed = time.perf_counter() - start
    worked = RankedList(0, np.arange(3), np.zeros(3)), np.array([True, False, True])
    worked_map = mean_average_precision([worked[0]], [worked[1]])
    worked_bep = break_even_point(*worked)
    ok = (mismatches == 0 and worked_map == float(Fraction(5, 9)) and worked_bep == 0.5
          and elapsed < METRIC_SECONDS)
    return ok, (f"{cases} rankings, {mismatches} mismatches, worked mAP {worked_map!r} BEPRP {worked_bep!r}, "
                f"{elapsed:.2f}s")


def check_laplacian_and_embedding():
    rng = np.random.default_rng(np.random.SeedSequence(5))
    row_err, outside, perm_fail = 0.0, 0, 0
    for case in range(100):
        theta = int(rng.integers(2, 60))
        upper = np.triu(rng.integers(-1, 2, size=(theta, theta)), 1)
        dense = (upper + upper.T).astype(np.int8)
        S = RelevanceMatrix(sp.csr_matrix(dense) if case % 2 else dense)
        L = laplacian(S)
        row_err = max(row_err, float(np.abs(L.matrix @ np.ones(theta)).max()))

        d, h, u = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
        sample = SequenceSample(1, rng.normal(size=(int(rng.integers(1, 12)), d)))
        bank = FilterBank(1, rng.normal(scale=0.5, size=(u, d * h)), h)
        z = embed(sample, bank).values
        outside += int(np.sum(np.abs(z) >= 1.0))

        windows = make_windows(sample, h).windows
        w = bank.filters[0]
        value, _ = conv_max_pool(windows, w)
        shuffled, _ = conv_max_pool(windows[rng.permutation(len(windows))], w)
        perm_fail += int(value != shuffled)
    ok = row_err <= LAPLACIAN_TOL and outside == 0 and perm_fail == 0
    return ok, (f"100 cases: max |L 1| {row_err:.1e}, {outside} coordinates outside (-1,1), "
                f"{perm_fail} permutation changes")


def in_sample_map(ds, params):
    emb = embed_samples(ds.samples, params)
    return summarize_all(cross_modal_results(emb, ds.modality_ids, ds.classes))["mean"].map_database


def check_end_to_end():
    start = time.perf_counter()
    ds = reference_set()
    hp = Hyperparams(u=8, h=2)
    config = SolverConfig(max_outer=MAX_OUTER, seed=REFERENCE["seed"])
    data = TrainingData(ds.samples, hp)
    baseline_params, _ = init_state(data, hp, config)
    baseline = in_sample_map(ds, baseline_params)
    try:
        params, report = solve(data, relevance_from_labels(ds.classes), hp, config)
    except DivergenceError as exc:
        elapsed = time.perf_counter() - start
        return False, (f"solver diverged after {len(exc.trace)} iterations ({exc}); "
                       f"baseline mAP {baseline:.4f}, {elapsed:.1f}s")
    trained = in_sample_map(ds, params)
    first, last = report.trace[0][1], report.trace[-1][1]
    elapsed = time.perf_counter() - start
    ok = (trained >= MAP_FACTOR * baseline and last <= RESIDUAL_FACTOR * first
          and report.iterations <= MAX_OUTER and elapsed < E2E_SECONDS)
    return ok, (f"mAP {trained:.4f} vs baseline {baseline:.4f} (x{trained / baseline:.2f}), residual "
                f"{last:.3e} vs first {first:.3e}, {report.iterations} iterations, {elapsed:.1f}s")


def check_determinism():
    runner = CliRunner()
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data = tmp / "d.jsonl"
        runner.invoke(main, ["gen-synth", "--per-class", "20", "--seed", "7", "--out", str(data)])
        outputs = []
        for name in ("a", "b"):
            model, trace = tmp / f"{name}.xmcnn", tmp / f"{name}.trace"
            result = runner.invoke(main, [
                "train", "--data", str(data), "--pos-class", "1", "--seed", "7", "--threads", "1",
                "--clamp-negative-relevance", "--beta", "10", "--max-outer", "20",
                "--trace", str(trace), "--out", str(model),
            ])
            if result.exit_code != 0:
                return False, f"train exited {result.exit_code}: {result.output.strip()}"
            outputs.append((model.read_bytes(), trace.read_bytes()))
    same_model = outputs[0][0] == outputs[1][0]
    same_trace = outputs[0][1] == outputs[1][1]
    return same_model and same_trace, f"model identical {same_model}, trace identical {same_trace}"


def check_persistence():
    identical = 0
    with tempfile.TemporaryDirectory() as tmp:
        for t in range(10):
            rng = np.random.default_rng(np.random.SeedSequence(8, spawn_key=(t,)))
            m = int(rng.integers(1, 4))
            dims = [int(d) for d in rng.integers(1, 7, size=m)]
            ds = generate_synthetic(m, 2, 5, dims, separation=float(rng.uniform(0, 5)), seed=t)
            u = int(rng.integers(1, 9))
            hs = {j: int(rng.integers(1, 4)) for j in range(1, m + 1)}
            banks = {j: FilterBank(j, rng.normal(size=(u, dims[j - 1] * hs[j])), hs[j]) for j in hs}
            params = ModelParams(banks, rng.normal(size=u))
            before = embed_samples(ds.samples, params)
            path = Path(tmp) / f"m{t}.xmcnn"
            save_model(params, Hyperparams(u=u, h=hs), path, seed=t)
            loaded, _, _ = load_model(path)
            identical += embed_samples(ds.samples, loaded).tobytes() == before.tobytes()
    return identical == 10, f"{identical}/10 datasets bit-identical after save/load"


CRITERIA = [
    (1, "gradient oracle", check_gradient_oracle),
    (2, "closed-form classifier optimality", check_closed_form_v),
    (3, "Lagrangian consistency", check_lagrangian_consistency),
    (4, "metric oracles", check_metric_oracles),
    (5, "Laplacian and embedding properties", check_laplacian_and_embedding),
    (6, "end-to-end synthetic retrieval", check_end_to_end),
    (7, "determinism", check_determinism),
    (8, "persistence", check_persistence),
]


def verdict_line(number, name, ok, detail):
    return f"criterion {number} ({name}): {'PASS' if ok else 'FAIL'} - {detail}"


@pytest.mark.parametrize("number, name, check", CRITERIA, ids=[f"criterion_{n}" for n, _, _ in CRITERIA])
def test_criterion(number, name, check, capsys):
    ok, detail = check()
    line = verdict_line(number, name, ok, detail)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    failures = 0
    for number, name, check in CRITERIA:
        ok, detail = check()
        failures += not ok
        print(verdict_line(number, name, ok, detail), flush=True)
    sys.exit(1 if failures else 0)
