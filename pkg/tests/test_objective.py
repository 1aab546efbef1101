import numpy as np
import pytest

from xmcnn.conv import FilterBank
from xmcnn.errors import InvalidArgumentError, NumericalError
from xmcnn.objective import (
    Hyperparams,
    ModelParams,
    TrainState,
    augmented_lagrangian,
    classification_loss,
    constraint_residual,
    joint_objective,
    ridge_term,
)
from xmcnn.relevance import RelevanceMatrix, laplacian, penalty_value

from conftest import random_problem, scalar_lagrangian


class TestClassificationLoss:
    def test_zero_classifier(self):
        labels = np.array([1, -1, 1, 1.0])
        assert classification_loss(np.zeros(2), np.ones((2, 4)), labels) == 4.0

    def test_perfect_fit(self):
        Z = np.array([[1.0, -1.0]])
        assert classification_loss([1.0], Z, [1, -1]) == 0.0

    def test_single_square(self):
        assert classification_loss([1.0], [[0.5]], [1]) == 0.25

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            classification_loss(np.zeros(2), np.zeros((3, 4)), np.ones(4))

    def test_nan_is_fatal(self):
        with pytest.raises(NumericalError):
            classification_loss([np.nan], [[1.0]], [1])


class TestRidge:
    def test_zero(self):
        assert ridge_term(np.zeros(3), {1: FilterBank(1, np.zeros((3, 4)), 2)}) == 0.0

    def test_classifier_only(self):
        assert ridge_term(np.array([1.0, 1.0]), {}) == 2.0

    def test_homogeneous(self, rng):
        v = rng.normal(size=3)
        banks = {1: FilterBank(1, rng.normal(size=(3, 4)), 2), 2: FilterBank(2, rng.normal(size=(3, 2)), 1)}
        c = 1.7
        scaled = {j: FilterBank(j, c * b.filters, b.h) for j, b in banks.items()}
        assert ridge_term(c * v, scaled) == pytest.approx(c * c * ridge_term(v, banks), rel=1e-13)


class TestJointObjective:
    def test_reduces_to_loss(self, rng):
        _, data, params, state, S, L, hp = random_problem(rng, lambda1=0.0, lambda2=0.0)
        assert joint_objective(params, state.Z, data.labels, L, hp) == \
            classification_loss(params.v, state.Z, data.labels)

    def test_all_zero(self):
        labels = np.array([1.0, -1.0, 1.0])
        params = ModelParams({1: FilterBank(1, np.zeros((2, 2)), 1)}, np.zeros(2))
        L = laplacian(RelevanceMatrix(np.zeros((3, 3))))
        assert joint_objective(params, np.zeros((2, 3)), labels, L, Hyperparams(u=2)) == 3.0

    def test_sum_of_terms(self, rng):
        _, data, params, state, S, L, hp = random_problem(rng)
        expected = (classification_loss(params.v, state.Z, data.labels)
                    + hp.lambda1 * ridge_term(params.v, params.banks)
                    + hp.lambda2 * penalty_value(state.Z, L))
        assert joint_objective(params, state.Z, data.labels, L, hp) == pytest.approx(expected, abs=1e-12)

    def test_independent_of_relevance_without_lambda2(self, rng):
        _, data, params, state, S, L, hp = random_problem(rng, lambda2=0.0)
        before = joint_objective(params, state.Z, data.labels, L, hp)
        other = laplacian(RelevanceMatrix(-S.toarray()))
        assert joint_objective(params, state.Z, data.labels, other, hp) == before


class TestAugmentedLagrangian:
    def test_equals_joint_when_feasible(self, rng):
        for _ in range(50):
            _, data, params, state, S, L, hp = random_problem(rng)
            feasible = TrainState(state.Zbar.copy(), state.Zbar, np.zeros_like(state.A))
            a = augmented_lagrangian(params, feasible, data.labels, L, hp)
            b = joint_objective(params, state.Zbar, data.labels, L, hp)
            assert abs(a - b) <= 1e-12

    def test_penalty_isolated(self, rng):
        _, data, params, state, S, L, hp = random_problem(rng, lambda2=0.0)
        E = 0.1 * rng.normal(size=state.Z.shape)
        base = TrainState(state.Zbar.copy(), state.Zbar, np.zeros_like(E))
        shifted = TrainState(state.Zbar + E, state.Zbar, np.zeros_like(E))
        # the loss changes with Z too, so compare after removing it
        diff = (augmented_lagrangian(params, shifted, data.labels, L, hp)
                - classification_loss(params.v, shifted.Z, data.labels)
                - augmented_lagrangian(params, base, data.labels, L, hp)
                + classification_loss(params.v, base.Z, data.labels))
        assert diff == pytest.approx(0.5 * hp.beta * np.sum(E * E), abs=1e-12)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(10):
            samples, data, params, state, S, L, hp = random_problem(rng)
            expected = scalar_lagrangian(samples, params, state.Z, state.A, S.toarray(), hp)
            got = augmented_lagrangian(params, state, data.labels, L, hp)
            assert got == pytest.approx(expected, abs=1e-10)


class TestConstraintResidual:
    def test_zero_when_equal(self, rng):
        Z = rng.normal(size=(3, 4))
        assert constraint_residual(TrainState(Z, Z.copy(), np.zeros_like(Z))) == 0.0

    def test_single_perturbation(self, rng):
        Z = rng.normal(size=(3, 4))
        Z2 = Z.copy()
        Z2[1, 2] += 0.3
        assert constraint_residual(TrainState(Z2, Z, np.zeros_like(Z))) == pytest.approx(0.3, abs=1e-15)

    def test_independent_of_multipliers(self, rng):
        Z, Zbar = rng.normal(size=(2, 3, 4))
        a = constraint_residual(TrainState(Z, Zbar, np.zeros_like(Z)))
        assert a == constraint_residual(TrainState(Z, Zbar, rng.normal(size=Z.shape)))


class TestHyperparams:
    @pytest.mark.parametrize("kw", [dict(lambda1=-1), dict(lambda2=-0.1), dict(beta=0), dict(u=0), dict(h=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            Hyperparams(**kw)

    def test_defaults(self):
        hp = Hyperparams()
        assert (hp.lambda1, hp.lambda2, hp.beta) == (0.1, 0.01, 1.0)

    def test_round_trip_per_modality_h(self):
        hp = Hyperparams(h={1: 2, 2: 3})
        assert Hyperparams.from_dict(hp.to_dict()) == hp
