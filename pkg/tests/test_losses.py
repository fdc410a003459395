import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from brainnet_moe.errors import NumericalError, StateError
from brainnet_moe.losses import (LossWeights, cosine, disease_diversity_loss, entropy, expert_balance_loss,
                                 expert_diversity_loss, total_loss, wasserstein1_discrete)
from brainnet_moe.moe import GateTrace
from brainnet_moe.nn import Tensor, grad_check


def cdf_w1(p, q):
    """Brute-force W1 on 0..E-1: sum over support gaps of |F_p - F_q|."""
    fp = fq = 0.0
    total = 0.0
    for a, b in zip(p[:-1], q[:-1]):
        fp += a
        fq += b
        total += abs(fp - fq)
    return total


def simplex(n):
    return arrays(np.float64, n, elements=st.floats(0.0, 1.0)).filter(lambda v: v.sum() > 1e-3).map(
        lambda v: v / v.sum())


def trace_of(*probs):
    return GateTrace([Tensor(np.asarray(p, dtype=float)) for p in probs])


class TestEntropy:
    def test_uniform_three(self):
        assert abs(float(entropy(np.full(3, 1 / 3)).data) - math.log(3)) < 1e-9

    def test_one_hot(self):
        assert float(entropy([1.0, 0.0, 0.0]).data) == 0.0

    def test_hand_value(self):
        assert abs(float(entropy([0.5, 0.25, 0.25]).data) - 1.0397207708399179) < 1e-12

    @pytest.mark.parametrize("e", [2, 3, 4])
    def test_extremes_on_grid(self, e):
        grid = [np.array(c, dtype=float) / 4 for c in itertools.product(range(5), repeat=e) if sum(c) == 4]
        values = [float(entropy(p).data) for p in grid]
        assert max(values) <= math.log(e) + 1e-12
        assert min(values) == 0.0

    def test_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            entropy([0.5, 0.6])
        with pytest.raises(ValueError):
            entropy([1.5, -0.5])


class TestWasserstein:
    def test_point_mass_vs_uniform(self):
        got = float(wasserstein1_discrete([1.0, 0, 0], np.full(3, 1 / 3)).data)
        assert abs(got - 1.0) < 1e-9
        assert abs(cdf_w1([1.0, 0, 0], [1 / 3] * 3) - 1.0) < 1e-12

    @given(simplex(4), simplex(4))
    def test_matches_brute_force(self, p, q):
        assert abs(float(wasserstein1_discrete(p, q).data) - cdf_w1(p, q)) < 1e-12

    def test_metric_axioms_on_random_triples(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            p, q, r = rng.dirichlet(np.ones(4), size=3)
            d = lambda a, b: float(wasserstein1_discrete(a, b).data)
            assert d(p, q) >= 0
            assert abs(d(p, q) - d(q, p)) < 1e-9
            assert d(p, p) < 1e-9
            assert d(p, r) <= d(p, q) + d(q, r) + 1e-9


class TestExpertDiversity:
    def test_one_hot_gates(self):
        probs = np.tile([1.0, 0.0, 0.0], (4, 2, 1))
        got = float(expert_diversity_loss(trace_of(probs, probs, probs)).data)
        assert abs(got - 3 * (1 - math.sqrt(2 / 9))) < 1e-12

    def test_uniform_gates(self):
        probs = np.full((2, 3, 3), 1 / 3)
        got = float(expert_diversity_loss(trace_of(probs), lam=0.1).data)
        assert abs(got - (1 + 0.1 * math.log(3))) < 1e-12

    def test_entropy_sign(self):
        probs = np.full((1, 1, 2), 0.5)
        got = float(expert_diversity_loss(trace_of(probs), lam=0.1, entropy_sign=-1.0).data)
        assert abs(got - (1 - 0.1 * math.log(2))) < 1e-12

    def test_empty_trace(self):
        with pytest.raises(StateError):
            expert_diversity_loss(GateTrace())


class TestExpertBalance:
    def test_balanced(self):
        probs = np.array([[[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]])
        assert abs(float(expert_balance_loss(trace_of(probs, np.full((1, 3, 3), 1 / 3))).data)) < 1e-9

    def test_collapsed(self):
        probs = np.tile([1.0, 0.0, 0.0], (2, 4, 1))
        assert abs(float(expert_balance_loss(trace_of(probs, probs)).data) - 1.0) < 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25)
    def test_subject_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.dirichlet(np.ones(3), size=(5, 4))
        perm = rng.permutation(5)
        a = float(expert_balance_loss(trace_of(probs)).data)
        b = float(expert_balance_loss(trace_of(probs[perm])).data)
        assert abs(a - b) < 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25)
    def test_zero_iff_uniform_utilization(self, seed):
        probs = np.random.default_rng(seed).dirichlet(np.ones(3), size=(6, 2))
        value = float(expert_balance_loss(trace_of(probs)).data)
        uniform = np.abs(probs.mean(axis=(0, 1)) - 1 / 3).max() < 1e-9
        assert (value < 1e-9) == uniform


class TestDiseaseDiversity:
    def test_by_hand(self):
        reps = np.array([[1.0, 0.0], [1.0, 0.2], [0.0, 1.0], [0.2, 1.0]])
        labels = np.array([0, 0, 1, 1])
        c = [reps[:2].mean(0), reps[2:].mean(0)]
        cos = lambda a, b: a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        expected = 2 * cos(c[0], c[1]) - np.mean([cos(reps[i], c[labels[i]]) for i in range(4)])
        got = float(disease_diversity_loss(reps, labels, 2).data)
        assert abs(got - expected) < 1e-12

    def test_single_class(self):
        reps = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert abs(float(disease_diversity_loss(reps, [0, 0], 3).data) + 1.0) < 1e-12

    def test_decreases_as_centroids_separate(self):
        rng = np.random.default_rng(0)
        spread = 0.05 * rng.standard_normal((6, 3))
        labels = np.repeat([0, 1, 2], 2)
        start, end = np.ones((3, 3)), np.eye(3) * 3
        values = []
        for t in np.linspace(0, 1, 11):
            centers = (1 - t) * start + t * end
            values.append(float(disease_diversity_loss(centers[labels] + spread, labels, 3).data))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_zero_vector_is_finite(self):
        v = float(cosine(Tensor(np.zeros(3)), Tensor(np.ones(3))).data)
        assert v == 0.0


class TestTotal:
    parts = (Tensor(1.0), Tensor(1.0), Tensor(1.0))

    def test_weighted_sum(self):
        total, br = total_loss(Tensor(1.0), self.parts, LossWeights())
        assert abs(float(total.data) - 1.3) < 1e-12
        assert br.identity_residual() < 1e-12

    def test_all_off_is_cls(self):
        total, _ = total_loss(Tensor(0.7), (Tensor(5.0), Tensor(-2.0), Tensor(3.0)),
                              LossWeights(alpha=0, beta=0, gamma=0))
        assert float(total.data) == 0.7

    def test_non_finite(self):
        with pytest.raises(NumericalError):
            total_loss(Tensor(1.0), (Tensor(float("nan")), Tensor(1.0), Tensor(1.0)), LossWeights())

    def test_learnable_alpha_gradient(self):
        w = LossWeights(learnable=True)
        ed = Tensor(2.5)
        total, _ = total_loss(Tensor(1.0), (ed, Tensor(1.0), Tensor(1.0)), w)
        total.backward()
        raw = w.raw["alpha"]
        sig = 1 / (1 + math.exp(-float(raw.data)))
        assert abs(float(raw.grad) - 2.5 * sig) < 1e-12
        err = grad_check(lambda: total_loss(Tensor(1.0), (ed, Tensor(1.0), Tensor(1.0)), w)[0],
                         list(w.raw.values()), n_samples=3)
        assert err < 1e-6


class TestGradients:
    def test_all_losses(self):
        rng = np.random.default_rng(0)
        logits = [Tensor(rng.standard_normal((3, 4, 3)), requires_grad=True) for _ in range(2)]
        reps = Tensor(rng.standard_normal((6, 5)), requires_grad=True)
        labels = np.array([0, 1, 2, 0, 1, 2])

        def f():
            trace = GateTrace([g.softmax(-1) for g in logits])
            return (expert_diversity_loss(trace) + expert_balance_loss(trace) * 3.0
                    + disease_diversity_loss(reps, labels, 3))

        assert grad_check(f, [*logits, reps], n_samples=100) < 1e-4
