import math
import typing
import unittest

import numpy as np
import torch

from errors import ContractViolation
from losses import (
    LisardObjective,
    LossWeights,
    alpha_at,
    composite_loss,
    cross_correlation,
    cross_entropy,
    off_diagonal,
    similarity_loss,
)


def correlation_oracle(za: np.ndarray, zb: np.ndarray) -> np.ndarray:
    b, e = za.shape
    m = np.zeros((e, e))
    for i in range(e):
        for j in range(e):
            num = sum(za[k, i] * zb[k, j] for k in range(b))
            na = math.sqrt(sum(za[k, i] ** 2 for k in range(b)))
            nb = math.sqrt(sum(zb[k, j] ** 2 for k in range(b)))
            m[i, j] = num / max(na * nb, 1e-12)
    return m


def similarity_oracle(m: np.ndarray, lambda_: float) -> float:
    total = 0.0
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            total += (1 - m[i, j]) ** 2 if i == j else lambda_ * m[i, j] ** 2
    return total


class TestCrossEntropy(unittest.TestCase):
    def test_confident_logits(self):
        logits = torch.tensor([[20.0, 0.0, 0.0], [0.0, 0.0, 20.0]], dtype=torch.float64)
        loss = cross_entropy(logits, torch.tensor([0, 2]))
        self.assertLess(float(loss), 1e-8)

    def test_uniform_logits(self):
        loss = cross_entropy(torch.zeros(5, 10), torch.arange(5))
        self.assertAlmostEqual(float(loss), math.log(10), places=6)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(8, 6))
        y = rng.integers(0, 6, size=8)
        expected = np.mean(
            [-logits[b, y[b]] + math.log(sum(math.exp(v) for v in logits[b])) for b in range(8)]
        )
        got = cross_entropy(torch.from_numpy(logits), torch.from_numpy(y))
        self.assertAlmostEqual(float(got), expected, delta=1e-6)

    def test_non_finite_logits(self):
        with self.assertRaises(ContractViolation):
            cross_entropy(torch.tensor([[float("nan"), 0.0]]), torch.tensor([0]))


class TestCrossCorrelation(unittest.TestCase):
    def test_self_correlation(self):
        za = torch.randn(16, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
        m = cross_correlation(za, za)
        self.assertTrue(torch.allclose(torch.diagonal(m), torch.ones(8, dtype=torch.float64)))
        self.assertTrue(torch.allclose(m, m.T, atol=1e-12))

    def test_orthogonal_columns(self):
        za = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        zb = torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=torch.float64)
        m = cross_correlation(za, zb)
        self.assertAlmostEqual(float(m[0, 0]), 0.0, delta=1e-6)
        self.assertAlmostEqual(float(m[0, 1]), 1.0, delta=1e-6)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            za, zb = rng.normal(size=(16, 8)), rng.normal(size=(16, 8))
            got = cross_correlation(torch.from_numpy(za), torch.from_numpy(zb)).numpy()
            np.testing.assert_allclose(got, correlation_oracle(za, zb), atol=1e-6)

    def test_entries_bounded(self):
        rng = np.random.default_rng(3)
        za, zb = rng.normal(size=(16, 8)), rng.normal(size=(16, 8))
        m = cross_correlation(torch.from_numpy(za), torch.from_numpy(zb))
        self.assertLessEqual(float(m.abs().max()), 1 + 1e-6)

    def test_column_scale_invariance(self):
        rng = np.random.default_rng(4)
        za = torch.from_numpy(rng.normal(size=(16, 8)))
        zb = torch.from_numpy(rng.normal(size=(16, 8)))
        scaled = za.clone()
        scaled[:, 3] *= 7.5
        expected = cross_correlation(za, zb)
        self.assertTrue(torch.allclose(cross_correlation(scaled, zb), expected, atol=1e-6))

    def test_zero_column_is_finite(self):
        za = torch.zeros(4, 3)
        m = cross_correlation(za, torch.randn(4, 3))
        self.assertTrue(torch.isfinite(m).all())

    def test_single_sample_rejected(self):
        with self.assertRaises(ContractViolation):
            cross_correlation(torch.randn(1, 4), torch.randn(1, 4))

    def test_shape_mismatch(self):
        with self.assertRaises(ContractViolation):
            cross_correlation(torch.randn(4, 3), torch.randn(4, 5))


class TestSimilarityLoss(unittest.TestCase):
    def test_identity(self):
        self.assertEqual(float(similarity_loss(torch.eye(8), 5e-3)), 0.0)

    def test_zeros(self):
        self.assertAlmostEqual(float(similarity_loss(torch.zeros(8, 8), 1.0)), 8.0)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = rng.uniform(-1, 1, size=(8, 8))
            got = float(similarity_loss(torch.from_numpy(m), 5e-3))
            self.assertAlmostEqual(got, similarity_oracle(m, 5e-3), delta=1e-9)

    def test_zero_only_at_identity(self):
        m = torch.eye(4, dtype=torch.float64)
        m[0, 1] = 1e-3
        self.assertGreater(float(similarity_loss(m, 5e-3)), 0.0)

    def test_off_diagonal(self):
        m = torch.arange(9.0).view(3, 3)
        self.assertEqual(off_diagonal(m).tolist(), [1.0, 2.0, 3.0, 5.0, 6.0, 7.0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        h = 1e-4

        def loss(za, zb):
            return similarity_loss(cross_correlation(za, zb), 5e-3)

        for _ in range(20):
            za = torch.from_numpy(rng.normal(size=(16, 8))).requires_grad_(True)
            zb = torch.from_numpy(rng.normal(size=(16, 8))).requires_grad_(True)
            grad_a, grad_b = torch.autograd.grad(loss(za, zb), (za, zb))
            for z, analytic, other_first in ((za, grad_a, True), (zb, grad_b, False)):
                numeric = torch.zeros_like(analytic)
                base = z.detach()
                for index in np.ndindex(*base.shape):
                    plus, minus = base.clone(), base.clone()
                    plus[index] += h
                    minus[index] -= h
                    if other_first:
                        f_plus, f_minus = loss(plus, zb.detach()), loss(minus, zb.detach())
                    else:
                        f_plus, f_minus = loss(za.detach(), plus), loss(za.detach(), minus)
                    numeric[index] = (f_plus - f_minus) / (2 * h)
                error = (analytic - numeric).norm() / max(float(numeric.norm()), 1e-12)
                self.assertLess(float(error), 1e-3)


class TestSchedule(unittest.TestCase):
    def test_alpha_values(self):
        w = LossWeights(alpha0=0.5, delta=1 / 400)
        self.assertEqual(alpha_at(1, w), 0.5)
        self.assertAlmostEqual(alpha_at(200, w), 0.9975, places=12)
        self.assertEqual(alpha_at(500, w), 1.0)

    def test_alpha_monotone_and_bounded(self):
        w = LossWeights()
        values = [alpha_at(e, w) for e in range(1, 600)]
        self.assertEqual(values, sorted(values))
        self.assertLessEqual(max(values), 1.0)

    def test_epoch_zero_rejected(self):
        with self.assertRaises(ContractViolation):
            alpha_at(0, LossWeights())

    def test_invalid_weights(self):
        with self.assertRaises(ContractViolation):
            LossWeights(tau=0.0)
        with self.assertRaises(ContractViolation):
            LossWeights(alpha0=1.5)


class TestCompositeLoss(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(composite_loss(1.0, 2.0, 100.0, alpha=1.0, tau=3.0), 3.0)
        self.assertEqual(composite_loss(2.0, 2.0, 4.0, alpha=0.5, tau=2.0), 3.0)
        self.assertEqual(composite_loss(5.0, 5.0, 0.0, alpha=0.0, tau=2.0), 0.0)

    def test_monotone(self):
        base = composite_loss(1.0, 1.0, 1.0, 0.3, 2.0)
        self.assertGreaterEqual(composite_loss(1.5, 1.0, 1.0, 0.3, 2.0), base)
        self.assertGreaterEqual(composite_loss(1.0, 1.5, 1.0, 0.3, 2.0), base)
        self.assertGreaterEqual(composite_loss(1.0, 1.0, 1.5, 0.3, 2.0), base)

    def test_invalid_tau(self):
        with self.assertRaises(ContractViolation):
            composite_loss(1.0, 1.0, 1.0, 0.5, 0.0)

    def test_tensor_terms_keep_gradients(self):
        hints = typing.get_type_hints(composite_loss)
        self.assertEqual(hints["return"], torch.Tensor | float)
        terms = [torch.tensor(v, requires_grad=True) for v in (2.0, 2.0, 4.0)]
        loss = composite_loss(*terms, alpha=0.5, tau=2.0)
        self.assertIsInstance(loss, torch.Tensor)
        loss.backward()
        self.assertEqual([float(t.grad) for t in terms], [0.5, 0.5, 0.25])
        self.assertEqual(float(loss.detach()), 3.0)


class TestLisardObjective(unittest.TestCase):
    def setUp(self):
        g = torch.Generator().manual_seed(7)
        self.clean = (torch.randn(8, 4, generator=g), torch.randn(8, 3, generator=g))
        self.companion = (torch.randn(8, 4, generator=g), torch.randn(8, 3, generator=g))
        self.y = torch.randint(0, 3, (8,), generator=g)

    def test_both_terms(self):
        terms = LisardObjective(LossWeights())(self.clean, self.companion, self.y, 0.6)
        expected = composite_loss(terms.l_c, terms.l_r, terms.l_s, 0.6, 2.0)
        self.assertAlmostEqual(float(terms.composite), float(expected), places=6)

    def test_clean_only_drops_random_term(self):
        terms = LisardObjective(LossWeights(), "clean")(self.clean, self.companion, self.y, 0.6)
        expected = 0.6 * terms.l_c + 0.4 * terms.l_s / 2.0
        self.assertAlmostEqual(float(terms.composite), float(expected), places=6)

    def test_random_only_drops_clean_term(self):
        terms = LisardObjective(LossWeights(), "random")(self.clean, self.companion, self.y, 0.6)
        expected = 0.6 * terms.l_r + 0.4 * terms.l_s / 2.0
        self.assertAlmostEqual(float(terms.composite), float(expected), places=6)

    def test_alpha_one_is_classification_only(self):
        terms = LisardObjective(LossWeights())(self.clean, self.companion, self.y, 1.0)
        self.assertAlmostEqual(float(terms.composite), float(terms.l_c + terms.l_r), places=6)

    def test_unknown_terms(self):
        with self.assertRaises(ContractViolation):
            LisardObjective(LossWeights(), "neither")


if __name__ == "__main__":
    unittest.main()
