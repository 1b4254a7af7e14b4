import tempfile
import unittest
from pathlib import Path

import torch
import torch.nn.functional as F  # noqa: N812

from attacks import (
    AttackSpec,
    advset_key,
    ensure_advset,
    fgsm,
    generate_advset,
    load_advset,
    pgd,
)
from constants import AA_LABEL, AA_RESTARTS, ADVSET_IMAGES
from errors import ArtifactError, ContractViolation, HashMismatchError
from tests.helpers import logistic_model, toy_data, toy_model

EPS = 8 / 255


class TestAttackSpec(unittest.TestCase):
    def test_steps_zero_rejected(self):
        with self.assertRaises(ContractViolation):
            AttackSpec("pgd", EPS, steps=0)

    def test_epsilon_out_of_range(self):
        with self.assertRaises(ContractViolation):
            AttackSpec("fgsm", 1.5)

    def test_unknown_kind(self):
        with self.assertRaises(ContractViolation):
            AttackSpec("cw", EPS)

    def test_large_step_warns(self):
        with self.assertLogs("attacks", level="WARNING"):
            AttackSpec("pgd", 1 / 255, step_size=2 / 255)

    def test_aa_substitute(self):
        spec = AttackSpec.aa_substitute(EPS)
        self.assertEqual((spec.kind, spec.name), ("pgd", AA_LABEL))
        self.assertEqual(spec.restarts, AA_RESTARTS)
        self.assertTrue(spec.random_start)


class TestFgsm(unittest.TestCase):
    def test_zero_epsilon(self):
        model, x = toy_model(), torch.rand(4, 3, 8, 8)
        self.assertTrue(torch.equal(fgsm(model, x, torch.tensor([0, 1, 2, 3]), 0.0), x))

    def test_logistic_sign(self):
        model = logistic_model(weight=2.0)
        x = torch.tensor([0.3, 0.6]).view(2, 1, 1, 1)
        y = torch.tensor([0, 0])
        x_adv = fgsm(model, x, y, 0.1)
        self.assertTrue(torch.allclose(x_adv, (x + 0.1).clamp(0, 1)))

        # the sign agrees with central finite differences of the loss
        h = 1e-3
        with torch.no_grad():
            for i in range(2):
                plus, minus = x[i : i + 1] + h, x[i : i + 1] - h
                diff = F.cross_entropy(model(plus), y[:1]) - F.cross_entropy(model(minus), y[:1])
                self.assertGreater(float(diff), 0.0)

    def test_sign_matches_finite_differences_on_cnn(self):
        model = toy_model(seed=3).double()
        g = torch.Generator().manual_seed(5)
        x = 0.2 + 0.6 * torch.rand(2, 3, 8, 8, generator=g, dtype=torch.float64)
        y = torch.tensor([1, 2])
        # small enough that no entry reaches the clamp
        step = fgsm(model, x, y, 1e-3) - x

        h = 1e-6
        agree = total = 0
        with torch.no_grad():
            for index in range(x.numel()):
                plus, minus = x.clone(), x.clone()
                plus.view(-1)[index] += h
                minus.view(-1)[index] -= h
                diff = float(F.cross_entropy(model(plus), y) - F.cross_entropy(model(minus), y))
                if abs(diff / (2 * h)) <= 1e-10:
                    continue
                total += 1
                agree += (diff > 0) == (float(step.view(-1)[index]) > 0)
        self.assertGreater(total, 0)
        self.assertGreaterEqual(agree / total, 0.99)

    def test_budget(self):
        model, x = toy_model(), torch.rand(8, 3, 8, 8)
        x_adv = fgsm(model, x, torch.arange(8) % 4, EPS)
        self.assertLessEqual(float((x_adv - x).abs().max()), EPS + 1e-6)
        self.assertTrue(bool(((x_adv >= 0) & (x_adv <= 1)).all()))

    def test_training_mode_rejected(self):
        model = toy_model().train()
        with self.assertRaises(ContractViolation):
            fgsm(model, torch.rand(2, 3, 8, 8), torch.tensor([0, 1]), EPS)


class TestPgd(unittest.TestCase):
    def test_single_step_equals_fgsm(self):
        model = toy_model(seed=3)
        x = torch.rand(16, 3, 8, 8, generator=torch.Generator().manual_seed(0))
        y = torch.arange(16) % 4
        spec = AttackSpec("pgd", EPS, step_size=EPS, steps=1, random_start=False)
        self.assertTrue(torch.allclose(pgd(model, x, y, spec), fgsm(model, x, y, EPS), atol=1e-7))

    def test_budget_over_many_samples(self):
        model = toy_model(seed=1)
        data = toy_data(1000, 4, split="test")
        spec = AttackSpec("pgd", EPS, restarts=2, seed=4)
        x = data.images()
        x_adv = pgd(model, x, data.labels, spec)
        per_sample = (x_adv - x).abs().flatten(1).amax(dim=1)
        self.assertTrue(bool((per_sample <= EPS + 1e-6).all()))
        self.assertTrue(bool(((x_adv >= 0) & (x_adv <= 1)).all()))

    def test_zero_epsilon(self):
        model, x = toy_model(), torch.rand(4, 3, 8, 8)
        spec = AttackSpec("pgd", 0.0, step_size=1e-3)
        self.assertTrue(torch.equal(pgd(model, x, torch.tensor([0, 1, 2, 3]), spec), x))

    def test_restarts_never_lower_the_loss(self):
        model = toy_model(seed=2)
        x = torch.rand(32, 3, 8, 8, generator=torch.Generator().manual_seed(1))
        y = torch.arange(32) % 4
        one = pgd(model, x, y, AttackSpec("pgd", EPS, seed=9))
        many = pgd(model, x, y, AttackSpec("pgd", EPS, restarts=3, seed=9))
        with torch.no_grad():
            loss_one = F.cross_entropy(model(one), y, reduction="none")
            loss_many = F.cross_entropy(model(many), y, reduction="none")
        self.assertTrue(bool((loss_many >= loss_one - 1e-6).all()))


class TestAdvSets(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.model = toy_model(seed=5)
        self.data = toy_data(40, 4, split="test")
        self.spec = AttackSpec("pgd", EPS, steps=3, seed=1, name="PGD")

    def tearDown(self):
        self.tmp.cleanup()

    def test_generate_and_reload(self):
        out = self.root / "pgd"
        artifact = generate_advset(self.model, self.data, self.spec, out, "abc", batch_size=16)
        self.assertEqual(tuple(artifact.images.shape), (40, 3, 8, 8))
        self.assertEqual(artifact.budget_violations(self.data.images()), 0)
        reloaded = load_advset(out, expected_key=artifact.key)
        self.assertTrue(torch.equal(reloaded.images, artifact.images))
        self.assertEqual(reloaded.name, "PGD")

    def test_tampered_artifact(self):
        out = self.root / "pgd"
        generate_advset(self.model, self.data, self.spec, out, "abc")
        raw = bytearray((out / ADVSET_IMAGES).read_bytes())
        raw[0] ^= 0xFF
        (out / ADVSET_IMAGES).write_bytes(bytes(raw))
        with self.assertRaises(HashMismatchError):
            load_advset(out)

    def test_wrong_key(self):
        out = self.root / "pgd"
        generate_advset(self.model, self.data, self.spec, out, "abc")
        with self.assertRaises(HashMismatchError):
            load_advset(out, expected_key="0" * 64)

    def test_cache_hit_on_second_call(self):
        first, hit = ensure_advset(self.model, self.data, self.spec, self.root, "abc")
        self.assertFalse(hit)
        second, hit = ensure_advset(None, self.data, self.spec, self.root, "abc")
        self.assertTrue(hit)
        self.assertTrue(torch.equal(first.images, second.images))

    def test_generation_is_deterministic(self):
        a = generate_advset(self.model, self.data, self.spec, self.root / "a", "abc")
        b = generate_advset(self.model, self.data, self.spec, self.root / "b", "abc")
        self.assertEqual(a.manifest["content_sha256"], b.manifest["content_sha256"])

    def test_missing_without_generation(self):
        with self.assertRaises(ArtifactError):
            ensure_advset(self.model, self.data, self.spec, self.root, "abc", allow_generate=False)

    def test_key_depends_on_inputs(self):
        other = AttackSpec("pgd", EPS, steps=4, seed=1, name="PGD")
        key = advset_key("abc", self.data, self.spec)
        self.assertEqual(key, advset_key("abc", self.data, self.spec))
        self.assertNotEqual(key, advset_key("abd", self.data, self.spec))
        self.assertNotEqual(key, advset_key("abc", self.data, other))

    def test_train_split_rejected(self):
        with self.assertRaises(ContractViolation):
            generate_advset(self.model, toy_data(8, 4), self.spec, self.root / "x", "abc")


if __name__ == "__main__":
    unittest.main()
