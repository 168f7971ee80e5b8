#!/usr/bin/env python3
"""Tests for the loss terms: values, identities and gradients."""

import math

import pytest
import torch
import torch.nn.functional as F
from torch.autograd import gradcheck

from conftest import TINY_ARCH
from fretal.backbone import build_model, clone_model, forward, freeze
from fretal.config import BinSpec, LossConfig
from fretal.errors import (
    BatchContractError,
    ConfigError,
    LabelError,
    NumericInputError,
    StoreContractError,
)
from fretal.feature_store import FeatureStore
from fretal.losses import (
    StorePair,
    ce_loss,
    combine_losses,
    entropy,
    fretal_loss,
    fsl_loss,
    kd_loss,
    softmax_t,
)

GRADCHECK = {"eps": 1e-5, "atol": 1e-7, "rtol": 1e-4}


def random_logits(seed: int, batch: int = 6, scale: float = 3.0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(batch, 2, generator=generator, dtype=torch.float64) * scale


def random_store(seed: int, spec: BinSpec, dim: int = 4, requires_grad: bool = False) -> FeatureStore:
    generator = torch.Generator().manual_seed(seed)
    sums = torch.randn(spec.num_bins, 2, dim, generator=generator, dtype=torch.float64)
    counts = torch.randint(0, 4, (spec.num_bins, 2), generator=generator)
    return FeatureStore(spec=spec, sums=sums.requires_grad_(requires_grad), counts=counts)


def random_images(seed: int, size: int = 6) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.rand(size, 3, 128, 128, generator=generator) * 2 - 1


class TestSoftmax:
    def test_rows_sum_to_one(self):
        probs = softmax_t(random_logits(0), 20.0)
        assert torch.allclose(probs.sum(-1), torch.ones(6, dtype=torch.float64))

    def test_large_logits_are_stable(self):
        probs = softmax_t(torch.tensor([[1000.0, -1000.0]]), 1.0)
        assert torch.isfinite(probs).all()
        assert probs[0, 0] == pytest.approx(1.0)

    @pytest.mark.parametrize("temperature", [0.0, -1.0])
    def test_non_positive_temperature(self, temperature):
        with pytest.raises(ConfigError):
            softmax_t(random_logits(0), temperature)

    def test_non_finite_logits(self):
        with pytest.raises(NumericInputError):
            softmax_t(torch.tensor([[float("nan"), 0.0]]), 1.0)

    def test_worked_value(self):
        probs = softmax_t(torch.tensor([[2.0, 0.0]], dtype=torch.float64), 20.0)
        assert probs[0].tolist() == pytest.approx([0.52498, 0.47502], abs=1e-5)

    def test_float32_logits_sum_to_one_in_double(self):
        logits = torch.randn(500, 2, generator=torch.Generator().manual_seed(9)) * 7.0
        probs = softmax_t(logits, 3.0)
        assert probs.dtype == torch.float64
        assert float((probs.sum(-1) - 1.0).abs().max()) <= 1e-12

    def test_entropy_non_decreasing_in_temperature(self):
        logits = random_logits(1, batch=1000)
        previous = entropy(softmax_t(logits, 0.5))
        for temperature in (1.0, 2.0, 5.0, 20.0, 100.0):
            current = entropy(softmax_t(logits, temperature))
            assert bool((current >= previous - 1e-12).all())
            previous = current


class TestKdAndCe:
    def test_kd_with_one_hot_teacher_equals_ce(self):
        labels = torch.tensor([0, 1, 1, 0, 1, 0])
        # a very confident teacher is one-hot to double precision at T = 1
        teacher_logits = F.one_hot(labels, 2).double() * 800.0
        student_logits = random_logits(2)
        kd = kd_loss(teacher_logits, student_logits, 1.0)
        assert float(kd) == pytest.approx(float(ce_loss(student_logits, labels)), abs=1e-9)

    def test_kd_minimum_is_teacher_entropy(self):
        logits = random_logits(3)
        floor = entropy(softmax_t(logits, 20.0)).mean()
        assert float(kd_loss(logits, logits.clone(), 20.0)) == pytest.approx(float(floor), abs=1e-12)

    def test_ce_example_value(self):
        logits = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
        assert float(ce_loss(logits, torch.tensor([1]))) == pytest.approx(math.log(2.0))

    def test_ce_worked_value(self):
        logits = torch.tensor([[-5.0, 5.0]], dtype=torch.float64)
        assert float(ce_loss(logits, torch.tensor([0]))) == pytest.approx(10.0000454, abs=1e-7)

    def test_kd_worked_value(self):
        # one-hot teacher against a student predicting [0.9, 0.1]
        teacher_logits = torch.tensor([[1000.0, 0.0]], dtype=torch.float64)
        student_logits = torch.tensor([[math.log(0.9), math.log(0.1)]], dtype=torch.float64)
        kd = kd_loss(teacher_logits, student_logits, 1.0)
        assert float(kd) == pytest.approx(0.10536, abs=1e-5)

    @pytest.mark.parametrize("shift", [-50.0, -1.5, 0.25, 8.0, 300.0])
    def test_kd_is_shift_invariant(self, shift):
        teacher_logits = random_logits(7)
        student_logits = random_logits(8)
        base = float(kd_loss(teacher_logits, student_logits, 20.0))
        assert float(kd_loss(teacher_logits, student_logits + shift, 20.0)) == pytest.approx(base, abs=1e-10)
        assert float(kd_loss(teacher_logits + shift, student_logits, 20.0)) == pytest.approx(base, abs=1e-10)

    def test_ce_accepts_soft_targets(self):
        logits = random_logits(4)
        hard = torch.tensor([0, 1, 0, 1, 1, 0])
        soft = F.one_hot(hard, 2).double()
        assert float(ce_loss(logits, soft)) == pytest.approx(float(ce_loss(logits, hard)))

    def test_ce_rejects_unknown_labels(self):
        with pytest.raises(LabelError):
            ce_loss(random_logits(0, batch=2), torch.tensor([0, 2]))

    def test_kd_shape_mismatch(self):
        with pytest.raises(BatchContractError):
            kd_loss(random_logits(0, batch=3), random_logits(1, batch=4), 20.0)

    def test_kd_gradient_does_not_reach_teacher(self):
        teacher_logits = random_logits(5).requires_grad_(True)
        student_logits = random_logits(6).requires_grad_(True)
        kd_loss(teacher_logits, student_logits, 20.0).backward()
        assert teacher_logits.grad is None
        assert student_logits.grad is not None


class TestFsl:
    def test_identical_stores_give_zero(self):
        spec = BinSpec()
        store = random_store(0, spec)
        assert float(fsl_loss(store, store)) == 0.0

    def test_empty_cells_are_skipped(self):
        spec = BinSpec()
        student = FeatureStore.empty(spec, 3)
        teacher = FeatureStore.empty(spec, 3)
        student.accumulate(torch.tensor([1.0, 0.0, 0.0]), 0.95, 1)
        teacher.accumulate(torch.tensor([0.0, 2.0, 0.0]), 0.95, 1)
        teacher.accumulate(torch.tensor([5.0, 5.0, 5.0]), 0.55, 0)
        # only the (last bin, fake) cell is shared: 1 + 4
        assert float(fsl_loss(student, teacher)) == pytest.approx(5.0)

    def test_orthogonal_unit_features(self):
        spec = BinSpec()
        student = FeatureStore.empty(spec, 3).accumulate(torch.tensor([1.0, 0.0, 0.0]), 0.95, 0)
        teacher = FeatureStore.empty(spec, 3).accumulate(torch.tensor([0.0, 1.0, 0.0]), 0.95, 0)
        assert float(fsl_loss(student, teacher)) == pytest.approx(2.0)

    def test_mismatched_specs(self):
        with pytest.raises(StoreContractError):
            fsl_loss(random_store(0, BinSpec()), random_store(0, BinSpec(step=0.25)))

    def test_mismatched_dimensions(self):
        spec = BinSpec()
        with pytest.raises(StoreContractError):
            fsl_loss(random_store(0, spec, dim=4), random_store(0, spec, dim=5))


class TestGradients:
    """Analytic gradients against central finite differences in float64."""

    @pytest.mark.parametrize("seed", range(100))
    def test_softmax_t(self, seed):
        logits = random_logits(seed).requires_grad_(True)
        assert gradcheck(lambda x: softmax_t(x, 20.0), (logits,), **GRADCHECK)

    @pytest.mark.parametrize("seed", range(100))
    def test_kd_loss(self, seed):
        teacher = random_logits(seed + 1000)
        logits = random_logits(seed).requires_grad_(True)
        assert gradcheck(lambda x: kd_loss(teacher, x, 20.0), (logits,), **GRADCHECK)

    @pytest.mark.parametrize("seed", range(100))
    def test_ce_loss(self, seed):
        labels = torch.randint(0, 2, (6,), generator=torch.Generator().manual_seed(seed))
        logits = random_logits(seed).requires_grad_(True)
        assert gradcheck(lambda x: ce_loss(x, labels), (logits,), **GRADCHECK)

    @pytest.mark.parametrize("seed", range(100))
    def test_fsl_loss(self, seed):
        spec = BinSpec()
        teacher = random_store(seed + 1000, spec)
        student = random_store(seed, spec, requires_grad=True)

        def loss(sums: torch.Tensor) -> torch.Tensor:
            return fsl_loss(FeatureStore(spec=spec, sums=sums, counts=student.counts), teacher)

        assert gradcheck(loss, (student.sums,), **GRADCHECK)

    @pytest.mark.parametrize("seed", range(100))
    def test_combined_objective(self, seed):
        spec = BinSpec()
        labels = torch.randint(0, 2, (6,), generator=torch.Generator().manual_seed(seed))
        teacher_logits = random_logits(seed + 2000)
        teacher_store = random_store(seed + 1000, spec)
        counts = random_store(seed, spec).counts
        logits = random_logits(seed).requires_grad_(True)
        sums = random_store(seed, spec).sums.clone().requires_grad_(True)

        def loss(x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
            fsl = fsl_loss(FeatureStore(spec=spec, sums=s, counts=counts), teacher_store)
            return combine_losses(
                fsl, kd_loss(teacher_logits, x, 20.0), ce_loss(x, labels), (0.7, 1.3, 0.5)
            ).total

        assert gradcheck(loss, (logits, sums), **GRADCHECK)

    def test_live_batch_gradient_matches_differentiable_store(self):
        spec = BinSpec()
        generator = torch.Generator().manual_seed(0)
        features = torch.rand(12, 4, generator=generator, dtype=torch.float64)
        confidences = 0.5 + 0.5 * torch.rand(12, generator=generator, dtype=torch.float64)
        labels = torch.randint(0, 2, (12,), generator=generator)
        teacher = random_store(7, spec)
        teacher.counts = torch.ones_like(teacher.counts)

        live_features = features.clone().requires_grad_(True)
        store = FeatureStore.empty(spec, 4).accumulate_batch(features, confidences, labels)
        fsl_loss(store.with_live_batch(live_features, confidences, labels), teacher).backward()

        direct_features = features.clone().requires_grad_(True)
        onehot, _ = store._cell_assignment(direct_features, confidences, labels)
        sums = (onehot.T @ direct_features).reshape_as(store.sums)
        direct = FeatureStore(spec=spec, sums=sums, counts=store.counts)
        fsl_loss(direct, teacher).backward()

        assert torch.allclose(live_features.grad, direct_features.grad, atol=1e-12)


class TestFretalLoss:
    """Wiring of the combined objective on real models."""

    @pytest.fixture
    def models(self):
        teacher = freeze(build_model(TINY_ARCH, seed=2))
        return teacher, clone_model(teacher)

    def _stores(self, teacher, student, images, labels, spec):
        with torch.no_grad():
            t_out = forward(teacher, images)
            s_out = forward(student, images)
        t_store = FeatureStore.empty(spec, 16).accumulate_batch(
            t_out.features, torch.softmax(t_out.logits, -1).amax(-1), labels
        )
        s_store = FeatureStore.empty(spec, 16).accumulate_batch(
            s_out.features, torch.softmax(s_out.logits, -1).amax(-1), labels
        )
        return StorePair(teacher=t_store, student=s_store)

    def test_degenerates_to_kd_and_ft(self, models):
        teacher, student = models
        images, labels = random_images(0), torch.tensor([0, 1, 0, 1, 1, 0])
        cfg = LossConfig()
        stores = self._stores(teacher, student, images, labels, BinSpec())

        kd_only = fretal_loss(images, labels, teacher, student, stores, cfg, weights=(0, 1, 0))
        ft_only = fretal_loss(images, labels, teacher, student, stores, cfg, weights=(0, 0, 1))
        t_logits = forward(teacher, images).logits
        s_logits = forward(student, images).logits
        assert kd_only.fsl is None and kd_only.ce is None
        assert ft_only.fsl is None and ft_only.kd is None
        assert float(kd_only.total) == float(kd_loss(t_logits, s_logits, cfg.temperature))
        assert float(ft_only.total) == float(ce_loss(s_logits, labels))

    def test_fsl_zero_for_teacher_copy(self, models):
        teacher, student = models
        images, labels = random_images(1), torch.tensor([1, 1, 0, 0, 1, 0])
        stores = self._stores(teacher, student, images, labels, BinSpec())
        breakdown = fretal_loss(images, labels, teacher, student, stores, LossConfig())
        assert abs(float(breakdown.fsl)) < 1e-10
        expected = float(breakdown.fsl) + float(breakdown.kd) + float(breakdown.ce)
        assert float(breakdown.total) == pytest.approx(expected, abs=1e-9)

    def test_gradient_is_sum_of_component_gradients(self, models):
        teacher, student = models
        images, labels = random_images(2), torch.tensor([0, 1, 1, 0, 0, 1])
        stores = self._stores(teacher, student, images, labels, BinSpec())
        cfg = LossConfig()

        def grads(weights):
            student.network.zero_grad()
            fretal_loss(images, labels, teacher, student, stores, cfg, weights=weights).total.backward()
            return [
                torch.zeros_like(p) if p.grad is None else p.grad.clone()
                for p in student.network.parameters()
            ]

        combined = grads((1.0, 1.0, 1.0))
        parts = [grads(w) for w in ((1.0, 0, 0), (0, 1.0, 0), (0, 0, 1.0))]
        for total, *components in zip(combined, *parts):
            assert torch.allclose(total, sum(components), atol=1e-6)

    def test_requires_frozen_teacher(self, models):
        _, student = models
        with pytest.raises(ConfigError, match="frozen"):
            fretal_loss(
                random_images(0, 2),
                torch.tensor([0, 1]),
                student,
                student,
                None,
                LossConfig(),
                weights=(0, 1, 0),
            )

    def test_all_zero_weights(self):
        with pytest.raises(ConfigError):
            combine_losses(torch.tensor(1.0), torch.tensor(1.0), torch.tensor(1.0), (0, 0, 0))
