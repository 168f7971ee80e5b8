#!/usr/bin/env python3
"""Tests for F1, model evaluation and the zero-shot matrix."""

import pytest

from conftest import TINY_ARCH
from fretal.backbone import build_model, freeze, parameter_digest
from fretal.errors import DataError, EmptyInputError
from fretal.metrics import (
    AdaptationReport,
    confusion_counts,
    evaluate_model,
    f1_score,
    zero_shot_matrix,
)


class TestF1:
    def test_worked_example(self):
        # TP=3, FP=1, FN=1, TN=1
        predictions = ["fake", "fake", "fake", "fake", "real", "real"]
        labels = ["fake", "fake", "fake", "real", "fake", "real"]
        counts = confusion_counts(predictions, labels)
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == (3, 1, 1, 1)
        assert f1_score(predictions, labels) == pytest.approx(0.75)

    def test_all_real_predictions_score_zero(self):
        assert f1_score([0, 0, 0, 0], [1, 0, 1, 0]) == 0.0

    def test_no_positives_anywhere(self):
        assert f1_score(["real", "real"], ["real", "real"]) == 0.0

    def test_perfect_predictions(self):
        labels = [1, 0, 1, 1, 0]
        assert f1_score(labels, labels) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            f1_score([1, 0], [1])

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            f1_score([], [])

    def test_unknown_label(self):
        with pytest.raises(DataError, match="unknown label"):
            f1_score(["fake", "maybe"], ["fake", "real"])


class TestEvaluateModel:
    def test_deterministic_and_linked_to_checkpoint(self, domain_a):
        model = freeze(build_model(TINY_ARCH, seed=2))
        first = evaluate_model(model, domain_a, "test", name="m")
        second = evaluate_model(model, domain_a, "test", name="m")
        assert first == second
        assert first.checkpoint_digest == parameter_digest(model)
        assert first.confusion.total == len(domain_a.split("test"))
        assert 0.0 <= first.f1 <= 1.0

    def test_group_vote_scores_groups(self, domain_a):
        model = freeze(build_model(TINY_ARCH, seed=2))
        report = evaluate_model(model, domain_a, "test", group_vote=True)
        assert report.group_vote
        assert report.confusion.total == len(domain_a.groups("test"))

    def test_adaptation_report_average(self, domain_a, domain_b):
        model = freeze(build_model(TINY_ARCH, seed=2))
        source = evaluate_model(model, domain_a)
        target = evaluate_model(model, domain_b)
        report = AdaptationReport.from_reports("fretal", 0, source, target)
        assert report.source == "A" and report.target == "B"
        assert report.avg_f1 == pytest.approx((source.f1 + target.f1) / 2)


class TestZeroShot:
    def test_square_matrix_in_domain_order(self, domain_a, domain_b):
        teachers = {
            "A": freeze(build_model(TINY_ARCH, seed=1)),
            "B": freeze(build_model(TINY_ARCH, seed=2)),
        }
        matrix = zero_shot_matrix(teachers, {"A": domain_a, "B": domain_b})
        assert matrix.shape == (2, 2)
        assert list(matrix.index) == ["A", "B"]
        assert list(matrix.columns) == ["A", "B"]
        assert matrix.index.name == "teacher"
        assert ((matrix >= 0) & (matrix <= 1)).all().all()
        assert matrix.loc["B", "A"] == evaluate_model(teachers["B"], domain_a).f1

    def test_single_domain(self, domain_a):
        matrix = zero_shot_matrix({"A": freeze(build_model(TINY_ARCH))}, {"A": domain_a})
        assert matrix.shape == (1, 1)
