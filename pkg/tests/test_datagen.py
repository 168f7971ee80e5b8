#!/usr/bin/env python3
"""Tests for synthetic domains, CutMix and frame ingestion."""

import numpy as np
import pandas as pd
import pytest
import torch
import torch.nn.functional as F
from PIL import Image

from conftest import TINY_GENERATOR
from fretal.config import preset_domain
from fretal.datagen import (
    FAKE,
    REAL,
    SPLITS,
    class_balance,
    generate_domain,
    recompress,
    split_group_counts,
    write_dataset,
)
from fretal.cutmix import cutmix, paste_patch
from fretal.errors import ConfigError, DataError, IngestionError
from fretal.ingest import center_crop_resize, ingest_frames, read_manifest


class TestSplits:
    def test_default_group_counts(self):
        assert split_group_counts(110) == {
            "teacher-train": 75,
            "adapt": 10,
            "validation": 12,
            "test": 13,
        }

    def test_counts_cover_all_groups(self):
        for n_groups in (40, 57, 110, 300):
            assert sum(split_group_counts(n_groups).values()) == n_groups

    def test_splits_are_disjoint_and_balanced(self, domain_a):
        seen = set()
        for split in SPLITS:
            groups = set(domain_a.groups(split))
            assert not groups & seen
            seen |= groups
            real, fake = class_balance(domain_a, split)
            assert abs(real - fake) <= 1
        assert seen == set(range(40))
        assert len(domain_a.groups("adapt")) == 10

    def test_unknown_split(self, domain_a):
        with pytest.raises(DataError):
            domain_a.split("train")

    def test_too_few_groups(self):
        with pytest.raises(ConfigError):
            generate_domain(preset_domain("A", "blend"), n_groups=20, generator=TINY_GENERATOR)


class TestGeneration:
    def test_deterministic(self, domain_a):
        again = generate_domain(preset_domain("A", "blend"), n_groups=40, seed=0, generator=TINY_GENERATOR)
        assert again.digest() == domain_a.digest()

    def test_seed_changes_data(self, domain_a):
        other = generate_domain(preset_domain("A", "blend"), n_groups=40, seed=1, generator=TINY_GENERATOR)
        assert other.digest() != domain_a.digest()

    def test_shapes_and_group_sizes(self, domain_a):
        assert domain_a.images.shape == (80, 128, 128, 3)
        assert domain_a.images.dtype == np.uint8
        _, counts = np.unique(domain_a.group_ids, return_counts=True)
        assert set(counts) == {TINY_GENERATOR.frames_per_group}

    def test_split_items_are_normalised(self, domain_a):
        image, label, domain = domain_a.split("test")[0]
        assert image.shape == (3, 128, 128)
        assert float(image.min()) >= -1.0 and float(image.max()) <= 1.0
        assert label in (REAL, FAKE)
        assert domain == "A"

    def test_fingerprints_differ_between_domains(self, domain_a, domain_b):
        fake_a = domain_a.images[domain_a.labels == FAKE].mean(axis=(0, 1, 2))
        fake_b = domain_b.images[domain_b.labels == FAKE].mean(axis=(0, 1, 2))
        assert not np.allclose(fake_a, fake_b, atol=0.5)

    def test_recompress_keeps_layout(self, domain_a):
        hq = generate_domain(
            preset_domain("A", "blend", lq=False), n_groups=40, seed=0, generator=TINY_GENERATOR
        )
        lq = recompress(hq, 20)
        assert lq.images.shape == hq.images.shape
        assert lq.group_splits == hq.group_splits
        assert not np.array_equal(lq.images, hq.images)
        assert recompress(hq, None) is hq


class TestCutMix:
    def test_soft_labels_follow_pasted_area(self):
        images = torch.zeros(2, 3, 128, 128)
        images[1] = 1.0
        targets = F.one_hot(torch.tensor([0, 1]), 2).float()
        mixed, targets = paste_patch(images, targets, receiver=0, donor=1, box=(0, 64, 0, 32))
        area = 64 * 32 / (128 * 128)
        assert float(mixed[0].mean()) == pytest.approx(area)
        assert torch.allclose(targets[0], torch.tensor([1 - area, area]))
        assert torch.equal(targets[1], torch.tensor([0.0, 1.0]))

    def test_targets_are_distributions(self):
        generator = torch.Generator().manual_seed(0)
        images = torch.rand(8, 3, 128, 128, generator=generator) * 2 - 1
        labels = torch.tensor([0, 1] * 4)
        _, targets = cutmix(images, labels, mix_probability=1.0, seed=3)
        assert targets.shape == (8, 2)
        assert torch.allclose(targets.sum(-1), torch.ones(8))
        assert bool((targets >= 0).all())

    def test_zero_probability_is_identity(self):
        images = torch.rand(4, 3, 128, 128)
        labels = torch.tensor([0, 1, 0, 1])
        mixed, targets = cutmix(images, labels, mix_probability=0.0)
        assert torch.equal(mixed, images)
        assert torch.equal(targets.argmax(-1), labels)

    def test_single_sample_batch_is_skipped(self, caplog):
        images = torch.rand(1, 3, 128, 128)
        mixed, _ = cutmix(images, torch.tensor([1]), mix_probability=1.0)
        assert torch.equal(mixed, images)
        assert "CutMix skipped" in caplog.text

    def test_seeded(self):
        images = torch.rand(6, 3, 128, 128)
        labels = torch.tensor([0, 1, 0, 1, 0, 1])
        first = cutmix(images, labels, seed=5)
        second = cutmix(images, labels, seed=5)
        assert torch.equal(first[0], second[0]) and torch.equal(first[1], second[1])


class TestIngest:
    def test_center_crop_never_stretches(self):
        canvas = np.zeros((100, 300, 3), dtype=np.uint8)
        canvas[:, 100:200] = 255
        pixels = center_crop_resize(Image.fromarray(canvas))
        assert pixels.shape == (128, 128, 3)
        assert pixels.min() == 255

    def test_round_trip_through_frame_tree(self, domain_a, tmp_path):
        manifest = write_dataset(domain_a, tmp_path)
        ingested = ingest_frames(tmp_path, manifest, expected_frames=TINY_GENERATOR.frames_per_group)
        assert ingested.domain == "A"
        assert ingested.group_splits == domain_a.group_splits
        assert np.array_equal(np.sort(ingested.labels), np.sort(domain_a.labels))
        assert len(ingested) == len(domain_a)

    def test_missing_frames_are_all_reported(self, domain_a, tmp_path):
        manifest = write_dataset(domain_a, tmp_path)
        frame = pd.read_csv(manifest)
        extra = pd.DataFrame(
            [
                {"domain": "A", "group_id": 900, "label": "fake", "split": "test"},
                {"domain": "A", "group_id": 901, "label": "real", "split": "test"},
            ]
        )
        pd.concat([frame, extra]).to_csv(manifest, index=False)
        with pytest.raises(IngestionError) as excinfo:
            ingest_frames(tmp_path, manifest)
        assert len(excinfo.value.paths) == 2
        assert "900" in str(excinfo.value) and "901" in str(excinfo.value)

    def test_unreadable_frame(self, domain_a, tmp_path):
        manifest = write_dataset(domain_a, tmp_path)
        group = domain_a.groups("test")[0]
        (tmp_path / "A" / "test" / str(group) / "0.png").write_bytes(b"not a png")
        with pytest.raises(IngestionError, match="0.png"):
            ingest_frames(tmp_path, manifest)

    def test_frame_count_mismatch_warns(self, domain_a, tmp_path, caplog):
        manifest = write_dataset(domain_a, tmp_path)
        ingest_frames(tmp_path, manifest, expected_frames=80)
        assert "usable frames (expected 80)" in caplog.text

    def test_manifest_validation(self, tmp_path):
        bad = pd.DataFrame([{"domain": "A", "group_id": 0, "label": "maybe", "split": "test"}])
        with pytest.raises(IngestionError, match="unknown labels"):
            read_manifest(bad)
        with pytest.raises(IngestionError, match="not found"):
            read_manifest(tmp_path / "absent.csv")
