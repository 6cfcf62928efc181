"""Synthetic paired data: ranges, determinism, distinctness, degradation
physics, record replay, and disk round-trips."""

import numpy as np
import pytest

from redlab.datagen import (
    ScenePair,
    apply_degradation,
    degrade,
    load_pairs,
    make_corpus,
    make_pair,
    make_scene,
    save_pairs,
)
from redlab.errors import ContractError
from redlab.rng import Rng


class TestMakeScene:
    def test_pixels_in_unit_interval(self):
        """Every channel of every seed stays inside [0, 1]."""
        for seed in range(10):
            img = make_scene(Rng(seed), 16, 16).data
            assert img.shape == (3, 16, 16)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_same_seed_bit_identical(self):
        a = make_scene(Rng(5), 12, 20).data
        b = make_scene(Rng(5), 12, 20).data
        assert np.array_equal(a, b)

    def test_different_seeds_visibly_distinct(self):
        """Scene content varies: max |delta| > 0.05 for 20 seed pairs."""
        for seed in range(20):
            a = make_scene(Rng(seed), 16, 16).data
            b = make_scene(Rng(seed + 1000), 16, 16).data
            assert np.max(np.abs(a - b)) > 0.05

    def test_too_small_rejected(self):
        with pytest.raises(ContractError):
            make_scene(Rng(0), 4, 16)


class TestDegrade:
    def test_identity_parameters_reproduce_clean(self):
        """gamma=1, s=1, sigma=0 is the exact identity."""
        clean = make_scene(Rng(7), 16, 16)
        low = apply_degradation(clean, 1.0, 1.0, 0.0)
        assert np.array_equal(low.data, clean.data)

    def test_darkens_bright_scenes(self):
        """Gamma in [2,3] with gain <= 0.3 dims any scene of mean >= 0.2."""
        checked = 0
        for seed in range(200):
            clean = make_scene(Rng(seed), 16, 16)
            if clean.data.mean() < 0.2:
                continue
            low, _ = degrade(clean, Rng(seed + 1))
            assert low.data.mean() < clean.data.mean()
            checked += 1
            if checked == 50:
                break
        assert checked == 50

    def test_same_stream_bit_identical(self):
        clean = make_scene(Rng(9), 16, 16)
        la, ra = degrade(clean, Rng(10))
        lb, rb = degrade(clean, Rng(10))
        assert np.array_equal(la.data, lb.data)
        assert ra == rb

    def test_parameters_within_documented_ranges(self):
        for seed in range(20):
            clean = make_scene(Rng(seed), 8, 8)
            _, rec = degrade(clean, Rng(seed + 50))
            assert 2.0 <= rec["gamma"] < 3.0
            assert 0.1 <= rec["s"] < 0.3
            assert 0.01 <= rec["sigma"] < 0.05

    def test_record_replays_exact_low_image(self):
        """The stored record regenerates the identical degraded image."""
        for seed in range(10):
            pair = make_pair(seed, 16, 16)
            rec = pair.record
            replay = apply_degradation(
                pair.clean,
                rec["gamma"],
                rec["s"],
                rec["sigma"],
                Rng(rec["noise_seed"]),
            )
            assert np.array_equal(replay.data, pair.low.data)

    def test_low_in_unit_interval(self):
        for seed in range(10):
            pair = make_pair(seed, 16, 16)
            assert pair.low.data.min() >= 0.0
            assert pair.low.data.max() <= 1.0
            assert pair.low.data.shape == pair.clean.data.shape


class TestMakeCorpus:
    def test_corpus_is_deterministic(self):
        a = make_corpus(11, 4, 8, 8)
        b = make_corpus(11, 4, 8, 8)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.clean.data, pb.clean.data)
            assert np.array_equal(pa.low.data, pb.low.data)

    def test_members_are_mutually_distinct(self):
        pairs = make_corpus(12, 6, 16, 16)
        for i in range(len(pairs)):
            for j in range(i + 1, len(pairs)):
                assert np.max(np.abs(pairs[i].clean.data - pairs[j].clean.data)) > 0.05

    def test_empty_corpus_rejected(self):
        with pytest.raises(ContractError):
            make_corpus(0, 0, 8, 8)


class TestDiskRoundTrip:
    def test_save_load_preserves_everything(self, tmp_path):
        """Pairs survive a disk round-trip bit-exactly, records included."""
        pairs = make_corpus(13, 3, 8, 8)
        save_pairs(str(tmp_path / "corpus"), pairs)
        loaded = load_pairs(str(tmp_path / "corpus"))
        assert len(loaded) == 3
        for orig, back in zip(pairs, loaded):
            assert np.array_equal(orig.clean.data, back.clean.data)
            assert np.array_equal(orig.low.data, back.low.data)
            assert back.seed == orig.seed
            assert back.record == orig.record

    def test_wrong_directory_rejected(self, tmp_path):
        from redlab.checkpoint import save_tensors

        save_tensors(
            str(tmp_path / "corpus"), [("x", np.zeros(3))], {"kind": "other"}
        )
        with pytest.raises(ContractError):
            load_pairs(str(tmp_path))
