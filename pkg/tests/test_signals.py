import numpy as np
import pytest

from ndec.signals import (MODALITIES, BadMagicError, BandSpec, EmptySelectionError, EpochBatch,
                          Split, TruncatedFileError, VersionError, average_repetitions,
                          bandpass_filter, load_split, read_epochs, region_of, save_split,
                          select_region, synth_dataset, write_epochs)
from ndec.tensor import ContractError


def sine_batch(freq, sr=250.0, T=250, C=1):
    t = np.arange(T) / sr
    x = np.sin(2 * np.pi * freq * t)
    return EpochBatch(np.tile(x, (1, C, 1)), [0], [0], [f"E{i}" for i in range(C)], sr)


def energy(b):
    return float((b.signals.astype(np.float64) ** 2).sum())


class TestEpochBatch:
    def test_validates_lengths(self):
        with pytest.raises(ContractError):
            EpochBatch(np.zeros((2, 1, 4)), [0], [0, 1], ["a"])
        with pytest.raises(ContractError):
            EpochBatch(np.zeros((1, 2, 4)), [0], [0], ["a"])

    def test_split_normalises_targets(self, rng):
        b = EpochBatch(np.zeros((3, 1, 4)), [0, 1, 2], [0, 1, 2], ["a"])
        s = Split(b, {m: rng.standard_normal((3, 5)) * 7 for m in MODALITIES})
        for m in MODALITIES:
            np.testing.assert_allclose(np.linalg.norm(s.targets[m], axis=1), 1, rtol=1e-6)
        assert s.bundle(1).image.shape == (5,)


class TestSynth:
    def test_deterministic(self):
        a, _ = synth_dataset(4, 3, 4, 16, 32, seed=7)
        b, _ = synth_dataset(4, 3, 4, 16, 32, seed=7)
        assert a.batch.signals.tobytes() == b.batch.signals.tobytes()
        for m in MODALITIES:
            assert a.targets[m].tobytes() == b.targets[m].tobytes()

    def test_shapes_and_ids(self):
        train, test = synth_dataset(5, 4, 6, 32, 64, seed=1)
        assert train.batch.shape == (20, 6, 32)
        assert test.batch.shape == (5, 6, 32)
        assert len(set(train.batch.sample_ids.tolist())) == 20
        assert sorted(test.batch.labels.tolist()) == list(range(5))
        assert len(train.images) == 20

    def test_noiseless_nearest_prototype_is_perfect(self):
        train, test = synth_dataset(6, 5, 8, 64, 32, class_separation=3.0, noise=0.0, seed=3)
        X = train.batch.signals.reshape(len(train), -1)
        protos = np.stack([X[train.batch.labels == c].mean(0) for c in range(6)])
        Xt = test.batch.signals.reshape(len(test), -1)
        pred = np.argmin(((Xt[:, None] - protos[None]) ** 2).sum(-1), axis=1)
        assert (pred == test.batch.labels).all()

    def test_zero_separation_is_near_chance(self):
        hits = []
        for seed in range(20):
            train, test = synth_dataset(5, 4, 4, 32, 16, class_separation=0.0, noise=1.0, seed=seed)
            X = train.batch.signals.reshape(len(train), -1)
            protos = np.stack([X[train.batch.labels == c].mean(0) for c in range(5)])
            Xt = test.batch.signals.reshape(len(test), -1)
            pred = np.argmin(((Xt[:, None] - protos[None]) ** 2).sum(-1), axis=1)
            hits.append((pred == test.batch.labels).mean())
        # chance is 0.2; 100 test decisions, 3 sigma is about 0.12
        assert abs(np.mean(hits) - 0.2) < 0.12

    def test_degenerate_dims_rejected(self):
        with pytest.raises(ContractError):
            synth_dataset(1, 3)
        with pytest.raises(ContractError):
            synth_dataset(3, 3, class_separation=-1.0)

    def test_montage_names(self):
        train, _ = synth_dataset(3, 2, 12, 16, 16, montage="10-20", seed=0)
        assert all(region_of(n) for n in train.batch.channel_names)


class TestAverageRepetitions:
    def test_single_repetition_is_identity(self, rng):
        b = EpochBatch(rng.standard_normal((1, 2, 8)), [3], [9], ["a", "b"])
        out = average_repetitions([b])
        np.testing.assert_array_equal(out.signals, b.signals)
        assert out.labels.tolist() == [3]

    def test_opposite_signals_cancel(self, rng):
        x = rng.standard_normal((2, 8))
        b = EpochBatch(np.stack([x, -x]), [1, 1], [0, 1], ["a", "b"])
        np.testing.assert_allclose(average_repetitions([b]).signals, 0.0, atol=1e-12)

    def test_variance_shrinks_by_repetitions(self, rng):
        x = rng.standard_normal((1, 4))
        groups = [EpochBatch(x[None].repeat(4, 0)[:, :, :] + rng.standard_normal((4, 1, 4)),
                             [0] * 4, [0] * 4, ["a"]) for _ in range(1000)]
        out = average_repetitions(groups).signals - x
        assert out.var() == pytest.approx(0.25, rel=0.1)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            average_repetitions([])


class TestBandpass:
    def test_alpha_keeps_ten_hz(self):
        b = sine_batch(10.0)
        assert energy(bandpass_filter(b, BandSpec.named("alpha", 250.0))) >= 0.99 * energy(b)

    def test_delta_removes_ten_hz(self):
        b = sine_batch(10.0)
        assert energy(bandpass_filter(b, BandSpec.named("delta", 250.0))) <= 1e-6 * energy(b)

    def test_all_is_identity(self, rng):
        b = EpochBatch(rng.standard_normal((2, 3, 64)).astype(np.float32), [0, 1], [0, 1], ["a", "b", "c"])
        out = bandpass_filter(b, BandSpec.named("all", 250.0))
        np.testing.assert_allclose(out.signals, b.signals, atol=1e-5)

    def test_idempotent(self, rng):
        b = EpochBatch(rng.standard_normal((2, 3, 64)), [0, 1], [0, 1], ["a", "b", "c"])
        band = BandSpec.named("beta", 250.0)
        once = bandpass_filter(b, band)
        np.testing.assert_allclose(bandpass_filter(once, band).signals, once.signals, atol=1e-5)

    def test_above_nyquist_rejected(self):
        with pytest.raises(ContractError):
            BandSpec.named("gamma", 150.0)

    def test_short_epochs_rejected(self):
        with pytest.raises(ContractError):
            bandpass_filter(sine_batch(10.0, T=4), BandSpec.named("alpha", 250.0))


class TestRegions:
    def test_prefix_rule(self):
        b = EpochBatch(np.zeros((1, 3, 4)), [0], [0], ["Fz", "Oz", "O1"])
        assert select_region(b, "occipital").channel_names == ["Oz", "O1"]

    def test_all_is_identity(self):
        b = EpochBatch(np.zeros((1, 1, 4)), [0], [0], ["Fz"])
        assert select_region(b, "all") is b

    def test_empty_selection(self):
        b = EpochBatch(np.zeros((1, 1, 4)), [0], [0], ["Fz"])
        with pytest.raises(EmptySelectionError):
            select_region(b, "parietal")

    def test_regions_partition_the_montage(self):
        train, _ = synth_dataset(3, 2, 32, 16, 16, montage="10-20", seed=0)
        names = train.batch.channel_names
        picked = [select_region(train.batch, r).channel_names
                  for r in ("frontal", "temporal", "central", "parietal", "occipital")]
        flat = [n for grp in picked for n in grp]
        assert len(flat) == len(set(flat))
        assert set(flat) == {n for n in names if region_of(n)}


class TestEpochIO:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        b = EpochBatch(rng.standard_normal((3, 2, 5)).astype(np.float32), [0, 4, 2], [10, 11, 12],
                       ["Fz", "Ozé"])
        p = tmp_path / "x.ndec"
        write_epochs(p, b)
        r = read_epochs(p)
        assert r.signals.tobytes() == b.signals.tobytes()
        assert r.labels.tolist() == [0, 4, 2] and r.sample_ids.tolist() == [10, 11, 12]
        assert r.channel_names == b.channel_names
        write_epochs(tmp_path / "y.ndec", r)
        assert (tmp_path / "y.ndec").read_bytes() == p.read_bytes()

    def test_header_layout(self, tmp_path):
        b = EpochBatch(np.ones((1, 1, 2), dtype=np.float32), [7], [8], ["A"])
        write_epochs(tmp_path / "x.ndec", b)
        raw = (tmp_path / "x.ndec").read_bytes()
        assert raw[:4] == b"NDEC"
        assert np.frombuffer(raw[4:20], "<u4").tolist() == [1, 1, 1, 2]
        assert len(raw) == 20 + 8 + 4 + 4 + 2 + 1

    def test_errors(self, tmp_path):
        b = EpochBatch(np.ones((2, 1, 4), dtype=np.float32), [0, 1], [0, 1], ["A"])
        p = tmp_path / "x.ndec"
        write_epochs(p, b)
        raw = p.read_bytes()
        (tmp_path / "m.ndec").write_bytes(b"XDEC" + raw[4:])
        with pytest.raises(BadMagicError):
            read_epochs(tmp_path / "m.ndec")
        (tmp_path / "t.ndec").write_bytes(raw[:30])
        with pytest.raises(TruncatedFileError):
            read_epochs(tmp_path / "t.ndec")
        (tmp_path / "v.ndec").write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
        with pytest.raises(VersionError):
            read_epochs(tmp_path / "v.ndec")

    def test_split_round_trip(self, tmp_path):
        train, _ = synth_dataset(3, 2, 4, 16, 16, seed=2)
        save_split(tmp_path, "train", train)
        back = load_split(tmp_path, "train")
        assert back.batch.signals.tobytes() == train.batch.signals.tobytes()
        for m in MODALITIES:
            np.testing.assert_array_equal(back.targets[m], train.targets[m])
        assert len(back.images) == len(train.images)
