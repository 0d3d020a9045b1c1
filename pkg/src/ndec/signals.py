"""Epoch containers, the synthetic benchmark, spectral/spatial selection and
the NDEC v1 epoch file format."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .foveation import stub_encode
from .images import ImageBuffer, load_images, save_images
from .tensor import ContractError

MODALITIES = ("image", "text", "depth", "edge")

BANDS = {
    "delta": (0.0, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (50.0, 100.0),
}
BAND_ORDER = ("delta", "theta", "alpha", "beta", "gamma", "all")
REGION_ORDER = ("frontal", "temporal", "central", "parietal", "occipital", "all")
_REGION_PREFIX = {"F": "frontal", "T": "temporal", "C": "central", "P": "parietal", "O": "occipital"}

MONTAGE_10_20 = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6",
    "T7", "C3", "Cz", "C4", "T8", "TP9", "CP5", "CP1", "CP2", "CP6", "TP10",
    "P7", "P3", "Pz", "P4", "P8", "PO9", "O1", "Oz", "O2", "PO10",
)


class EmptySelectionError(ContractError):
    pass


class EpochFormatError(ValueError):
    pass


class BadMagicError(EpochFormatError):
    pass


class VersionError(EpochFormatError):
    pass


class TruncatedFileError(EpochFormatError):
    pass


@dataclass
class EpochBatch:
    """Brain-signal epochs (B, C, T) with labels and stable sample ids."""

    signals: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    channel_names: list
    sample_rate: float = 250.0

    def __post_init__(self):
        self.signals = np.asarray(self.signals)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        self.channel_names = list(self.channel_names)
        if self.signals.ndim != 3 or min(self.signals.shape) < 1:
            raise ContractError(f"signals must be (B, C, T) with all dims >= 1, got {self.signals.shape}")
        B, C, _ = self.signals.shape
        if len(self.labels) != B or len(self.sample_ids) != B:
            raise ContractError("labels and sample_ids need one entry per epoch")
        if len(self.channel_names) != C:
            raise ContractError("need one channel name per channel")

    @property
    def shape(self) -> tuple:
        return self.signals.shape

    def __len__(self) -> int:
        return self.signals.shape[0]

    def subset(self, idx) -> "EpochBatch":
        idx = np.asarray(idx)
        return EpochBatch(self.signals[idx], self.labels[idx], self.sample_ids[idx],
                          self.channel_names, self.sample_rate)

    def with_signals(self, signals, channel_names=None) -> "EpochBatch":
        return EpochBatch(signals, self.labels, self.sample_ids,
                          self.channel_names if channel_names is None else channel_names,
                          self.sample_rate)


@dataclass
class ModalityBundle:
    """Per-sample unit target embeddings, plus the raw image when known."""

    image: np.ndarray
    text: np.ndarray
    depth: np.ndarray
    edge: np.ndarray
    raw_image: ImageBuffer | None = None

    def __post_init__(self):
        dims = {np.shape(getattr(self, m)) for m in MODALITIES}
        if len(dims) != 1:
            raise ContractError("all target embeddings must share one dimension")


@dataclass
class Split:
    """One dataset split: epochs, unit-norm targets per modality, optional images."""

    batch: EpochBatch
    targets: dict
    images: list | None = None

    def __post_init__(self):
        n = len(self.batch)
        for m in MODALITIES:
            t = np.asarray(self.targets[m], dtype=np.float32)
            if t.shape[0] != n:
                raise ContractError(f"{m} targets need one row per epoch")
            if not np.isfinite(t).all():
                raise ContractError(f"{m} targets are not finite")
            norms = np.linalg.norm(t, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise ContractError(f"{m} targets contain a zero vector")
            # rows already unit length are kept as-is so save/load is exact
            off = np.abs(norms - 1.0) > 1e-6
            self.targets[m] = np.where(off, t / norms, t).astype(np.float32)
        if self.images is not None and len(self.images) != n:
            raise ContractError("need one image per epoch")

    def __len__(self) -> int:
        return len(self.batch)

    @property
    def d_target(self) -> int:
        return self.targets["image"].shape[1]

    def bundle(self, i: int) -> ModalityBundle:
        img = None if self.images is None else self.images[i]
        return ModalityBundle(*(self.targets[m][i] for m in MODALITIES), raw_image=img)

    def with_batch(self, batch: EpochBatch) -> "Split":
        return Split(batch, dict(self.targets), self.images)


@dataclass(frozen=True)
class BandSpec:
    name: str
    lo_hz: float
    hi_hz: float
    sample_rate_hz: float

    def __post_init__(self):
        if not 0 <= self.lo_hz < self.hi_hz:
            raise ContractError(f"band {self.name}: need 0 <= lo < hi")
        if self.hi_hz > self.sample_rate_hz / 2 + 1e-9:
            raise ContractError(f"band {self.name} reaches above Nyquist ({self.sample_rate_hz / 2} Hz)")

    @classmethod
    def named(cls, name: str, sample_rate: float) -> "BandSpec":
        if name == "all":
            return cls("all", 0.0, sample_rate / 2, sample_rate)
        if name not in BANDS:
            raise ContractError(f"unknown band {name!r}")
        lo, hi = BANDS[name]
        return cls(name, lo, hi, sample_rate)


# -- synthetic benchmark -------------------------------------------------------

def _channel_names(C: int, montage: str) -> list:
    if montage == "none":
        return [f"E{i:03d}" for i in range(C)]
    if montage == "10-20":
        if C > len(MONTAGE_10_20):
            raise ContractError(f"10-20 montage supports at most {len(MONTAGE_10_20)} channels")
        idx = np.round(np.linspace(0, len(MONTAGE_10_20) - 1, C)).astype(int)
        return [MONTAGE_10_20[i] for i in idx]
    raise ContractError(f"unknown montage {montage!r}")


_REGION_GAIN = {"occipital": 1.0, "parietal": 0.8, "temporal": 0.7, "central": 0.5, "frontal": 0.3}


def _smooth_basis(rng, L: int, size: int) -> np.ndarray:
    """L random low-frequency plane-wave patterns, shape (L, size, size, 3)."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.empty((L, size, size, 3))
    for l in range(L):
        f = rng.uniform(1.0, 4.0)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.cos(2 * np.pi * f * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        out[l] = wave[:, :, None] * rng.uniform(0.3, 1.0, size=3)
    return out


def synth_dataset(n_classes: int = 20, per_class: int = 10, C: int = 8, T: int = 64,
                  d_target: int = 1024, class_separation: float = 3.0, noise: float = 0.1,
                  seed: int = 0, *, latent_dim: int = 16, sample_rate: float = 250.0,
                  test_reps: int = 4, image_size: int = 32, montage: str = "none",
                  stub_seed: int = 0):
    """Desk-scale stand-in for an EEG/image corpus.

    Each class owns a latent prototype. A sample's latent is the prototype
    plus jitter proportional to ``noise``; it drives (a) time-locked ERP
    bumps and phase-locked oscillations across channels, scaled by
    ``class_separation``, plus Gaussian noise, (b) a smooth RGB image that
    is embedded with :func:`stub_encode`, and (c) fixed random projections
    serving as text/depth/edge targets.

    Returns ``(train, test)`` :class:`Split` objects. The test split holds
    one stimulus per class whose signal is the average of ``test_reps``
    noisy repetitions.
    """
    if n_classes < 2 or per_class < 1 or C < 1 or T < 2 or d_target < 2 or latent_dim < 1:
        raise ContractError("degenerate synthetic dataset dimensions")
    if class_separation < 0 or noise < 0 or test_reps < 1:
        raise ContractError("class_separation, noise must be >= 0 and test_reps >= 1")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]
    proto_rng, mix_rng, img_rng, tgt_rng, train_rng, test_rng = streams
    L = latent_dim
    names = _channel_names(C, montage)

    protos = proto_rng.standard_normal((n_classes, L))

    # signal generator: ERP bumps + oscillations at band-spread frequencies
    t = np.arange(T) / sample_rate
    lat = mix_rng.uniform(0.1, 0.9, size=L) * t[-1]
    width = max(t[-1] / 8, 1.5 / sample_rate)
    bumps = np.exp(-0.5 * ((t[None, :] - lat[:, None]) / width) ** 2)
    freqs = np.array([2.0, 6.0, 10.0, 20.0, 40.0, 70.0])
    freqs = freqs[freqs < sample_rate / 2]
    f_l = freqs[np.arange(L) % len(freqs)]
    phase = mix_rng.uniform(0, 2 * np.pi, size=L)
    waves = np.sin(2 * np.pi * f_l[:, None] * t[None, :] + phase[:, None])
    G = mix_rng.standard_normal((C, L)) / np.sqrt(L)
    H = mix_rng.standard_normal((C, L)) / np.sqrt(L)
    if montage == "10-20":
        gain = np.array([_REGION_GAIN.get(region_of(n), 0.2) for n in names])
        G *= gain[:, None]
        H *= gain[:, None]

    def signal_mean(z):
        # (N, L) -> (N, C, T)
        return class_separation * (np.einsum("cl,nl,lt->nct", G, z, bumps)
                                   + np.einsum("cl,nl,lt->nct", H, z, waves))

    basis = _smooth_basis(img_rng, L, image_size)
    A = {m: tgt_rng.standard_normal((d_target, L)) for m in MODALITIES[1:]}

    def make_images(z):
        px = 0.5 + 0.08 * np.einsum("nl,lhwc->nhwc", z, basis)
        return [ImageBuffer(np.clip(p, 0.0, 1.0)) for p in px]

    def make_targets(z, images):
        tg = {"image": np.stack([stub_encode(im, stub_seed, d_target) for im in images])}
        for m, Am in A.items():
            v = z @ Am.T
            tg[m] = v / np.linalg.norm(v, axis=1, keepdims=True)
        return tg

    jitter = 0.3 * noise
    # train
    labels = np.repeat(np.arange(n_classes), per_class)
    z_tr = protos[labels] + jitter * train_rng.standard_normal((len(labels), L))
    x_tr = signal_mean(z_tr) + noise * train_rng.standard_normal((len(labels), C, T))
    img_tr = make_images(z_tr)
    train = Split(EpochBatch(x_tr.astype(np.float32), labels, np.arange(len(labels)), names, sample_rate),
                  make_targets(z_tr, img_tr), img_tr)

    # test: one stimulus per class, averaged over repetitions
    z_te = protos + jitter * test_rng.standard_normal((n_classes, L))
    mean_te = signal_mean(z_te)
    groups = []
    for c in range(n_classes):
        reps = mean_te[c][None] + noise * test_rng.standard_normal((test_reps, C, T))
        groups.append(EpochBatch(reps, [c] * test_reps, [c] * test_reps, names, sample_rate))
    avg = average_repetitions(groups)
    img_te = make_images(z_te)
    test = Split(avg.with_signals(avg.signals.astype(np.float32)), make_targets(z_te, img_te), img_te)
    return train, test


def average_repetitions(batches) -> EpochBatch:
    """Collapse each stimulus group (one EpochBatch per stimulus) to its mean epoch."""
    if not batches:
        raise ContractError("no stimulus groups given")
    shape = batches[0].signals.shape[1:]
    sigs, labels, ids = [], [], []
    for grp in batches:
        if len(grp) == 0:
            raise ContractError("empty repetition group")
        if grp.signals.shape[1:] != shape:
            raise ContractError("all groups must share C and T")
        if np.any(grp.labels != grp.labels[0]):
            raise ContractError("repetitions of one stimulus must share a label")
        sigs.append(grp.signals.mean(axis=0, dtype=np.float64).astype(grp.signals.dtype)
                    if len(grp) > 1 else grp.signals[0])
        labels.append(grp.labels[0])
        ids.append(grp.sample_ids[0])
    first = batches[0]
    return EpochBatch(np.stack(sigs), labels, ids, first.channel_names, first.sample_rate)


def bandpass_filter(batch: EpochBatch, band: BandSpec) -> EpochBatch:
    """Brick-wall FFT filter: bins outside [lo, hi] Hz are zeroed."""
    T = batch.signals.shape[2]
    if T < 8:
        raise ContractError("bandpass needs at least 8 time samples")
    if abs(band.sample_rate_hz - batch.sample_rate) > 1e-9:
        raise ContractError("band sample rate does not match the batch")
    spec = np.fft.rfft(batch.signals.astype(np.float64), axis=2)
    f = np.fft.rfftfreq(T, d=1.0 / batch.sample_rate)
    keep = (f >= band.lo_hz) & (f <= band.hi_hz)
    spec[:, :, ~keep] = 0
    out = np.fft.irfft(spec, n=T, axis=2).astype(batch.signals.dtype)
    return batch.with_signals(out)


def region_of(name: str):
    """Cortical region for a 10-20 channel label (by first letter), or None."""
    return _REGION_PREFIX.get(name[:1]) if name else None


def select_region(batch: EpochBatch, region: str) -> EpochBatch:
    if region == "all":
        return batch
    if region not in _REGION_PREFIX.values():
        raise ContractError(f"unknown region {region!r}")
    keep = [i for i, n in enumerate(batch.channel_names) if region_of(n) == region]
    if not keep:
        raise EmptySelectionError(f"no channels belong to region {region!r}")
    return batch.with_signals(batch.signals[:, keep, :], [batch.channel_names[i] for i in keep])


# -- NDEC v1 ---------------------------------------------------------------------

MAGIC = b"NDEC"
VERSION = 1


def write_epochs(path, batch: EpochBatch) -> None:
    """Serialise to NDEC v1 (all integers and floats little-endian, no padding)."""
    B, C, T = batch.signals.shape
    parts = [MAGIC, struct.pack("<4I", VERSION, B, C, T),
             np.ascontiguousarray(batch.signals, dtype="<f4").tobytes(),
             np.asarray(batch.labels, dtype="<u4").tobytes(),
             np.asarray(batch.sample_ids, dtype="<u4").tobytes()]
    for name in batch.channel_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_epochs(path, sample_rate: float = 250.0) -> EpochBatch:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 20:
        raise TruncatedFileError(f"{path}: header truncated")
    version, B, C, T = struct.unpack_from("<4I", data, 4)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    pos = 20

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFileError(f"{path}: payload truncated")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    signals = np.frombuffer(take(4 * B * C * T), dtype="<f4").reshape(B, C, T).astype(np.float32)
    labels = np.frombuffer(take(4 * B), dtype="<u4").astype(np.int64)
    ids = np.frombuffer(take(4 * B), dtype="<u4").astype(np.int64)
    names = []
    for _ in range(C):
        (n,) = struct.unpack("<H", take(2))
        names.append(take(n).decode("utf-8"))
    return EpochBatch(signals, labels, ids, names, sample_rate)


def save_split(directory, name: str, split: Split) -> None:
    """Write ``<name>.ndec``, ``<name>_targets.npz`` and optional images."""
    os.makedirs(directory, exist_ok=True)
    write_epochs(os.path.join(directory, f"{name}.ndec"), split.batch)
    with open(os.path.join(directory, f"{name}_targets.npz"), "wb") as fh:
        np.savez(fh, **{m: split.targets[m] for m in MODALITIES})
    if split.images is not None:
        save_images(os.path.join(directory, f"{name}_images"), split.images)


def load_split(directory, name: str, sample_rate: float = 250.0) -> Split:
    batch = read_epochs(os.path.join(directory, f"{name}.ndec"), sample_rate)
    with np.load(os.path.join(directory, f"{name}_targets.npz")) as npz:
        targets = {m: npz[m] for m in MODALITIES}
    img_dir = os.path.join(directory, f"{name}_images")
    images = load_images(img_dir) if os.path.isdir(img_dir) else None
    return Split(batch, targets, images)
