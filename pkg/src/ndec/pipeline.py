"""Three-stage training, evaluation and ablation sweeps.

Stage 1 trains the four expert branches (image targets optionally
re-embedded after uncertainty-weighted foveation), stage 2 trains the
fusion encoder on frozen expert outputs, stage 3 trains the trunk/heads
alignment on the same frozen outputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .align import TrainingDiverged, init_sth, sth_infer, sth_train_step
from .checkpoint import CheckpointBundle, ConfigMismatchError
from .config import ConfigError, RunConfig
from .encoders import expert_forward, init_experts
from .foveation import (FoveaParams, MemoryBank, UMPolicy, apply_foveation, ema_update,
                        select_sigma, stub_encode)
from .fusion import fuse, fusion_forward, init_fusion, modality_mask, tokenize_project
from .metrics import RetrievalReport, topk_retrieval
from .nn import AdamW
from .objectives import LossConfig, infonce_loss, scm_loss
from .signals import (BAND_ORDER, MODALITIES, REGION_ORDER, BandSpec, EmptySelectionError, Split,
                      bandpass_filter, load_split, region_of, select_region, synth_dataset)
from .tensor import NonFiniteError, Tensor, l2_normalize, no_grad

log = logging.getLogger(__name__)

STAGES = ("experts", "fusion", "sth")
REPORT_ORDER = MODALITIES + ("fusion",)
MODULE_ROWS = (
    ("baseline", {"um.enabled": False, "loss.kind": "infonce", "fusion.modality_mask": False}),
    ("+UM", {"um.enabled": True}),
    ("+Loss", {"loss.kind": "scm"}),
    ("+Mask", {"fusion.modality_mask": True}),
)


class UnsupportedAxisError(ConfigError):
    pass


# -- data --------------------------------------------------------------------

def load_data(cfg: RunConfig):
    """Build or read the (train, test) splits and apply band/region selection."""
    d = cfg.data
    if d.source == "synth":
        train, test = synth_dataset(d.n_classes, d.per_class, d.channels, d.samples,
                                    cfg.model.d_embed, d.class_separation, d.noise, d.seed,
                                    latent_dim=d.latent_dim, sample_rate=d.sample_rate,
                                    test_reps=d.test_reps, image_size=d.image_size,
                                    montage=d.montage, stub_seed=cfg.um.stub_seed)
    else:
        train = load_split(d.path, "train", d.sample_rate)
        test = load_split(d.path, "test", d.sample_rate)
    return apply_selection(train, cfg), apply_selection(test, cfg)


def apply_selection(split: Split, cfg: RunConfig) -> Split:
    batch = split.batch
    if cfg.ablation.band != "all":
        batch = bandpass_filter(batch, BandSpec.named(cfg.ablation.band, batch.sample_rate))
    if cfg.ablation.region != "all":
        batch = select_region(batch, cfg.ablation.region)
    return split.with_batch(batch)


def _check_data(cfg: RunConfig, train: Split, test: Split) -> None:
    if train.d_target != cfg.model.d_embed or test.d_target != cfg.model.d_embed:
        raise ConfigError(f"target dimension {train.d_target} does not match model.d_embed "
                          f"{cfg.model.d_embed}")
    if train.batch.shape[1:] != test.batch.shape[1:]:
        raise ConfigError("train and test epochs differ in shape")
    if cfg.um.enabled and train.images is None:
        raise ConfigError("uncertainty-weighted masking needs raw training images")


# -- helpers -----------------------------------------------------------------

def _loss_cfg(cfg: RunConfig) -> LossConfig:
    s = cfg.loss
    return LossConfig(s.tau, s.k, s.lambda_mse, s.lambda_cos, s.lambda_reg, s.mask_mode)


def _contrastive(cfg: RunConfig, E: Tensor, targets: np.ndarray, labels) -> Tensor:
    if cfg.loss.kind == "scm":
        return scm_loss(E, Tensor(targets), labels, _loss_cfg(cfg))
    return infonce_loss(E, Tensor(targets), cfg.loss.tau)


def _adamw(cfg: RunConfig, params) -> AdamW:
    t = cfg.train
    return AdamW(params, t.lr, (t.beta1, t.beta2), t.weight_decay, t.adam_eps)


def _batches(rng: np.random.Generator, n: int, batch_size: int) -> list:
    """Shuffled, near-equal chunks; every chunk holds at least 2 samples when n >= 2."""
    n_chunks = max(1, min(math.ceil(n / batch_size), n // 2))
    return np.array_split(rng.permutation(n), n_chunks)


def embed_all(experts: dict, x: np.ndarray, chunk: int = 256) -> dict:
    """Frozen expert embeddings for every branch, as float32 arrays."""
    out = {}
    with no_grad():
        for m in MODALITIES:
            parts = [expert_forward(x[i:i + chunk], m, experts).data for i in range(0, len(x), chunk)]
            out[m] = np.concatenate(parts).astype(np.float32)
    return out


def _unit(a: np.ndarray) -> np.ndarray:
    return a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)


def gallery_for(split: Split, modality: str):
    """One target per class (first occurrence), plus each query's gallery index."""
    labels = split.batch.labels
    classes, first = np.unique(labels, return_index=True)
    lookup = {c: i for i, c in enumerate(classes)}
    gallery = split.targets["image" if modality == "fusion" else modality][first]
    return gallery, np.array([lookup[c] for c in labels])


class ImageTargets:
    """Image-branch targets, optionally re-embedded after foveated blur.

    Foveated embeddings are cached per (sample, sigma); sigma only takes
    three values so the cache stays small.
    """

    def __init__(self, cfg: RunConfig, split: Split, bank: MemoryBank):
        self.enabled = cfg.um.enabled
        self.split = split
        self.bank = bank
        self.policy = UMPolicy(cfg.um.sigma0, cfg.um.c, cfg.um.z, cfg.um.gamma)
        self.fovea = FoveaParams(cfg.um.r_centre, cfg.um.r_edge, cfg.um.lam)
        self.stub_seed = cfg.um.stub_seed
        self.cache: dict = {}
        self.stats = bank.stats()
        self.sigmas = np.full(len(split), self.policy.sigma0)

    def start_epoch(self) -> None:
        self.stats = self.bank.stats()
        for i in range(len(self.split)):
            if self.bank.initialized[i]:
                self.sigmas[i] = select_sigma(self.bank.scores[i], self.stats, self.policy)
            else:
                self.sigmas[i] = self.policy.sigma0

    def __call__(self, idx) -> np.ndarray:
        if not self.enabled:
            return self.split.targets["image"][idx]
        rows = []
        d = self.split.d_target
        for i in idx:
            key = (int(i), float(self.sigmas[i]))
            if key not in self.cache:
                img = apply_foveation(self.split.images[i], self.fovea, self.sigmas[i])
                self.cache[key] = stub_encode(img, self.stub_seed, d).astype(np.float32)
            rows.append(self.cache[key])
        return np.stack(rows)

    def observe(self, idx, E: np.ndarray, T: np.ndarray) -> None:
        if not self.enabled:
            return
        scores = (E.astype(np.float64) * T).sum(axis=1)
        for i, s in zip(idx, scores):
            ema_update(self.bank, int(i), float(s))


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def add(self, **rec) -> None:
        self.records.append(rec)
        log.info(" ".join(f"{k}={v}" for k, v in rec.items()))


# -- training ------------------------------------------------------------------

def new_bundle(cfg: RunConfig, train: Split) -> CheckpointBundle:
    m = cfg.model
    seeds = np.random.SeedSequence(cfg.train.seed).spawn(4)
    init_seed = [int(s.generate_state(1)[0]) for s in seeds[:3]]
    _, C, T = train.batch.shape
    experts = init_experts(init_seed[0], C, T, m.d_embed, m.kernel, m.conv_channels, m.encoder)
    fusion = init_fusion(init_seed[1], m.d_embed, m.d_embed, m.fusion_heads, m.ffn_mult, m.fusion_layers)
    sth = init_sth(init_seed[2], m.d_embed, m.d_embed, n_blocks=m.trunk_blocks)
    opts = {k: _adamw(cfg, experts[k]) for k in MODALITIES}
    opts["fusion"] = _adamw(cfg, fusion)
    opts["sth"] = _adamw(cfg, sth)
    rng = np.random.default_rng(seeds[3])
    bank = MemoryBank(len(train), cfg.um.gamma)
    return CheckpointBundle(experts, fusion, sth, opts, bank, cfg.hash, 0,
                            {k: 0 for k in REPORT_ORDER[:4] + ("fusion", "sth")},
                            rng.bit_generator.state)


def _rng(bundle: CheckpointBundle) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = bundle.rng_state
    return rng


def _validation(cfg, test: Split, fn) -> float:
    n = min(cfg.train.val_size, len(test))
    if n < 2:
        return float("nan")
    sub = Split(test.batch.subset(np.arange(n)), {m: test.targets[m][:n] for m in MODALITIES})
    return fn(sub)


def _expert_epoch(cfg, bundle, train, m, rng, image_targets, trainlog, test) -> None:
    p, opt = bundle.experts[m], bundle.optimizers[m]
    x, labels = train.batch.signals, train.batch.labels
    if m == "image":
        image_targets.start_epoch()
    losses = []
    for idx in _batches(rng, len(train), cfg.train.batch_size):
        tgt = image_targets(idx) if m == "image" else train.targets[m][idx]
        p.zero_grad()
        E = l2_normalize(expert_forward(x[idx], m, p))
        loss = _contrastive(cfg, E, tgt, labels[idx])
        if not np.isfinite(loss.data):
            raise TrainingDiverged(f"{m} expert loss is not finite")
        loss.backward()
        opt.step()
        if m == "image":
            image_targets.observe(idx, E.data, tgt)
        losses.append(float(loss.data))
    bundle.epochs[m] += 1

    def val(sub):
        with no_grad():
            q = _unit(expert_forward(sub.batch.signals, m, p).data)
        g, true = gallery_for(sub, m)
        return topk_retrieval(q, g, true, ks=(1,)).top1

    trainlog.add(stage="experts", branch=m, epoch=bundle.epochs[m], loss=float(np.mean(losses)),
                 val_top1=_validation(cfg, test, val))


def _train_experts(cfg, bundle, train, test, rng, trainlog) -> None:
    image_targets = ImageTargets(cfg, train, bundle.bank)
    budget = {m: cfg.train.epochs for m in MODALITIES}
    budget["text"] = min(cfg.train.epochs, cfg.train.text_epochs)
    if cfg.train.schedule == "staged":
        for m in MODALITIES:
            while bundle.epochs[m] < budget[m]:
                _expert_epoch(cfg, bundle, train, m, rng, image_targets, trainlog, test)
    else:
        for _ in range(max(budget.values())):
            for m in MODALITIES:
                if bundle.epochs[m] < budget[m]:
                    _expert_epoch(cfg, bundle, train, m, rng, image_targets, trainlog, test)


def _train_fusion(cfg, bundle, train, test, rng, trainlog) -> None:
    Z = embed_all(bundle.experts, train.batch.signals)
    Zt = embed_all(bundle.experts, test.batch.signals)
    p, opt = bundle.fusion, bundle.optimizers["fusion"]
    labels, tgt = train.batch.labels, train.targets["image"]
    while bundle.epochs["fusion"] < cfg.train.fusion_epochs:
        losses = []
        for idx in _batches(rng, len(train), cfg.train.batch_size):
            p.zero_grad()
            tokens = tokenize_project(*(Z[m][idx] for m in MODALITIES), p)
            if cfg.fusion.modality_mask:
                tokens, _ = modality_mask(tokens, rng)
            E = l2_normalize(fusion_forward(tokens, p))
            loss = _contrastive(cfg, E, tgt[idx], labels[idx])
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        bundle.epochs["fusion"] += 1

        def val(sub):
            n = len(sub)
            with no_grad():
                q = _unit(fuse({m: Zt[m][:n] for m in MODALITIES}, p).data)
            g, true = gallery_for(sub, "fusion")
            return topk_retrieval(q, g, true, ks=(1,)).top1

        trainlog.add(stage="fusion", epoch=bundle.epochs["fusion"], loss=float(np.mean(losses)),
                     val_top1=_validation(cfg, test, val))


def _train_sth(cfg, bundle, train, test, rng, trainlog) -> None:
    Z = embed_all(bundle.experts, train.batch.signals)
    Zt = embed_all(bundle.experts, test.batch.signals)
    lcfg = _loss_cfg(cfg)
    while bundle.epochs["sth"] < cfg.train.sth_epochs:
        losses = []
        for idx in _batches(rng, len(train), cfg.train.batch_size):
            loss, _ = sth_train_step({m: Z[m][idx] for m in MODALITIES},
                                     {m: train.targets[m][idx] for m in MODALITIES},
                                     bundle.sth, bundle.optimizers["sth"], rng, lcfg, cfg.sth.dropout)
            losses.append(loss)
        bundle.epochs["sth"] += 1

        def val(sub):
            n = len(sub)
            q = sth_infer({m: Zt[m][:n] for m in MODALITIES}, bundle.sth, "image")
            g, true = gallery_for(sub, "image")
            return topk_retrieval(q, g, true, ks=(1,)).top1

        trainlog.add(stage="sth", epoch=bundle.epochs["sth"], loss=float(np.mean(losses)),
                     val_top1=_validation(cfg, test, val))


def run_train(cfg: RunConfig, data=None, resume: CheckpointBundle | None = None,
              checkpoint_path=None):
    """Run all three stages; returns ``(bundle, TrainLog)``.

    ``resume`` continues a bundle written for the same config hash from its
    recorded stage/epoch counters. On a non-finite loss or gradient the
    current (last good) state is written to ``checkpoint_path`` if given and
    :class:`TrainingDiverged` is raised with the bundle attached.
    """
    train, test = load_data(cfg) if data is None else data
    _check_data(cfg, train, test)
    if resume is not None:
        if resume.config_hash != cfg.hash:
            raise ConfigMismatchError("refusing to resume a checkpoint written for another config")
        bundle = resume
    else:
        bundle = new_bundle(cfg, train)
    rng = _rng(bundle)
    trainlog = TrainLog()
    steps = (_train_experts, _train_fusion, _train_sth)
    try:
        while bundle.stage < len(steps):
            steps[bundle.stage](cfg, bundle, train, test, rng, trainlog)
            bundle.stage += 1
            bundle.rng_state = rng.bit_generator.state
    except (NonFiniteError, TrainingDiverged) as exc:
        bundle.rng_state = rng.bit_generator.state
        if checkpoint_path is not None:
            bundle.save(checkpoint_path)
        err = TrainingDiverged(f"training diverged in stage {STAGES[bundle.stage]}: {exc}")
        err.bundle = bundle
        raise err from exc
    if checkpoint_path is not None:
        bundle.save(checkpoint_path)
    return bundle, trainlog


# -- evaluation -----------------------------------------------------------------

def run_eval(bundle: CheckpointBundle, cfg: RunConfig, split: Split | str = "test",
             threads: int | None = None) -> list:
    """One retrieval report per modality plus the fused embedding."""
    if bundle.config_hash != cfg.hash:
        raise ConfigMismatchError("checkpoint and config hashes differ; refusing to evaluate")
    if isinstance(split, str):
        train, test = load_data(cfg)
        split = {"train": train, "test": test}[split]
    Z = embed_all(bundle.experts, split.batch.signals)
    tags = {"region": cfg.ablation.region, "band": cfg.ablation.band, "um": cfg.um.enabled,
            "loss": cfg.loss.kind, "modality_mask": cfg.fusion.modality_mask,
            "encoder": cfg.model.encoder}
    if threads is not None:
        tags["threads"] = threads
    reports = []
    for m in MODALITIES:
        q = sth_infer(Z, bundle.sth, m, cfg.sth.inference)
        g, true = gallery_for(split, m)
        reports.append(topk_retrieval(_unit(q), g, true, modality=m, labels=split.batch.labels,
                                      tags=tags, seed=cfg.train.seed, config_hash=cfg.hash))
    with no_grad():
        q = _unit(fuse(Z, bundle.fusion).data)
    g, true = gallery_for(split, "fusion")
    reports.append(topk_retrieval(q, g, true, modality="fusion", labels=split.batch.labels,
                                  tags=tags, seed=cfg.train.seed, config_hash=cfg.hash))
    return reports


def aggregate(runs: list) -> list:
    """Mean/std over repeated runs, one report per modality."""
    out = []
    for i, first in enumerate(runs[0]):
        top1 = np.array([r[i].top1 for r in runs])
        top5 = np.array([r[i].top5 for r in runs])
        tags = dict(first.tags, repeats=len(runs), top1_std=float(top1.std()),
                    top5_std=float(top5.std()), seeds=[r[i].seed for r in runs])
        out.append(RetrievalReport(float(top1.mean()), float(top5.mean()), first.n_queries,
                                   first.n_gallery, first.modality, {}, tags, first.seed,
                                   first.config_hash))
    return out


def train_and_eval(cfg: RunConfig, data=None, repeat: int = 1) -> list:
    runs = []
    for r in range(repeat):
        c = cfg if r == 0 else cfg.updated(**{"train.seed": cfg.train.seed + r})
        d = data if data is not None else load_data(c)
        bundle, _ = run_train(c, d)
        runs.append(run_eval(bundle, c, d[1]))
    return runs[0] if repeat == 1 else aggregate(runs)


# -- ablations -------------------------------------------------------------------

def ablation_rows(cfg: RunConfig, axis: str, data=None) -> list:
    """(row name, config) pairs for an ablation axis."""
    if axis == "module":
        rows, cur = [], cfg
        for name, change in MODULE_ROWS:
            cur = cur.updated(**change)
            rows.append((name, cur))
        return rows
    if axis == "band":
        return [(b, cfg.updated(**{"ablation.band": b})) for b in BAND_ORDER]
    if axis == "region":
        train = (data[0] if data is not None else load_data(cfg.updated(**{"ablation.region": "all"}))[0])
        if not any(region_of(n) for n in train.batch.channel_names):
            raise UnsupportedAxisError("region ablation needs 10-20 channel names; this dataset has none")
        return [(r, cfg.updated(**{"ablation.region": r})) for r in REGION_ORDER]
    if axis == "encoder":
        from .encoders import ENCODER_VARIANTS
        return [(e, cfg.updated(**{"model.encoder": e})) for e in ENCODER_VARIANTS]
    raise UnsupportedAxisError(f"unknown ablation axis {axis!r}")


def run_ablate(cfg: RunConfig, axis: str, data=None, repeat: int = 1) -> list:
    """Train and evaluate every row of the axis; returns reports tagged by row."""
    rows = ablation_rows(cfg, axis, data)
    out = []
    for name, rc in rows:
        d = None
        if data is not None:
            d = (apply_selection(data[0], rc), apply_selection(data[1], rc))
        try:
            reports = train_and_eval(rc, d, repeat)
        except EmptySelectionError as exc:
            raise UnsupportedAxisError(f"row {name}: {exc}") from exc
        for rep in reports:
            rep.tags = dict(rep.tags, axis=axis, row=name, row_config_hash=rc.hash)
            rep.config_hash = cfg.hash
            out.append(rep)
    return out


def ablation_table(reports: list, modality: str = "fusion") -> list:
    """[(row, top1, top5)] for one modality, in row order."""
    return [(r.tags["row"], r.top1, r.top5) for r in reports if r.modality == modality]
