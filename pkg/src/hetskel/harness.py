"""Run configuration, optimiser, training loop, evaluation and checkpoints.

All randomness flows from ``RunConfig.seed`` through named sub-streams
(``init``, ``shuffle``, ``labels``, ``val``), each re-derived per epoch so a
resumed run continues exactly where an uninterrupted one would be.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numgraph as ng
from .alignloss import LossWeights, total_loss
from .inferev import EvalReport, evaluate, similarities, sweep_gamma
from .labelspace import ClusteredLabelSpace, SplitSpec, stratify_frequency
from .motionenc import Batch, EncoderConfig, MotionEncoder, prepare_sample, stack_samples
from .numgraph import checkpoint
from .skeleform import (
    STRATEGIES,
    SkeletonFormat,
    build_unified_space,
    default_adjacency,
    default_formats,
    load_adjacency,
    load_registry,
    read_corpus,
    unify,
)
from .textbank import LabelBank, load_bank, make_bank

log = logging.getLogger(__name__)

STREAMS = {"init": 1, "shuffle": 2, "labels": 3, "val": 4}
COMPONENTS = ("L_instance", "L_ts", "L_consis", "L_part")


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


class TrainingError(RuntimeError):
    pass


def substream(seed: int, name: str, *extra) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name], *[int(x) for x in extra]])


# configuration

@dataclass
class OptimConfig:
    lr_peak: float = 1e-3
    warmup_epochs: float = 2
    total_epochs: int = 20
    batch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError("need 0 <= warmup_epochs < total_epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.batch_size < 2:
            log.warning("batch_size < 2: contrastive losses are identically zero")
        if self.lr_peak <= 0:
            raise ConfigError("lr_peak must be positive")


@dataclass
class RunConfig:
    corpus: list
    bank: str
    out_dir: str = "run"
    eval_corpus: list | None = None
    registry: str | None = None
    adjacency: str | None = None
    split: str | None = None
    clusters: str | None = None
    strategy: str = "zero"
    encoder: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    gamma: float = 0.0
    val_frac: float = 0.1
    exclude_unseen: bool = True
    mask_false_negatives: bool = False

    def __post_init__(self):
        if isinstance(self.corpus, str):
            self.corpus = [self.corpus]
        if isinstance(self.eval_corpus, str):
            self.eval_corpus = [self.eval_corpus]
        if isinstance(self.optim, dict):
            self.optim = _build(OptimConfig, self.optim, "optim")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown padding strategy {self.strategy!r}")
        if not 0 <= self.val_frac < 1:
            raise ConfigError("val_frac must lie in [0, 1)")
        self.weights()

    def weights(self) -> LossWeights:
        try:
            return LossWeights(**self.loss)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"loss: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d, base: Path | None = None):
        d = dict(d)
        if base is not None:
            for key in ("corpus", "eval_corpus"):
                if d.get(key) is not None:
                    items = [d[key]] if isinstance(d[key], str) else d[key]
                    d[key] = [str(_resolve(base, p)) for p in items]
            for key in ("bank", "registry", "adjacency", "split", "clusters", "out_dir"):
                if d.get(key) is not None:
                    d[key] = str(_resolve(base, d[key]))
        return _build(cls, d, "run config")


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _build(cls, d, what):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{what}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def read_json(path, what="config") -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from None


def load_run_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    cfg = RunConfig.from_dict(read_json(path), base=path.parent)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


# schedule and optimiser

def lr_schedule(epoch: float, opt: OptimConfig) -> float:
    """Linear warm-up to ``lr_peak`` then cosine decay to zero."""
    w, total = opt.warmup_epochs, opt.total_epochs
    epoch = min(max(float(epoch), 0.0), float(total))
    if w > 0 and epoch <= w:
        return opt.lr_peak * epoch / w
    return opt.lr_peak * 0.5 * (1.0 + math.cos(math.pi * (epoch - w) / (total - w)))


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        out["t"] = np.array([float(self.t)])
        return out

    def load(self, state: dict):
        self.t = int(state["t"][0])
        for k in self.m:
            self.m[k] = np.array(state[f"m.{k}"])
            self.v[k] = np.array(state[f"v.{k}"])


# data

@dataclass
class Dataset:
    batch: Batch
    label_sets: list
    sample_ids: list
    format_ids: list

    def __len__(self):
        return len(self.label_sets)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.batch.take(idx),
            [self.label_sets[i] for i in idx],
            [self.sample_ids[i] for i in idx],
            [self.format_ids[i] for i in idx],
        )


def load_formats(cfg: RunConfig) -> list:
    return load_registry(cfg.registry) if cfg.registry else default_formats()


def load_space(cfg: RunConfig):
    return build_unified_space(load_formats(cfg))


def cluster_bank(space: ClusteredLabelSpace, bank: LabelBank) -> LabelBank:
    """One entry per cluster (normalised centroid, representative's name).

    A cluster is unseen when every raw label in it is unseen.
    """
    members = {}
    for raw, c in space.assignment.items():
        members.setdefault(c, []).append(raw)
    entries = [(c, bank.names[bank.index(space.cluster_names[c])], space.centroids[c]) for c in range(space.k)]
    unseen = [c for c, raws in sorted(members.items()) if all(r in bank.unseen for r in raws)]
    return make_bank(entries, bank.dim, unseen=unseen)


def load_labels(cfg: RunConfig):
    """(bank used for training/eval, raw -> class mapping or None)."""
    bank = load_bank(cfg.bank)
    if not cfg.clusters:
        return bank, None
    space = ClusteredLabelSpace.from_dict(read_json(cfg.clusters, "cluster map"))
    return cluster_bank(space, bank), space.assignment


def build_dataset(seqs, space, cfg: RunConfig, T_max: int, mapping=None) -> Dataset:
    adjacency = None
    if cfg.strategy == "interpolation":
        adjacency = load_adjacency(cfg.adjacency) if cfg.adjacency else default_adjacency()
    prepared, labels, sids, fids = [], [], [], []
    for s in seqs:
        u = unify(s, space, cfg.strategy, adjacency)
        prepared.append(prepare_sample(u, space, T_max))
        ls = set(s.label_ids) if mapping is None else {mapping[l] for l in s.label_ids}
        labels.append(ls)
        sids.append(s.sample_id)
        fids.append(s.format_id)
    if not prepared:
        raise ConfigError("no sequences selected")
    return Dataset(stack_samples(prepared), labels, sids, fids)


def read_sequences(paths, keep_ids=None) -> list:
    out = []
    for p in paths:
        try:
            seqs = read_corpus(p)
        except FileNotFoundError:
            raise ConfigError(f"corpus file not found: {p}") from None
        if keep_ids is not None:
            seqs = [s for s in seqs if s.sample_id in keep_ids]
        out.extend(seqs)
    return out


def load_split(cfg: RunConfig) -> SplitSpec | None:
    return SplitSpec.from_dict(read_json(cfg.split, "split")) if cfg.split else None


def encoder_config(cfg: RunConfig, space, bank: LabelBank) -> EncoderConfig:
    enc = dict(cfg.encoder)
    enc.setdefault("D_a", bank.dim)
    if enc["D_a"] != bank.dim:
        raise ConfigError(f"encoder D_a={enc['D_a']} but the label bank has dim {bank.dim}")
    enc.setdefault("learnable_padding", cfg.strategy == "learnable")
    try:
        return EncoderConfig.for_space(space, **enc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"encoder: {exc}") from None


# training

@dataclass
class TrainResult:
    final_path: Path
    best_path: Path
    best_val: float | None
    epochs: int
    last_loss: float


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _val_top1(encoder, ds: Dataset, bank: LabelBank) -> float:
    from .inferev import classify

    pred = classify(encoder.embed(ds.batch), bank)
    return float(np.mean([int(p) in t for p, t in zip(pred, ds.label_sets)]))


def train(cfg: RunConfig, resume: bool = False, stop_after: int | None = None) -> TrainResult:
    """Train per ``cfg``; ``resume`` continues from ``out_dir/state.ckpt``.

    ``stop_after`` ends this invocation after that many epochs (the schedule
    still spans ``total_epochs``), leaving a resumable state behind.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    space = load_space(cfg)
    bank, mapping = load_labels(cfg)
    ecfg = encoder_config(cfg, space, bank)
    split = load_split(cfg)
    keep = set(split.train_ids) if split else None
    ds = build_dataset(read_sequences(cfg.corpus, keep), space, cfg, ecfg.T_max, mapping)
    if cfg.exclude_unseen and bank.unseen:
        ds = ds.subset([i for i, ls in enumerate(ds.label_sets) if not ls & set(bank.unseen)])
    for ls in ds.label_sets:
        if not ls <= set(bank.ids):
            raise ConfigError(f"labels {sorted(ls - set(bank.ids))} are missing from the bank")

    # validation carve-out by sample id so renderings of one sample stay together
    train_ds, val_ds = ds, None
    if cfg.val_frac > 0:
        uniq = sorted(set(ds.sample_ids))
        rng = substream(cfg.seed, "val")
        n_val = int(round(cfg.val_frac * len(uniq)))
        val_ids = set(uniq[i] for i in rng.permutation(len(uniq))[:n_val])
        val_idx = [i for i, s in enumerate(ds.sample_ids) if s in val_ids]
        if val_idx:
            val_ds = ds.subset(val_idx)
            train_ds = ds.subset([i for i, s in enumerate(ds.sample_ids) if s not in val_ids])

    seed_init = int(substream(cfg.seed, "init").integers(2**31))
    encoder = MotionEncoder(ecfg, seed=seed_init)
    opt = cfg.optim
    adam = Adam(encoder.params, opt.adam_beta1, opt.adam_beta2, opt.adam_eps)
    weights = cfg.weights()
    n = len(train_ds)
    bs = min(opt.batch_size, n)
    steps_per_epoch = max(1, n // bs)

    start_epoch, step, best_val, last = 0, 0, None, float("nan")
    state_path, progress_path = out / "state.ckpt", out / "progress.json"
    if resume and progress_path.exists():
        prog = read_json(progress_path, "progress")
        state = checkpoint.load(state_path)
        encoder.load_state_dict({k[6:]: v for k, v in state.items() if k.startswith("param.")})
        adam.load({k[5:]: v for k, v in state.items() if k.startswith("adam.")})
        start_epoch, step, best_val = prog["epoch"], prog["step"], prog["best_val"]
        mode = "a"
    else:
        mode = "w"
        _write_json(out / "config.json", cfg.to_dict())
        _write_json(out / "encoder.json", ecfg.to_dict())

    with open(out / "metrics.jsonl", mode) as mlog, open(out / "epochs.jsonl", mode) as elog:
        end = opt.total_epochs if stop_after is None else min(opt.total_epochs, start_epoch + stop_after)
        for epoch in range(start_epoch, end):
            order = substream(cfg.seed, "shuffle", epoch).permutation(n)
            lab_rng = substream(cfg.seed, "labels", epoch)
            totals = []
            for b in range(steps_per_epoch):
                idx = np.sort(order[b * bs : (b + 1) * bs])
                batch = train_ds.batch.take(idx)
                chosen = [int(lab_rng.choice(sorted(train_ds.label_sets[i]))) for i in idx]
                a = bank.matrix(chosen)
                exclude = None
                if cfg.mask_false_negatives:
                    lab = np.asarray(chosen)
                    exclude = lab[:, None] == lab[None, :]
                lr = lr_schedule(epoch + b / steps_per_epoch, opt)
                try:
                    for p in encoder.params.values():
                        p.zero_grad()
                    loss, comps = total_loss(encoder.forward(batch), a, weights, exclude)
                    ng.backward(loss)
                except ng.NumGraphError as exc:
                    raise TrainingError(f"epoch {epoch} step {step}: {exc} (lr={lr:.3g})") from exc
                val = float(loss.value)
                if not math.isfinite(val):  # pragma: no cover - guarded by numgraph
                    raise TrainingError(f"epoch {epoch} step {step}: non-finite loss")
                adam.step(lr)
                row = {"epoch": epoch, "step": step, "lr": lr, "L_total": val}
                row.update({k: float(comps[k].value) for k in COMPONENTS})
                mlog.write(json.dumps(row) + "\n")
                totals.append(val)
                step += 1
            last = float(np.mean(totals))
            summary = {"epoch": epoch, "L_total_mean": last}
            if val_ds is not None:
                acc = _val_top1(encoder, val_ds, bank)
                summary["val_top1"] = acc
                if best_val is None or acc > best_val:
                    best_val = acc
                    checkpoint.save(out / "best.ckpt", encoder.state_dict())
            elog.write(json.dumps(summary) + "\n")
            mlog.flush()
            elog.flush()
            log.info("epoch %d loss %.4f %s", epoch, last, summary.get("val_top1", ""))
            state = {f"param.{k}": v for k, v in encoder.state_dict().items()}
            state.update({f"adam.{k}": v for k, v in adam.state().items()})
            checkpoint.save(state_path, state)
            _write_json(progress_path, {"epoch": epoch + 1, "step": step, "best_val": best_val})

    if end < opt.total_epochs:
        return TrainResult(state_path, out / "best.ckpt", best_val, end, last)
    checkpoint.save(out / "final.ckpt", encoder.state_dict())
    if val_ds is None or not (out / "best.ckpt").exists():
        checkpoint.save(out / "best.ckpt", encoder.state_dict())
    return TrainResult(out / "final.ckpt", out / "best.ckpt", best_val, opt.total_epochs, last)


# evaluation

def load_encoder(cfg: RunConfig, ckpt_path, space=None, bank=None) -> MotionEncoder:
    space = space or load_space(cfg)
    if bank is None:
        bank, _ = load_labels(cfg)
    enc = MotionEncoder(encoder_config(cfg, space, bank), seed=0)
    enc.load_state_dict(checkpoint.load(ckpt_path))
    return enc


def eval_dataset(cfg: RunConfig) -> tuple:
    """(dataset, bank, strata, space) for the evaluation side of ``cfg``."""
    space = load_space(cfg)
    bank, mapping = load_labels(cfg)
    split = load_split(cfg)
    keep = set(split.test_ids) if split else None
    ecfg = encoder_config(cfg, space, bank)
    ds = build_dataset(read_sequences(cfg.eval_corpus or cfg.corpus, keep), space, cfg, ecfg.T_max, mapping)
    strata = split.strata if split and split.strata else None
    return ds, bank, strata, space


def embed_eval(cfg: RunConfig, ckpt_path):
    ds, bank, strata, space = eval_dataset(cfg)
    enc = load_encoder(cfg, ckpt_path, space, bank)
    return ds, bank, strata, similarities(enc.embed(ds.batch), bank)


def run_eval(cfg: RunConfig, ckpt_path, gamma: float | None = None) -> EvalReport:
    ds, bank, strata, sims = embed_eval(cfg, ckpt_path)
    return evaluate(ds.label_sets, None, bank, strata, cfg.gamma if gamma is None else gamma, sims=sims)


def run_sweep(cfg: RunConfig, ckpt_path, gammas) -> list:
    ds, bank, _, sims = embed_eval(cfg, ckpt_path)
    return sweep_gamma(ds.label_sets, None, bank, gammas, sims=sims)


def frequency_strata(samples, assignment=None) -> dict:
    """Strata from per-class sample counts of ``(sample_id, label_ids)`` pairs."""
    counts = {}
    for _, labels in samples:
        c = min(labels if assignment is None else [assignment[l] for l in labels])
        counts[c] = counts.get(c, 0) + 1
    return stratify_frequency(counts)


# gradient oracle on a small synthetic model

def chain_format(K: int) -> SkeletonFormat:
    return SkeletonFormat(f"chain-{K}", tuple(f"j{i:02d}" for i in range(K)), tuple(max(0, i - 1) for i in range(K)))


def gradcheck_model(K=5, T=6, batch=4, D_a=16, encoder=None, loss=None, seed=0, step=1e-4, tol=1e-4):
    """Finite-difference check of the full objective on a seeded tiny model."""
    fmt = chain_format(K)
    space = build_unified_space([fmt])
    enc_kw = {"D_h": 8, "L": 1, "heads": 2, "N_seg": 4, "N_part": min(4, K)}
    enc_kw.update(encoder or {})
    enc_kw.setdefault("part_map", [i % enc_kw["N_part"] for i in range(K)])
    ecfg = EncoderConfig.for_space(space, D_a=D_a, T_max=T, **enc_kw)
    rng = np.random.default_rng(seed)
    model = MotionEncoder(ecfg, seed=seed)
    from .skeleform import RawSequence

    us = [unify(RawSequence(fmt.format_id, rng.normal(size=(T, K, 1, 3)), (0,)), space) for _ in range(batch)]
    b = stack_samples([prepare_sample(u, space, T) for u in us])
    a = rng.normal(size=(batch, D_a))
    w = LossWeights(**(loss or {}))
    return ng.grad_check(lambda: total_loss(model.forward(b), a, w)[0], model.parameters(), step=step, tol=tol)
