"""Toy-scale experiment recipes: generate, split, embed, train and evaluate in one call."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import harness as H
from . import labelspace as ls
from . import motiongen as mg
from .inferev import EvalReport
from .skeleform import default_formats
from .textbank import save_bank, synth_bank


@dataclass
class ToyResult:
    report: EvalReport
    config: H.RunConfig
    train: H.TrainResult
    workdir: Path


def prepare_toy_data(workdir, formats, per_class, noise_sigma=0.02, seed=0, T=32, dim=64, unseen=(), **gen_kw):
    """Write corpus files, a split with frequency strata and a synthetic bank into ``workdir``."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    spec = mg.GenSpec.default(formats, per_class, noise_sigma=noise_sigma, seed=seed, T=T, **gen_kw)
    corpus = mg.generate(spec, default_formats())
    man = mg.write(corpus, workdir)
    samples = [(r["sample_id"], r["label_ids"]) for r in mg.sample_manifest(corpus)]
    split = ls.stratified_split(samples, 0.70, seed=seed)
    train = set(split.train_ids)
    split.strata = H.frequency_strata([s for s in samples if s[0] in train])
    (workdir / "split.json").write_text(json.dumps(split.to_dict(), indent=1, sort_keys=True) + "\n")
    save_bank(workdir / "bank.json", synth_bank(corpus.class_names, dim=dim, seed=seed, unseen=list(unseen)))
    return man


def toy_run(workdir, train_formats, eval_formats=None, run_name="run", ckpt="best", **overrides) -> ToyResult:
    """Train on ``train_formats`` corpora of a prepared ``workdir`` and evaluate the test split."""
    workdir = Path(workdir)
    conf = {
        "corpus": [f"corpus_{f}.jsonl" for f in train_formats],
        "eval_corpus": [f"corpus_{f}.jsonl" for f in (eval_formats or train_formats)],
        "bank": "bank.json",
        "split": "split.json",
        "out_dir": run_name,
        "encoder": {"D_h": 32, "L": 2, "T_max": 32},
        "optim": {"lr_peak": 1e-3, "warmup_epochs": 1, "total_epochs": 10, "batch_size": 64},
    }
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(conf.get(k), dict):
            conf[k] = {**conf[k], **v}
        else:
            conf[k] = v
    path = workdir / f"{run_name}.json"
    path.write_text(json.dumps(conf, indent=1, sort_keys=True) + "\n")
    cfg = H.load_run_config(path)
    res = H.train(cfg)
    report = H.run_eval(cfg, res.best_path if ckpt == "best" else res.final_path)
    return ToyResult(report, cfg, res, workdir)
