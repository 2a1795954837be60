"""Cosine-similarity inference, long-tail accuracy and calibrated GZSL metrics."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .labelspace import FEW, MANY, MEDIUM, primary_cluster


@dataclass
class EvalReport:
    overall: float
    many: float | None = None
    medium: float | None = None
    few: float | None = None
    per_class: dict = field(default_factory=dict)  # class id -> [correct, total]
    zsl_acc: float | None = None
    seen_S: float | None = None
    unseen_U: float | None = None
    harmonic_H: float | None = None
    gamma: float = 0.0
    n_samples: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): list(v) for k, v in sorted(self.per_class.items())}
        return d

    def table(self) -> str:
        rows = [("overall", self.overall), ("many-shot", self.many), ("medium-shot", self.medium), ("few-shot", self.few)]
        if self.harmonic_H is not None:
            rows += [("ZSL", self.zsl_acc), ("GZSL seen S", self.seen_S), ("GZSL unseen U", self.unseen_U), ("GZSL H", self.harmonic_H)]
        width = max(len(r[0]) for r in rows)
        lines = [f"{name:<{width}}  {'n/a' if val is None else f'{100 * val:6.2f}%'}" for name, val in rows]
        lines.append(f"{'samples':<{width}}  {self.n_samples}")
        return "\n".join(lines)

    def per_class_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "correct", "total", "accuracy"])
        for c, (ok, tot) in sorted(self.per_class.items()):
            w.writerow([c, ok, tot, f"{ok / tot:.6f}"])
        return buf.getvalue()


def similarities(v, bank) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero feature vector")
    return (v / norms) @ bank.vectors.T


def classify(v, bank, gamma=0.0, restrict="all", sims=None) -> np.ndarray:
    """Arg-max label id per row of ``v``; seen classes are penalised by
    ``gamma`` when scoring over all classes.  Ties go to the lowest id."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if len(bank) == 0:
        raise ValueError("empty label bank")
    ids = np.asarray(bank.ids)
    scores = similarities(v, bank) if sims is None else np.array(sims, dtype=np.float64, copy=True)
    if restrict == "all":
        seen = np.isin(ids, list(bank.seen))
        scores = scores - gamma * seen
    elif restrict in ("seen", "unseen"):
        allowed = np.isin(ids, list(bank.seen if restrict == "seen" else bank.unseen))
        if not allowed.any():
            raise ValueError(f"no {restrict} classes to restrict to")
        scores = np.where(allowed, scores, -np.inf)
    else:
        raise ValueError(f"unknown restriction {restrict!r}")
    return ids[np.argmax(scores, axis=1)]


def multilabel_top1(pred, truth) -> bool:
    truth = set(truth)
    if not truth:
        raise ValueError("empty ground-truth label set")
    return int(pred) in truth


def harmonic_mean(s, u) -> float:
    return 2 * s * u / (s + u) if s + u > 0 else 0.0


def _acc(flags):
    return float(np.mean(flags)) if len(flags) else None


def evaluate(label_sets, v, bank, strata=None, gamma=0.0, sims=None) -> EvalReport:
    """Score features ``v`` (one row per sample) against ``bank``.

    Each sample counts once, under its primary (lowest) class, for per-class
    and stratum accuracy.  With unseen classes present, ZSL accuracy is taken
    on unseen samples over unseen classes and S/U/H over all classes with the
    ``gamma`` penalty.  Precomputed similarity rows may be passed as ``sims``.
    """
    label_sets = [set(ls) for ls in label_sets]
    if sims is None:
        sims = similarities(v, bank)
    pred = classify(None, bank, gamma, "all", sims=sims)
    ok = np.array([multilabel_top1(p, t) for p, t in zip(pred, label_sets)], dtype=bool)
    primary = [primary_cluster(t) for t in label_sets]

    per_class = {}
    for c, hit in zip(primary, ok):
        pc = per_class.setdefault(c, [0, 0])
        pc[0] += int(hit)
        pc[1] += 1
    by_stratum = {MANY: [], MEDIUM: [], FEW: []}
    if strata:
        for c, hit in zip(primary, ok):
            if c in strata:
                by_stratum[strata[c]].append(hit)

    report = EvalReport(
        overall=_acc(ok) or 0.0,
        many=_acc(by_stratum[MANY]),
        medium=_acc(by_stratum[MEDIUM]),
        few=_acc(by_stratum[FEW]),
        per_class=per_class,
        gamma=float(gamma),
        n_samples=len(label_sets),
    )
    if bank.unseen:
        is_unseen = np.array([c in bank.unseen for c in primary])
        if is_unseen.any():
            idx = np.flatnonzero(is_unseen)
            zpred = classify(None, bank, 0.0, "unseen", sims=sims[idx])
            report.zsl_acc = _acc([multilabel_top1(p, label_sets[i]) for p, i in zip(zpred, idx)])
        s = _acc(ok[~is_unseen]) or 0.0
        u = _acc(ok[is_unseen]) or 0.0
        report.seen_S, report.unseen_U, report.harmonic_H = s, u, harmonic_mean(s, u)
    return report


def sweep_gamma(label_sets, v, bank, gammas, sims=None):
    """(gamma, S, U, H, number of samples predicted into a seen class) per gamma."""
    label_sets = [set(ls) for ls in label_sets]
    if sims is None:
        sims = similarities(v, bank)
    seen = set(bank.seen)
    rows = []
    for g in gammas:
        rep = evaluate(label_sets, None, bank, None, g, sims=sims)
        pred = classify(None, bank, g, "all", sims=sims)
        rows.append(
            {
                "gamma": float(g),
                "S": rep.seen_S,
                "U": rep.unseen_U,
                "H": rep.harmonic_H,
                "seen_predicted": int(sum(int(p) in seen for p in pred)),
            }
        )
    return rows


def ensemble_scores(score_list) -> np.ndarray:
    """Average per-configuration similarity matrices (score-level ensemble)."""
    return np.mean(np.stack([np.asarray(s, dtype=np.float64) for s in score_list]), axis=0)
