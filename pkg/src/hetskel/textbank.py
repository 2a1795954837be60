"""Label embeddings: loaded from a precomputed bank file or synthesised."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TOKEN_WEIGHT = 0.5


class BankError(ValueError):
    pass


@dataclass(frozen=True)
class LabelBank:
    dim: int
    ids: tuple  # ascending label ids
    names: dict  # id -> name
    vectors: np.ndarray  # [len(ids), dim], unit rows, in ``ids`` order
    seen: frozenset
    unseen: frozenset

    def __post_init__(self):
        if self.seen & self.unseen:
            raise BankError("seen and unseen label sets overlap")
        known = set(self.ids)
        if not (self.seen | self.unseen) <= known:
            raise BankError("seen/unseen reference unknown label ids")

    def __len__(self):
        return len(self.ids)

    def index(self, label_id: int) -> int:
        return self.ids.index(label_id)

    def vector(self, label_id: int) -> np.ndarray:
        return self.vectors[self.index(label_id)]

    def matrix(self, label_ids) -> np.ndarray:
        pos = {k: i for i, k in enumerate(self.ids)}
        return self.vectors[[pos[k] for k in label_ids]]

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "labels": [
                {"id": k, "name": self.names[k], "vector": self.vectors[i].tolist()} for i, k in enumerate(self.ids)
            ],
            "seen": sorted(self.seen),
            "unseen": sorted(self.unseen),
        }

    def with_split(self, seen, unseen) -> "LabelBank":
        return LabelBank(self.dim, self.ids, self.names, self.vectors, frozenset(seen), frozenset(unseen))


def make_bank(entries, dim, seen=None, unseen=None) -> LabelBank:
    """Build a bank from ``(id, name, vector)`` triples, normalising every vector."""
    entries = sorted(entries, key=lambda e: e[0])
    ids = [int(e[0]) for e in entries]
    if len(set(ids)) != len(ids):
        raise BankError("duplicate label id")
    vecs = np.array([np.asarray(e[2], dtype=np.float64) for e in entries]).reshape(len(entries), -1)
    if vecs.shape[1] != dim:
        raise BankError(f"vector dim {vecs.shape[1]} does not match declared dim {dim}")
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(vecs)):
        raise BankError("zero or non-finite label vector")
    unseen = frozenset(int(x) for x in (unseen or ()))
    seen = frozenset(int(x) for x in seen) if seen is not None else frozenset(ids) - unseen
    return LabelBank(int(dim), tuple(ids), {int(e[0]): e[1] for e in entries}, vecs / norms, seen, unseen)


def load_bank(path) -> LabelBank:
    raw = json.loads(Path(path).read_text())
    dim = int(raw["dim"])
    labels = raw["labels"]
    for lab in labels:
        if len(lab["vector"]) != dim:
            raise BankError(f"label {lab['id']} has dim {len(lab['vector'])}, bank declares {dim}")
    return make_bank([(lab["id"], lab["name"], lab["vector"]) for lab in labels], dim, raw.get("seen"), raw.get("unseen"))


def save_bank(path, bank: LabelBank):
    Path(path).write_text(json.dumps(bank.to_dict()))


def _hashed_normal(key: str, seed: int, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}\x00{key}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def synth_bank(names, dim=256, seed=0, ids=None, unseen=()) -> LabelBank:
    """Deterministic stand-in for a text encoder.

    Each name gets its own hashed random direction plus ``TOKEN_WEIGHT`` times
    a shared direction per whitespace token, so names sharing words end up
    closer than unrelated names.
    """
    names = list(names)
    if len(set(names)) != len(names):
        raise BankError("duplicate label names")
    if dim < 8:
        raise BankError("synthetic banks need dim >= 8")
    ids = list(range(len(names))) if ids is None else [int(i) for i in ids]
    entries = []
    for label_id, name in zip(ids, names):
        v = _hashed_normal("name:" + name, seed, dim)
        for tok in name.lower().split():
            v = v + TOKEN_WEIGHT * _hashed_normal("token:" + tok, seed, dim)
        entries.append((label_id, name, v))
    return make_bank(entries, dim, unseen=unseen)
