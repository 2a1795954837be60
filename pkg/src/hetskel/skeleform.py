"""Heterogeneous skeleton formats and the unified joint/member space.

Formats name their joints from one canonical vocabulary, so the unified space
is the sorted union of all registered joint sets and every format maps a
shared joint to the same slot.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels

STRATEGIES = ("zero", "interpolation", "learnable")


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonFormat:
    format_id: str
    joints: tuple
    parent_of: tuple
    coord_dims: int = 3
    max_members: int = 1

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "parent_of", tuple(int(p) for p in self.parent_of))
        k = len(self.joints)
        if len(set(self.joints)) != k:
            raise SkeletonError(f"{self.format_id}: duplicate joint identifiers")
        if len(self.parent_of) != k:
            raise SkeletonError(f"{self.format_id}: parent_of length {len(self.parent_of)} != {k} joints")
        if self.coord_dims not in (2, 3):
            raise SkeletonError(f"{self.format_id}: coord_dims must be 2 or 3")
        if self.max_members < 1:
            raise SkeletonError(f"{self.format_id}: max_members must be >= 1")
        roots = [j for j, p in enumerate(self.parent_of) if p == j]
        if len(roots) != 1:
            raise SkeletonError(f"{self.format_id}: expected exactly one root, found {len(roots)}")
        for j in range(k):
            p, steps = j, 0
            while self.parent_of[p] != p:
                p = self.parent_of[p]
                if not 0 <= p < k:
                    raise SkeletonError(f"{self.format_id}: parent index {p} out of range")
                steps += 1
                if steps >= k:
                    raise SkeletonError(f"{self.format_id}: parent links form a cycle")

    @property
    def root(self) -> int:
        return next(j for j, p in enumerate(self.parent_of) if p == j)

    def to_dict(self):
        return {
            "format_id": self.format_id,
            "joints": list(self.joints),
            "parent_of": list(self.parent_of),
            "coord_dims": self.coord_dims,
            "max_members": self.max_members,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["format_id"], d["joints"], d["parent_of"], int(d.get("coord_dims", 3)), int(d.get("max_members", 1)))


@dataclass
class UnifiedSpace:
    joints: tuple  # canonical identifiers in slot order
    M_unified: int
    formats: dict  # format_id -> SkeletonFormat
    slot_of: dict  # format_id -> {canonical joint: slot}

    @property
    def K_unified(self) -> int:
        return len(self.joints)

    def slot(self, joint: str) -> int:
        return self.joints.index(joint)

    def slots(self, format_id: str) -> np.ndarray:
        """Slot index of each of the format's joints, in format order."""
        fmt = self.formats[format_id]
        return np.array([self.slot_of[format_id][j] for j in fmt.joints], dtype=np.int64)

    def parent_slots(self, format_id: str) -> np.ndarray:
        """Parent slot for every unified slot; slots outside the format point at themselves."""
        fmt = self.formats[format_id]
        parent = np.arange(self.K_unified, dtype=np.int64)
        slots = self.slots(format_id)
        parent[slots] = slots[list(fmt.parent_of)]
        return parent

    def format(self, format_id: str) -> SkeletonFormat:
        try:
            return self.formats[format_id]
        except KeyError:
            raise SkeletonError(f"unknown format {format_id!r}") from None


@dataclass
class RawSequence:
    format_id: str
    data: np.ndarray  # [T, K', members, coord_dims]
    label_ids: tuple
    sample_id: str | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.label_ids = tuple(int(x) for x in self.label_ids)
        if self.data.ndim != 4 or self.data.shape[0] < 1:
            raise SkeletonError(f"raw sequence must be [T,K,members,C] with T >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise SkeletonError("raw sequence contains non-finite values")
        if not self.label_ids:
            raise SkeletonError("raw sequence needs at least one label id")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def members(self) -> int:
        return self.data.shape[2]


@dataclass
class UnifiedSequence:
    data: np.ndarray  # [T, K_unified, M_unified, 3]; NaN marks learnable-placeholder slots
    joint_mask: np.ndarray  # [K_unified, M_unified] real joints
    label_ids: tuple
    format_id: str
    fill_mask: np.ndarray = None  # slots synthesised by interpolation
    strategy: str = "zero"
    sample_id: str | None = None

    def __post_init__(self):
        if self.fill_mask is None:
            self.fill_mask = np.zeros_like(self.joint_mask)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def placeholder_mask(self) -> np.ndarray:
        """Slots the encoder must substitute with its learnable vectors."""
        if self.strategy != "learnable":
            return np.zeros_like(self.joint_mask)
        return np.isnan(self.data[0, :, :, 0])

    def filled(self) -> np.ndarray:
        """Data with placeholder sentinels replaced by zero."""
        return np.nan_to_num(self.data, nan=0.0)


@dataclass
class ModalityTriple:
    J: np.ndarray
    B: np.ndarray
    M: np.ndarray


def build_unified_space(formats) -> UnifiedSpace:
    formats = list(formats)
    if not formats:
        raise SkeletonError("need at least one skeleton format")
    by_id = {}
    for f in formats:
        if f.format_id in by_id:
            raise SkeletonError(f"duplicate format_id {f.format_id!r}")
        by_id[f.format_id] = f
    joints = tuple(sorted(set().union(*(f.joints for f in formats))))
    index = {j: i for i, j in enumerate(joints)}
    slot_of = {f.format_id: {j: index[j] for j in f.joints} for f in formats}
    return UnifiedSpace(joints, max(f.max_members for f in formats), by_id, slot_of)


def unify(seq: RawSequence, space: UnifiedSpace, strategy: str = "zero", adjacency: dict | None = None) -> UnifiedSequence:
    """Expand ``seq`` into the unified space.

    Missing joints are filled per ``strategy``: ``zero`` writes 0,
    ``interpolation`` writes the mean of the present joints listed for it in
    ``adjacency`` (0 when none are present), ``learnable`` writes NaN for the
    encoder to replace.  Padded members are always zero.
    """
    if strategy not in STRATEGIES:
        raise SkeletonError(f"unknown padding strategy {strategy!r}")
    fmt = space.format(seq.format_id)
    t, k, members, c = seq.data.shape
    if k != len(fmt.joints) or c != fmt.coord_dims:
        raise SkeletonError(
            f"{fmt.format_id}: expected [T,{len(fmt.joints)},members,{fmt.coord_dims}], got {seq.data.shape}"
        )
    if members > space.M_unified or members > fmt.max_members:
        raise SkeletonError(f"{fmt.format_id}: {members} members exceeds the limit")

    K, M = space.K_unified, space.M_unified
    out = np.zeros((t, K, M, 3))
    slots = space.slots(fmt.format_id)
    out[:, slots, :members, :c] = seq.data
    mask = np.zeros((K, M), dtype=bool)
    mask[np.ix_(slots, np.arange(members))] = True
    fill = np.zeros((K, M), dtype=bool)

    if strategy == "interpolation":
        if adjacency is None:
            adjacency = default_adjacency()
        present = set(fmt.joints)
        for joint, sources in adjacency.items():
            if joint in present or joint not in space.joints:
                continue
            src = [space.slot(s) for s in sources if s in present]
            if not src:
                continue
            dst = space.slot(joint)
            out[:, dst, :members, :] = out[:, src, :members, :].mean(axis=1)
            fill[dst, :members] = True
    elif strategy == "learnable":
        hole = ~mask
        hole[:, members:] = False
        out[:, hole] = np.nan

    return UnifiedSequence(out, mask, seq.label_ids, fmt.format_id, fill, strategy, seq.sample_id)


def derive_modalities(u: UnifiedSequence, space: UnifiedSpace, fmt: SkeletonFormat | None = None) -> ModalityTriple:
    """Joint, bone (joint minus parent, zero at the root) and motion (frame
    difference, zero at frame 0) arrays.  Slots without data are zero in all three.
    """
    fmt = fmt or space.format(u.format_id)
    if u.data.shape[1:] != (space.K_unified, space.M_unified, 3):
        raise SkeletonError(f"unified data has shape {u.data.shape}")
    valid = u.joint_mask | u.fill_mask
    joints = np.where(valid[None, :, :, None], u.filled(), 0.0)
    parent = space.parent_slots(fmt.format_id)
    bone, motion = kernels.bone_motion(joints, parent, valid)
    return ModalityTriple(joints, bone, motion)


# registry and corpus files

def _data_text(name: str) -> str:
    return resources.files("hetskel").joinpath("data", name).read_text()


def default_formats() -> list:
    return [SkeletonFormat.from_dict(d) for d in json.loads(_data_text("formats.json"))["formats"]]


def default_adjacency() -> dict:
    return json.loads(_data_text("adjacency.json"))


def load_registry(path) -> list:
    raw = json.loads(Path(path).read_text())
    entries = raw["formats"] if isinstance(raw, dict) else raw
    formats = [SkeletonFormat.from_dict(d) for d in entries]
    space = build_unified_space(formats)
    for d in entries:
        given = d.get("slot_of")
        if given is not None and given != space.slot_of[d["format_id"]]:
            raise SkeletonError(f"{d['format_id']}: stored slot map disagrees with the registry union")
    return formats


def save_registry(path, formats):
    space = build_unified_space(formats)
    entries = [dict(f.to_dict(), slot_of=space.slot_of[f.format_id]) for f in formats]
    Path(path).write_text(json.dumps(entries, indent=1))


def load_adjacency(path) -> dict:
    return {k: list(v) for k, v in json.loads(Path(path).read_text()).items()}


def sequence_to_record(seq: RawSequence) -> dict:
    rec = {
        "format_id": seq.format_id,
        "members": seq.members,
        "label_ids": list(seq.label_ids),
        # frames[t][m][k] = coordinates
        "frames": np.transpose(seq.data, (0, 2, 1, 3)).tolist(),
    }
    if seq.sample_id is not None:
        rec["sample_id"] = seq.sample_id
    return rec


def record_to_sequence(rec: dict) -> RawSequence:
    frames = np.asarray(rec["frames"], dtype=np.float64)
    if frames.ndim != 4:
        raise SkeletonError("frames must nest as T x members x K x coords")
    if frames.shape[1] != int(rec["members"]):
        raise SkeletonError(f"record declares {rec['members']} members but carries {frames.shape[1]}")
    return RawSequence(rec["format_id"], np.transpose(frames, (0, 2, 1, 3)), rec["label_ids"], rec.get("sample_id"))


def write_corpus(path, sequences):
    with open(path, "w") as fh:
        for seq in sequences:
            fh.write(json.dumps(sequence_to_record(seq), separators=(",", ":")))
            fh.write("\n")


def read_corpus(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(record_to_sequence(json.loads(line)))
    return out
