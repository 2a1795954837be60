"""Deterministic synthetic motion corpus.

Every sample is one canonical 3D trajectory over the full canonical joint
vocabulary, produced by forward kinematics from per-joint local rotations.
It is then rendered into each requested skeleton format by selecting that
format's joints (2D formats drop depth) with per-format Gaussian jitter.

Axes: x to the subject's left, y up, z forward.  Units are metres.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .skeleform import RawSequence, SkeletonFormat, write_corpus

# canonical skeleton: joint -> (parent, rest position)
_REST = {
    "pelvis": (None, (0.0, 1.00, 0.0)),
    "spine_low": ("pelvis", (0.0, 1.10, 0.0)),
    "spine_mid": ("spine_low", (0.0, 1.24, 0.0)),
    "spine_chest": ("spine_mid", (0.0, 1.37, 0.0)),
    "spine_shoulder": ("spine_chest", (0.0, 1.45, 0.0)),
    "neck": ("spine_shoulder", (0.0, 1.52, 0.0)),
    "head": ("neck", (0.0, 1.65, 0.0)),
    "nose": ("head", (0.0, 1.62, 0.10)),
    "l_eye": ("head", (0.03, 1.67, 0.08)),
    "r_eye": ("head", (-0.03, 1.67, 0.08)),
    "l_ear": ("head", (0.08, 1.64, 0.0)),
    "r_ear": ("head", (-0.08, 1.64, 0.0)),
}
for _s, _x in (("l", 1.0), ("r", -1.0)):
    _REST.update({
        f"{_s}_collar": ("spine_shoulder", (0.08 * _x, 1.45, 0.0)),
        f"{_s}_shoulder": (f"{_s}_collar", (0.18 * _x, 1.43, 0.0)),
        f"{_s}_elbow": (f"{_s}_shoulder", (0.20 * _x, 1.15, 0.0)),
        f"{_s}_wrist": (f"{_s}_elbow", (0.22 * _x, 0.90, 0.0)),
        f"{_s}_hand": (f"{_s}_wrist", (0.22 * _x, 0.82, 0.0)),
        f"{_s}_hand_tip": (f"{_s}_hand", (0.22 * _x, 0.74, 0.0)),
        f"{_s}_thumb": (f"{_s}_hand", (0.25 * _x, 0.84, 0.03)),
        f"{_s}_hip": ("pelvis", (0.10 * _x, 0.95, 0.0)),
        f"{_s}_knee": (f"{_s}_hip", (0.10 * _x, 0.52, 0.0)),
        f"{_s}_ankle": (f"{_s}_knee", (0.10 * _x, 0.08, 0.0)),
        f"{_s}_foot": (f"{_s}_ankle", (0.10 * _x, 0.02, 0.12)),
    })

CANONICAL_JOINTS = tuple(_REST)
_INDEX = {j: i for i, j in enumerate(CANONICAL_JOINTS)}
_PARENT = np.array([_INDEX[p] if p is not None else -1 for p, _ in _REST.values()])
_POS = np.array([pos for _, pos in _REST.values()])
_OFFSET = np.array([_POS[i] - (_POS[p] if p >= 0 else 0.0) for i, p in enumerate(_PARENT)])


class GenError(ValueError):
    pass


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


class Pose:
    """Per-frame local rotations and root translation for the canonical skeleton."""

    def __init__(self, T: int):
        self.T = T
        self.u = np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)
        self.rot = np.broadcast_to(np.eye(3), (T, len(CANONICAL_JOINTS), 3, 3)).copy()
        self.root = np.zeros((T, 3))

    def turn(self, joint, R):
        """Post-multiply ``joint``'s local rotation by per-frame matrices ``R``."""
        j = _INDEX[joint]
        self.rot[:, j] = self.rot[:, j] @ R

    def positions(self, scale=1.0) -> np.ndarray:
        T = self.T
        glob = np.empty_like(self.rot)
        pos = np.empty((T, len(CANONICAL_JOINTS), 3))
        for j, p in enumerate(_PARENT):  # parents precede children in _REST
            if p < 0:
                glob[:, j] = self.rot[:, j]
                pos[:, j] = _POS[j] * scale + self.root
            else:
                glob[:, j] = glob[:, p] @ self.rot[:, j]
                pos[:, j] = pos[:, p] + glob[:, p] @ (_OFFSET[j] * scale)
        return pos


# primitives: each edits a Pose in place using parameters p (drawn from ranges)

def _wave(pose, p):
    side = p["side"]
    sgn = 1.0 if side == "l" else -1.0
    u = pose.u
    pose.turn(f"{side}_shoulder", rot_z(np.full(pose.T, sgn * p["raise"])))
    pose.turn(f"{side}_elbow", rot_z(sgn * (0.3 + p["amp"] * np.sin(2 * np.pi * p["freq"] * u + p["phase"]))))


def _squat(pose, p):
    s = 0.5 * (1 - np.cos(2 * np.pi * p["freq"] * pose.u))
    a = p["depth"] * s
    for side in "lr":
        pose.turn(f"{side}_hip", rot_x(-a))
        pose.turn(f"{side}_knee", rot_x(2 * a))
        pose.turn(f"{side}_ankle", rot_x(-a))
        pose.turn(f"{side}_shoulder", rot_x(-0.8 * a))
    pose.root[:, 1] -= 0.87 * p["scale"] * (1 - np.cos(a))


def _walk(pose, p):
    ph = 2 * np.pi * p["freq"] * pose.u + p["phase"]
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        swing = sgn * p["stride"] * np.sin(ph)
        pose.turn(f"{side}_hip", rot_x(-swing))
        pose.turn(f"{side}_knee", rot_x(np.maximum(0.0, 1.2 * swing)))
        pose.turn(f"{side}_shoulder", rot_x(0.6 * swing))
    pose.root[:, 2] += p["speed"] * pose.u


def _jump(pose, p):
    u = pose.u
    air = np.clip((u - 0.25) / 0.5, 0.0, 1.0)
    crouch = np.exp(-((u - 0.2) / 0.08) ** 2) + np.exp(-((u - 0.8) / 0.08) ** 2)
    pose.root[:, 1] += p["height"] * 4 * air * (1 - air)
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        pose.turn(f"{side}_hip", rot_x(-0.7 * crouch))
        pose.turn(f"{side}_knee", rot_x(1.4 * crouch))
        pose.turn(f"{side}_shoulder", rot_z(sgn * p["arms"] * np.sin(np.pi * u)))


def _kick(pose, p):
    side = p["side"]
    other = "r" if side == "l" else "l"
    imp = np.exp(-((pose.u - p["at"]) / 0.12) ** 2)
    pose.turn(f"{side}_hip", rot_x(-p["height"] * imp))
    pose.turn(f"{side}_knee", rot_x(0.9 * (np.exp(-((pose.u - p["at"] + 0.15) / 0.1) ** 2))))
    pose.turn(f"{other}_shoulder", rot_x(-0.5 * imp))


def _turn(pose, p):
    u = pose.u
    smooth = u * u * (3 - 2 * u)
    pose.turn("pelvis", rot_y(p["angle"] * smooth))
    step = np.abs(np.sin(2 * np.pi * 2 * u))
    pose.turn(f"l_hip", rot_x(-0.3 * step))
    pose.turn(f"l_knee", rot_x(0.5 * step))


def _clap(pose, p):
    s = 0.5 * (1 + np.cos(2 * np.pi * p["freq"] * pose.u + p["phase"]))
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        pose.turn(f"{side}_shoulder", rot_y(-sgn * (0.2 + p["open"] * (1 - s))) @ rot_x(np.full(pose.T, -p["lift"])))
        pose.turn(f"{side}_elbow", rot_x(np.full(pose.T, -0.5)))


def _bow(pose, p):
    s = np.sin(np.pi * np.clip(pose.u * p["speed"], 0.0, 1.0)) ** 2
    pose.turn("spine_low", rot_x(0.7 * p["depth"] * s))
    pose.turn("spine_mid", rot_x(0.3 * p["depth"] * s))
    pose.turn("neck", rot_x(0.3 * s))


PRIMITIVES = {
    "wave": (_wave, {"raise": (2.2, 2.7), "amp": (0.3, 0.6), "freq": (2.0, 3.0), "phase": (0.0, 6.2832)}),
    "squat": (_squat, {"depth": (0.8, 1.1), "freq": (1.0, 2.0)}),
    "walk": (_walk, {"stride": (0.3, 0.5), "freq": (1.0, 2.0), "phase": (0.0, 6.2832), "speed": (0.6, 1.2)}),
    "jump": (_jump, {"height": (0.3, 0.5), "arms": (1.0, 2.0)}),
    "kick": (_kick, {"height": (1.0, 1.4), "at": (0.4, 0.6)}),
    "turn": (_turn, {"angle": (1.57, 3.14)}),
    "clap": (_clap, {"open": (0.4, 0.7), "lift": (1.1, 1.4), "freq": (2.0, 4.0), "phase": (0.0, 6.2832)}),
    "bow": (_bow, {"depth": (0.6, 1.0), "speed": (1.0, 1.3)}),
}
_SIDED = {"wave", "kick"}

DEFAULT_CLASSES = (
    ("wave hand", "wave"),
    ("squat down", "squat"),
    ("walk forward", "walk"),
    ("jump up", "jump"),
    ("kick leg", "kick"),
    ("turn around", "turn"),
    ("clap hands", "clap"),
    ("bow down", "bow"),
)


@dataclass
class ClassSpec:
    name: str
    primitive: str
    params: dict = field(default_factory=dict)  # overrides of the primitive's parameter ranges

    def ranges(self) -> dict:
        if self.primitive not in PRIMITIVES:
            raise GenError(f"unknown primitive {self.primitive!r}")
        out = dict(PRIMITIVES[self.primitive][1])
        for k, v in self.params.items():
            if k not in out:
                raise GenError(f"{self.primitive}: unknown parameter {k!r}")
            lo, hi = v
            out[k] = (float(lo), float(hi))
        return out


@dataclass
class GenSpec:
    classes: list
    formats: list
    samples_per_class: list
    T: int = 32
    noise_sigma: float = 0.02
    seed: int = 0
    multi_label_frac: float = 0.0
    body_scale: tuple = (0.95, 1.05)
    yaw_jitter: float = 0.3
    base_yaw: float = 0.7854  # three-quarter view keeps sagittal motion visible after dropping depth

    def __post_init__(self):
        self.classes = [c if isinstance(c, ClassSpec) else ClassSpec(**c) for c in self.classes]
        self.samples_per_class = [int(n) for n in self.samples_per_class]
        if len(self.samples_per_class) != len(self.classes):
            raise GenError("samples_per_class must have one entry per class")
        if min(self.samples_per_class, default=0) < 0:
            raise GenError("sample counts must be non-negative")
        if self.noise_sigma < 0:
            raise GenError("noise_sigma must be non-negative")
        if self.T < 2:
            raise GenError("T must be at least 2")
        if not 0.0 <= self.multi_label_frac <= 1.0:
            raise GenError("multi_label_frac must lie in [0, 1]")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise GenError("class names must be unique")
        for c in self.classes:
            c.ranges()

    @classmethod
    def default(cls, formats, per_class=200, **kw):
        classes = [ClassSpec(n, p) for n, p in DEFAULT_CLASSES]
        counts = per_class if isinstance(per_class, (list, tuple)) else [per_class] * len(classes)
        return cls(classes, list(formats), list(counts), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["body_scale"] = list(self.body_scale)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "body_scale" in d:
            d["body_scale"] = tuple(d["body_scale"])
        return cls(**d)


def _draw_params(rng, ranges, primitive):
    p = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in sorted(ranges.items())}
    if primitive in _SIDED:
        p["side"] = "l" if rng.random() < 0.5 else "r"
    return p


def _run_primitive(primitive, ranges, rng, T, scale):
    pose = Pose(T)
    p = _draw_params(rng, ranges, primitive)
    p["scale"] = scale
    PRIMITIVES[primitive][0](pose, p)
    return pose


def canonical_motion(spec: GenSpec, class_idx: int, index: int, second: int | None = None) -> np.ndarray:
    """Canonical [T, 34, 3] trajectory of sample ``index`` (noise free)."""
    rng = np.random.default_rng([spec.seed, index, 0])
    scale = float(rng.uniform(*spec.body_scale))
    yaw = spec.base_yaw + float(rng.uniform(-spec.yaw_jitter, spec.yaw_jitter))
    c = spec.classes[class_idx]
    first = _run_primitive(c.primitive, c.ranges(), rng, spec.T, scale)
    pos = first.positions(scale)
    if second is not None:
        c2 = spec.classes[second]
        pos2 = _run_primitive(c2.primitive, c2.ranges(), rng, spec.T, scale).positions(scale)
        pos = compose(pos, pos2, spec.T)
    # face a jittered direction around the vertical through the pelvis
    centre = pos[:1, _INDEX["pelvis"], :] * np.array([1.0, 0.0, 1.0])
    R = rot_y(np.array(yaw))
    return (pos - centre) @ R.T + centre


def compose(a, b, T, blend=0.10) -> np.ndarray:
    """First half of ``a`` then the first half of ``b`` (time compressed), with a linear blend."""
    half = T // 2
    from .kernels import resample_time

    fa = resample_time(a.reshape(a.shape[0], -1), half).reshape((half,) + a.shape[1:])
    fb = resample_time(b.reshape(b.shape[0], -1), T - half).reshape((T - half,) + b.shape[1:])
    # continue b from where a ends (pelvis ground position)
    shift = fa[-1, _INDEX["pelvis"]] - fb[0, _INDEX["pelvis"]]
    shift[1] = 0.0
    fb = fb + shift
    out = np.concatenate([fa, fb], axis=0)
    w = max(1, int(round(blend * T)))
    lo = max(0, half - w // 2)
    hi = min(T, lo + w)
    if hi - lo > 1:
        alpha = np.linspace(0.0, 1.0, hi - lo)[:, None, None]
        # straight line between the frames bracketing the window
        out[lo:hi] = (1 - alpha) * out[lo] + alpha * out[hi - 1]
    return out


def render(canonical: np.ndarray, fmt: SkeletonFormat, rng=None, sigma=0.0) -> np.ndarray:
    """Select ``fmt``'s joints ([T, K', 1, C]); 2D drops depth; optional jitter."""
    missing = [j for j in fmt.joints if j not in _INDEX]
    if missing:
        raise GenError(f"{fmt.format_id}: joints {missing} are not in the canonical vocabulary")
    idx = [_INDEX[j] for j in fmt.joints]
    out = canonical[:, idx, : fmt.coord_dims][:, :, None, :].copy()
    if sigma > 0:
        out += rng.normal(0.0, sigma, size=out.shape)
    return out


def _format_stream(fid: str) -> int:
    return zlib.crc32(fid.encode("utf-8"))


@dataclass
class Corpus:
    spec: GenSpec
    sequences: dict  # format_id -> list of RawSequence
    class_names: list

    def manifest(self) -> dict:
        counts = [0] * len(self.class_names)
        first = next(iter(self.sequences.values()), [])
        for s in first:
            counts[min(s.label_ids)] += 1
        return {
            "class_names": self.class_names,
            "counts": counts,
            "formats": list(self.sequences),
            "seed": self.spec.seed,
            "spec": self.spec.to_dict(),
        }


def generate(spec: GenSpec, formats) -> Corpus:
    """Render every sample into every format in ``spec.formats``.

    ``formats`` is a registry (list or dict of SkeletonFormat).  Sample ids
    are shared across formats; each sample's randomness is derived from
    (seed, sample index) so samples are independent of generation order.
    """
    reg = formats if isinstance(formats, dict) else {f.format_id: f for f in formats}
    for fid in spec.formats:
        if fid not in reg:
            raise GenError(f"format {fid!r} is not registered")
    out = {fid: [] for fid in spec.formats}
    index = 0
    n_cls = len(spec.classes)
    for ci, count in enumerate(spec.samples_per_class):
        for _ in range(count):
            pick = np.random.default_rng([spec.seed, index, 1])
            second = None
            if n_cls > 1 and pick.random() < spec.multi_label_frac:
                second = int((ci + 1 + pick.integers(n_cls - 1)) % n_cls)
            canon = canonical_motion(spec, ci, index, second)
            labels = (ci,) if second is None else tuple(sorted({ci, second}))
            sid = f"s{index:06d}"
            for fid in spec.formats:
                rng = np.random.default_rng([spec.seed, index, 2, _format_stream(fid)])
                data = render(canon, reg[fid], rng, spec.noise_sigma)
                out[fid].append(RawSequence(fid, data, labels, sid))
            index += 1
    return Corpus(spec, out, [c.name for c in spec.classes])


def write(corpus: Corpus, out_dir) -> dict:
    """Write ``corpus_<format>.jsonl`` files plus ``manifest.json``; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for fid, seqs in corpus.sequences.items():
        name = f"corpus_{fid}.jsonl"
        write_corpus(out_dir / name, seqs)
        files[fid] = name
    man = corpus.manifest()
    man["files"] = files
    (out_dir / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def sample_manifest(corpus: Corpus) -> list:
    """``{"sample_id", "label_ids"}`` rows (one per generated sample)."""
    first = next(iter(corpus.sequences.values()), [])
    return [{"sample_id": s.sample_id, "label_ids": sorted(s.label_ids)} for s in first]
