"""Two-stream Transformer motion encoder with decoupled projections.

Pipeline per batch:

1. joint / bone / motion arrays are tokenised twice: per frame (temporal
   stream, one token of K*M*3 values per frame) and per unified slot
   (spatial stream, one token of T_max*3 values per slot);
2. each modality has its own two-layer perceptron per stream; the three
   embeddings are averaged (fixed 1/3 or softmax weights) and linearly
   projected;
3. sinusoidal positions (temporal) or learnable slot embeddings (spatial)
   are added and each stream runs L pre-norm encoder layers;
4. max-pooling gives global stream features, three projectors map them to
   the text space, and segment/body-part pooling gives the local features.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import numgraph as ng
from .skeleform import UnifiedSequence, UnifiedSpace, derive_modalities
from . import kernels

FUSION_MODES = ("fixed-equal", "learnable-softmax")
MODALITIES = ("J", "B", "M")

PART_NAMES = ("head", "arms", "spine", "legs")
_PART_KEYWORDS = (
    ("head", ("head", "neck", "nose", "eye", "ear")),
    ("arms", ("shoulder", "elbow", "wrist", "hand", "thumb", "collar")),
    ("legs", ("hip", "knee", "ankle", "foot")),
    ("spine", ("pelvis", "spine")),
)


class EncoderError(ValueError):
    pass


def default_part_map(joints) -> list:
    """Four body parts (head, arms, spine, legs) from canonical joint names."""
    out = []
    for j in joints:
        for part, keys in _PART_KEYWORDS:
            if any(k in j for k in keys):
                out.append(PART_NAMES.index(part))
                break
        else:
            raise EncoderError(f"joint {j!r} has no default body part")
    return out


@dataclass
class EncoderConfig:
    K_unified: int
    M_unified: int = 1
    D_h: int = 32
    L: int = 2
    heads: int = 4
    ffn_mult: int = 4
    D_a: int = 256
    T_max: int = 64
    N_seg: int = 4
    N_part: int = 4
    part_map: list = field(default_factory=list)
    fusion_mode: str = "fixed-equal"
    attn_mask_padding: bool = False
    learnable_padding: bool = False
    use_pos_encoding: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.D_h % self.heads:
            raise EncoderError("D_h must be divisible by heads")
        if self.N_seg < 1 or self.N_part < 1:
            raise EncoderError("N_seg and N_part must be >= 1")
        if self.fusion_mode not in FUSION_MODES:
            raise EncoderError(f"unknown fusion mode {self.fusion_mode!r}")
        self.part_map = [int(p) for p in self.part_map]
        if len(self.part_map) != self.K_unified:
            raise EncoderError(f"part_map covers {len(self.part_map)} slots, expected {self.K_unified}")
        if set(self.part_map) != set(range(self.N_part)):
            raise EncoderError("part_map must use every part index in [0, N_part)")

    @classmethod
    def for_space(cls, space: UnifiedSpace, **kw):
        if "part_map" not in kw:
            kw["part_map"] = default_part_map(space.joints)
        return cls(K_unified=space.K_unified, M_unified=space.M_unified, **kw)

    @property
    def n_slots(self) -> int:
        return self.K_unified * self.M_unified

    def token_parts(self) -> np.ndarray:
        """Part index of every spatial token (slot-major, member-minor)."""
        return np.repeat(np.asarray(self.part_map), self.M_unified)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Batch:
    """Modality arrays [N, T, K, M, 3] plus per-sample slot masks [N, K, M]."""
    J: np.ndarray
    B: np.ndarray
    M: np.ndarray
    valid: np.ndarray
    placeholder: np.ndarray

    @property
    def size(self) -> int:
        return self.J.shape[0]

    @property
    def T(self) -> int:
        return self.J.shape[1]

    def take(self, idx) -> "Batch":
        return Batch(self.J[idx], self.B[idx], self.M[idx], self.valid[idx], self.placeholder[idx])


@dataclass
class FeatureBundle:
    Vt_seq: ng.Node
    Vs_seq: ng.Node
    vg_t: ng.Node
    vg_s: ng.Node
    vg: ng.Node
    v: ng.Node
    v_t: ng.Node
    v_s: ng.Node
    v_t_local: ng.Node
    v_s_local: ng.Node


def prepare_sample(u: UnifiedSequence, space: UnifiedSpace, T_max: int):
    """Resample one unified sequence to ``T_max`` frames and derive its modalities."""
    data = kernels.resample_time(u.data.reshape(u.T, -1), T_max).reshape((T_max,) + u.data.shape[1:])
    ru = UnifiedSequence(data, u.joint_mask, u.label_ids, u.format_id, u.fill_mask, u.strategy, u.sample_id)
    m = derive_modalities(ru, space)
    return m.J, m.B, m.M, u.joint_mask | u.fill_mask, u.placeholder_mask


def stack_samples(prepared) -> Batch:
    cols = list(zip(*prepared))
    return Batch(*(np.stack(c) for c in cols))


def sinusoidal_positions(T, D) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(0, D, 2)[None, :]
    angle = pos / np.power(10000.0, i / D)
    pe = np.zeros((T, D))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : D // 2])
    return pe


def segment_ids(T, n_seg) -> np.ndarray:
    """Contiguous segments; the ``T % n_seg`` longer ones come first."""
    if T < n_seg:
        raise EncoderError(f"T={T} frames cannot fill {n_seg} segments")
    base, extra = divmod(T, n_seg)
    lengths = [base + 1] * extra + [base] * (n_seg - extra)
    return np.repeat(np.arange(n_seg), lengths)


def _glorot(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


class MotionEncoder:
    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        self.cfg = cfg
        self.params = {}
        self._init(np.random.default_rng(seed))

    # parameters

    def _add(self, name, value):
        self.params[name] = ng.param(value, name=name)

    def _mlp(self, rng, prefix, d_in, d_hidden, d_out):
        self._add(prefix + ".W1", _glorot(rng, d_in, d_hidden))
        self._add(prefix + ".b1", np.zeros(d_hidden))
        self._add(prefix + ".W2", _glorot(rng, d_hidden, d_out))
        self._add(prefix + ".b2", np.zeros(d_out))

    def _init(self, rng):
        c = self.cfg
        d = c.D_h
        in_dim = {"t": c.n_slots * 3, "s": c.T_max * 3}
        for s in ("t", "s"):
            for m in MODALITIES:
                self._mlp(rng, f"embed.{s}.{m}", in_dim[s], d, d)
            if c.fusion_mode == "learnable-softmax":
                self._add(f"fuse.{s}.logits", np.zeros(3))
            self._add(f"fuse.{s}.W", _glorot(rng, d, d))
            self._add(f"fuse.{s}.b", np.zeros(d))
        self._add("spe", rng.normal(0.0, 0.02, size=(c.n_slots, d)))
        if c.learnable_padding:
            self._add("placeholder", np.zeros((c.K_unified, 3)))
        for s in ("t", "s"):
            for layer in range(c.L):
                p = f"enc.{s}.{layer}"
                self._add(p + ".ln1.g", np.ones(d))
                self._add(p + ".ln1.b", np.zeros(d))
                self._add(p + ".Wqkv", _glorot(rng, d, 3 * d))
                self._add(p + ".bqkv", np.zeros(3 * d))
                self._add(p + ".Wo", _glorot(rng, d, d))
                self._add(p + ".bo", np.zeros(d))
                self._add(p + ".ln2.g", np.ones(d))
                self._add(p + ".ln2.b", np.zeros(d))
                self._mlp(rng, p + ".ffn", d, c.ffn_mult * d, d)
            if c.L:
                self._add(f"enc.{s}.lnf.g", np.ones(d))
                self._add(f"enc.{s}.lnf.b", np.zeros(d))
        self._mlp(rng, "proj.global", 2 * d, 2 * d, c.D_a)
        self._mlp(rng, "proj.temporal", d, d, c.D_a)
        self._mlp(rng, "proj.spatial", d, d, c.D_a)

    def state_dict(self) -> dict:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict):
        missing = set(self.params) ^ set(state)
        if missing:
            raise EncoderError(f"parameter names differ: {sorted(missing)[:5]}")
        for k, p in self.params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.value.shape:
                raise EncoderError(f"{k}: shape {v.shape} != {p.value.shape}")
            p.value = v.copy()

    def parameters(self):
        return list(self.params.values())

    def n_params(self) -> int:
        return sum(p.value.size for p in self.params.values())

    # forward

    def _p(self, name):
        return self.params[name]

    def mlp(self, prefix, x):
        h = ng.gelu(x @ self._p(prefix + ".W1") + self._p(prefix + ".b1"))
        return h @ self._p(prefix + ".W2") + self._p(prefix + ".b2")

    def fusion_weights(self, stream):
        if self.cfg.fusion_mode == "learnable-softmax":
            w = ng.softmax(self._p(f"fuse.{stream}.logits"))
            return [w[i] for i in range(3)]
        return [1.0 / 3.0] * 3

    def embed_and_fuse(self, batch: Batch, return_parts=False):
        """Fused temporal [N, T, D_h] and spatial [N, K*M, D_h] token sequences."""
        c = self.cfg
        n, t = batch.size, batch.T
        if t > c.T_max:
            raise EncoderError(f"T={t} exceeds T_max={c.T_max}")
        if batch.J.shape[2:] != (c.K_unified, c.M_unified, 3):
            raise EncoderError(f"batch slots {batch.J.shape[2:]} do not match the config")
        arrays = {"J": ng.const(batch.J), "B": ng.const(batch.B), "M": ng.const(batch.M)}
        if c.learnable_padding:
            hole = ng.const(batch.placeholder[:, None, :, :, None].astype(np.float64))
            ph = ng.reshape(self._p("placeholder"), (1, 1, c.K_unified, 1, 3))
            arrays["J"] = arrays["J"] + hole * ph
        out, parts = [], {}
        for s in ("t", "s"):
            embedded = []
            for m in MODALITIES:
                x = arrays[m]
                if s == "t":
                    tok = ng.reshape(x, (n, t, c.n_slots * 3))
                else:
                    tok = ng.reshape(ng.transpose(x, (0, 2, 3, 1, 4)), (n, c.n_slots, t * 3))
                    if t < c.T_max:
                        tok = ng.concat([tok, ng.const(np.zeros((n, c.n_slots, (c.T_max - t) * 3)))], axis=2)
                embedded.append(self.mlp(f"embed.{s}.{m}", tok))
            parts[s] = embedded
            w = self.fusion_weights(s)
            fused = embedded[0] * w[0] + embedded[1] * w[1] + embedded[2] * w[2]
            parts[s + "_fused"] = fused
            out.append(fused @ self._p(f"fuse.{s}.W") + self._p(f"fuse.{s}.b"))
        if return_parts:
            return out[0], out[1], parts
        return out[0], out[1]

    def attention(self, prefix, x, key_bias):
        c = self.cfg
        n, s, d = x.shape
        dh = d // c.heads
        qkv = x @ self._p(prefix + ".Wqkv") + self._p(prefix + ".bqkv")

        def heads(part):
            sl = qkv[:, :, part * d : (part + 1) * d]
            return ng.transpose(ng.reshape(sl, (n, s, c.heads, dh)), (0, 2, 1, 3))

        q, k, v = heads(0), heads(1), heads(2)
        scores = ng.matmul(q, ng.transpose(k)) * (1.0 / np.sqrt(dh))
        if key_bias is not None:
            scores = scores + ng.const(key_bias[:, None, None, :])
        att = ng.softmax(scores)
        o = ng.reshape(ng.transpose(ng.matmul(att, v), (0, 2, 1, 3)), (n, s, d))
        return o @ self._p(prefix + ".Wo") + self._p(prefix + ".bo")

    def encoder_stack(self, stream, x, key_bias=None):
        c = self.cfg
        for layer in range(c.L):
            p = f"enc.{stream}.{layer}"
            h = ng.layer_norm(x, self._p(p + ".ln1.g"), self._p(p + ".ln1.b"), c.ln_eps)
            x = x + self.attention(p, h, key_bias)
            h = ng.layer_norm(x, self._p(p + ".ln2.g"), self._p(p + ".ln2.b"), c.ln_eps)
            x = x + self.mlp(p + ".ffn", h)
        if c.L:
            x = ng.layer_norm(x, self._p(f"enc.{stream}.lnf.g"), self._p(f"enc.{stream}.lnf.b"), c.ln_eps)
        return x

    def encode_streams(self, H_mmt, H_mms, valid=None):
        c = self.cfg
        t = H_mmt.shape[1]
        if c.use_pos_encoding:
            H_mmt = H_mmt + ng.const(sinusoidal_positions(t, c.D_h))
        H_mms = H_mms + self._p("spe")
        key_bias = None
        if c.attn_mask_padding and valid is not None:
            key_bias = np.where(valid.reshape(valid.shape[0], -1), 0.0, -1e9)
        return self.encoder_stack("t", H_mmt), self.encoder_stack("s", H_mms, key_bias)

    def pool_and_project(self, Vt_seq, Vs_seq) -> FeatureBundle:
        c = self.cfg
        t = Vt_seq.shape[1]
        seg = segment_ids(t, c.N_seg)
        vg_t = ng.max_pool(Vt_seq, axis=1)
        vg_s = ng.max_pool(Vs_seq, axis=1)
        vg = ng.concat([vg_t, vg_s], axis=1)
        h_t = ng.group_max(Vt_seq, seg, c.N_seg)
        h_s = ng.group_max(Vs_seq, c.token_parts(), c.N_part)
        return FeatureBundle(
            Vt_seq, Vs_seq, vg_t, vg_s, vg,
            v=self.mlp("proj.global", vg),
            v_t=self.mlp("proj.temporal", vg_t),
            v_s=self.mlp("proj.spatial", vg_s),
            v_t_local=self.mlp("proj.temporal", h_t),
            v_s_local=self.mlp("proj.spatial", h_s),
        )

    def forward(self, batch: Batch) -> FeatureBundle:
        H_mmt, H_mms = self.embed_and_fuse(batch)
        Vt, Vs = self.encode_streams(H_mmt, H_mms, batch.valid)
        return self.pool_and_project(Vt, Vs)

    def embed(self, batch: Batch, chunk: int = 256) -> np.ndarray:
        """Global text-space features ``v`` as a plain array, in chunks."""
        out = []
        for lo in range(0, batch.size, chunk):
            out.append(self.forward(batch.take(slice(lo, lo + chunk))).v.value)
        return np.concatenate(out, axis=0)
