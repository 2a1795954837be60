"""Multi-grained motion/text contrastive objectives.

The core term contrasts each positive pair against every other sample's
cross-modal *and* same-modal embedding::

    L_C(x_i, y_i) = -log  e^{s(x_i,y_i)/tau}
                          / (e^{s(x_i,y_i)/tau} + sum_{k!=i} [e^{s(x_i,y_k)/tau} + e^{s(x_i,x_k)/tau}])

with ``s`` the cosine similarity.  It is evaluated as
``log1p(sum_k exp((s_neg - s_pos) / tau))`` which is algebraically identical
and exactly zero when there are no negatives.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numgraph as ng


@dataclass(frozen=True)
class LossWeights:
    tau: float = 0.4
    lambda_ts: float = 1.0
    lambda_consis: float = 0.2
    lambda_part: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("temperature must be positive")
        if min(self.lambda_ts, self.lambda_consis, self.lambda_part) < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def instance_only(cls, tau=0.4):
        return cls(tau, 0.0, 0.0, 0.0)


def cosine(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("cosine of a zero vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def contrastive_terms(x, y, tau, exclude=None) -> ng.Node:
    """``L_C(x_i, y_i)`` for every row ``i``.

    Inputs are [N, D] or stacked [G, N, D] groups (result [N] or [G, N]).
    ``exclude`` is an optional boolean [N, N] matrix of extra pairs to drop
    from the negatives (false-negative masking); the diagonal is always dropped.
    """
    x, y = ng.as_node(x), ng.as_node(y)
    if x.shape != y.shape or x.ndim not in (2, 3):
        raise ng.NumGraphError(f"contrastive pair shapes {x.shape} and {y.shape} differ")
    n = x.shape[-2]
    keep = 1.0 - np.eye(n)
    if exclude is not None:
        keep = keep * ~np.asarray(exclude, dtype=bool)
    xn, yn = ng.l2_normalize(x), ng.l2_normalize(y)
    s_xy = ng.matmul(xn, ng.transpose(yn))
    s_xx = ng.matmul(xn, ng.transpose(xn))
    pos = ng.sum_(s_xy * ng.const(np.eye(n)), axis=-1, keepdims=True)
    neg = ng.exp((s_xy - pos) * (1.0 / tau)) + ng.exp((s_xx - pos) * (1.0 / tau))
    return ng.log1p(ng.sum_(neg * ng.const(keep), axis=-1))


def info_nce(xs, ys, i, tau) -> float:
    return float(contrastive_terms(xs, ys, tau).value[i])


def symm_loss(x, y, tau, exclude=None) -> ng.Node:
    """Mean of both contrastive directions; per group for stacked inputs."""
    x, y = ng.as_node(x), ng.as_node(y)
    n = x.shape[-2]
    both = contrastive_terms(x, y, tau, exclude) + contrastive_terms(y, x, tau, exclude)
    return ng.sum_(both, axis=-1) * (1.0 / (2 * n))


def total_loss(bundle, a, w: LossWeights, exclude=None):
    """Weighted sum of instance, stream, consistency and part alignment.

    ``bundle`` needs ``v``, ``v_t``, ``v_s`` ([N, D_a]) and ``v_t_local`` /
    ``v_s_local`` ([N, parts, D_a]) nodes; ``a`` holds one label embedding per
    sample.  Returns the total node and a dict of the four component nodes.

    All symmetric terms are evaluated as one stacked group so the graph stays
    small enough for finite-difference checking of whole models.
    """
    a = ng.as_node(a)
    if a.shape != bundle.v.shape:
        raise ng.NumGraphError(f"label embeddings {a.shape} do not match features {bundle.v.shape}")
    n_seg = bundle.v_t_local.shape[1]
    n_part = bundle.v_s_local.shape[1]
    xs = ng.concat([
        ng.stack([bundle.v, bundle.v_t, bundle.v_s, bundle.v_t]),
        ng.transpose(bundle.v_t_local, (1, 0, 2)),
        ng.transpose(bundle.v_s_local, (1, 0, 2)),
    ], axis=0)
    ys = ng.concat([
        ng.stack([a, a, a, bundle.v_s]),
        ng.reshape(a, (1,) + a.shape) + ng.const(np.zeros((n_seg + n_part, 1, 1))),
    ], axis=0)
    s = symm_loss(xs, ys, w.tau, exclude)

    inst = s[0]
    ts = ng.sum_(s[1:3]) * 0.5
    consis = s[3]
    part = (ng.sum_(s[4 : 4 + n_seg]) * (1.0 / n_seg) + ng.sum_(s[4 + n_seg :]) * (1.0 / n_part)) * 0.5
    coef = np.concatenate([
        [1.0, 0.5 * w.lambda_ts, 0.5 * w.lambda_ts, w.lambda_consis],
        np.full(n_seg, 0.5 * w.lambda_part / n_seg),
        np.full(n_part, 0.5 * w.lambda_part / n_part),
    ])
    total = ng.sum_(s * ng.const(coef))
    return total, {"L_instance": inst, "L_ts": ts, "L_consis": consis, "L_part": part}
