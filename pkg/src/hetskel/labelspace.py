"""Label-space construction: balanced clustering, stratified split, frequency strata."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

MANY, MEDIUM, FEW = "many", "medium", "few"


@dataclass
class ClusteredLabelSpace:
    k: int
    assignment: dict  # raw label id -> cluster id
    centroids: np.ndarray  # [k, D]
    cluster_names: dict  # cluster id -> representative raw label id
    iterations: int = 0

    def sizes(self) -> np.ndarray:
        return np.bincount(list(self.assignment.values()), minlength=self.k)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "assignment": {str(r): c for r, c in sorted(self.assignment.items())},
            "cluster_names": {str(c): r for c, r in sorted(self.cluster_names.items())},
            "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            int(d["k"]),
            {int(r): int(c) for r, c in d["assignment"].items()},
            np.asarray(d["centroids"], dtype=np.float64),
            {int(c): int(r) for c, r in d["cluster_names"].items()},
        )


@dataclass
class SplitSpec:
    train_ids: list
    test_ids: list
    strata: dict = field(default_factory=dict)  # cluster id -> many/medium/few

    def to_dict(self) -> dict:
        return {
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
            "strata": {str(c): s for c, s in sorted(self.strata.items())},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["train_ids"]), list(d["test_ids"]), {int(c): s for c, s in d.get("strata", {}).items()})


def _sq_dists(x, c):
    return np.maximum((x * x).sum(1)[:, None] - 2 * x @ c.T + (c * c).sum(1)[None, :], 0.0)


def kmeans_pp_init(x, k, rng) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = _sq_dists(x, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every remaining point coincides with a centre
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def balanced_kmeans(vectors, k, seed=0, max_iter=100, label_ids=None) -> ClusteredLabelSpace:
    """k-means with hard size balance (sizes differ by at most one).

    Assignment walks all (point, centre) pairs by ascending distance and
    gives each point the nearest centre that still has capacity.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if k <= 0 or k > n:
        raise ValueError(f"need 0 < k <= n, got k={k}, n={n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite label vectors")
    label_ids = list(range(n)) if label_ids is None else [int(i) for i in label_ids]
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(x, k, rng)
    assign = None
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        order = np.argsort(d.ravel(), kind="stable")
        new = kernels.balanced_assign(order, n, k)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        centroids = np.array([x[assign == c].mean(axis=0) for c in range(k)])
    d = _sq_dists(x, centroids)
    names = {}
    for c in range(k):
        members = np.flatnonzero(assign == c)
        names[c] = label_ids[members[np.argmin(d[members, c])]]
    return ClusteredLabelSpace(
        k, {label_ids[i]: int(assign[i]) for i in range(n)}, centroids, names, it
    )


def within_cluster_cost(x, assign) -> float:
    x = np.asarray(x, dtype=np.float64)
    assign = np.asarray(assign)
    return float(sum(((x[assign == c] - x[assign == c].mean(0)) ** 2).sum() for c in np.unique(assign)))


def primary_cluster(cluster_ids) -> int:
    return min(cluster_ids)


def stratified_split(samples, frac=0.70, seed=0) -> SplitSpec:
    """Split ``(sample_id, cluster_ids)`` pairs class by class.

    Each sample is grouped under its lowest cluster id; within a group a seeded
    shuffle sends the first ``floor(frac * n)`` samples (at least one) to train.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty corpus")
    groups = {}
    for sid, cids in samples:
        cids = list(cids)
        if not cids:
            raise ValueError(f"sample {sid!r} has no cluster ids")
        groups.setdefault(primary_cluster(cids), []).append(sid)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in sorted(groups):
        ids = sorted(groups[c])
        order = rng.permutation(len(ids))
        n_train = max(1, math.floor(round(frac * len(ids), 9)))
        train += [ids[i] for i in order[:n_train]]
        test += [ids[i] for i in order[n_train:]]
    return SplitSpec(sorted(train), sorted(test))


def stratify_frequency(counts: dict) -> dict:
    """Descending count (ties: ascending id): first ceil(10%) many, next ceil(30%) medium, rest few."""
    order = sorted(counts, key=lambda c: (-counts[c], c))
    k = len(order)
    n_many = math.ceil(round(0.10 * k, 9))
    n_med = math.ceil(round(0.30 * k, 9))
    out = {}
    for rank, c in enumerate(order):
        out[c] = MANY if rank < n_many else MEDIUM if rank < n_many + n_med else FEW
    return out
