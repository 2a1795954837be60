"""Loop-shaped numeric kernels.

Each kernel has a vectorised numpy implementation and a numba ``@njit`` loop
implementation with identical results.  The numba path is used when numba
imports and ``HETSKEL_NO_NUMBA`` is unset (or ``0``).
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

DISABLED = os.environ.get("HETSKEL_NO_NUMBA", "0") not in ("", "0")
HAVE_NUMBA = numba is not None and not DISABLED
BACKEND = "numba" if HAVE_NUMBA else "numpy"


# time resampling

def _resample_np(data, t_out):
    t_in = data.shape[0]
    if t_in == t_out:
        return data.copy()
    if t_in == 1:
        return np.repeat(data, t_out, axis=0)
    pos = np.arange(t_out) * (t_in - 1) / (t_out - 1) if t_out > 1 else np.zeros(1)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, t_in - 1)
    hi = np.minimum(lo + 1, t_in - 1)
    w = (pos - lo).reshape((-1,) + (1,) * (data.ndim - 1))
    return data[lo] * (1.0 - w) + data[hi] * w


def _resample_loop(data, t_out):
    t_in = data.shape[0]
    flat = data.reshape(t_in, -1)
    out = np.empty((t_out, flat.shape[1]))
    for t in range(t_out):
        if t_in == 1:
            out[t] = flat[0]
            continue
        pos = t * (t_in - 1) / (t_out - 1) if t_out > 1 else 0.0
        lo = min(int(np.floor(pos)), t_in - 1)
        hi = min(lo + 1, t_in - 1)
        w = pos - lo
        for j in range(flat.shape[1]):
            out[t, j] = flat[lo, j] * (1.0 - w) + flat[hi, j] * w
    return out


def _resample_nb_wrapper(jitted):
    def resample(data, t_out):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.shape[0] == t_out:
            return data.copy()
        return jitted(data, t_out).reshape((t_out,) + data.shape[1:])
    return resample


# bone and motion modalities

def _bone_motion_np(joints, parent, valid):
    """joints [T,K,M,3]; parent [K] slot index; valid [K,M] bool."""
    bone = joints - joints[:, parent]
    bone = np.where(valid[None, :, :, None] & valid[parent][None, :, :, None], bone, 0.0)
    bone[:, parent == np.arange(parent.size)] = 0.0
    motion = np.zeros_like(joints)
    motion[1:] = joints[1:] - joints[:-1]
    motion = np.where(valid[None, :, :, None], motion, 0.0)
    return bone, motion


def _bone_motion_loop(joints, parent, valid):
    t_len, k_len, m_len, c_len = joints.shape
    bone = np.zeros_like(joints)
    motion = np.zeros_like(joints)
    for t in range(t_len):
        for k in range(k_len):
            p = parent[k]
            for m in range(m_len):
                if not valid[k, m]:
                    continue
                for c in range(c_len):
                    if p != k and valid[p, m]:
                        bone[t, k, m, c] = joints[t, k, m, c] - joints[t, p, m, c]
                    if t > 0:
                        motion[t, k, m, c] = joints[t, k, m, c] - joints[t - 1, k, m, c]
    return bone, motion


# grouped max pooling (segments and body parts)

def _group_max_np(x, group, n_groups):
    """x [B,N,D]; group [N] in [0,G).  Returns values [B,G,D] and source index [B,G,D]."""
    b, _, d = x.shape
    vals = np.empty((b, n_groups, d))
    idx = np.empty((b, n_groups, d), dtype=np.int64)
    for g in range(n_groups):
        members = np.flatnonzero(group == g)
        sub = x[:, members, :]
        arg = np.argmax(sub, axis=1)
        idx[:, g, :] = members[arg]
        vals[:, g, :] = np.take_along_axis(sub, arg[:, None, :], axis=1)[:, 0, :]
    return vals, idx


def _group_max_loop(x, group, n_groups):
    b, n, d = x.shape
    vals = np.full((b, n_groups, d), -np.inf)
    idx = np.full((b, n_groups, d), -1, dtype=np.int64)
    for bi in range(b):
        for i in range(n):
            g = group[i]
            for j in range(d):
                if x[bi, i, j] > vals[bi, g, j]:
                    vals[bi, g, j] = x[bi, i, j]
                    idx[bi, g, j] = i
    return vals, idx


def _group_max_back_np(g, idx, n):
    b, _, d = g.shape
    out = np.zeros((b, n, d))
    bi = np.arange(b)[:, None, None]
    dj = np.arange(d)[None, None, :]
    np.add.at(out, (np.broadcast_to(bi, idx.shape), idx, np.broadcast_to(dj, idx.shape)), g)
    return out


def _group_max_back_loop(g, idx, n):
    b, n_groups, d = g.shape
    out = np.zeros((b, n, d))
    for bi in range(b):
        for gi in range(n_groups):
            for j in range(d):
                out[bi, idx[bi, gi, j], j] += g[bi, gi, j]
    return out


# capacity-constrained greedy assignment for balanced k-means

def _balanced_assign_py(order, n, k):
    """Walk (point, cluster) pairs in ``order`` (flat index into an n x k matrix,
    ascending distance) and take each pair whose point is free and whose
    cluster still has room.  At most ``n % k`` clusters may exceed ``n // k``.
    """
    base, n_big = divmod(n, k)
    assign = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(k, dtype=np.int64)
    big = 0
    left = n
    for flat in order:
        i, c = divmod(int(flat), k)
        if assign[i] >= 0:
            continue
        s = sizes[c]
        if s < base:
            pass
        elif s == base and big < n_big:
            big += 1
        else:
            continue
        assign[i] = c
        sizes[c] = s + 1
        left -= 1
        if left == 0:
            break
    return assign


def _balanced_assign_loop(order, n, k):
    base = n // k
    n_big = n % k
    assign = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(k, dtype=np.int64)
    big = 0
    left = n
    for q in range(order.size):
        flat = order[q]
        i = flat // k
        c = flat % k
        if assign[i] >= 0:
            continue
        s = sizes[c]
        if s >= base:
            if s == base and big < n_big:
                big += 1
            else:
                continue
        assign[i] = c
        sizes[c] = s + 1
        left -= 1
        if left == 0:
            break
    return assign


NUMPY_IMPLS = {
    "resample_time": _resample_np,
    "bone_motion": _bone_motion_np,
    "group_max": _group_max_np,
    "group_max_backward": _group_max_back_np,
    "balanced_assign": _balanced_assign_py,
}

if numba is not None:
    _jit = numba.njit(cache=True)
    NUMBA_IMPLS = {
        "resample_time": _resample_nb_wrapper(_jit(_resample_loop)),
        "bone_motion": _jit(_bone_motion_loop),
        "group_max": _jit(_group_max_loop),
        "group_max_backward": _jit(_group_max_back_loop),
        "balanced_assign": _jit(_balanced_assign_loop),
    }
else:  # pragma: no cover
    NUMBA_IMPLS = {}

_ACTIVE = NUMBA_IMPLS if HAVE_NUMBA else NUMPY_IMPLS


def resample_time(data, t_out):
    """Linear interpolation along axis 0 onto ``t_out`` evenly spaced frames."""
    return _ACTIVE["resample_time"](np.asarray(data, dtype=np.float64), int(t_out))


def bone_motion(joints, parent, valid):
    return _ACTIVE["bone_motion"](
        np.ascontiguousarray(joints, dtype=np.float64),
        np.ascontiguousarray(parent, dtype=np.int64),
        np.ascontiguousarray(valid, dtype=np.bool_),
    )


def group_max(x, group, n_groups):
    return _ACTIVE["group_max"](
        np.ascontiguousarray(x, dtype=np.float64), np.ascontiguousarray(group, dtype=np.int64), int(n_groups)
    )


def group_max_backward(g, idx, n):
    return _ACTIVE["group_max_backward"](np.ascontiguousarray(g, dtype=np.float64), idx, int(n))


def balanced_assign(order, n, k):
    return _ACTIVE["balanced_assign"](np.ascontiguousarray(order, dtype=np.int64), int(n), int(k))
