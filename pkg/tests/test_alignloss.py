import math
from types import SimpleNamespace

import numpy as np
import pytest

from hetskel import alignloss as al
from hetskel import numgraph as ng


def lc_oracle(xs, ys, i, tau):
    """Direct scalar evaluation of the contrastive term, one exponential at a time."""
    def cos(a, b):
        return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

    pos = math.exp(cos(xs[i], ys[i]) / tau)
    den = pos
    for k in range(len(xs)):
        if k != i:
            den += math.exp(cos(xs[i], ys[k]) / tau) + math.exp(cos(xs[i], xs[k]) / tau)
    return -math.log(pos / den)


def symm_oracle(x, y, tau):
    n = len(x)
    return sum(lc_oracle(x, y, i, tau) + lc_oracle(y, x, i, tau) for i in range(n)) / (2 * n)


def test_cosine_examples():
    x = np.array([0.3, -2.0, 5.0])
    assert al.cosine(x, x) == pytest.approx(1.0, abs=1e-15)
    assert al.cosine([1, 0], [0, 1]) == 0.0
    assert al.cosine([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    with pytest.raises(ValueError):
        al.cosine([0, 0], [1, 0])


def test_info_nce_single_sample_is_zero():
    x = np.array([[0.2, 0.4, -1.0]])
    assert al.info_nce(x, np.array([[1.0, 0.0, 0.0]]), 0, 0.4) == 0.0


def test_info_nce_orthonormal_hand_value():
    e = np.eye(2)
    expected = -math.log(math.e / (math.e + 2))
    assert expected == pytest.approx(0.55144, abs=1e-5)
    assert al.info_nce(e, e, 0, 1.0) == pytest.approx(expected, abs=1e-12)
    assert lc_oracle(e, e, 0, 1.0) == pytest.approx(expected, abs=1e-12)
    assert float(al.symm_loss(e, e, 1.0).value) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_info_nce_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 7)), int(rng.integers(2, 6))
    x, y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    tau = float(rng.uniform(0.1, 2.0))
    for i in range(n):
        assert al.info_nce(x, y, i, tau) == pytest.approx(lc_oracle(x, y, i, tau), rel=1e-12, abs=1e-12)
    assert float(al.symm_loss(x, y, tau).value) == pytest.approx(symm_oracle(x, y, tau), rel=1e-12)


def test_symm_loss_identical_single():
    x = np.array([[1.0, 2.0]])
    assert float(al.symm_loss(x, x, 0.4).value) == 0.0


def test_symm_loss_swap_exact():
    rng = np.random.default_rng(7)
    x, y = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    assert float(al.symm_loss(x, y, 0.4).value) == float(al.symm_loss(y, x, 0.4).value)


def test_temperature_monotone_at_optimum():
    e = np.eye(4)
    vals = [al.info_nce(e, e, 0, tau) for tau in (2.0, 1.0, 0.5, 0.25, 0.1)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_false_negative_mask_drops_pairs():
    x = np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]])
    y = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    same = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=bool)
    masked = al.contrastive_terms(x, y, 0.4, exclude=same).value
    plain = al.contrastive_terms(x, y, 0.4).value
    assert masked[0] < plain[0] and masked[2] == pytest.approx(plain[2])


def random_bundle(rng, n=4, d=6, n_seg=3, n_part=2, requires_grad=False):
    make = ng.param if requires_grad else ng.const
    return SimpleNamespace(
        v=make(rng.normal(size=(n, d))),
        v_t=make(rng.normal(size=(n, d))),
        v_s=make(rng.normal(size=(n, d))),
        v_t_local=make(rng.normal(size=(n, n_seg, d))),
        v_s_local=make(rng.normal(size=(n, n_part, d))),
    )


def test_total_loss_components_compose():
    rng = np.random.default_rng(11)
    b = random_bundle(rng)
    a = rng.normal(size=(4, 6))
    w = al.LossWeights(0.4, 1.0, 0.2, 0.5)
    total, comp = al.total_loss(b, a, w)
    tau = w.tau
    inst = symm_oracle(b.v.value, a, tau)
    ts = 0.5 * (symm_oracle(b.v_t.value, a, tau) + symm_oracle(b.v_s.value, a, tau))
    consis = symm_oracle(b.v_t.value, b.v_s.value, tau)
    part = 0.5 * (
        np.mean([symm_oracle(b.v_t_local.value[:, j], a, tau) for j in range(3)])
        + np.mean([symm_oracle(b.v_s_local.value[:, k], a, tau) for k in range(2)])
    )
    for name, ref in [("L_instance", inst), ("L_ts", ts), ("L_consis", consis), ("L_part", part)]:
        assert float(comp[name].value) == pytest.approx(ref, rel=1e-12)
    assert float(total.value) == pytest.approx(inst + 1.0 * ts + 0.2 * consis + 0.5 * part, rel=1e-12)


def test_total_loss_zero_weights_and_single_sample():
    rng = np.random.default_rng(2)
    b = random_bundle(rng)
    a = rng.normal(size=(4, 6))
    total, comp = al.total_loss(b, a, al.LossWeights(0.4, 0, 0, 0))
    assert float(total.value) == float(comp["L_instance"].value)
    b1 = random_bundle(rng, n=1)
    total, comp = al.total_loss(b1, rng.normal(size=(1, 6)), al.LossWeights())
    assert float(total.value) == 0.0 and all(float(c.value) == 0.0 for c in comp.values())


def test_total_loss_shape_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ng.NumGraphError):
        al.total_loss(random_bundle(rng), rng.normal(size=(4, 5)), al.LossWeights())
    with pytest.raises(ValueError):
        al.LossWeights(tau=0.0)


def test_symm_loss_gradcheck_two_samples():
    rng = np.random.default_rng(5)
    x, y = ng.param(rng.normal(size=(2, 3))), ng.param(rng.normal(size=(2, 3)))
    rep = ng.grad_check(lambda: al.symm_loss(x, y, 0.4), [x, y], step=1e-4, tol=1e-5)
    assert rep.passed, rep


def test_total_loss_gradcheck():
    rng = np.random.default_rng(6)
    b = random_bundle(rng, requires_grad=True)
    a = rng.normal(size=(4, 6))
    params = [b.v, b.v_t, b.v_s, b.v_t_local, b.v_s_local]
    rep = ng.grad_check(lambda: al.total_loss(b, a, al.LossWeights())[0], params, step=1e-4, tol=1e-6)
    assert rep.passed, rep
