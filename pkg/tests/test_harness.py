import json
import math

import numpy as np
import pytest

from hetskel import harness as H
from hetskel import numgraph as ng
from hetskel.labelspace import ClusteredLabelSpace
from hetskel.textbank import make_bank

from conftest import write_config


def opt(**kw):
    return H.OptimConfig(**kw)


def test_lr_schedule_points():
    o = opt(lr_peak=1e-4, warmup_epochs=16, total_epochs=400)
    assert H.lr_schedule(0, o) == 0.0
    assert H.lr_schedule(16, o) == pytest.approx(1e-4, rel=1e-15)
    assert H.lr_schedule(400, o) == pytest.approx(0.0, abs=1e-20)
    assert H.lr_schedule(8, o) == pytest.approx(5e-5)
    assert H.lr_schedule(208, o) == pytest.approx(5e-5)


def test_lr_schedule_continuous_at_warmup():
    o = opt(lr_peak=2e-3, warmup_epochs=3, total_epochs=10)
    eps = 1e-9
    assert abs(H.lr_schedule(3 - eps, o) - H.lr_schedule(3 + eps, o)) < 1e-9
    xs = np.linspace(3, 10, 50)
    ys = [H.lr_schedule(x, o) for x in xs]
    assert all(a >= b for a, b in zip(ys, ys[1:]))


def test_optim_validation():
    with pytest.raises(H.ConfigError):
        opt(warmup_epochs=5, total_epochs=5)
    with pytest.raises(H.ConfigError):
        opt(lr_peak=0)
    opt(batch_size=1)  # allowed with a warning


def test_adam_first_step_is_sign_step():
    p = ng.param(np.array([1.0, -2.0, 0.5]))
    p.grad = np.array([0.3, -4.0, 0.0])
    adam = H.Adam({"p": p})
    adam.step(0.1)
    # m_hat = g, v_hat = g^2 on the first step
    expected = np.array([1.0, -2.0, 0.5]) - 0.1 * np.array([0.3, -4.0, 0.0]) / (np.abs([0.3, -4.0, 0.0]) + 1e-8)
    assert np.allclose(p.value, expected, rtol=0, atol=1e-12)


def test_adam_converges_on_quadratic():
    p = ng.param(np.array([3.0, -1.0]))
    adam = H.Adam({"p": p})
    for _ in range(500):
        p.zero_grad()
        ng.backward(ng.sum_(p * p))
        adam.step(0.05)
    assert np.abs(p.value).max() < 1e-2


def test_config_errors(tmp_path):
    with pytest.raises(H.ConfigError):
        H.load_run_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(H.ConfigError):
        H.load_run_config(bad)
    with pytest.raises(H.ConfigError):
        H.RunConfig.from_dict({"corpus": [], "bank": "b", "colour": 1})
    with pytest.raises(H.ConfigError):
        H.RunConfig.from_dict({"corpus": [], "bank": "b", "strategy": "mirror"})
    with pytest.raises(H.ConfigError):
        H.RunConfig.from_dict({"corpus": [], "bank": "b", "loss": {"tau": -1}})
    with pytest.raises(H.ConfigError):
        H.RunConfig.from_dict({"corpus": [], "bank": "b", "optim": {"momentum": 0.9}})


def test_paths_resolve_relative_to_config(tmp_path):
    path = tmp_path / "sub" / "c.json"
    path.parent.mkdir()
    path.write_text(json.dumps({"corpus": "a.jsonl", "bank": "b.json", "out_dir": "o"}))
    cfg = H.load_run_config(path, seed=7)
    assert cfg.corpus == [str(tmp_path / "sub" / "a.jsonl")]
    assert cfg.out_dir == str(tmp_path / "sub" / "o") and cfg.seed == 7


def test_cluster_bank():
    bank = make_bank([(i, f"n{i}", np.eye(4)[i]) for i in range(4)], 4, unseen=[2, 3])
    space = ClusteredLabelSpace(2, {0: 0, 1: 0, 2: 1, 3: 1}, np.array([[1, 1, 0, 0], [0, 0, 1, 1.0]]), {0: 1, 1: 2})
    cb = H.cluster_bank(space, bank)
    assert cb.ids == (0, 1) and cb.names == {0: "n1", 1: "n2"}
    assert np.allclose(cb.vectors[0], [2**-0.5, 2**-0.5, 0, 0])
    assert cb.unseen == frozenset({1})


def test_smoke_training_reduces_loss(tmp_path):
    from hetskel import recipes

    recipes.prepare_toy_data(tmp_path, ["kinect-v2"], [4] + [0] * 7, T=8, dim=16, noise_sigma=0.0)
    conf = write_config(tmp_path, "smoke", corpus=["corpus_kinect-v2.jsonl"], split=None, val_frac=0.0,
                        optim={"lr_peak": 1e-2, "warmup_epochs": 0, "total_epochs": 6, "batch_size": 2})
    cfg = H.load_run_config(conf)
    H.train(cfg)
    epochs = [json.loads(l) for l in open(tmp_path / "smoke" / "epochs.jsonl")]
    assert len(epochs) == 6
    assert epochs[5]["L_total_mean"] < epochs[0]["L_total_mean"]


def test_training_is_deterministic_and_logs_components(tiny_data):
    a = H.train(H.load_run_config(write_config(tiny_data, "det_a")))
    b = H.train(H.load_run_config(write_config(tiny_data, "det_b")))
    assert a.final_path.read_bytes() == b.final_path.read_bytes()
    assert a.best_path.read_bytes() == b.best_path.read_bytes()
    inst = H.train(H.load_run_config(write_config(
        tiny_data, "det_inst", loss={"lambda_ts": 0, "lambda_consis": 0, "lambda_part": 0})))
    rows_a = [json.loads(l) for l in open(tiny_data / "det_a" / "metrics.jsonl")]
    rows_i = [json.loads(l) for l in open(tiny_data / "det_inst" / "metrics.jsonl")]
    keys = {"epoch", "step", "lr", "L_total", "L_instance", "L_ts", "L_consis", "L_part"}
    assert set(rows_a[0]) == keys and set(rows_i[0]) == keys
    assert rows_a != rows_i
    assert all(r["L_total"] == pytest.approx(r["L_instance"], abs=0) for r in rows_i)
    assert inst.final_path.exists()


def test_resume_matches_uninterrupted(tiny_data):
    full = H.train(H.load_run_config(write_config(tiny_data, "res_full")))
    cfg = H.load_run_config(write_config(tiny_data, "res_part"))
    part = H.train(cfg, stop_after=1)
    assert part.epochs == 1 and not (tiny_data / "res_part" / "final.ckpt").exists()
    done = H.train(cfg, resume=True)
    assert done.final_path.read_bytes() == full.final_path.read_bytes()
    log_full = (tiny_data / "res_full" / "metrics.jsonl").read_text()
    assert (tiny_data / "res_part" / "metrics.jsonl").read_text() == log_full


def test_checkpoint_roundtrip_gives_identical_eval(tiny_data):
    cfg = H.load_run_config(write_config(tiny_data, "rt"))
    res = H.train(cfg)
    r1 = H.run_eval(cfg, res.final_path)
    copy = tiny_data / "rt" / "copy.ckpt"
    ng.checkpoint.save(copy, ng.checkpoint.load(res.final_path))
    r2 = H.run_eval(cfg, copy)
    assert r1.to_dict() == r2.to_dict()
    assert r1.n_samples == 2 * 3 * 2  # two formats x three classes x two test samples


def test_non_finite_loss_aborts(tiny_data, monkeypatch):
    def boom(*a, **k):
        raise ng.NumGraphError("non-finite result in exp")

    monkeypatch.setattr(H, "total_loss", boom)
    with pytest.raises(H.TrainingError, match="epoch 0 step 0"):
        H.train(H.load_run_config(write_config(tiny_data, "nan")))


def test_bank_dim_mismatch(tiny_data):
    cfg = H.load_run_config(write_config(tiny_data, "dim", encoder={"D_h": 8, "L": 1, "heads": 2, "T_max": 8, "D_a": 32}))
    with pytest.raises(H.ConfigError):
        H.train(cfg)


def test_gradcheck_model_small():
    rep = H.gradcheck_model(K=3, T=4, batch=3, D_a=6, encoder={"D_h": 4, "heads": 1, "N_seg": 2, "N_part": 2})
    assert rep.passed and rep.max_rel_err < 1e-4 and math.isfinite(rep.max_rel_err)
