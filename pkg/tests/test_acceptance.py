"""Acceptance gate: ten numbered end-to-end criteria, one test each.

Each test prints a single PASS line on success (visible with -s or in the
-v test listing); tolerances and runtime caps are asserted inside the tests.
"""

import io
import json
import time

import numpy as np
import pytest

from adaptgraph import tensor as T
from adaptgraph.checkpoint import load_checkpoint, load_state, save_checkpoint, state_dict
from adaptgraph.cli import main
from adaptgraph.data import SynthSpec, make_windows, synth_generate, write_dataset
from adaptgraph.graph import knn
from adaptgraph.kernels import MakConfig, MultiHeadAdaptiveKernel
from adaptgraph.network import (ModelConfig, Variant, build, count_macs,
                                count_params)
from adaptgraph.tensor import Tensor
from adaptgraph.training import EarlyStopper, cosine_lr, predict, sgd_step
from adaptgraph.nn import Parameter


def announce(n, text):
    print(f"PASS criterion {n}: {text}")


# ---------------------------------------------------------------------
# 1. KNN against a brute-force oracle
# ---------------------------------------------------------------------

def test_criterion_01_knn_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    for trial in range(100):
        n = int(rng.integers(20, 201))
        x = rng.uniform(-2.0, 2.0, size=(1, 3, n))
        # direct per-pair squared distances, no factorization
        diffs = x[0].T[:, None, :] - x[0].T[None, :, :]
        d2 = (diffs * diffs).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")
        for k in (1, 5, 16):
            got = knn(Tensor(x), k).indices[0]
            np.testing.assert_array_equal(got, order[:, :k],
                                          err_msg=f"trial {trial}, k={k}")
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    announce(1, f"knn equals brute force on 100 clouds ({elapsed:.1f}s)")


# ---------------------------------------------------------------------
# 2. kernel operator against a scalar loop nest, all small shapes
# ---------------------------------------------------------------------

def _make_identity_bn(bn):
    # running variance of 1 - eps makes eval-mode BN the exact identity
    bn.gamma.value.data[:] = 1.0
    bn.beta.value.data[:] = 0.0
    bn._buffers["running_mean"][:] = 0.0
    bn._buffers["running_var"][:] = 1.0 - bn.epsilon


def _loop_nest(op, geo, feat):
    cfg = op.cfg
    slope = op.slope
    w0 = op.gen.conv0.weight.value.data
    wm = op.gen.conv_mid.weight.value.data
    w1 = op.gen.conv1.weight.value.data
    b1 = op.gen.conv1.bias.value.data
    lk = lambda v: np.where(v > 0, v, slope * v)
    b_dim, _, n, k = geo.shape
    out = np.zeros((b_dim, cfg.out_channels, n, k))
    for b in range(b_dim):
        for p in range(n):
            for j in range(k):
                h1 = lk(wm @ lk(w0 @ geo[b, :, p, j]))
                flat = w1 @ h1 + b1
                acc = np.zeros(cfg.out_channels)
                for o in range(cfg.out_channels):
                    for i in range(cfg.in_channels):
                        for h in range(cfg.num_heads):
                            acc[o] += flat[(o * cfg.in_channels + i)
                                           * cfg.num_heads + h] * feat[b, i, p, j]
                if cfg.residual:
                    if cfg.in_channels == cfg.out_channels:
                        acc += feat[b, :, p, j]
                    else:
                        acc += op.proj.weight.value.data @ feat[b, :, p, j]
                out[b, :, p, j] = lk(acc)
    return out


def test_criterion_02_mak_loop_nest_oracle():
    start = time.monotonic()
    sizes = (1, 2, 4)
    rng = np.random.default_rng(7)
    for b in sizes:
        for n in sizes:
            for k in sizes:
                for heads in sizes:
                    for ci in sizes:
                        for co in sizes:
                            cfg = MakConfig(in_channels=ci, out_channels=co,
                                            gen_in_channels=2 * ci,
                                            num_heads=heads, mid_channels=3)
                            op = MultiHeadAdaptiveKernel(
                                cfg, np.random.default_rng(b + n + k), dtype="f64")
                            _make_identity_bn(op.gen.bn0)
                            _make_identity_bn(op.gen.bn_mid)
                            _make_identity_bn(op.bn_out)
                            if hasattr(op, "proj_bn"):
                                _make_identity_bn(op.proj_bn)
                            op.eval()
                            geo = rng.normal(size=(b, 2 * ci, n, k))
                            feat = rng.normal(size=(b, ci, n, k))
                            got = op(Tensor(geo), Tensor(feat)).data
                            want = _loop_nest(op, geo, feat)
                            np.testing.assert_allclose(
                                got, want, rtol=1e-10, atol=1e-12,
                                err_msg=f"B={b} N={n} k={k} H={heads} "
                                        f"Cin={ci} Cout={co}")
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    announce(2, f"operator matches scalar loop nest on all 729 shapes ({elapsed:.1f}s)")


# ---------------------------------------------------------------------
# 3. end-to-end gradient check on a tiny model
# ---------------------------------------------------------------------

def test_criterion_03_full_model_gradient_check():
    start = time.monotonic()
    cfg = ModelConfig(in_channels=3, k=3, num_heads=2, stage_widths=(3, 3, 4, 4),
                      emb_dims=6, fc_widths=(6,), num_classes=2, dropout=0.0,
                      mak_mid_channels=3)
    model = build(cfg, seed=11, dtype="f64")
    model.train()
    rng = np.random.default_rng(5)
    x = Tensor(rng.uniform(-1.0, 1.0, size=(2, 3, 8)))
    labels = np.array([0, 1])

    loss = T.softmax_cross_entropy(model(x), labels)
    loss.backward()
    analytic = {name: p.value.grad.copy() for name, p in model.named_parameters()}

    def loss_value():
        with T.no_grad():
            return T.softmax_cross_entropy(model(x), labels).item()

    eps = 1e-5
    worst = 0.0
    checked = 0
    for name, p in model.named_parameters():
        flat = p.value.data.ravel()
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            hi = loss_value()
            flat[i] = old - eps
            lo = loss_value()
            flat[i] = old
            fd[i] = (hi - lo) / (2 * eps)
        a = analytic[name].ravel()
        rel = np.abs(a - fd) / np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-6)
        worst = max(worst, float(rel.max()))
        checked += flat.size
        assert rel.max() < 1e-4, f"{name}: rel err {rel.max():.2e}"
    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"took {elapsed:.1f}s"
    announce(3, f"all {checked} parameter gradients match finite differences "
                f"(worst rel {worst:.1e}, {elapsed:.1f}s)")


# ---------------------------------------------------------------------
# 4. permutation invariance of eval-mode logits
# ---------------------------------------------------------------------

def test_criterion_04_permutation_invariance():
    cfg = ModelConfig(in_channels=3, k=8, stage_widths=(8, 8, 12, 12),
                      emb_dims=24, fc_widths=(16,), num_classes=5,
                      mak_mid_channels=4)
    model = build(cfg, seed=9).eval()
    rng = np.random.default_rng(41)
    x = rng.uniform(-1.0, 1.0, size=(2, 3, 32)).astype(np.float32)
    base = model(Tensor(x)).data
    worst = 0.0
    for _ in range(10):
        perm = rng.permutation(32)
        out = model(Tensor(x[:, :, perm])).data
        worst = max(worst, float(np.abs(out - base).max()))
    assert worst <= 1e-5, f"max deviation {worst:.2e}"
    announce(4, f"logits stable under 10 permutations (max dev {worst:.1e})")


# ---------------------------------------------------------------------
# 5. cost-model laws and built-model agreement
# ---------------------------------------------------------------------

def test_criterion_05_cost_model_laws():
    base = dict(in_channels=3, num_heads=1, stage_widths=(8, 8, 12, 12),
                emb_dims=16, fc_widths=(12,), num_classes=5, mak_mid_channels=4)

    params_over_k = [count_params(ModelConfig(k=k, **base)) for k in range(5, 41)]
    assert len(set(params_over_k)) == 1

    heads = range(1, 8)
    params_over_h = [count_params(ModelConfig(k=8, **{**base, "num_heads": h}))
                     for h in heads]
    d1 = np.diff(params_over_h)
    assert (d1 == d1[0]).all() and d1[0] > 0

    macs_over_k = [count_macs(ModelConfig(k=k, **base), 64) for k in range(5, 41)]
    dk = np.diff(macs_over_k)
    assert (np.array(macs_over_k[1:]) > np.array(macs_over_k[:-1])).all()
    assert (dk == dk[0]).all()

    macs_over_h = [count_macs(ModelConfig(k=8, **{**base, "num_heads": h}), 64)
                   for h in heads]
    dh = np.diff(macs_over_h)
    assert (dh == dh[0]).all() and dh[0] > 0

    for variant in Variant:
        for h in (1, 4):
            cfg = ModelConfig(k=6, **{**base, "num_heads": h}, variant=variant)
            built = sum(p.value.size for _, p in build(cfg, seed=0).named_parameters())
            assert count_params(cfg) == built, (variant, h)
    announce(5, "params constant in k, affine in heads, equal to built models; "
                "macs affine and increasing")


# ---------------------------------------------------------------------
# 6. ablation cost ordering, analytically and through cmd_ablate
# ---------------------------------------------------------------------

def test_criterion_06_ablation_ordering(tmp_path, capsys):
    def macs_of(variant):
        return count_macs(ModelConfig(variant=variant), 1024)

    assert macs_of(Variant.SEQUENTIAL_FF) < macs_of(Variant.SANDWICH_FF) \
        < macs_of(Variant.MAK_ONLY)
    assert count_params(ModelConfig(variant=Variant.MAK_FF)) \
        > count_params(ModelConfig(variant=Variant.MAK_ONLY))

    dataset = write_dataset(tmp_path / "ds",
                            synth_generate(SynthSpec(2, 12, 5, 6, 0.02), seed=0))
    assert main(["ablate", "--data", dataset, "--preset", "synth", "--k", "4",
                 "--emb-dims", "16", "--epochs", "1", "--batch", "4",
                 "--lr-max", "0.05", "--out", str(tmp_path / "ablate")]) == 0
    out_lines = capsys.readouterr().out.splitlines()
    hdr = next(i for i, ln in enumerate(out_lines) if ln.startswith("method"))
    rows = {ln.split()[0]: ln.split() for ln in out_lines[hdr + 1:hdr + 5]}
    assert list(rows) == ["MakOnly", "MakFF", "SandwichFF", "SequentialFF"]
    assert float(rows["SequentialFF"][1]) < float(rows["SandwichFF"][1]) \
        < float(rows["MakOnly"][1])
    assert float(rows["MakFF"][2]) > float(rows["MakOnly"][2])
    announce(6, "macs order sequential < sandwich < mak-only; "
                "mak-ff params > mak-only, analytically and via the cli")


# ---------------------------------------------------------------------
# 7. end-to-end synthetic training accuracy and the multi-seed protocol
# ---------------------------------------------------------------------

def test_criterion_07_synthetic_training(tmp_path, capsys):
    start = time.monotonic()
    out = tmp_path / "synth7"
    assert main(["train", "--preset", "synth", "--data-seed", "7",
                 "--k", "20", "--heads", "1", "--epochs", "30",
                 "--batch", "32", "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    line = next(ln for ln in stdout.splitlines() if ln.startswith("seed 0:"))
    acc = float(line.split("test acc ", 1)[1].split("%")[0]) / 100.0
    elapsed = time.monotonic() - start
    assert acc >= 0.95, f"test accuracy {acc:.4f} below 0.95"
    assert elapsed < 900.0, f"took {elapsed:.0f}s"

    multi = tmp_path / "multi"
    assert main(["train", "--preset", "synth", "--data-seed", "7",
                 "--k", "20", "--limit", "60", "--epochs", "2", "--batch", "16",
                 "--seeds", "0,1,2", "--out", str(multi)]) == 0
    summary = capsys.readouterr().out
    assert "summary over 3 seeds: accuracy" in summary and "±" in summary
    announce(7, f"synthetic run reached {100 * acc:.2f}% test accuracy in "
                f"{elapsed:.0f}s; 3-seed protocol prints mean ± std")


# ---------------------------------------------------------------------
# 8. training-recipe fixtures
# ---------------------------------------------------------------------

def test_criterion_08_training_recipe_fixtures():
    assert cosine_lr(0, 10, 0.1) == pytest.approx(0.1, abs=1e-15)
    assert cosine_lr(10, 10, 0.1, lr_min=0.004) == pytest.approx(0.004, abs=1e-15)
    assert cosine_lr(5, 10, 0.1, lr_min=0.004) == pytest.approx(0.052, abs=1e-15)

    p = Parameter(Tensor(np.array([1.0]), requires_grad=True))
    g = np.array([1.0])
    sgd_step([p], [g], lr=0.1, momentum=0.9)
    assert abs(p.value.data[0] - 0.9) < 1e-12     # first step: -0.1
    sgd_step([p], [g], lr=0.1, momentum=0.9)
    assert abs(p.value.data[0] - 0.71) < 1e-12    # cumulative: -0.29

    stopper = EarlyStopper(patience=2)
    seen = []
    for e, v in enumerate([1.0, 0.9, 0.95, 0.97], start=1):
        stopper.update(e, v)
        seen.append(stopper.should_stop)
    assert seen == [False, False, False, True]
    assert stopper.best_epoch == 2 and stopper.best == 0.9
    announce(8, "cosine endpoints, momentum fixture, and scripted early stop all exact")


# ---------------------------------------------------------------------
# 9. checkpoint round trip and manifest replay
# ---------------------------------------------------------------------

def test_criterion_09_checkpoint_and_replay(tmp_path, capsys):
    cfg = ModelConfig(in_channels=3, k=4, stage_widths=(6, 6, 8, 8), emb_dims=12,
                      fc_widths=(10,), num_classes=3, mak_mid_channels=4)
    model = build(cfg, seed=21)
    x = Tensor(np.random.default_rng(3).uniform(-1, 1, (4, 3, 12)).astype(np.float32))
    want = model.eval()(x).data
    path = tmp_path / "ck.bin"
    save_checkpoint(path, state_dict(model), {"kind": "checkpoint"})
    clone = build(cfg, seed=99)
    load_state(clone, load_checkpoint(path)[1])
    np.testing.assert_array_equal(clone.eval()(x).data, want)

    dataset = write_dataset(tmp_path / "ds",
                            synth_generate(SynthSpec(2, 10, 5, 6, 0.02), seed=0))
    first = tmp_path / "first"
    args = ["train", "--data", dataset, "--preset", "synth", "--k", "4",
            "--emb-dims", "16", "--epochs", "2", "--batch", "8",
            "--lr-max", "0.05", "--out", str(first)]
    assert main(args) == 0
    second = tmp_path / "second"
    assert main(["train", "--replay", str(first / "run_manifest.json"),
                 "--out", str(second)]) == 0
    capsys.readouterr()
    assert (first / "checkpoint.bin").read_bytes() == \
           (second / "checkpoint.bin").read_bytes()
    assert (first / "history.csv").read_text() == (second / "history.csv").read_text()
    announce(9, "checkpoint reload reproduces logits bitwise; replay reproduces "
                "checkpoint and history byte for byte")


# ---------------------------------------------------------------------
# 10. streaming inference equals batch windowing
# ---------------------------------------------------------------------

def test_criterion_10_stream_equals_batch(tmp_path, capsys, monkeypatch):
    dataset = write_dataset(tmp_path / "ds",
                            synth_generate(SynthSpec(2, 10, 5, 6, 0.02), seed=0))
    out = tmp_path / "run"
    assert main(["train", "--data", dataset, "--preset", "synth", "--k", "4",
                 "--emb-dims", "16", "--epochs", "2", "--batch", "8",
                 "--lr-max", "0.05", "--data-seed", "0",
                 "--out", str(out)]) == 0
    capsys.readouterr()

    seq = synth_generate(SynthSpec(2, 1, 12, 6, 0.02), seed=5)[0]
    seq.seq_id = 0
    lines = [f"C=3 rate=30.0 label={seq.label} subject=-1"]
    for i, frame in enumerate(seq.frames):
        vals = " ".join(repr(float(v)) for v in frame.ravel())
        lines.append(f"{i} {frame.shape[0]} {vals}")
    monkeypatch.setattr("sys.stdin", io.StringIO("\n".join(lines) + "\n"))
    assert main(["infer", "--checkpoint", str(out / "checkpoint.bin")]) == 0
    emitted = capsys.readouterr().out.strip().splitlines()
    stream_preds = [int(ln.split()[1]) for ln in emitted]

    manifest = json.loads((out / "run_manifest.json").read_text())
    pd = manifest["pipeline_config"]
    samples = make_windows(seq, pd["window_frames"], 1,
                           pd["points_per_frame"], pd["seed"])
    manifest_ck, state = load_checkpoint(out / "checkpoint.bin")
    from adaptgraph.network import config_from_dict
    model = build(config_from_dict(manifest_ck["model_config"]), seed=0)
    load_state(model, state)
    batch_preds = predict(model, samples).tolist()

    assert len(stream_preds) == len(samples) == 8
    assert stream_preds == batch_preds
    announce(10, "streamed predictions equal batch windowed predictions, "
                 "prediction for prediction")
