"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line.

The MNIST run reads the IDX files from ``$GRCNN_MNIST_DIR`` (default
``/root/data/mnist``) and takes several minutes on one core.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from grcnn import checkpoint
from grcnn.data import load_mnist, normalize, synthetic_blobs
from grcnn.experiments import TREND_VARIANTS, trend_experiment
from grcnn.functional import softmax_cross_entropy
from grcnn.layers import GRCL, GRCLConfig
from grcnn.model import build, grcnn56_spec, mnist_small_spec, param_count, parameter_report, spec_from_options
from grcnn.oracles import accumulate_partial_sums, perturbation_support
from grcnn.tensor import Tensor, no_grad
from grcnn.trainer import OptState, TrainConfig, evaluate, sgd_step, train
from grcnn.verification import gradient_suite, projected

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = Path(os.environ.get("GRCNN_MNIST_DIR", "/root/data/mnist"))


@pytest.fixture
def report(capsys):
    def emit(number, title, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}: {detail}")
        return passed
    return emit


def block(variant, iterations, seed, dtype=np.float64, **kw):
    opts = dict(in_channels=4, out_channels=8, groups_feedforward=2, groups_gate=2)
    opts.update(kw)
    return GRCL(GRCLConfig(variant=variant, iterations=iterations, **opts), rng=np.random.default_rng(seed),
                dtype=dtype)


def randomize_affine(module, rng):
    for name, p in module.named_parameters():
        if ".bn." in f".{name}":
            p.data = rng.uniform(0.5, 1.5, p.shape).astype(p.dtype) if name.endswith("weight") \
                else rng.normal(0, 0.2, p.shape).astype(p.dtype)


def test_criterion_1_gradient_suite(report):
    start = time.perf_counter()
    results = gradient_suite(instances=3, seed=2024)
    elapsed = time.perf_counter() - start
    worst_name, worst = max(results, key=lambda r: r[1])
    passed = worst < 1e-4 and elapsed < 120
    report(1, "gradient suite", passed,
           f"{len(results)} cases x 3 instances, worst {worst:.2e} ({worst_name}), {elapsed:.1f}s")
    assert passed


def test_criterion_2_degeneration(report):
    diffs = []
    for t in (1, 2, 3):
        rng = np.random.default_rng(t)
        rcl = block("rcl", t, seed=10 + t)
        gated = block("grcl_original", t, seed=20 + t)
        randomize_affine(rcl, rng)
        reference = dict(rcl.named_parameters())
        for name, p in gated.named_parameters():
            if name in reference:
                p.data = reference[name].data.copy()
        gated.gate_override = 1.0
        x = Tensor(rng.standard_normal((2, 4, 7, 7)))
        diffs.append(int(np.count_nonzero(rcl(x).data != gated(x).data)))
    passed = diffs == [0, 0, 0]
    report(2, "gates=1 degenerates to rcl bit-for-bit", passed, f"differing elements per T=1,2,3: {diffs}")
    assert passed


def test_criterion_3_closed_gate(report):
    worst = 0.0
    for t in (1, 2, 3, 4):
        rng = np.random.default_rng(t)
        b = block("grcl_improved", t, seed=t)
        randomize_affine(b, rng)
        b.gate_override = 0.0
        x = Tensor(rng.standard_normal((2, 4, 7, 7)))
        worst = max(worst, float(np.abs(b(x).data - b.transform_ff(x).data).max()))
    passed = worst == 0.0
    report(3, "gates=0 returns the feedforward term", passed, f"T=1..4 max|diff| = {worst}")
    assert passed


def test_criterion_4_rf_support(report):
    counts = []
    for t in range(4):
        b = block("rcl", t + 1, seed=t, in_channels=2, out_channels=2, groups_feedforward=1, groups_gate=1)
        for _, p in b.named_parameters():
            p.data = np.abs(p.data) + 0.1
        b.eval()
        b.record = True

        def centre(arr, b=b, t=t):
            with no_grad():
                b(Tensor(arr))
            return float(b.recorded_states[t].data[0, 0, 7, 7])

        x = np.random.default_rng(t).uniform(0.5, 1.5, size=(1, 2, 15, 15))
        counts.append(int(perturbation_support(centre, x).sum()))
    expected = [(3 + 2 * t) ** 2 for t in range(4)]
    passed = counts == expected
    report(4, "rcl support = (3+2t)^2 on 15x15", passed, f"measured {counts}, expected {expected}")
    assert passed


def test_criterion_5_accumulation(report):
    worst = 0.0
    for i in range(10):
        b = block("grcl_improved", 3, seed=100 + i, dtype=np.float32)
        randomize_affine(b, np.random.default_rng(i))
        u = Tensor(np.random.default_rng(200 + i).standard_normal((2, 4, 6, 6)).astype(np.float32))
        with no_grad():
            out = b(u).data
            states = accumulate_partial_sums(b.transform_ff(u).data,
                                             lambda n, p: b.gate(u, Tensor(p), n).data,
                                             lambda n, p: b.transform_rec(Tensor(p), n).data, 3)
        worst = max(worst, float(np.abs(out - states[-1]).max()))
    passed = worst <= 1e-6
    report(5, "accumulation vs explicit partial sums (f32)", passed, f"10 instances, max|diff| = {worst:.2e}")
    assert passed


def test_criterion_6_bn_unsharing(report):
    b = block("grcl_improved", 4, seed=0, dtype=np.float32, tie_recurrent_weights=True, tie_gate_weights=True)
    rng = np.random.default_rng(0)
    named = b.named_parameters()
    opt = OptState()
    for _ in range(10):
        u = Tensor(rng.standard_normal((4, 4, 6, 6)).astype(np.float32))
        loss = projected(b(u), rng)
        b.zero_grad()
        loss.backward()
        sgd_step(named, opt, lr=0.01)
    means = [r.unit.bn.running_mean for r in b.recurrent]
    spread = max(float(np.abs(a - c).max()) for i, a in enumerate(means) for c in means[i + 1:])
    convs = {id(r.unit.conv) for r in b.recurrent}
    conv_entries = [n for n, _ in named if n.startswith("recurrent.") and ".conv." in n]
    passed = spread > 0 and len(convs) == 1 and len(conv_entries) == 2
    report(6, "per-step BN stats diverge, recurrent conv shared", passed,
           f"max pairwise running-mean diff {spread:.3g}, distinct conv sets {len(convs)}")
    assert passed


def test_criterion_7_mnist(report):
    if not (MNIST_DIR / "train-images-idx3-ubyte").exists() and \
            not (MNIST_DIR / "train-images-idx3-ubyte.gz").exists():
        report(7, "MNIST desk-scale target", False, f"dataset not found in {MNIST_DIR}")
        pytest.fail(f"MNIST IDX files missing from {MNIST_DIR}; set GRCNN_MNIST_DIR")
    train_ds, test_ds = load_mnist(MNIST_DIR)
    train_ds = normalize(train_ds)
    test_ds = normalize(test_ds, train_ds.channel_mean, train_ds.channel_std)
    model = build(mnist_small_spec(), seed=0)
    cfg = TrainConfig(batch_size=64, epochs=5, lr0=0.1, lr_milestones=(0.5, 0.75), seed=0)
    start = time.perf_counter()
    runlog = train(model, train_ds, test_ds, cfg)
    minutes = (time.perf_counter() - start) / 60
    acc = 1.0 - runlog.rows[-1]["test_error"]
    passed = acc >= 0.98 and minutes <= 30
    report(7, "MNIST (2,2,2)/(32,32,32), 5 epochs", passed,
           f"test accuracy {acc:.4f}, wall {minutes:.1f} min on {os.cpu_count()} core(s)")
    assert passed


def test_criterion_8_trend(report):
    result = trend_experiment(seeds=(0, 1, 2))
    medians = {v: result.median(v) for v in TREND_VARIANTS}
    per_seed = "; ".join(f"{v} [{', '.join(f'{x:.4f}' for x in result.losses[v])}]" for v in TREND_VARIANTS)
    passed = result.ordered()
    report(8, "median final train loss improved <= original <= rcl", passed,
           f"medians {', '.join(f'{v} {m:.4f}' for v, m in medians.items())}; params {result.params}; "
           f"per seed: {per_seed}")
    assert passed


def test_criterion_9_determinism(report, tmp_path):
    spec = spec_from_options({"input_shape": "3,32,32", "stem_channels": "16", "iterations": "3,3",
                              "channels": "16,16", "groups_feedforward": "4", "groups_gate": "4"})
    train_ds = normalize(synthetic_blobs(96, seed=0))
    test_ds = normalize(synthetic_blobs(32, seed=1), train_ds.channel_mean, train_ds.channel_std)
    digests, blobs = [], []
    for run in ("a", "b"):
        model = build(spec, seed=3)
        log = train(model, train_ds, test_ds, TrainConfig(batch_size=16, epochs=2, seed=3, deterministic=True),
                    out_dir=tmp_path / run, augment_train=True)
        digests.append(log.digest())
        blobs.append((tmp_path / run / "final.ckpt").read_bytes())
    passed = digests[0] == digests[1] and blobs[0] == blobs[1]
    report(9, "identical RunLog hashes and checkpoint bytes", passed,
           f"digest {digests[0][:16]}..., checkpoints {'identical' if blobs[0] == blobs[1] else 'differ'}")
    assert passed


def test_criterion_10_parameter_accounting(report):
    spec = grcnn56_spec()
    count = param_count(build(spec))
    deviation = (count - 5.8e6) / 5.8e6
    doc = ROOT / "docs" / "parameter_accounting.md"
    text = doc.read_text(encoding="utf-8") if doc.exists() else ""
    in_sync = text == parameter_report(spec, "GRCNN-56 parameter accounting")
    passed = abs(deviation) <= 0.10 and in_sync and f"{count:,}" in text
    report(10, "GRCNN-56 parameter count", passed,
           f"{count:,} ({deviation:+.1%} vs 5.8M); breakdown in docs/parameter_accounting.md "
           f"{'up to date' if in_sync else 'stale or missing'}")
    assert passed
