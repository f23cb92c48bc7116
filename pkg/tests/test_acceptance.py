"""Acceptance criteria 1-7: each test prints one pass/fail line.

Every check here recomputes its expectation from scratch (per-event
counting loops, inverse bit-layout builders, spreadsheet-style cost
recounts, central finite differences), so the suite stays independent of
the library's own arithmetic.

The finite-difference sweeps use a dual tolerance: the stated relative
bound applies to every coordinate whose analytic and numeric values
differ by more than a 1e-9 absolute guard. Coordinates inside the guard
carry no information about relative accuracy; double-precision central
differences of a composite objective bottom out around 1e-11, so a
genuine backward fault (sign flip, dropped term, stale buffer) still
lands far outside it.
"""

import json
import os
import time

import numpy as np
import pytest

from evframe.accounting import count_params, delta_report, total_flops
from evframe.attention import Cbam, ChannelAttention, SpatialAttention
from evframe.cli import main
from evframe.codec import (decode_aedat2, decode_atis_bin, decode_portable,
                           encode_portable)
from evframe.config import load_run_config
from evframe.data import load_cached_dataset, read_manifest
from evframe.events import SensorGeometry, stream_from_arrays
from evframe.model import ModelConfig, build_model, default_config, vgg_original_config
from evframe.nn.layers import (BatchNorm2d, Conv2d, GlobalAvgPool, GlobalMaxPool,
                               Linear, MaxPool2d, ReLU, Sigmoid, named_grads,
                               named_params, zero_grads)
from evframe.nn.loss import softmax_cross_entropy
from evframe.representation import integrate_frames, slice_by_count
from evframe.train import split_by_class

SEEDS = range(20)
FD_EPS = 1e-5
FD_ATOL = 1e-9
KERNEL_TOL = 1e-6
ATTENTION_TOL = 1e-5
MODEL_TOL = 1e-4


def _verdict(criterion, problems, detail):
    status = "FAIL" if problems else "PASS"
    print(f"criterion {criterion}: {status} ({detail})")
    assert not problems, f"criterion {criterion}: " + "; ".join(problems)


def count_oracle(stream, boundaries):
    """Brute-force per-event recount of every slice interval."""
    h, w = stream.geometry.height, stream.geometry.width
    out = np.zeros((len(boundaries), 2, h, w), dtype=np.int64)
    ev = stream.events
    for n, (lo, hi) in enumerate(boundaries):
        for i in range(lo, hi):
            out[n, ev["p"][i], ev["y"][i], ev["x"][i]] += 1
    return out


def random_stream(rng, n, width, height, label=None, t_high=1 << 20):
    x = rng.integers(0, width, size=n)
    y = rng.integers(0, height, size=n)
    t = np.sort(rng.integers(0, t_high, size=n))
    p = rng.integers(0, 2, size=n)
    return stream_from_arrays(x, y, t, p, SensorGeometry(width, height), label)


def fd_max_error(layer, x, *, train=False, seed=0):
    """Independent central-difference sweep over the input and parameters."""
    # The weighting direction comes from its own stream; reusing the
    # factory seed would make r coincide with x bit for bit and collapse
    # the batchnorm objective onto its shift/scale invariance manifold.
    rng = np.random.default_rng([seed, 101])
    r = rng.standard_normal(layer.forward(x, train=train).shape)

    def objective():
        return float((layer.forward(x, train=train) * r).sum())

    zero_grads(layer)
    layer.forward(x, train=train)
    dx = layer.backward(r)
    targets = [(x, dx.copy())]
    grads = {name: g.copy() for name, g in named_grads(layer)}
    targets.extend((arr, grads[name]) for name, arr in named_params(layer))

    worst = 0.0
    for arr, analytic in targets:
        flat = arr.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + FD_EPS
            plus = objective()
            flat[i] = orig - FD_EPS
            minus = objective()
            flat[i] = orig
            numeric = (plus - minus) / (2 * FD_EPS)
            gap = abs(float(aflat[i]) - numeric)
            if gap > FD_ATOL:
                worst = max(worst, gap / max(abs(float(aflat[i])), abs(numeric)))
    return worst


def away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return x + margin * np.sign(x)


def model_param_oracle(config):
    """Spreadsheet recount of every parameter tensor."""
    total = 0
    c_in = config.input_channels
    for i, c_out in enumerate(config.stage_channels):
        c_prev = c_in
        for _ in range(config.convs_per_block):
            total += c_out * c_prev * 9 + c_out + 2 * c_out
            c_prev = c_out
        if config.stage_has_cbam(i):
            hid = max(1, c_out // config.cbam_reduction)
            total += c_out * hid + hid + hid * c_out + c_out
            total += 2 * config.cbam_kernel ** 2 + 1
        c_in = c_out
    c_feat, h, w = config.feature_shape()
    if config.head == "gap":
        total += c_feat * config.num_classes + config.num_classes
    else:
        f_in = c_feat * h * w
        for width in config.classifier_hidden:
            total += f_in * width + width
            f_in = width
        total += f_in * config.num_classes + config.num_classes
    return total


@pytest.fixture(scope="module")
def toy_cache(tmp_path_factory):
    """Synthesize the two-class bar dataset once and convert it once."""
    root = tmp_path_factory.mktemp("toy")
    raw = root / "raw"
    cache = root / "cache"
    assert main(["synth", "--out", str(raw), "--n", "32",
                 "--geometry", "32", "32", "--seed", "0"]) == 0
    assert main(["convert", str(raw), "--format", "evt", "--slices", "5",
                 "--out", str(cache)]) == 0
    return root, cache


def write_toy_config(root, name, out_dir, cache):
    doc = {
        "dataset": str(cache),
        "format": "frm",
        "out_dir": str(out_dir),
        "slices": 5,
        "reduce": "stack",
        "normalize": "per_sample_max",
        "split_fraction": 0.75,
        "seed": 7,
        "fixed_timer": True,
        "model": {"stage_channels": [8, 16], "cbam_reduction": 4, "cbam_kernel": 3},
        "train": {"lr": 0.001, "batch_size": 16, "epochs": 40,
                  "precision": "float32"},
    }
    path = root / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_criterion_1_frame_integration_matches_counting_oracle():
    """100+ random streams: slices equal a per-event recount exactly."""
    rng = np.random.default_rng(11)
    problems = []
    cases = 0
    for case in range(102):
        if case == 0:
            n = 100
        elif case == 1:
            n = 50_000
        else:
            n = int(np.exp(rng.uniform(np.log(100), np.log(50_000))))
        width = int(rng.integers(4, 129))
        height = int(rng.integers(4, 129))
        t_slices = (1, 5, 20)[case % 3]
        mode = ("strict_paper", "remainder_to_last")[case % 2]
        stream = random_stream(rng, n, width, height)
        spec = slice_by_count(n, t_slices, mode)
        frames = integrate_frames(stream, spec)
        expected = count_oracle(stream, spec.boundaries)
        if not np.array_equal(frames.data, expected):
            problems.append(f"case {case}: tensor mismatch (n={n}, T={t_slices})")
        total = int(frames.data.sum())
        conserved = (n // t_slices) * t_slices if mode == "strict_paper" else n
        if total != conserved:
            problems.append(f"case {case}: total {total} != {conserved}")
        cases += 1
    _verdict(1, problems,
             f"{cases} streams, N in [100, 50000], T in {{1,5,20}}, both slice "
             f"modes, exact integer equality and conservation")


def test_criterion_2_codec_round_trips_and_inverse_fixtures():
    """1000+ portable round trips; raw formats decode constructed bytes."""
    problems = []
    rng = np.random.default_rng(23)
    trips = 0
    for i in range(1000):
        n = int(rng.integers(0, 300))
        width = int(rng.integers(1, 200))
        height = int(rng.integers(1, 200))
        label = None if i % 3 == 0 else int(rng.integers(0, 100))
        t_high = (1 << 20) if i % 5 else (1 << 48)
        stream = random_stream(rng, n, width, height, label, t_high)
        blob = encode_portable(stream)
        back = decode_portable(blob)
        if back.events.tobytes() != stream.events.tobytes():
            problems.append(f"trip {i}: event payload changed")
        if (back.geometry != stream.geometry or back.label != stream.label
                or encode_portable(back) != blob):
            problems.append(f"trip {i}: header or re-encode changed")
        trips += 1

    # ATIS: 5-byte records, polarity in bit 7 of byte 2, 23-bit big-endian
    # timestamp that must unwrap across many rollovers.
    n = 600
    x = rng.integers(0, 256, size=n)
    y = rng.integers(0, 256, size=n)
    p = rng.integers(0, 2, size=n)
    t = np.cumsum(rng.integers(0, 1 << 22, size=n))
    period = 1 << 23
    data = b"".join(
        bytes([x[i], y[i],
               (int(p[i]) << 7) | ((int(t[i]) % period) >> 16),
               ((int(t[i]) % period) >> 8) & 0xFF,
               (int(t[i]) % period) & 0xFF])
        for i in range(n))
    stream = decode_atis_bin(data, geometry=SensorGeometry(256, 256))
    for field, ref in (("x", x), ("y", y), ("p", p), ("t", t)):
        if not np.array_equal(stream.events[field], ref):
            problems.append(f"atis field {field} mismatch")

    # AEDAT 2.0: big-endian address/timestamp pairs on the 128x128 grid.
    import struct
    n = 600
    x = rng.integers(0, 128, size=n)
    y = rng.integers(0, 128, size=n)
    p = rng.integers(0, 2, size=n)
    t = np.cumsum(rng.integers(0, 1 << 31, size=n))
    period = 1 << 32
    data = b"#!AER-DAT2.0\r\n" + b"".join(
        struct.pack(">II",
                    (int(y[i]) << 8) | (int(x[i]) << 1) | int(p[i]),
                    int(t[i]) % period)
        for i in range(n))
    stream = decode_aedat2(data)
    for field, ref in (("x", x), ("y", y), ("p", p), ("t", t)):
        if not np.array_equal(stream.events[field], ref):
            problems.append(f"aedat2 field {field} mismatch")

    _verdict(2, problems,
             f"{trips} portable round trips bit-exact; ATIS and AEDAT2 "
             f"fixtures of 600 events each (with timestamp rollovers) decode "
             f"to the constructed values exactly")


def test_criterion_3_gradient_checks_every_kernel():
    """Central finite differences on every kernel, 20 seeds each."""
    problems = []
    worst_seen = {}

    def make_conv(rng):
        return Conv2d(2, 3, 3, padding=1, dtype=np.float64, rng=rng), \
            rng.standard_normal((2, 2, 6, 6))

    def make_bn(rng):
        bn = BatchNorm2d(3, dtype=np.float64)
        bn.params["gamma"][:] = 0.5 + rng.random(3)
        bn.params["beta"][:] = rng.standard_normal(3)
        return bn, rng.standard_normal((4, 3, 5, 5))

    def make_relu(rng):
        return ReLU(), away_from_zero(rng, (3, 8))

    def make_sigmoid(rng):
        return Sigmoid(), rng.standard_normal((3, 8)) * 2

    def make_maxpool(rng):
        return MaxPool2d(2, stride=2), rng.standard_normal((2, 3, 8, 8))

    def make_gap(rng):
        return GlobalAvgPool(), rng.standard_normal((2, 3, 4, 4))

    def make_gmp(rng):
        return GlobalMaxPool(), rng.standard_normal((2, 3, 4, 4))

    def make_linear(rng):
        return Linear(5, 4, dtype=np.float64, rng=rng), rng.standard_normal((6, 5))

    def make_cam(rng):
        return ChannelAttention(6, reduction=2, dtype=np.float64, rng=rng), \
            rng.standard_normal((3, 6, 5, 5))

    def make_sam(rng):
        return SpatialAttention(3, dtype=np.float64, rng=rng), \
            rng.standard_normal((3, 5, 6, 6))

    def make_cbam(rng):
        return Cbam(5, reduction=2, kernel_size=3, dtype=np.float64, rng=rng), \
            rng.standard_normal((2, 5, 6, 6))

    def make_model(rng):
        config = ModelConfig(num_classes=2, input_channels=2, input_size=(8, 8),
                             stage_channels=(4,), convs_per_block=1,
                             cbam_reduction=4, cbam_kernel=3)
        seed = int(rng.integers(0, 2 ** 31))
        return build_model(config, seed=seed, dtype=np.float64), \
            rng.standard_normal((2, 2, 8, 8))

    kernels = [
        ("conv2d", make_conv, KERNEL_TOL, False),
        ("batchnorm2d", make_bn, KERNEL_TOL, True),
        ("relu", make_relu, KERNEL_TOL, False),
        ("sigmoid", make_sigmoid, KERNEL_TOL, False),
        ("maxpool", make_maxpool, KERNEL_TOL, False),
        ("global_avg_pool", make_gap, KERNEL_TOL, False),
        ("global_max_pool", make_gmp, KERNEL_TOL, False),
        ("linear", make_linear, KERNEL_TOL, False),
        ("cam", make_cam, ATTENTION_TOL, False),
        ("sam", make_sam, ATTENTION_TOL, False),
        ("cbam", make_cbam, ATTENTION_TOL, False),
        ("model", make_model, MODEL_TOL, False),
    ]
    for name, factory, tol, train in kernels:
        worst = 0.0
        for seed in SEEDS:
            layer, x = factory(np.random.default_rng(seed))
            worst = max(worst, fd_max_error(layer, x, train=train, seed=seed))
        worst_seen[name] = worst
        if worst >= tol:
            problems.append(f"{name}: worst rel error {worst:.3e} >= {tol:g}")

    # Softmax cross-entropy is a function of logits, checked coordinatewise
    # against central differences of the scalar loss itself.
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal((3, 4))
        labels = rng.integers(0, 4, size=3)
        _, grad = softmax_cross_entropy(logits, labels)
        for idx in np.ndindex(logits.shape):
            orig = logits[idx]
            logits[idx] = orig + FD_EPS
            plus, _ = softmax_cross_entropy(logits, labels)
            logits[idx] = orig - FD_EPS
            minus, _ = softmax_cross_entropy(logits, labels)
            logits[idx] = orig
            numeric = (plus - minus) / (2 * FD_EPS)
            gap = abs(float(grad[idx]) - numeric)
            if gap > FD_ATOL:
                worst = max(worst, gap / max(abs(float(grad[idx])), abs(numeric)))
    worst_seen["softmax_ce"] = worst
    if worst >= KERNEL_TOL:
        problems.append(f"softmax_ce: worst rel error {worst:.3e} >= {KERNEL_TOL:g}")

    overall = max(worst_seen.values())
    _verdict(3, problems,
             f"13 kernels x 20 seeds, double precision, tolerances "
             f"{KERNEL_TOL:g}/{ATTENTION_TOL:g}/{MODEL_TOL:g}, worst rel "
             f"error {overall:.2e}")


def test_criterion_4_attention_invariants():
    """100+ random inputs: gates open, shape kept, never amplified, x/4."""
    problems = []
    checked = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        cbam = Cbam(5, reduction=2, kernel_size=3, dtype=np.float64, rng=rng)
        scale = rng.uniform(0.1, 3.0)
        x = rng.standard_normal((2, 5, 6, 6)) * scale
        out = cbam.forward(x)
        if out.shape != x.shape:
            problems.append(f"seed {seed}: shape changed to {out.shape}")
        for gate in (cbam.cam.last_gate, cbam.sam.last_gate):
            if not (np.all(gate > 0.0) and np.all(gate < 1.0)):
                problems.append(f"seed {seed}: gate left open interval (0,1)")
        if not np.all(np.abs(out) <= np.abs(x)):
            problems.append(f"seed {seed}: output amplified the input")
        checked += 1

    rng = np.random.default_rng(7)
    cbam = Cbam(5, reduction=2, kernel_size=3, dtype=np.float64, rng=rng)
    for _, p in named_params(cbam):
        p[...] = 0.0
    x = rng.standard_normal((2, 5, 6, 6))
    if not np.array_equal(cbam.forward(x), x / 4.0):
        problems.append("zero-parameter block is not exactly input/4")

    _verdict(4, problems,
             f"{checked} random inputs: gates strictly inside (0,1), shape "
             f"preserved, |out| <= |in| elementwise, zero-parameter case "
             f"equals input/4 exactly")


def test_criterion_5_parameter_and_flop_accounting():
    """Analytic recounts: params on 5+ configs, flops on single layers."""
    problems = []
    configs = {
        "default": default_config(10),
        "vgg_original": vgg_original_config(10),
        "partial_cbam": ModelConfig(num_classes=3, input_channels=2,
                                    input_size=(32, 32), stage_channels=(8, 16),
                                    convs_per_block=1, cbam_stages=(True, False),
                                    cbam_reduction=4, cbam_kernel=3),
        "residual_reversed": ModelConfig(num_classes=4, input_channels=2,
                                         input_size=(16, 16), stage_channels=(4, 4),
                                         cbam_order="sam_then_cam",
                                         cbam_residual=True, cbam_reduction=2,
                                         cbam_kernel=3, head="flatten",
                                         classifier_hidden=(32,)),
        "stacked_input": ModelConfig(num_classes=5, input_channels=10,
                                     input_size=(16, 16), stage_channels=(6,),
                                     convs_per_block=3, cbam_reduction=16,
                                     cbam_kernel=7, head="flatten"),
    }
    for name, config in configs.items():
        got = count_params(build_model(config, seed=0))
        want = model_param_oracle(config)
        if got != want:
            problems.append(f"{name}: count_params {got} != analytic {want}")

    single_layers = [
        ("conv1x1_nobias", Conv2d(1, 1, 1, bias=False), (1, 4, 4), 32),
        ("conv3x3", Conv2d(3, 64, 3, padding=1), (3, 32, 32),
         2 * 64 * 3 * 9 * 32 * 32 + 64 * 32 * 32),
        ("linear", Linear(512, 10), (512,), 2 * 512 * 10 + 10),
        ("batchnorm", BatchNorm2d(8), (8, 16, 16), 2 * 8 * 16 * 16),
        ("relu", ReLU(), (8, 16, 16), 8 * 16 * 16),
        ("maxpool", MaxPool2d(2), (4, 8, 8), 4 * 4 * 4 * 4),
        ("global_avg_pool", GlobalAvgPool(), (16, 4, 4), 16 * 16 + 16),
        ("global_max_pool", GlobalMaxPool(), (16, 4, 4), 16 * 16),
    ]
    for name, layer, shape, want in single_layers:
        got = total_flops(layer, shape)
        if got != want:
            problems.append(f"{name}: total_flops {got} != analytic {want}")

    if count_params(Conv2d(3, 64, 3)) != 1792:
        problems.append("conv 3->64 parameter anchor broke")
    if count_params(Cbam(64, reduction=16, kernel_size=7)) != 679:
        problems.append("attention block parameter anchor broke")

    report = delta_report(build_model(configs["vgg_original"]),
                          build_model(configs["default"]))
    for needle in ("stage0.cbam.cam", "head.fc1", "parameter change",
                   "flop change", "MFLOPs"):
        if needle not in report:
            problems.append(f"delta report lacks {needle!r}")

    _verdict(5, problems,
             f"{len(configs)} configs match the spreadsheet recount exactly; "
             f"{len(single_layers)} single-layer flop formulas exact; "
             f"per-layer delta report against the 3-channel wide-head preset "
             f"produced")


def test_criterion_6_desk_scale_learning(toy_cache):
    """Toy two-class run: near-chance start, strong train/held-out finish."""
    problems = []
    root, cache = toy_cache
    out_dir = root / "learn-run"
    config_path = write_toy_config(root, "learn.json", out_dir, cache)

    run = load_run_config(config_path)
    manifest = read_manifest(str(cache))
    x, y, classes, _ = load_cached_dataset(str(cache), reduce=run.reduce,
                                           normalize=run.normalize,
                                           dtype=np.float32)
    model_cfg = run.model_config(tuple(manifest["geometry"]), len(classes))
    model = build_model(model_cfg, seed=run.seed, dtype=np.float32)
    train_idx, _ = split_by_class(y, run.split_fraction, seed=run.seed)
    init_loss, _ = softmax_cross_entropy(model.forward(x[train_idx]), y[train_idx])
    ln2 = float(np.log(2.0))
    if abs(init_loss - ln2) / ln2 >= 0.05:
        problems.append(f"initial loss {init_loss:.4f} not within 5% of ln 2")

    started = time.perf_counter()
    code = main(["train", "--config", config_path])
    elapsed = time.perf_counter() - started
    if code != 0:
        problems.append(f"training exited with {code}")
    if elapsed >= 600:
        problems.append(f"training took {elapsed:.0f}s, budget is 600s")

    lines = (out_dir / "metrics.log").read_text().splitlines()
    parse = lambda line: float(line.split("top1=")[1].split()[0])
    train_top1 = parse([l for l in lines if " split=train " in l][-1])
    val_top1 = parse([l for l in lines if " split=val " in l][-1])
    if train_top1 < 0.95:
        problems.append(f"train top1 {train_top1:.3f} < 0.95")
    if val_top1 < 0.90:
        problems.append(f"held-out top1 {val_top1:.3f} < 0.90")

    _verdict(6, problems,
             f"2 classes x 32 streams, 40 of 200 allowed epochs in "
             f"{elapsed:.1f}s: initial loss {init_loss:.4f} vs ln2 "
             f"{ln2:.4f}, train top1 {train_top1:.3f} >= 0.95, held-out "
             f"top1 {val_top1:.3f} >= 0.90")


def test_criterion_7_bit_identical_reruns(toy_cache):
    """Same seed and config twice: logs and checkpoints match bytewise."""
    problems = []
    root, cache = toy_cache
    outputs = []
    for tag in ("det-a", "det-b"):
        out_dir = root / tag
        config_path = write_toy_config(root, f"{tag}.json", out_dir, cache)
        if main(["train", "--config", config_path]) != 0:
            problems.append(f"run {tag} failed")
        outputs.append(out_dir)

    for artifact in ("metrics.log", "last.ckpt", "best.ckpt"):
        a = (outputs[0] / artifact).read_bytes()
        b = (outputs[1] / artifact).read_bytes()
        if a != b:
            problems.append(f"{artifact} differs between identical runs")

    _verdict(7, problems,
             "two full toy runs with one seed/config: metrics.log, "
             "last.ckpt and best.ckpt are bit-identical")
