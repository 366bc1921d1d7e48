"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are printed in the "acceptance criteria" section of the pytest summary.
Criteria 6 to 10 share one end-to-end run on the synthetic benchmark (about
15 minutes on one CPU core; criterion 10 runs it a second time).
"""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest
import torch

from helpers import brute_force_ot, fd_check
from motionkit.features import RATE_TABLE, rate_config, spectrogram_images, stft_spectrogram
from motionkit.harness.aggregate import AggregationConfig, activity_f1, frame_f1
from motionkit.harness.bench import BenchSpec, gen_benchmark
from motionkit.harness.dataset import SessionStore
from motionkit.harness.experiments import spectransform_parity, transfer_matrix
from motionkit.harness.splits import split_users
from motionkit.harness.train import TrainConfig, predict, train_motion_model
from motionkit.ingest import BASE_LOCATIONS, parse_manifest
from motionkit.nn import (
    Classifier,
    RepBlock,
    build_autoencoder,
    classifier_forward,
    cross_entropy,
    fuse_block,
    init_module,
    make_generator,
    mse,
    rep_block_forward,
    softmax_cross_entropy,
)
from motionkit.synthesis import (
    SinkhornProblem,
    SynthConfig,
    Synthesizer,
    align_pairs,
    build_cost,
    evaluate_synthesis,
    reconstruction_mse,
    sinkhorn,
    synthesis_loss,
    synthesize,
    train_autoencoder,
    train_synthesizer,
)

pytestmark = pytest.mark.slow


# -- 1. STFT oracle ----------------------------------------------------------


def _naive_columns(frame, cfg):
    """Every spectrogram column by an explicit O(N^2) DFT matrix."""
    n = cfg.stft_win
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    t_bins, f_bins = cfg.out_shape
    k = np.arange(f_bins)[:, None]
    m = np.arange(n)[None, :]
    basis = np.exp(-2j * np.pi * k * m / cfg.fft_len)
    out = np.zeros((t_bins, f_bins))
    for t in range(t_bins):
        seg = frame[t * cfg.stft_hop: t * cfg.stft_hop + n]
        seg = (seg - seg.mean()) * win
        out[t] = np.abs(basis @ seg)
    return out


def test_criterion_1_stft_oracle(criterion):
    cfg = rate_config(100)
    assert cfg.frame_len == 512
    rng = np.random.default_rng(1)
    frames = rng.normal(size=(100, 512))
    start = time.perf_counter()
    pipeline = stft_spectrogram(frames, cfg)
    elapsed = time.perf_counter() - start
    worst = max(float(np.abs(pipeline[i] - _naive_columns(f, cfg)).max())
                for i, f in enumerate(frames))
    ok = worst < 1e-6 and elapsed < 10
    criterion(1, ok, f"max abs err {worst:.2e} (< 1e-6), pipeline {elapsed:.3f} s (< 10 s)")
    assert ok


# -- 2. shape law ------------------------------------------------------------------


def test_criterion_2_shape_law(criterion):
    expected = {100: (128, 128), 75: (96, 96), 50: (96, 64), 25: (96, 32), 10: (38, 13)}
    got = {}
    rng = np.random.default_rng(2)
    for rate in expected:
        cfg = rate_config(rate)
        series = rng.normal(size=cfg.frame_len + 3 * cfg.frame_hop)
        got[rate] = tuple(spectrogram_images(series, cfg).shape[1:])
    ok = got == expected and {r: RATE_TABLE[r][1] for r in expected} == expected
    criterion(2, ok, "shapes " + ", ".join(f"{r} Hz {got[r][0]}x{got[r][1]}" for r in sorted(got)))
    assert ok


# -- 3. reparameterization -----------------------------------------------------------


def _random_block(rng, gen):
    in_ch = int(rng.integers(1, 9))
    stride = int(rng.integers(1, 3))
    out_ch = in_ch if rng.random() < 0.5 else int(rng.integers(1, 9))
    block = init_module(RepBlock(in_ch, out_ch, stride), gen)
    with torch.no_grad():
        for bn in (block.bn3, block.bn1, block.bn_skip):
            if bn is None:
                continue
            n = bn.num_features
            bn.weight.copy_(torch.rand(n, generator=gen) + 0.5)
            bn.bias.copy_(torch.randn(n, generator=gen) * 0.3)
            bn.running_mean.copy_(torch.randn(n, generator=gen) * 0.2)
            bn.running_var.copy_(torch.rand(n, generator=gen) + 0.5)
    x = torch.randn(2, in_ch, int(rng.integers(3, 17)), int(rng.integers(3, 17)), generator=gen)
    return block.eval(), x


def test_criterion_3_reparameterization(criterion):
    rng = np.random.default_rng(3)
    gen = make_generator(3)
    start = time.perf_counter()
    worst = 0.0
    with torch.no_grad():
        for _ in range(1000):
            block, x = _random_block(rng, gen)
            ref = rep_block_forward(x, block, "eval")
            fuse_block(block)
            worst = max(worst, float((ref - rep_block_forward(x, block, "fused")).abs().max()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    criterion(3, ok, f"1000 blocks, max |eval - fused| {worst:.2e} (< 1e-4), {elapsed:.1f} s (< 60 s)")
    assert ok


# -- 4. gradient suite ---------------------------------------------------------------


def _fd_rep_block(rng, i):
    block, _ = _random_block(rng, make_generator(100 + i))
    block = block.double()
    x = torch.from_numpy(rng.normal(size=(2, block.in_ch, 6, 5))).requires_grad_(True)
    mode = "train" if i % 2 else "eval"
    params = [x, block.conv3.weight, block.conv1.weight, block.bn3.weight, block.bn1.bias]
    return fd_check(lambda: rep_block_forward(x, block, mode), params, rng)


def _fd_classifier_ce(rng, i):
    head = init_module(Classifier(7, 4, (6, 5)), make_generator(i)).double()
    x = torch.from_numpy(rng.normal(size=(3, 7))).requires_grad_(True)
    y = torch.from_numpy(rng.integers(0, 4, size=3))
    params = [x, head.fc1.weight, head.fc2.weight, head.fc3.bias]
    return fd_check(lambda: cross_entropy(classifier_forward(x, head, True, i), y).reshape(1),
                    params, rng)


def _fd_mse(rng, i):
    a = torch.from_numpy(rng.normal(size=(4, 3))).requires_grad_(True)
    b = torch.from_numpy(rng.normal(size=(4, 3))).requires_grad_(True)
    return fd_check(lambda: mse(a, b).reshape(1), [a, b], rng)


SMALL_AE = dict(input_shape=(12, 10), channels=(2, 3, 4), hidden=6)


def _fd_encoder(rng, i):
    ae = build_autoencoder(i, **SMALL_AE).double()
    ae.fit_normalization(rng.random((4, 12, 10)))
    x = torch.from_numpy(rng.random((1, 12, 10))).requires_grad_(True)
    enc = ae.encoder
    params = [x, enc.convs[0].weight, enc.lstm.weight_ih_l0, enc.lstm.weight_hh_l0, enc.proj.weight]
    return fd_check(lambda: (enc(x) ** 2).sum().reshape(1), params, rng)


def _fd_decoder(rng, i):
    ae = build_autoencoder(i, **SMALL_AE).double()
    ae.fit_normalization(rng.random((4, 12, 10)))
    dec = ae.decoder
    # a 512-d standard-normal code saturates the LSTM gates of this tiny decoder,
    # leaving gradients at round-off level; 0.1 keeps the probe point informative
    z = torch.from_numpy(0.1 * rng.normal(size=(1, 512))).requires_grad_(True)
    params = [z, dec.seed_state.weight, dec.lstm.weight_ih_l0, dec.lstm.weight_hh_l0,
              dec.unproj.weight, dec.deconvs[-1].weight]
    return fd_check(lambda: dec(z), params, rng)


def _fd_synthesis(rng, i):
    src = build_autoencoder(2 * i, **SMALL_AE)
    tgt = build_autoencoder(2 * i + 1, **SMALL_AE)
    # fixed Sinkhorn iteration count keeps the map smooth for finite differences
    cfg = SynthConfig(lam=1.0, max_iters=30, tol=0.0, seed=i)
    synth = Synthesizer(src, tgt, cfg).double()
    xs = torch.from_numpy(rng.random((2, 12, 10)))
    xt = torch.from_numpy(rng.random((2, 12, 10)))
    f_t = synth.target_encoder(xt)

    def total():
        moved, out = synth(xs)
        return synthesis_loss(moved, f_t, out, xt)[0].reshape(1)

    params = [synth.cost_embedding, synth.decoder.unproj.weight, synth.decoder.deconvs[-1].weight]
    return fd_check(total, params, rng)


def _fd_build_cost(rng, i):
    e = torch.from_numpy(rng.normal(size=(5, 3))).requires_grad_(True)
    return fd_check(lambda: build_cost(e), [e], rng)


def _fd_numpy_ce(rng, i):
    z = rng.normal(size=5) * 3
    label = int(rng.integers(0, 5))
    _, grad = softmax_cross_entropy(z, label)
    eps = 1e-6
    num = np.zeros(5)
    for k in range(5):
        up, down = z.copy(), z.copy()
        up[k] += eps
        down[k] -= eps
        num[k] = (softmax_cross_entropy(up, label)[0] - softmax_cross_entropy(down, label)[0]) / (2 * eps)
    return float(np.linalg.norm(grad - num) / max(np.linalg.norm(grad), np.linalg.norm(num), 1e-6))


GRADIENT_OPS = {
    "rep_block": _fd_rep_block,
    "classifier+cross_entropy": _fd_classifier_ce,
    "mse": _fd_mse,
    "encoder": _fd_encoder,
    "decoder": _fd_decoder,
    "synthesis_path": _fd_synthesis,
    "build_cost": _fd_build_cost,
    "softmax_cross_entropy": _fd_numpy_ce,
}


def test_criterion_4_gradient_suite(criterion):
    rng = np.random.default_rng(4)
    worst = {name: max(fn(rng, i) for i in range(20)) for name, fn in GRADIENT_OPS.items()}
    ok = all(v < 1e-3 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion(4, ok, f"20 instances per op, worst rel err (< 1e-3): {detail}")
    assert ok


# -- 5. Sinkhorn -----------------------------------------------------------------------


def _uniform(n):
    return np.full(n, 1.0 / n)


def test_criterion_5_sinkhorn(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    violation, not_converged = 0.0, 0
    for _ in range(200):
        n = int(rng.integers(2, 65))
        lam = float(10 ** rng.uniform(-2, 0))
        a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        plan = sinkhorn(SinkhornProblem(rng.random((n, n)), a, b, lam=lam, max_iters=5000))
        not_converged += not plan.converged
        violation = max(violation, float(np.abs(plan.P.sum(1) - a).max()),
                        float(np.abs(plan.P.sum(0) - b).max()))
    part_a = violation < 1e-6

    # (b) uniform marginals, lambda = 0.01: every permuted-identity cost of
    # size 3 and 4, then 200 random continuous costs
    costs = []
    for n in (3, 4):
        for perm in itertools.permutations(range(n)):
            C = np.ones((n, n))
            C[np.arange(n), perm] = 0.0
            costs.append(C + 0.1)
    costs += [rng.random((3 + i % 2, 3 + i % 2)) for i in range(200)]
    rel = []
    for C in costs:
        n = C.shape[0]
        plan = sinkhorn(SinkhornProblem(C, _uniform(n), _uniform(n), lam=0.01, max_iters=5000))
        lp = brute_force_ot(C)
        rel.append((plan.cost(C) - lp) / lp)
    rel = np.array(rel)
    n_bad = int((np.abs(rel) > 0.01).sum())
    part_b = n_bad == 0
    elapsed = time.perf_counter() - start
    ok = part_a and part_b and elapsed < 120
    criterion(5, ok, f"(a) max marginal violation {violation:.3e} (< 1e-6, {not_converged} hit the "
                     f"iteration cap); (b) {n_bad}/{len(costs)} cases off the LP optimum by > 1% "
                     f"(worst {100 * rel.max():.2f}%); {elapsed:.1f} s (< 120 s)")
    assert ok


# -- 6 to 10: end-to-end benchmark run ---------------------------------------------------------

SUITE_SEED = 7
CLASSIFIER = TrainConfig(epochs=50, lr=1e-3, widths=(8, 16, 16), seed=0)
TRAIN_STRIDE, VAL_STRIDE = 16, 8
SYNTH_STRIDE = 8
AE_EPOCHS, SYNTH_EPOCHS = 20, 30


def run_suite(root) -> dict:
    """Benchmark generation through synthesis; returns every reported number."""
    t0 = time.perf_counter()
    manifest = gen_benchmark(BenchSpec(seed=SUITE_SEED, n_users=12), root / "bench")
    store = SessionStore(parse_manifest(manifest))
    split = split_users(store.users, SUITE_SEED)
    out: dict = {}

    def feats(rate, users, stride, locations=None):
        return store.featurize(rate, users=users, locations=locations, frame_stride=stride)

    train = feats(100, split.train_users, TRAIN_STRIDE)
    val = feats(100, split.val_users, VAL_STRIDE)
    test = feats(100, split.test_users, 1)
    rows = [(loc,) for loc in BASE_LOCATIONS] + [tuple(BASE_LOCATIONS)]
    report = transfer_matrix(rows, train, val, test, CLASSIFIER, keep_models=True)
    out["transfer_f1"] = report.f1.tolist()
    out["superset_avg"] = float(report.row_average[-1])
    out["dominance"] = report.diagonal_dominance()
    out["t_criterion6"] = time.perf_counter() - t0
    superset = report.models[-1]

    # 7: a 25 Hz superset model on native 25 Hz data and on spectransformed 100 Hz data
    m25 = train_motion_model(feats(25, split.train_users, TRAIN_STRIDE),
                             feats(25, split.val_users, VAL_STRIDE), CLASSIFIER)
    moved = store.featurize(100, users=split.test_users, transform_to=25)
    parity = spectransform_parity(m25, feats(25, split.test_users, 1), moved)
    out["parity"] = (parity.native_f1, parity.transformed_f1, parity.agreement)

    # 8: activity-level vs frame-level F1 of the 100 Hz superset model
    preds = predict(superset, test.images)
    out["activity_f1"] = activity_f1(test, preds, AggregationConfig(30.0))["average"]
    out["frame_f1"] = frame_f1(test, preds)["average"]

    # 9: Wrist -> Ankle synthesis, judged by the Ankle single-location model
    ankle_model = report.models[BASE_LOCATIONS.index("Ankle")]
    pair_locs = ["Wrist", "Ankle"]
    s_train = feats(100, split.train_users, SYNTH_STRIDE, pair_locs)
    s_val = feats(100, split.val_users, SYNTH_STRIDE, pair_locs)
    W, A = s_train.where(locations=["Wrist"]), s_train.where(locations=["Ankle"])
    Wv, Av = s_val.where(locations=["Wrist"]), s_val.where(locations=["Ankle"])
    Wt, At = test.where(locations=["Wrist"]), test.where(locations=["Ankle"])
    ae_w = train_autoencoder(W.images, Wv.images, epochs=AE_EPOCHS)
    ae_a = train_autoencoder(A.images, Av.images, epochs=AE_EPOCHS)
    si, ti = align_pairs(W, A)
    vsi, vti = align_pairs(Wv, Av)
    cfg = SynthConfig(epochs=SYNTH_EPOCHS)
    synth = train_synthesizer(ae_w, ae_a, W.images[si], A.images[ti], Wv.images[vsi],
                              Av.images[vti], cfg, source_location="Wrist", target_location="Ankle")
    a, b = align_pairs(Wt, At)
    rep = evaluate_synthesis(lambda x: predict(ankle_model, x), synthesize(Wt.images[a], synth),
                             At.labels[b], At.images[b], At.labels[b])
    out["synth_f1"] = (rep.f1_synthetic, rep.f1_real)
    self_synth = train_synthesizer(ae_a, ae_a, A.images, A.images, Av.images, Av.images, cfg,
                                   source_location="Ankle", target_location="Ankle")
    l_self = float(np.mean((synthesize(At.images, self_synth) - At.images) ** 2))
    out["self_recon"] = (l_self, reconstruction_mse(ae_a, At.images))
    return out


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    return run_suite(tmp_path_factory.mktemp("suite_a"))


def test_criterion_6_benchmark(suite, criterion):
    f1 = np.array(suite["transfer_f1"])
    dom = suite["dominance"]
    dominant = all(a and b for a, b in dom.values())
    ok = suite["superset_avg"] >= 95.0 and dominant and len(dom) == 6
    diag = ", ".join(f"{loc} {f1[i, i]:.1f}" for i, loc in enumerate(BASE_LOCATIONS))
    criterion(6, ok, f"superset average F1 {suite['superset_avg']:.2f} (>= 95); diagonal dominance "
                     f"{sum(a and b for a, b in dom.values())}/6 ({diag}); "
                     f"{suite['t_criterion6'] / 60:.1f} min (target < 30)")
    assert ok


def test_criterion_7_spectransform_parity(suite, criterion):
    native, transformed, agreement = suite["parity"]
    gap = abs(native - transformed)
    ok = gap <= 3.0
    criterion(7, ok, f"25 Hz model: native {native:.2f}, spectransformed 100 Hz {transformed:.2f}, "
                     f"gap {gap:.2f} (<= 3), label agreement {agreement:.3f}")
    assert ok


def test_criterion_8_activity_aggregation(suite, criterion):
    act, frm = suite["activity_f1"], suite["frame_f1"]
    ok = act >= frm
    criterion(8, ok, f"30 s activity F1 {act:.2f} >= frame F1 {frm:.2f}")
    assert ok


def test_criterion_9_synthesis(suite, criterion):
    syn, real = suite["synth_f1"]
    l_self, l_ae = suite["self_recon"]
    ratio = l_self / l_ae
    ok = real - syn <= 15.0 and abs(ratio - 1.0) <= 0.10
    criterion(9, ok, f"Wrist->Ankle F1 synthetic {syn:.2f} vs real {real:.2f} (gap <= 15); "
                     f"self-synthesis l_recon {l_self:.5f} vs autoencoder {l_ae:.5f} "
                     f"(ratio {ratio:.3f}, within 10%)")
    assert ok


def _numbers(d: dict) -> dict:
    return {k: v for k, v in d.items() if not k.startswith("t_")}


def test_criterion_10_determinism(suite, criterion, tmp_path_factory):
    again = run_suite(tmp_path_factory.mktemp("suite_b"))
    first, second = _numbers(suite), _numbers(again)
    differing = [k for k in first if repr(first[k]) != repr(second[k])]
    ok = not differing and len(first) == len(second)
    criterion(10, ok, f"second run of criteria 6-9: {len(first) - len(differing)}/{len(first)} "
                      f"reported quantities bit-identical" + (f" (differ: {differing})" if differing else ""))
    assert ok
