"""One check per acceptance criterion, each printing a PASS/FAIL line.

Criteria 6 and 7 need twelve desk-scale training runs (four model families,
three seeds).  They are cached by ``acceptance_support``; set
ACCEPTANCE_TRAIN=0 to report missing runs as failures instead of training them.
"""

import io
import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

import acceptance_support as sup
from torawnet.cli import dispatch
from torawnet.data import ProtocolEntry, gen_synthetic, parse_protocol, serialize_protocol
from torawnet.gradcheck import TOLERANCE, run_suite
from torawnet.metrics import compute_eer, eer_from_arrays, read_scores, ScoreRecord, write_scores
from torawnet.model import Checkpoint, ModelConfig, TORawNet, load_checkpoint, model_from_checkpoint, save_checkpoint
from torawnet.orthogonality import (
    OrthRegConfig,
    build_dbt_matrix,
    compute_padding,
    gram_center,
    orth_loss,
    self_convolution,
)
from torawnet.tcn import DilatedBlock, DilatedBlockConfig, dilation_schedule, receptive_field
from torawnet.tensor import ConvSpec, Tensor, conv1d, no_grad
from torawnet.training import OptimState, RunPlan, train_epoch

REPO = Path(__file__).resolve().parent.parent
TRAIN_MISSING = os.environ.get("ACCEPTANCE_TRAIN", "1") != "0"


def test_criterion_1_reproducibility_statement(acceptance):
    readme = (REPO / "README.md").read_text(encoding="utf-8")
    ok = "not reproducible" in readme and "ASVspoof" in readme
    acceptance("1", ok, "corpus-scale EER tables are declared not reproducible at desk scale (README, 'Scope')")
    assert ok


def test_criterion_2_gradient_suite(acceptance):
    start = time.perf_counter()
    errs = run_suite(points=10, seed=0)
    elapsed = time.perf_counter() - start
    required = ["conv1d", "affine", "elementwise_sigmoid", "batchnorm", "sinc_kernel", "fms", "gru",
                "cross_entropy", "orth_loss_stride1"]
    worst = max(errs, key=errs.get)
    ok = all(r in errs for r in required) and errs[worst] < TOLERANCE and elapsed < 120
    acceptance("2", ok, f"{len(errs)} ops x 10 points, worst rel. err. {errs[worst]:.2e} ({worst}), {elapsed:.1f} s")
    assert ok


def test_criterion_3_orthogonality_equivalences(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    # (a) DBT matrix-vector product vs conv1d
    worst_a = 0.0
    for _ in range(50):
        O, C, K = (int(v) for v in rng.integers(1, 5, size=3))
        spec = ConvSpec(int(rng.integers(1, 4)), int(rng.integers(0, 4)), int(rng.integers(1, 3)))
        T = spec.dilation * (K - 1) + 1 + int(rng.integers(0, 20))
        w, x = rng.normal(size=(O, C, K)), rng.normal(size=(1, C, T))
        y = conv1d(Tensor(x), Tensor(w), spec).data.ravel()
        worst_a = max(worst_a, float(np.max(np.abs(build_dbt_matrix(w, T, spec) @ x.ravel() - y))))
    # (b) center slice of the self-convolution vs the Gram matrix
    worst_b = 0.0
    for S in (1, 2, 3):
        w = rng.normal(size=(6, 2, 9))
        z = self_convolution(Tensor(w), OrthRegConfig(stride=S)).data
        worst_b = max(worst_b, float(np.max(np.abs(z[:, :, z.shape[2] // 2] - gram_center(w)))))
    # (c) orthonormal filters with stride = length never overlap: zero loss
    h = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], dtype=float) / 2
    loss_c = orth_loss(Tensor(h[:, None, :]), OrthRegConfig(stride=4)).item()
    # (d) interior rows of M M^T vs Z entries, stride 1
    O, C, K, T1 = 3, 2, 5, 24
    w = rng.normal(size=(O, C, K))
    M = build_dbt_matrix(w, T1)
    G = M @ M.T
    z = self_convolution(Tensor(w)).data
    T2, P = T1 - K + 1, K - 1
    worst_d = 0.0
    for i in range(O):
        for j in range(O):
            for t in range(P, T2 - P):  # rows whose full band lies inside the matrix
                for u in range(T2):
                    want = z[i, j, P + u - t] if abs(u - t) <= P else 0.0
                    worst_d = max(worst_d, abs(G[i * T2 + t, j * T2 + u] - want))
    elapsed = time.perf_counter() - start
    ok = worst_a <= 1e-12 and worst_b <= 1e-12 and loss_c == 0.0 and worst_d <= 1e-10 and elapsed < 60
    acceptance("3", ok, f"(a) {worst_a:.1e} (b) {worst_b:.1e} (c) loss={loss_c} (d) {worst_d:.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_4_padding_and_receptive_field(acceptance):
    cfg = OrthRegConfig(stride=1)
    pad, length = compute_padding(129, 1), cfg.output_length(129)
    schedule = dilation_schedule(12, 32)
    rf = receptive_field(schedule, 3)
    rng = np.random.default_rng(0)
    blocks = []
    for d in schedule:
        b = DilatedBlock(DilatedBlockConfig(2, 2, 3, d), rng, residual=False).eval()
        b.dil_conv.weight.data = np.abs(b.dil_conv.weight.data) + 0.1
        b.pointwise.weight.data = np.abs(b.pointwise.weight.data) + 0.1
        blocks.append(b)
    T = 601
    x = Tensor(np.zeros((1, 2, T)), requires_grad=True)
    y = x
    for b in blocks:
        y = b(y)
    y[:, 0, T // 2].sum().backward()
    support = np.flatnonzero(np.abs(x.grad).sum(axis=(0, 1)))
    probe = int(support[-1] - support[0] + 1)
    ok = (pad == 128 and length == 257 and length // 2 == 128 and schedule == [1, 2, 4, 8, 16, 32] * 2
          and rf == 253 and probe == 253)
    acceptance("4", ok, f"padding {pad}, length {length}, center {length // 2}, schedule {schedule[:6]}x2, "
                        f"receptive field {rf}, impulse probe {probe}")
    assert ok


def _brute_force_eer(bona, spoof):
    thresholds = sorted(set(bona) | set(spoof))
    far = [sum(s >= t for s in spoof) / len(spoof) for t in thresholds]
    frr = [sum(b < t for b in bona) / len(bona) for t in thresholds]
    for i in range(len(thresholds)):
        if far[i] == frr[i]:
            return far[i]
    for i in range(1, len(thresholds)):
        d0, d1 = far[i - 1] - frr[i - 1], far[i] - frr[i]
        if d0 > 0 > d1:
            return far[i - 1] + d0 / (d0 - d1) * (far[i] - far[i - 1])
    return (far[-1] + frr[-1]) / 2


def test_criterion_5_eer_oracle(acceptance):
    rng = np.random.default_rng(5)
    mismatches = 0
    for k in range(200):
        n = int(rng.integers(2, 101))
        nb = int(rng.integers(1, n))
        raw = rng.integers(0, 8, n).astype(float) if k % 2 else rng.normal(size=n)
        bona, spoof = raw[:nb] + 0.5, raw[nb:]
        if eer_from_arrays(bona, spoof)[0] != _brute_force_eer(list(bona), list(spoof)):
            mismatches += 1

    def recs(b, s):
        return [ScoreRecord(f"b{i}", v, "bonafide") for i, v in enumerate(b)] + [
            ScoreRecord(f"s{i}", v, "spoof") for i, v in enumerate(s)]

    perfect = compute_eer(recs([0.9, 0.8], [0.1, 0.2]))[0]
    third = compute_eer(recs([0.9, 0.8, 0.4], [0.6, 0.2, 0.1]))[0]
    random_eer = eer_from_arrays(rng.normal(size=10000), rng.normal(size=10000))[0]
    ok = mismatches == 0 and perfect == 0.0 and third == pytest.approx(1 / 3) and abs(random_eer - 0.5) < 0.05
    acceptance("5", ok, f"{200 - mismatches}/200 oracle matches; hand cases {perfect}, {third:.6f}, {random_eer:.3f}")
    assert ok


@pytest.fixture(scope="module")
def grid():
    runs = {}
    for family in sup.ORDER:
        for seed in sup.SEEDS:
            runs[family, seed] = sup.get_run(family, seed, train_missing=TRAIN_MISSING)
    return runs


def _median(values):
    return statistics.median(values) if values and None not in values else None


def test_criterion_6_end_to_end_learning(acceptance, grid):
    runs = [grid["TO-RawNet", s] for s in sup.SEEDS]
    if None in runs:
        acceptance("6", False, "desk-scale runs missing from the cache and training disabled")
        pytest.fail("runs missing")
    eers = [r["eval_eer"] for r in runs]
    med = _median(eers)
    total = sum(r["seconds"] for r in runs)
    eer_ok = med <= 0.10
    time_ok = total < 30 * 60
    acceptance("6", eer_ok and time_ok,
               f"TO-RawNet-S eval EER per seed {[round(e, 4) for e in eers]}, median {med:.4f} (<= 0.10: "
               f"{'yes' if eer_ok else 'no'}); 3-seed training time {total / 60:.1f} min on "
               f"{os.cpu_count()} CPU core(s) (< 30 min: {'yes' if time_ok else 'no'})")
    assert eer_ok, "median eval EER above 0.10"
    assert time_ok, f"3-seed runtime {total / 60:.1f} min exceeds 30 min"


def test_criterion_7a_regularizer_lowers_offdiagonal_mass(acceptance, grid):
    with_orth = [grid["TO-RawNet", s] for s in sup.SEEDS]
    without = [grid["TCN-RawNet", s] for s in sup.SEEDS]  # identical model with lambda = 0
    if None in with_orth + without:
        acceptance("7a", False, "desk-scale runs missing from the cache and training disabled")
        pytest.fail("runs missing")
    a = _median([r["sinc_offdiag"] for r in with_orth])
    b = _median([r["sinc_offdiag"] for r in without])
    ok = a < b
    acceptance("7a", ok, f"median Sinc off-diagonal Gram mass {a:.6f} (lambda=0.1) vs {b:.6f} (lambda=0)")
    assert ok


def test_criterion_7b_family_ordering(acceptance, grid):
    if any(v is None for v in grid.values()):
        acceptance("7b", False, "desk-scale runs missing", soft=True)
        return
    med = {f: _median([grid[f, s]["eval_eer"] for s in sup.SEEDS]) for f in sup.ORDER}
    ok = med["TO-RawNet"] <= min(med["Orth-RawNet"], med["TCN-RawNet"]) <= med["RawNet"]
    acceptance("7b", ok, "median eval EER " + ", ".join(f"{f} {v:.4f}" for f, v in med.items()), soft=True)


def _five_steps():
    train, _, _ = sup.splits()
    sub = type(train)(train.entries[:160], train.waveforms[:160])  # 160 / 32 = exactly five steps
    model = TORawNet(sup.desk_config("TO-RawNet", 0))
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    optim = OptimState.create(params, lr=5e-5)
    return train_epoch(model, sub, RunPlan(batch_size=32, lr=5e-5), optim, np.random.default_rng([0, 17])).step_losses


def test_criterion_8_determinism(acceptance, tmp_path):
    first, second = _five_steps(), _five_steps()
    traj_ok = len(first) == 5 and first == second

    gen_synthetic(160, 0, tmp_path / "a", 16000, counts=sup.COUNTS)
    gen_synthetic(160, 0, tmp_path / "b", 16000, counts=sup.COUNTS)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    corpus_ok = len(files) == 323 and all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)

    ckpt = sup.run_dir("TO-RawNet", 0) / "best.ckpt"
    if not ckpt.exists():
        model = TORawNet(sup.desk_config("TO-RawNet", 0))
        ckpt = tmp_path / "init.ckpt"
        save_checkpoint(ckpt, Checkpoint(model.cfg.to_dict(), model.state_dict()))
    for name in ("s1", "s2"):
        assert dispatch(["score", "--checkpoint", str(ckpt), "--wav-dir", str(tmp_path / "a" / "eval" / "wav"),
                         "--out-dir", str(tmp_path / name)]) == 0
    s1, s2 = ((tmp_path / n / "scores.txt").read_bytes() for n in ("s1", "s2"))
    scores_ok = s1 == s2 and s1.count(b"\n") == 60

    ok = traj_ok and corpus_ok and scores_ok
    acceptance("8", ok, f"5-step losses identical: {traj_ok} ({first[0]:.6f} ... {first[-1]:.6f}); "
                        f"corpus identical: {corpus_ok}; score files identical: {scores_ok}")
    assert ok


def test_criterion_9_round_trips(acceptance, tmp_path):
    entries = [ProtocolEntry("LA_0079", "LA_T_1138215", "-", "bonafide", "train"),
               ProtocolEntry("LA_0080", "LA_T_1000001", "A07", "spoof", "train")]
    proto_ok = parse_protocol(io.StringIO(serialize_protocol(entries)), "train") == entries

    rng = np.random.default_rng(9)
    recs = [ScoreRecord(f"u{i}", float(s)) for i, s in enumerate(rng.normal(size=50) * 5)]
    write_scores(tmp_path / "a.txt", recs)
    write_scores(tmp_path / "b.txt", read_scores(tmp_path / "a.txt"))
    back = read_scores(tmp_path / "a.txt")
    score_ok = ((tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
                and max(abs(a.score - b.score) for a, b in zip(recs, back)) <= 5e-7)

    model = TORawNet(ModelConfig(profile="S", input_samples=16000, gru_hidden=32, seed=4))
    x = Tensor(rng.normal(size=(2, 1, 16000)) * 0.1)
    model.train()
    model(x)  # non-trivial running statistics
    model.eval()
    with no_grad():
        before = model(x).data
    save_checkpoint(tmp_path / "m.ckpt", Checkpoint(model.cfg.to_dict(), model.state_dict(), epoch=1))
    restored = model_from_checkpoint(load_checkpoint(tmp_path / "m.ckpt")).eval()
    with no_grad():
        after = restored(x).data
    ckpt_ok = np.array_equal(before, after)

    ok = proto_ok and score_ok and ckpt_ok
    acceptance("9", ok, f"protocol {proto_ok}, scores {score_ok}, checkpoint logits bit-identical {ckpt_ok}")
    assert ok
