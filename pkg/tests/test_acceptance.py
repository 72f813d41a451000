"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np

from preferdiff import cli
from preferdiff import numerics as nx
from preferdiff.data import SequenceExample
from preferdiff.evaluation import generate, ndcg_at_k, rank_target, rank_targets, recall_at_k
from preferdiff.model import encode_sequence
from preferdiff.numerics import Tape, Tensor, finite_difference_gradient, relative_error
from preferdiff.objective import (
    LossConfig, bpr_diff_c, centroid, gradient_weight, measure, pairwise_upper, preferdiff_loss, simple_loss,
)
from preferdiff.sampler import SamplerConfig, ddim_step, sample
from preferdiff.schedule import build_linear_schedule, forward_noise

from conftest import SEEDS, synthetic
from test_evaluation import brute_metrics, brute_rank
from test_objective import _jensen_instance
from test_sampler import model, perfect

RANDOM_R5 = 5 / 200


def _max_grad_error(fn, arrays):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape():
        out = nx.tsum(fn(*leaves))
    grads = nx.backward(out, wrt=leaves)
    worst = 0.0
    for k, leaf in enumerate(leaves):
        def part(x, k=k):
            args = [Tensor(a) for a in arrays]
            args[k] = x
            return nx.tsum(fn(*args))

        worst = max(worst, relative_error(grads[leaf], finite_difference_gradient(part, arrays[k])))
    return worst


def test_criterion_01_gradient_oracle(criterion):
    start = time.perf_counter()
    cfg = LossConfig()  # default measure and |H|
    losses = {
        "simple": lambda a, b, c, e: simple_loss(a, b, cfg.measure),
        "pairwise_upper": lambda a, b, c, e: pairwise_upper(measure(cfg.measure, a, b), measure(cfg.measure, c, e)),
        "bpr_diff_c": lambda a, b, c, e: bpr_diff_c(measure(cfg.measure, a, b), measure(cfg.measure, c, e),
                                                    cfg.negatives),
        "preferdiff": lambda a, b, c, e: preferdiff_loss(cfg, a, b, c, e),
    }
    worst = {name: 0.0 for name in losses}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        arrays = [rng.standard_normal((1, 8)) for _ in range(4)]  # one-example batch, d=8
        for name, fn in losses.items():
            worst[name] = max(worst[name], _max_grad_error(fn, arrays))
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert criterion(1, ok, f"max rel err {detail}; {elapsed:.1f}s")


def test_criterion_02_schedule(criterion):
    start = time.perf_counter()
    sched = build_linear_schedule(2000, 1e-4, 0.02)
    ends = sched.betas[0] == 1e-4 and sched.betas[-1] == 0.02
    decreasing = bool(np.all(np.diff(sched.alpha_bars) < 0))
    rng = np.random.default_rng(0)
    e0 = np.array([1.0, -2.0, 1.5, 3.0])
    n = 1_000_000
    worst = 0.0
    # past t ~ 1200 the mean shrinks below the Monte-Carlo standard error of any affordable n
    for t in (1, 10, 100, 500, 1000):
        x = forward_noise(sched, np.broadcast_to(e0, (n, 4)), t, rng.standard_normal((n, 4)))
        ab = sched.alpha_bars[t - 1]
        worst = max(worst, np.max(np.abs(x.mean(0) - math.sqrt(ab) * e0) / np.abs(math.sqrt(ab) * e0)))
        worst = max(worst, np.max(np.abs(x.var(0) - (1 - ab)) / (1 - ab)))
    elapsed = time.perf_counter() - start
    ok = ends and decreasing and worst < 0.05 and elapsed < 10
    assert criterion(2, ok, f"endpoints {ends}, decreasing {decreasing}, worst moment error {worst:.2%}; "
                            f"{elapsed:.1f}s")


def test_criterion_03_loss_closed_forms(criterion):
    rng = np.random.default_rng(3)
    ln2 = math.log(2.0)
    zero_margin = 0.0
    for s in rng.uniform(0, 5, 50):
        zero_margin = max(zero_margin, abs(pairwise_upper(s, s).item() - ln2))
        for h in (1, 2, 8, 64):
            zero_margin = max(zero_margin, abs(bpr_diff_c(s, s, h).item() - ln2))
    endpoints = True
    centroid_gap = 0.0
    for _ in range(50):
        pp, ep, pn, en = (rng.standard_normal((3, 8)) for _ in range(4))
        for kind in ("l1", "l2", "huber", "cosine"):
            s_pos, s_neg = measure(kind, pp, ep).data, measure(kind, pn, en).data
            one = preferdiff_loss(LossConfig(1.0, kind, 4), pp, ep, pn, en).data
            zero = preferdiff_loss(LossConfig(0.0, kind, 4), pp, ep, pn, en).data
            endpoints &= np.array_equal(one, simple_loss(pp, ep, kind).data)
            endpoints &= np.array_equal(zero, bpr_diff_c(s_pos, s_neg, 4).data)
        neg = rng.standard_normal(8)
        s_pos = measure("l2", pp[0], ep[0]).item()
        via_centroid = bpr_diff_c(s_pos, measure("l2", centroid([neg]), en[0]).item(), 1).item()
        direct = pairwise_upper(s_pos, measure("l2", neg, en[0]).item()).item()
        centroid_gap = max(centroid_gap, abs(via_centroid - direct))
    ok = zero_margin <= 1e-12 and endpoints and centroid_gap <= 1e-12
    assert criterion(3, ok, f"|ln2 gap| {zero_margin:.1e}, lambda endpoints exact {endpoints}, "
                            f"|H|=1 gap {centroid_gap:.1e}")


def test_criterion_04_jensen_bound(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    sched = build_linear_schedule()
    worst = -np.inf
    for i in range(1000):
        lv, lc = _jensen_instance(rng, sched, 8, (2, 4, 8)[i % 3])
        worst = max(worst, lv - lc)
    elapsed = time.perf_counter() - start
    assert criterion(4, worst <= 1e-9 and elapsed < 10, f"max(V - C) {worst:.2e} over 1000; {elapsed:.1f}s")


def test_criterion_05_unit_norm_identity(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(2, 65))
        a, b = rng.standard_normal(d), rng.standard_normal(d)
        a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
        lhs = d * measure("l2", a, b).item()
        rhs = 2 * measure("cosine", a, b).item()
        worst = max(worst, abs(lhs - rhs))
    assert criterion(5, worst <= 1e-10, f"max gap {worst:.1e}")


def test_criterion_06_ddim(criterion):
    sched = build_linear_schedule()
    params, table = model()
    e0 = np.random.default_rng(6).standard_normal(6)
    perfect(params, e0)
    cond = encode_sequence(params, table, [1, 2])
    exact = all(np.array_equal(sample(params, sched, cond, SamplerConfig(s, 2.0, seed=1)), e0) for s in (1, 20, 2000))

    params, table = model(seed=1)
    rng = np.random.default_rng(7)
    examples = [SequenceExample(u, tuple(rng.integers(0, 30, size=rng.integers(0, 6))), int(rng.integers(0, 30)))
                for u in range(200)]
    cfg = SamplerConfig(20, 2.0, seed=9)
    runs = [generate(params, table, sched, examples, cfg, threads=k).tobytes() for k in (1, 1, 2, 4)]
    identical = len(set(runs)) == 1

    inv = 0.0
    for t in (1, 2, 100, 1999, 2000):
        x0, eps = rng.standard_normal(8), rng.standard_normal(8)
        e_t = forward_noise(sched, x0, t, eps)
        want = x0 if t == 1 else forward_noise(sched, x0, t - 1, eps)
        inv = max(inv, np.max(np.abs(ddim_step(sched, e_t, t, x0) - want)))
    ok = exact and identical and inv <= 1e-10
    assert criterion(6, ok, f"perfect denoiser exact {exact}, bit-identical over runs/threads {identical}, "
                            f"inversion error {inv:.1e}")


def test_criterion_07_hard_negative_weighting(criterion):
    margins = np.linspace(-10, 10, 100)  # log p(neg) - log p(pos): pos >> neg to neg >> pos
    w = np.array([gradient_weight(0.0, m) for m in margins])
    ok = bool(np.all(np.diff(w) > 0)) and w[0] < 0.01 and w[-1] > 0.99
    assert criterion(7, ok, f"w from {w[0]:.2e} to {w[-1]:.6f}, strictly increasing {bool(np.all(np.diff(w) > 0))}")


def test_criterion_08_directional_ablation(criterion):
    full = [synthetic(s, 0.5, "cosine") for s in SEEDS]
    base = [synthetic(s, 1.0, "l2") for s in SEEDS]
    r_full = [r.test.metrics["recall@5"] for r in full]
    r_base = [r.test.metrics["recall@5"] for r in base]
    wins = sum(a >= b for a, b in zip(r_full, r_base))
    floor = min(r_full + r_base) >= 4 * RANDOM_R5
    elapsed = sum(r.seconds for r in full + base)
    ok = wins >= 2 and floor and elapsed < 600
    pairs = " ".join(f"{a:.3f}/{b:.3f}" for a, b in zip(r_full, r_base))
    assert criterion(8, ok, f"R@5 full/baseline per seed {pairs}; wins {wins}/3; {elapsed:.0f}s")


def test_criterion_09_metrics(criterion):
    rng = np.random.default_rng(9)
    agree = True
    for _ in range(200):
        N, d = int(rng.integers(1, 1001)), int(rng.integers(1, 9))
        W = rng.standard_normal((N, d))
        if rng.random() < 0.3:
            W = np.round(W)
        E = rng.standard_normal((4, d))
        targets = rng.integers(0, N, size=4)
        ranks = rank_targets(E, W, targets)
        want = [brute_rank(E[i], W, int(targets[i])) for i in range(4)]
        agree &= ranks.tolist() == want and rank_target(E[0], W, int(targets[0])) == want[0]
        for k in (5, 10):
            r, n = brute_metrics(want, k)
            agree &= abs(recall_at_k(ranks, k) - r) <= 1e-12 and abs(ndcg_at_k(ranks, k) - n) <= 1e-12
    spot = ndcg_at_k([3], 5) == 0.5 and recall_at_k([3], 5) == 1.0 and ndcg_at_k([1], 5) == 1.0
    assert criterion(9, agree and spot, f"oracle agreement {agree}, spot values exact {spot}")


def test_criterion_10_initialization(criterion):
    normal = [synthetic(s, 0.5, "cosine").test.metrics["recall@5"] for s in SEEDS]
    small = [synthetic(s, 0.5, "cosine", 0.01).test.metrics["recall@5"] for s in SEEDS]
    wins = sum(a >= b for a, b in zip(normal, small))
    pairs = " ".join(f"{a:.3f}/{b:.3f}" for a, b in zip(normal, small))
    assert criterion(10, wins >= 2, f"R@5 normal/0.01-scaled per seed {pairs}; wins {wins}/3")


def test_criterion_11_end_to_end_determinism(criterion, tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        common = ["--out", str(out), "--interactions", str(out / "interactions.tsv"), "--seed", "11",
                  "--epochs", "3"]
        codes = [cli.main([cmd, *common]) for cmd in ("synth", "train", "evaluate")]
        outputs.append((codes, (out / "metrics.csv").read_bytes() if codes == [0, 0, 0] else b""))
    (codes_a, a), (codes_b, b) = outputs
    ok = codes_a == codes_b == [0, 0, 0] and a == b and len(a) > 0
    assert criterion(11, ok, f"exit codes {codes_a} {codes_b}, metrics.csv identical {a == b} ({len(a)} bytes)")
