"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that pytest prints in an
"acceptance criteria" section at the end of the run.
"""

import math
import time

import numpy as np
import pytest

import reference_model as ref
from buildsensys import numerics as nx
from buildsensys.cli import main
from buildsensys.correlation import (
    RouteSet,
    cosine,
    daily_vectors,
    grouped_similarity,
    passing_probability,
    pearson,
    pearson_daily,
)
from buildsensys.dataset import prepare
from buildsensys.evaluation import evaluate
from buildsensys.metrics import mae, mape, rmse
from buildsensys.model import VARIANTS, ModelConfig, encode, forward
from buildsensys.numerics import Tensor
from buildsensys.synthetic import benchmark_suite
from buildsensys.training import TrainConfig, fit, mse_loss
from conftest import random_batch, random_params, record

def check(criterion, ok, detail):
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    record(criterion, ok, detail)
    assert ok, detail


def _resolvable_fixture(cfg, floor=1e-7):
    """First seed whose smallest analytic gradient entry is at least ``floor``.

    Central differences at step 1e-5 resolve about 1e-11 in float64; entries
    far below ``floor`` would measure roundoff, not the gradient.
    """
    for seed in range(100):
        params = random_params(cfg, seed)
        exo, hist, label = random_batch(cfg, batch=4, seed=seed + 1)

        def loss(P):
            y, _ = forward(P, cfg, exo, hist)
            return mse_loss(y, Tensor(label))

        tape = nx.GradientTape()
        grads = nx.backward(tape, loss({k: tape.parameter(k, v) for k, v in params.items()}))
        if min(float(np.abs(g).min()) for g in grads.values()) >= floor:
            return seed, params, loss
    raise AssertionError("no fixture with resolvable gradients")


def test_criterion_1_gradient_soundness():
    start = time.perf_counter()
    cfg = ModelConfig(L=6, n_occ=2, n_env=3, p=8, q=8, tau=1, dropout_rate=0.0)
    seed, params, loss = _resolvable_fixture(cfg)
    worst = nx.grad_check(loss, dict(params.items()), step=1e-5)
    elapsed = time.perf_counter() - start
    n = sum(a.size for _, a in params.items())
    check(1, worst < 1e-4 and elapsed < 60, f"max rel err {worst:.2e} over {n} entries (seed {seed}), {elapsed:.1f}s")


def test_criterion_2_attention_invariants():
    worst_sum, min_entry, worst_shift = 0.0, np.inf, 0.0
    rng = np.random.default_rng(0)
    variants = sorted(set(VARIANTS) - {"lstm"})
    for i in range(1000):
        variant = variants[i % len(variants)]
        cfg = ModelConfig(L=5, n_occ=3, n_env=2, p=4, q=4, variant=variant)
        params = random_params(cfg, i, scale=float(rng.uniform(0.1, 2.0))).tensors()
        exo, hist, _ = random_batch(cfg, batch=2, seed=10_000 + i)
        exo = exo * rng.uniform(0.5, 5.0)
        y, trace = forward(params, cfg, exo, hist)
        y2, _ = forward(params, cfg, exo, hist, logit_shift=float(rng.uniform(-50, 50)))
        for w in (trace.beta, trace.alpha, trace.gamma):
            if w is not None:
                worst_sum = max(worst_sum, float(np.max(np.abs(w.sum(axis=-1) - 1.0))))
                min_entry = min(min_entry, float(w.min()))
        worst_shift = max(worst_shift, float(np.max(np.abs(y.data - y2.data))))
    ok = worst_sum <= 1e-9 and min_entry >= 0 and worst_shift < 1e-12
    check(2, ok, f"max |sum-1| {worst_sum:.1e}, min weight {min_entry:.1e}, max shift change {worst_shift:.1e}")


def _pearson_oracle(b, t):
    n = len(b)
    mb, mt = sum(b) / n, sum(t) / n
    num = sum((x - mb) * (y - mt) for x, y in zip(b, t))
    return num / math.sqrt(sum((x - mb) ** 2 for x in b) * sum((y - mt) ** 2 for y in t))


def _cosine_oracle(b, t):
    return sum(x * y for x, y in zip(b, t)) / math.sqrt(sum(x * x for x in b) * sum(y * y for y in t))


def test_criterion_3_metric_oracles():
    pred, truth = [110.0, 180.0], [100.0, 200.0]
    errs = [abs(mae(pred, truth) - 15.0), abs(rmse(pred, truth) - math.sqrt(250.0)), abs(mape(pred, truth) - 10.0)]
    rng = np.random.default_rng(3)
    corr = 0.0
    for _ in range(200):
        b, t = rng.uniform(0, 500, 24), rng.uniform(0, 500, 24)
        corr = max(corr, abs(cosine(b, t) - _cosine_oracle(b.tolist(), t.tolist())),
                   abs(pearson(b, t) - _pearson_oracle(b.tolist(), t.tolist())))
    ok = max(errs) <= 1e-12 and corr <= 1e-12
    check(3, ok, f"metric error {max(errs):.1e}, correlation error {corr:.1e}")


def test_criterion_4_overfit():
    start = time.perf_counter()
    frame = benchmark_suite(seed=42, days=14, zones=2, env_channels=3)["road-a"]
    exo, hist, label, _ = prepare(frame, 6).windows("train")
    data = (exo[:32], hist[:32], label[:32])
    cfg = ModelConfig(L=6, n_occ=2, n_env=3, p=16, q=16)
    tc = TrainConfig(batch_size=32, learning_rate=0.001, max_epochs=2000, patience=2000, dropout_rate=0.0, seed=0)
    _, report = fit(cfg, tc, data)
    final = report.val_loss[-1]
    elapsed = time.perf_counter() - start
    ok = final < 1e-3 and report.steps <= 2000 and elapsed < 300
    check(4, ok, f"training loss {final:.2e} after {report.steps} steps, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_5_relative_ordering(ordering_results):
    results, elapsed = ordering_results
    relations = [("full", "seq2seq-attn"), ("seq2seq-attn", "seq2seq"), ("full", "Bwo/t"), ("full", "Bwo/c")]
    votes = {f"{a}<{b}": sum(r[a] < r[b] for r in results.values()) for a, b in relations}
    majority = len(results) // 2 + 1
    table = "; ".join(f"seed {s}: " + ", ".join(f"{k} {v:.2f}" for k, v in r.items()) for s, r in results.items())
    ok = all(v >= majority for v in votes.values()) and elapsed < 1800
    check(5, ok, f"votes {votes}, {elapsed:.0f}s | MAPE% {table}")


def test_criterion_6_correlation():
    outcomes = []
    for seed in (42, 43, 44):
        frame = benchmark_suite(seed=seed)["road-a"]
        groups = grouped_similarity(frame, "weekday_weekend")["groups"]
        days, _ = daily_vectors(frame)
        pr = pearson_daily(days)
        weekday = np.array([p for p, d in zip(pr, days) if d.weekday])
        frac = float(np.mean(weekday >= 0.5))
        cos_wd, cos_we = groups["weekday"]["cosine"]["mean"], groups["weekend"]["cosine"]["mean"]
        outcomes.append((cos_wd > cos_we and frac > 0.7, cos_wd, cos_we, frac))
    passed = sum(o[0] for o in outcomes)
    detail = ", ".join(f"cos {wd:.3f}/{we:.3f} pearson>=0.5 {fr:.1%}" for _, wd, we, fr in outcomes)
    check(6, passed >= 2, f"{passed}/3 seeds: {detail}")


def test_criterion_7_reproducibility(tmp_path):
    args = ["--set", "gen.days=30", "--set", "model.L=6", "--set", "model.p=8", "--set", "model.q=8",
            "--set", "train.max_epochs=3", "--seed", "42"]
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", "--out", str(out), *args]) == 0
        assert main(["evaluate", "--out", str(out), "--models", "buildsensys,arima", *args]) == 0
        blobs.append(((out / "checkpoint.json").read_bytes(), (out / "eval.json").read_bytes()))
    frame = benchmark_suite(seed=42, days=30)["road-a"]
    tc = TrainConfig(max_epochs=3, seed=42)
    reports = [evaluate(frame, ["buildsensys"], L=6, p=8, q=8, train_config=tc)[0].to_json() for _ in range(2)]
    ok = blobs[0] == blobs[1] and reports[0] == reports[1]
    check(7, ok, f"checkpoint identical {blobs[0][0] == blobs[1][0]}, EvalReport identical {blobs[0][1] == blobs[1][1]}")


def test_criterion_8_equivalence_reductions():
    worst_s2s, worst_lstm = 0.0, 0.0
    for seed in range(10):
        cfg = ModelConfig(L=6, n_occ=2, n_env=3, p=5, q=4, variant="seq2seq")
        params = random_params(cfg, seed)
        exo, hist, _ = random_batch(cfg, batch=3, seed=seed)
        y, _ = forward(params.tensors(), cfg, exo, hist)
        A = dict(params.items())
        for i in range(3):
            H = []
            h = s = np.zeros(cfg.p)
            for t in range(cfg.L):
                h, s = ref.cell(A, "enc", h, s, np.concatenate([exo[i, t, 2:], exo[i, t, :2]]))
                H.append(h)
            d = sd = np.zeros(cfg.q)
            for k in range(cfg.L - 1):
                y_tilde = A["fuse.w"] @ np.concatenate([[hist[i, k]], H[-1]]) + A["fuse.b"]
                d, sd = ref.cell(A, "dec", d, sd, np.array([y_tilde]))
            y_ref = A["out.v_y"] @ (A["out.W_y"] @ np.concatenate([H[-1], d]) + A["out.b_y"]) + A["out.b"]
            worst_s2s = max(worst_s2s, abs(y.data[i] - y_ref))

        cfg_c = ModelConfig(L=6, n_occ=2, n_env=3, p=5, q=4, variant="no_crossdomain_attention")
        params_c = random_params(cfg_c, seed)
        Hc, _ = encode(exo, params_c.tensors(), cfg_c)
        Ac = dict(params_c.items())
        for i in range(3):
            h = s = np.zeros(cfg_c.p)
            for t in range(cfg_c.L):
                h, s = ref.cell(Ac, "enc", h, s, np.concatenate([exo[i, t, 2:], exo[i, t, :2]]))
                worst_lstm = max(worst_lstm, float(np.max(np.abs(Hc.data[i, t] - h))))
    ok = worst_s2s <= 1e-10 and worst_lstm <= 1e-12
    check(8, ok, f"seq2seq max diff {worst_s2s:.1e}, encoder rollout max diff {worst_lstm:.1e}")


def test_criterion_9_passing_probability():
    counts = {"C": 500, "A": 102, "D": 100, "B": 80}
    routes = []
    for i in range(1000):
        route = [f"r{i % 7}"]
        route += [seg for seg, n in counts.items() if i < n]
        routes.append(tuple(route))
    pp = passing_probability(RouteSet(tuple(routes)))
    roads = {k: pp[k] for k in counts}
    ranking = sorted(roads, key=roads.get, reverse=True)
    expected = {"C": 0.5, "A": 0.102, "D": 0.1, "B": 0.08}
    ok = ranking == ["C", "A", "D", "B"] and all(abs(roads[k] - v) < 1e-15 for k, v in expected.items())
    check(9, ok, f"ranking {' > '.join(ranking)}, " + ", ".join(f"{k} {v:.1%}" for k, v in roads.items()))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
