"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The two RL criteria (9 and 10) train real agents and take several minutes.
"""

from __future__ import annotations

import resource
import statistics
import time
from contextlib import contextmanager

import numpy as np
import pytest

from auxsearch import autodiff as ad
from auxsearch.analysis import AnalysisRecord, pattern_effect, welch_t_test
from auxsearch.autodiff import ParameterSet, Tensor
from auxsearch.cli import main as cli_main
from auxsearch.envs import scripted_baseline_return
from auxsearch.evolution import (
    EvolutionConfig,
    HammingFitness,
    aulc,
    mutate_replacement,
    next_generation_detailed,
    random_candidate,
    random_search,
    run_search,
)
from auxsearch.loss_dsl import (
    ALL_OPERATORS,
    FORWARD_DYNAMICS,
    NAMED_PATTERNS,
    LossCandidate,
    MaskPair,
    a2_winner,
    a2_winner_v,
    format_candidate,
    has_pattern,
    parse_candidate,
    search_space_size,
    validate,
)
from auxsearch.operators import TRAINING_EPS, LossBatch, OperatorParams, operator_loss
from auxsearch.rl_core import (
    Agent,
    LearningCurve,
    RLConfig,
    ReplayBuffer,
    actor_loss,
    aux_loss,
    critic_loss,
    critic_target,
    ema_update,
    sample_segments,
    temperature_loss,
    train_run,
)
from auxsearch.seeding import derive_rng

import oracles
from conftest import ACCEPTANCE


def report(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {n}: {detail}"


@contextmanager
def cpu_clock():
    """CPU seconds of this process plus finished child processes."""
    def now():
        own = resource.getrusage(resource.RUSAGE_SELF)
        kids = resource.getrusage(resource.RUSAGE_CHILDREN)
        return own.ru_utime + own.ru_stime + kids.ru_utime + kids.ru_stime

    box = {}
    start = now()
    yield box
    box["cpu"] = now() - start


def valid_random(n, seed, max_k=10):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        c = random_candidate(rng)
        if validate(c) and c.horizon <= max_k:
            out.append(c)
    return out


def filled_buffer(n=150, episode_len=30, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(6, 2, 1000)
    for t in range(n):
        buf.add(rng.normal(size=6), rng.uniform(-1, 1, 2), rng.normal(), rng.normal(size=6), False,
                t // episode_len)
    return buf


def worst_gradient_error(loss_fn, params: dict) -> float:
    # zero-initialized biases can put ReLU units exactly on their kink, where
    # finite differences are meaningless; a small jitter moves off it
    jitter = np.random.default_rng(len(params))
    for p in params.values():
        p.data = p.data + 0.05 * jitter.normal(size=p.shape)
    grads = ad.backward(loss_fn(), params)
    worst = 0.0
    for name, p in params.items():
        numeric = oracles.central_difference(lambda: loss_fn().item(), p.data)
        worst = max(worst, oracles.max_relative_error(grads[name], numeric))
    return worst


def test_criterion_01_space_size():
    value = search_space_size(10, 10)
    timings = []
    for _ in range(20):
        t = time.perf_counter()
        search_space_size(10, 10)
        timings.append(time.perf_counter() - t)
    ms = 1000 * statistics.median(timings)
    ok = (value == 749581981407880192000 == oracles.space_size_by_counting(10, 10)
          and f"{value:.1e}" == "7.5e+20" and ms < 1.0)
    report(1, ok, f"size={value} ({value:.1e}), {ms:.4f} ms")


def test_criterion_02_rejection_protocol():
    t = time.perf_counter()
    valid = 0
    agree = True
    for src, tgt in oracles.all_mask_pairs(1):
        v = bool(validate(LossCandidate(MaskPair(1, src, tgt))))
        valid += v
        agree &= v == oracles.brute_force_valid(1, src, tgt)
    elapsed = time.perf_counter() - t
    report(2, valid == 3024 and agree and elapsed < 1.0,
           f"{valid}/4096 valid, oracle agrees={agree}, {elapsed:.3f} s")


def test_criterion_03_a2_winners():
    w = a2_winner()
    v = a2_winner_v()
    checks = [
        w.horizon == 3,
        w.masks.source == oracles.element_bits(["s1", "a1", "a2", "a3"], 3),
        w.masks.target == oracles.element_bits(["r0", "r1", "s2", "s3"], 3),
        v.horizon == 9,
        v.masks.source == oracles.element_bits(
            ["s0", "a0", "a1", "s2", "a2", "a3", "r3", "a4", "r4", "a5", "a7", "s8", "a8", "r8"], 9),
        v.masks.target == oracles.element_bits(["s1", "s3", "a4", "s6", "s9"], 9),
        parse_candidate(format_candidate(w)) == w,
        parse_candidate(format_candidate(v)) == v,
        format_candidate(w) == "src:{s1,a1,a2,a3} tgt:{r0,r1,s2,s3} op:mse k:3",
    ]
    report(3, all(checks), f"{sum(checks)}/{len(checks)} bit-exact checks")


def test_criterion_04_mutation_statistics():
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    parent = a2_winner()
    src0 = np.array(parent.masks.source)
    tgt0 = np.array(parent.masks.target)
    flips = 0
    n = 100_000
    for _ in range(n):
        child = mutate_replacement(parent, rng)
        flips += int(np.sum(np.array(child.masks.source) != src0) + np.sum(np.array(child.masks.target) != tgt0))
    rate = flips / (n * 24)
    rate_ok = abs(rate - 1 / 24) <= 0.1 / 24

    cfg = EvolutionConfig()
    composition_ok = True
    for seed in range(10):
        srng = np.random.default_rng(100 + seed)
        # survivor sets of varied size, including a single survivor
        size = [1, 2, 5, 25][seed % 4]
        survivors = valid_random(size, 1000 + seed)
        kids = next_generation_detailed(survivors, cfg, srng)
        counts = {o: 0 for o in ("replacement", "crossover", "horizon", "random")}
        for k in kids:
            counts["crossover" if k.origin.startswith("crossover") else k.origin] += 1
        composition_ok &= (len(kids) == 100 and all(validate(k.candidate) for k in kids)
                           and counts == {"replacement": 50, "crossover": 20, "horizon": 10, "random": 20})
    elapsed = time.perf_counter() - t
    report(4, rate_ok and composition_ok and elapsed < 10.0,
           f"flip rate {rate:.5f} vs {1 / 24:.5f}, composition/validity ok={composition_ok}, {elapsed:.2f} s")


def test_criterion_05_gradients():
    t = time.perf_counter()
    errors = {}
    rng = np.random.default_rng(5)
    for spec in ALL_OPERATORS:
        y = Tensor(rng.normal(size=(6, 4)), True)
        yh = Tensor(rng.normal(size=(6, 4)), True)
        params = OperatorParams.for_spec(spec, 4)
        if params.bilinear is not None:
            params.bilinear.data = params.bilinear.data + 0.1 * rng.normal(size=(4, 4))
        tensors = {"y": y, "y_hat": yh, **params.tensors()}
        errors[spec.name] = worst_gradient_error(
            lambda: operator_loss(spec, LossBatch(y, yh), params, eps=TRAINING_EPS), tensors)

    small = RLConfig(latent_dim=9, hidden_dim=6, predictor_hidden=5)
    buf = filled_buffer()
    for i, cand in enumerate(valid_random(5, 55, max_k=6)):
        agent = Agent(6, 2, small, np.random.default_rng(i), cand)
        nets = agent.nets
        seg = sample_segments(buf, cand.horizon, 5, np.random.default_rng(i))
        params = {"enc." + k: p for k, p in nets.encoder.params.items()}
        params.update({"aux." + k: p for k, p in nets.aux.params.items()})
        errors[f"aux[{i}]"] = worst_gradient_error(
            lambda: aux_loss(nets.aux, seg, nets.encoder, nets.target_encoder), params)

    agent = Agent(6, 2, small, np.random.default_rng(9))
    nets = agent.nets
    batch = buf.sample_transitions(6, rng)
    target = critic_target(nets, batch, rng.standard_normal((6, 2)))
    params = {"enc." + k: p for k, p in nets.encoder.params.items()}
    params.update({"critic." + k: p for k, p in nets.critic.params.items()})
    errors["critic"] = worst_gradient_error(lambda: critic_loss(nets, batch, target), params)
    noise = rng.standard_normal((6, 2))
    errors["actor"] = worst_gradient_error(lambda: actor_loss(nets, batch.obs, noise)[0],
                                           dict(nets.actor.params.items()))
    log_pi = rng.normal(size=(6, 1))
    errors["temperature"] = worst_gradient_error(lambda: temperature_loss(nets, log_pi),
                                                 {"log_alpha": nets.log_alpha})
    elapsed = time.perf_counter() - t
    worst = max(errors, key=errors.get)
    report(5, errors[worst] < 1e-4 and elapsed < 30.0,
           f"{len(errors)} losses, worst rel. error {errors[worst]:.2e} ({worst}), {elapsed:.2f} s")


def test_criterion_06_ema_exactness():
    rng = np.random.default_rng(6)
    exact = True
    for tau in (0.0, 0.01, 0.05, 1.0):
        online = ParameterSet({"w": Tensor(rng.normal(size=(16, 8))), "b": Tensor(rng.normal(size=(1, 8)))})
        target = ParameterSet({"w": Tensor(rng.normal(size=(16, 8))), "b": Tensor(rng.normal(size=(1, 8)))})
        before = target.numpy()
        ema_update(target, online, tau)
        for name in before:
            expected = tau * online[name].data + (1.0 - tau) * before[name]
            exact &= bool(np.array_equal(target[name].data, expected))
    report(6, exact, "element-wise update bit-identical for tau in {0, 0.01, 0.05, 1}")


def test_criterion_07_stop_gradient():
    small = RLConfig(latent_dim=9, hidden_dim=6, predictor_hidden=5)
    buf = filled_buffer(n=300)
    candidates = [a2_winner(), a2_winner_v()] + valid_random(60, 77)
    ok = 0
    for i, cand in enumerate(candidates):
        agent = Agent(6, 2, small, np.random.default_rng(i), cand)
        nets = agent.nets
        seg = sample_segments(buf, cand.horizon, 8, np.random.default_rng(i))
        loss = aux_loss(nets.aux, seg, nets.encoder, nets.target_encoder)
        g_target = nets.target_encoder.params.backward(loss)
        g_online = nets.encoder.params.backward(loss)
        zero_target = all(np.all(g == 0.0) for g in g_target.values())
        nonzero_online = any(np.any(g != 0.0) for g in g_online.values())
        ok += zero_target and nonzero_online
    report(7, ok == len(candidates), f"{ok}/{len(candidates)} candidates satisfy the contract")


def test_criterion_08_surrogate_evolution():
    t = time.perf_counter()
    wins = ties = 0
    for trial in range(20):
        rng = derive_rng(trial, "surrogate", 0)
        target = random_candidate(rng)
        while not validate(target):
            target = random_candidate(rng)
        cfg = EvolutionConfig(population=20, stages=5, seed=trial)
        fitness = HammingFitness(target)
        evolved = max(r.score for r in run_search(cfg, fitness).records)
        baseline = max(r.score for r in random_search(cfg, fitness))
        wins += evolved > baseline
        ties += evolved == baseline
    elapsed = time.perf_counter() - t
    report(8, wins >= 18 and elapsed < 10.0,
           f"evolution beat random sampling in {wins}/20 trials ({ties} ties), {elapsed:.2f} s")


def test_criterion_09_rl_smoke():
    reference = scripted_baseline_return("pointmass-dense", 20, 0)
    threshold = 0.8 * reference
    config = RLConfig()
    # the warmup steps count toward the 20 000 environment steps
    budget = 20_000 - config.warmup_steps
    best = []
    with cpu_clock() as clock:
        for seed in range(5):
            curve = train_run(None, "pointmass-dense", budget, seed, config)
            best.append(max(curve.scores))
    median = statistics.median(best)
    minutes = clock["cpu"] / 60
    report(9, median >= threshold and minutes < 10.0,
           f"median best return {median:.1f} vs 0.8 x {reference:.1f} = {threshold:.1f} "
           f"(per seed {[round(b, 1) for b in best]}), {minutes:.1f} CPU-min")


def test_criterion_10_micro_search(tmp_path, capsys):
    cfg = tmp_path / "micro.toml"
    cfg.write_text("population = 8\nstages = 3\nbudget = 5000\nenv = \"pointmass-dense\"\n")
    logs = {}
    with cpu_clock() as clock:
        for workers in (1, 4):
            out = tmp_path / f"w{workers}"
            code = cli_main(["search", "--config", str(cfg), "--seed", "0",
                             "--workers", str(workers), "--out", str(out)])
            assert code == 0
            logs[workers] = (out / "search.jsonl").read_bytes()
    capsys.readouterr()
    n_records = len(logs[1].splitlines())
    identical = logs[1] == logs[4]
    minutes = clock["cpu"] / 60
    report(10, n_records == 24 and identical and minutes < 45.0,
           f"{n_records} records, workers 1 vs 4 byte-identical={identical}, {minutes:.1f} CPU-min")


def test_criterion_11_statistics():
    welch_ok = True
    for xs, ys, t_ref, p_ref in oracles.WELCH_REFERENCE:
        t, p, _ = welch_t_test(xs, ys)
        welch_ok &= abs(t - t_ref) < 1e-6 and abs(p - p_ref) < 1e-6

    rng = np.random.default_rng(11)
    gen = np.random.default_rng(12)
    with_, without = [], []
    while len(with_) < 50 or len(without) < 50:
        c = random_candidate(gen, prior="forward")
        if not validate(c):
            continue
        holds = has_pattern(c, FORWARD_DYNAMICS)
        if holds and len(with_) < 50:
            with_.append(AnalysisRecord(c, 50.0 + 10.0 + rng.normal(), "pointmass-dense", 1))
        elif not holds and len(without) < 50:
            without.append(AnalysisRecord(c, 50.0 + rng.normal(), "pointmass-dense", 1))
    rep = pattern_effect(with_ + without, "forward_dynamics")
    planted_ok = rep.p < 0.01 and abs(rep.mean_diff - 10.0) < 1.0

    agree = 0
    cands = valid_random(1000, 1111)
    for c in cands:
        agree += all(
            has_pattern(c, p) == oracles.subset_pattern(c.masks.source, c.masks.target,
                                                        [str(e) for e in p.source], [str(e) for e in p.target])
            for p in NAMED_PATTERNS.values())
    report(11, welch_ok and planted_ok and agree == 1000,
           f"welch reference ok={welch_ok}, planted diff {rep.mean_diff:+.2f} p={rep.p:.1e}, "
           f"patterns agree on {agree}/1000")


def test_criterion_12_aulc():
    curves = [
        ([100, 200, 300, 400, 500], 300.0),
        ([42], 42.0),
        ([7.5, 7.5, 7.5], 7.5),
        ([0.0, 10.0], 5.0),
        ([-1.0, 1.0, 3.0, 5.0], 2.0),
    ]
    ok = all(aulc(LearningCurve([(i + 1, v) for i, v in enumerate(vals)], 0)) == want for vals, want in curves)
    report(12, ok, f"{len(curves)} hand-built curves")
