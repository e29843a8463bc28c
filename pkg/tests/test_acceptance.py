"""Acceptance criteria. Each test carries a ``criterion`` marker; the terminal summary
prints one PASS/FAIL line per criterion."""

from __future__ import annotations

import dataclasses
import json
import math
import time

import numpy as np
import pytest

from adp2sgd import analysis, cli, privacy, tasks, topology
from adp2sgd.config import parse_config_dict
from adp2sgd.engine import Scenario, run_adpsgd, run_sync, throughput_summary
from adp2sgd.errors import InfeasibleBudgetError, OutOfRegimeError
from adp2sgd.privacy import RdpCurvePoint
from adp2sgd.traceio import read_trace
import oracles as o

REL = 1e-12


def criterion(n, title):
    return pytest.mark.criterion(n, title)


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f} s, budget {self.seconds} s"


def central_difference(f, w, h=1e-6):
    g = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


# 1 ------------------------------------------------------------------------------------


@criterion(1, "accountant closed forms")
def test_c1_accountant_closed_forms():
    with Budget(1):
        assert privacy.gaussian_rdp(2, 1, 1).eps_rdp == pytest.approx(1.0, rel=REL)
        assert privacy.gaussian_rdp(3, 2, 4).eps_rdp == pytest.approx(1.5, rel=REL)
        assert privacy.subsampled_gaussian_rdp(2, 0.01, 1, 10).eps_rdp == pytest.approx(1e-4, rel=REL)
        pts = [RdpCurvePoint(2, e) for e in (0.1, 0.2, 0.3)]
        assert privacy.compose(pts).eps_rdp == pytest.approx(0.6, rel=REL)
        assert privacy.compose([RdpCurvePoint(2, 0.01)] * 1000).eps_rdp == pytest.approx(10.0, rel=REL)
        assert privacy.compose([]).eps_rdp == 0.0
        assert privacy.rdp_to_dp(RdpCurvePoint(2, 1), 1e-5) == pytest.approx(1 + math.log(1e5), rel=REL)
        assert privacy.rdp_to_dp(RdpCurvePoint(math.inf, 0.3), 1e-5) == 0.3
        assert privacy.rdp_to_dp(RdpCurvePoint(2, 0), 1.0) == 0.0


@criterion(1, "accountant closed forms")
def test_c1_out_of_regime_fails_loudly():
    with Budget(1):
        with pytest.raises(OutOfRegimeError):
            privacy.subsampled_gaussian_rdp(3, 0.01, 1, 10)
        with pytest.raises(OutOfRegimeError):
            privacy.subsampled_gaussian_rdp(2, 0.01, 1, 1)


# 2 ------------------------------------------------------------------------------------


@criterion(2, "calibration of the noise level")
def test_c2_feasible_calibration():
    with Budget(1):
        p = privacy.calibrate_sigma(**o.FEASIBLE)
        assert abs(p.alpha - 2.842068) <= 1e-6
        assert abs(p.sigma2 - 1.8189e-4) <= 1e-8
        assert all(c.ok for c in p.checks())
        step = privacy.subsampled_gaussian_rdp(p.alpha, p.gamma, p.delta2, p.sigma2)
        total = privacy.compose([step] * p.T)
        assert privacy.rdp_to_dp(total, p.delta) <= 5.0 * (1 + 1e-12)


@criterion(2, "calibration of the noise level")
def test_c2_infeasible_names_alpha_constraint():
    with Budget(1):
        with pytest.raises(InfeasibleBudgetError, match="alpha log-ratio bound") as info:
            privacy.calibrate_sigma(**o.INFEASIBLE)
        assert [c.name for c in info.value.failed] == ["alpha log-ratio bound"]


# 3 ------------------------------------------------------------------------------------


@criterion(3, "gossip invariants")
def test_c3_doubly_stochastic_and_mean_preserving():
    with Budget(5):
        rng = np.random.default_rng(2024)
        graphs = [topology.ring_partition(K) for K in (2, 4, 8, 16)] + [topology.full_bipartite(K) for K in (4, 8)]
        for n in range(10_000):
            g = graphs[n % len(graphs)]
            A = topology.sample_gossip_matrix(g, int(rng.integers(g.n_workers)), rng).entries
            assert A.min() >= 0
            assert np.max(np.abs(A.sum(axis=0) - 1)) <= 1e-12
            assert np.max(np.abs(A.sum(axis=1) - 1)) <= 1e-12
        for n in range(1000):
            g = graphs[n % len(graphs)]
            models = rng.normal(scale=100, size=(g.n_workers, 7))
            A = topology.sample_gossip_matrix(g, int(rng.integers(g.n_workers)), rng)
            out = topology.apply_averaging(models, A)
            assert np.max(np.abs(out.mean(axis=0) - models.mean(axis=0))) <= 1e-12


# 4 ------------------------------------------------------------------------------------


@criterion(4, "spectral gap")
def test_c4_spectral_gap():
    with Budget(10):
        assert abs(topology.estimate_spectral_gap(topology.ring_partition(2)).rho) <= 1e-10
        g = topology.complete_graph(4)
        assert abs(topology.estimate_spectral_gap(g).rho - 2 / 3) <= 1e-10
        mc = topology.estimate_spectral_gap(g, "monte_carlo", 100_000, np.random.default_rng(7))
        assert abs(mc.rho - 2 / 3) < 0.01


# 5 ------------------------------------------------------------------------------------


@criterion(5, "gradient oracles")
@pytest.mark.parametrize("kind", ["quadratic", "logistic", "mlp"])
def test_c5_gradients_match_finite_differences(kind):
    with Budget(10):
        task = tasks.make_task(kind, 4, 2, 10, seed=11)
        rng = np.random.default_rng(5)
        for _ in range(100):
            w = rng.normal(size=task.dim)
            k, i = int(rng.integers(2)), int(rng.integers(10))
            fd = central_difference(lambda v: tasks.per_sample_loss(task, v, k, i), w)
            g = tasks.per_sample_gradient(task, w, k, i)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)
            fd = central_difference(lambda v: tasks.loss(task, v), w)
            g = tasks.full_gradient(task, w)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)


# 6 ------------------------------------------------------------------------------------

C6_K = 8
C6_PILOT_T = 10_000
C6_BATCH = 1


def _c6_task():
    task = tasks.make_task("quadratic", 10, C6_K, 16, seed=0, spread=0.001, heterogeneity=0.01)
    return dataclasses.replace(task, initial=np.ones(10))


def _c6_run(task, T, seed, stride):
    eta = analysis.prop1_learning_rate(C6_K, C6_BATCH, T)
    return run_adpsgd(task, topology.complete_graph(C6_K), 0.0, None, eta, C6_BATCH, T, seed=seed,
                      probe_stride=stride, lr_rule="prop1")


@criterion(6, "noise-free convergence")
def test_c6_sync_geometric_decay():
    with Budget(60):
        task = tasks.make_task("quadratic", 5, 4, 8, seed=3)
        eta = 0.01
        tr = run_sync(task, topology.ring_partition(4), 0.0, None, eta, 8, 1000, probe_stride=4)
        e0 = task.initial - task.optimum
        assert len(tr.probes) == 1001
        for t, theta in tr.probes:
            assert np.max(np.abs((theta - task.optimum) - (1 - eta) ** (t // 4) * e0)) <= 1e-10


@criterion(6, "noise-free convergence")
def test_c6_adpsgd_at_prop1_threshold():
    """T = max(T_min, 10^4) with the measured staleness; fails when that T cannot run in the budget."""
    budget = 60.0
    task = _c6_task()
    start = time.perf_counter()
    pilot = _c6_run(task, C6_PILOT_T, 0, C6_PILOT_T)
    rate = C6_PILOT_T / (time.perf_counter() - start)
    tau = analysis.max_staleness(pilot)
    rho = topology.estimate_spectral_gap(topology.complete_graph(C6_K)).rho
    T = max(analysis.proposition1_threshold(task.lipschitz_grad, C6_K, tau, rho), C6_PILOT_T)
    projected = T / rate
    assert projected < budget, (
        f"T = max(T_min, 1e4) = {T:.3e} (tau={tau}, rho={rho:.4f}) needs ~{projected:.2e} s "
        f"at {rate:.0f} updates/s; runtime budget is {budget:.0f} s"
    )
    tr = _c6_run(task, math.ceil(T), 0, max(1, math.ceil(T) // 1000))
    g = tasks.full_gradient(task, tr.final_theta)
    assert g @ g < 1e-6


@criterion(6, "noise-free convergence")
def test_c6_adpsgd_converges_and_respects_bound_at_pilot_length():
    with Budget(60):
        task = _c6_task()
        gap = tasks.loss(task, task.initial) - task.optimal_value
        rhs = analysis.proposition1_bound(gap, task.lipschitz_grad, task.grad_var, task.worker_var, task.dim, 0.0,
                                          C6_BATCH, C6_PILOT_T)
        means = []
        for seed in range(10):
            tr = _c6_run(task, C6_PILOT_T, seed, 10)
            rep = analysis.convergence_report(tr, task, probe_stride=10, bound=rhs)
            assert rep.grad_norm_sq[-1] < 1e-6
            means.append(rep.mean_grad_norm_sq)
        assert np.mean(means) <= rhs


# 7 ------------------------------------------------------------------------------------


@criterion(7, "privacy-noise monotonicity")
def test_c7_noise_monotonicity():
    with Budget(300):
        K, B, G, T = 8, 2, 1.0, 4000
        task = tasks.make_task("quadratic", 20, K, 32, seed=1, clip_bound=G, spread=0.1, heterogeneity=0.3)
        s = (G / B) ** 2
        eta = analysis.prop1_learning_rate(K, B, T)
        graph = topology.ring_partition(K)
        finals = {}
        for sigma2 in (0.0, s, 4 * s):
            vals = []
            for seed in range(20):
                tr = run_adpsgd(task, graph, sigma2, None, eta, B, T, seed=seed, probe_stride=T)
                g = tasks.full_gradient(task, tr.final_theta)
                vals.append(float(g @ g))
            finals[sigma2] = np.mean(vals)
        levels = [finals[0.0], finals[s], finals[4 * s]]
        assert levels[0] <= levels[1] <= levels[2], levels


# 8 ------------------------------------------------------------------------------------

C8_K = 16


@pytest.fixture(scope="module")
def c8_task():
    return tasks.make_task("quadratic", 2, C8_K, 4, seed=0)


@criterion(8, "heterogeneity timing")
def test_c8_case1_sync_round_time(c8_task):
    with Budget(60):
        g = topology.ring_partition(C8_K)
        for t_a in (0.125, 0.1):
            tr = run_sync(c8_task, g, 0.0, Scenario("random_slow", factor=2, comm_time=t_a), 0.1, 1, 200)
            rounds = throughput_summary(tr)["round_times"]
            if t_a == 0.125:
                assert all(r == 2.0 + t_a for r in rounds)
            else:
                assert max(abs(r - (2.0 + t_a)) for r in rounds) <= 1e-12 * 200


@criterion(8, "heterogeneity timing")
def test_c8_case1_adpsgd_mean_update_time(c8_task):
    with Budget(60):
        tr = run_adpsgd(c8_task, topology.ring_partition(C8_K), 0.0, Scenario("random_slow", factor=2), 0.01, 1,
                        10_000, probe_stride=10_000)
        mean = throughput_summary(tr)["mean_update_interval"]
        assert abs(mean / 1.0625 - 1) <= 0.005, mean


@criterion(8, "heterogeneity timing")
def test_c8_case2_adpsgd_throughput(c8_task):
    with Budget(60):
        g = topology.ring_partition(C8_K)
        base = run_adpsgd(c8_task, g, 0.0, None, 0.01, 1, 10_000, probe_stride=10_000)
        slow = run_adpsgd(c8_task, g, 0.0, Scenario("fixed_straggler", factor=10, worker=5), 0.01, 1, 10_000,
                          probe_stride=10_000)
        ratio = throughput_summary(slow)["updates_per_time"] / throughput_summary(base)["updates_per_time"]
        assert abs(ratio / (15.1 / 16) - 1) <= 0.02, ratio


@criterion(8, "heterogeneity timing")
def test_c8_case2_sync_ten_times_slower(c8_task):
    with Budget(60):
        g = topology.ring_partition(C8_K)
        straggler = Scenario("fixed_straggler", factor=10, worker=5, comm_time=0.0)
        slow = throughput_summary(run_sync(c8_task, g, 0.0, straggler, 0.1, 1, 100))
        base = throughput_summary(run_sync(c8_task, g, 0.0, Scenario(comm_time=0.0), 0.1, 1, 100))
        assert all(s == 10 * b for s, b in zip(slow["round_times"], base["round_times"]))
        # with a nonzero allreduce time the round is 10 t_c + t_a
        with_comm = throughput_summary(run_sync(c8_task, g, 0.0, dataclasses.replace(straggler, comm_time=0.125),
                                                0.1, 1, 100))
        assert all(r == 10.125 for r in with_comm["round_times"])


# 9 ------------------------------------------------------------------------------------


@criterion(9, "theorem-constant evaluators")
def test_c9_constants_extended_precision():
    with Budget(1):
        c = analysis.theorem1_constants(0.01, 1, 1, 2, 2, 0.0)
        ref = o.compute_theorem1(0.01, 1, 1, 2, 2, 0.0)
        for got, want in zip((c.C1, c.C2, c.C3, c.rho_bar), ref):
            assert o.rel_err(got, want) <= 1e-9
        assert c.C1 == pytest.approx(0.9964, rel=1e-12)
        assert (c.c1_positive, c.c2_nonnegative, c.c3_at_most_one) == (ref[0] > 0, ref[1] >= 0, ref[2] <= 1)
        assert o.rel_err(topology.rho_bar(4, 2 / 3), o.compute_rho_bar(4, 2 / 3)) <= 1e-9
        assert o.rel_err(analysis.proposition1_threshold(1, 2, 0, 0), o.compute_T_min(1, 2, 0, 0)) <= 1e-9
        assert analysis.proposition1_threshold(1, 2, 0, 0) == 4096
        for B, mu in ((1, 0.5), (16, 0.3), (256, 0.9)):
            p = analysis.proposition2_package(1.0, 1.0, 1.0, 0.0, B, mu, 16, 3125, 5.0, 0.01, 10, 1.0)
            assert o.rel_err(p.C4, o.compute_C4(B, mu)) <= 1e-9
        big = analysis.theorem1_constants(1.0, 1, 1, 2, 2, 0.0)
        assert not big.c1_positive and not big.admissible


# 10 / 11 --------------------------------------------------------------------------------


def _c10_configs():
    base = {"schema_version": 1, "task": {"kind": "quadratic", "dim": 4, "n_workers": 8, "shard_sizes": 64,
                                          "clip_bound": 1.0}, "batch_size": 4, "probe_stride": 25}
    return {
        "raw_random_slow": {**base, "privacy": {"raw_sigma": 0.5}, "eta": 0.05, "iterations": 2000,
                            "scenario": {"kind": "random_slow", "factor": 2.0, "jitter": 0.2}},
        "calibrated_straggler": {**base, "privacy": {"calibrated": {"eps": 5.0, "delta": 0.01, "mu": "auto"}},
                                 "lr_rule": "prop1", "iterations": 1000,
                                 "scenario": {"kind": "fixed_straggler", "factor": 10.0, "worker": 2}},
        "calibrated_interleaved": {**base, "privacy": {"calibrated": {"eps": 4.0, "delta": 0.01, "mu": "auto"}},
                                   "eta": 0.05, "iterations": 1000, "engine": {"snapshot": "interleaved"},
                                   "task": {**base["task"], "kind": "logistic"}},
        "sync_calibrated": {**base, "mode": "sync", "privacy": {"calibrated": {"eps": 5.0, "delta": 0.01, "mu": "auto"}},
                            "eta": 0.1, "epochs": 125, "scenario": {"kind": "random_slow", "factor": 2.0}},
    }


@pytest.fixture(scope="module")
def c10_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("c10")
    start = time.perf_counter()
    out = {}
    for name, raw in _c10_configs().items():
        cfg = parse_config_dict(raw)
        out[name] = (cfg, cli.cmd_run(cfg, root / name / "a"), cli.cmd_run(cfg, root / name / "b"))
    return out, time.perf_counter() - start


@criterion(10, "determinism")
def test_c10_byte_identical_traces(c10_runs):
    runs, elapsed = c10_runs
    assert elapsed < 60
    for name, (_, a, b) in runs.items():
        assert a["trace"].read_bytes() == b["trace"].read_bytes(), name
        ra = json.loads(a["report"].read_text())
        rb = json.loads(b["report"].read_text())
        assert ra == rb, name


@criterion(11, "per-iteration privacy")
def test_c11_eps_spent_column(c10_runs):
    runs, _ = c10_runs
    checked = 0
    for name, (cfg, a, _) in runs.items():
        if cfg.privacy.calibrated is None:
            continue
        _, records = read_trace(a["trace"])
        T = cfg.total_updates
        eps = cfg.privacy.calibrated.eps
        for r in records:
            if r.event == "metric_probe":
                assert abs(r.eps_spent - math.sqrt(r.global_iter / T) * eps) <= 1e-9, name
                checked += 1
        assert records[-1].eps_spent == pytest.approx(eps, abs=1e-9)
    assert checked > 0
