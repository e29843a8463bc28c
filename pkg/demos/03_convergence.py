"""
Noise-free convergence and the effect of gradient noise
=======================================================

On the quadratic task the optimum is known in closed form, so the gradient norm
of the averaged model can be tracked exactly. We compare synchronous SGD with
asynchronous gossip SGD, then add gradient noise of increasing variance.
"""

import dataclasses

import numpy as np

from adp2sgd import analysis, tasks, topology
from adp2sgd.engine import run_adpsgd, run_sync

# %%
# Synchronous SGD with full batches contracts the error by (1 - eta) per round.
task = tasks.make_task("quadratic", 5, 4, 8, seed=3)
trace = run_sync(task, topology.ring_partition(4), 0.0, None, 0.05, 8, 100, probe_stride=40)
for t, theta in trace.probes[:4]:
    print(f"round {t // 4:>3}: ||theta - w*|| = {np.linalg.norm(theta - task.optimum):.6e}")

# %%
# Asynchronous gossip SGD with the learning rate K / (B sqrt(T)). T here is far
# below the threshold where the bound is guaranteed, so a single seed may exceed it.
K, B, T = 8, 1, 10_000
task = dataclasses.replace(
    tasks.make_task("quadratic", 10, K, 16, seed=0, spread=0.001, heterogeneity=0.01), initial=np.ones(10)
)
eta = analysis.prop1_learning_rate(K, B, T)
trace = run_adpsgd(task, topology.complete_graph(K), 0.0, None, eta, B, T, probe_stride=100, lr_rule="prop1")
gap = tasks.loss(task, task.initial) - task.optimal_value
rhs = analysis.proposition1_bound(gap, task.lipschitz_grad, task.grad_var, task.worker_var, task.dim, 0.0, B, T)
report = analysis.convergence_report(trace, task, probe_stride=100, bound=rhs)
print(f"final ||grad F||^2 = {report.grad_norm_sq[-1]:.3e}")
print(f"running mean {report.mean_grad_norm_sq:.4f} vs bound {rhs:.4f}")
tau = analysis.max_staleness(trace)
rho = topology.estimate_spectral_gap(topology.complete_graph(K)).rho
print(f"measured staleness {tau}; iteration threshold for the bound: {analysis.proposition1_threshold(1.0, K, tau, rho):.3e}")

# %%
# Gradient noise raises the floor the iterates settle at. Paired seeds keep the
# batches and gossip partners identical across noise levels.
K, B, G, T = 8, 2, 1.0, 4000
task = tasks.make_task("quadratic", 20, K, 32, seed=1, clip_bound=G, spread=0.1, heterogeneity=0.3)
s = (G / B) ** 2
eta = analysis.prop1_learning_rate(K, B, T)
for sigma2 in (0.0, s, 4 * s):
    finals = []
    for seed in range(5):
        tr = run_adpsgd(task, topology.ring_partition(K), sigma2, None, eta, B, T, seed=seed, probe_stride=T)
        g = tasks.full_gradient(task, tr.final_theta)
        finals.append(g @ g)
    print(f"sigma^2 = {sigma2:<5}: mean final ||grad F||^2 = {np.mean(finals):.4f}")
