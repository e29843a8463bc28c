"""
Convergence constants
=====================

The convergence theorem holds when C1 > 0, C2 >= 0 and C3 <= 1. These
constants depend on the learning rate, batch size, smoothness, staleness and the
gossip spectral gap.
"""

import numpy as np

from adp2sgd import analysis, topology

# %%
c = analysis.theorem1_constants(eta=0.01, B=1, L=1.0, tau=2, K=2, rho=0.0)
print(f"C1 = {c.C1:.6f}  C2 = {c.C2:.3e}  C3 = {c.C3:.6f}  admissible = {c.admissible}")

# %%
# Scanning eta upward: C1 turns negative at eta* = 1 / sqrt(24 B^2 L^2 (tau (K-1)/K + rho_bar)).
B, L, tau, K, rho = 4, 1.0, 3, 8, 6 / 7
rb = topology.rho_bar(K, rho)
eta_star = 1 / np.sqrt(24 * B**2 * L**2 * (tau * (K - 1) / K + rb))
for eta in eta_star * np.array([0.5, 0.99, 1.01]):
    flags = analysis.theorem1_constants(eta, B, L, tau, K, rho)
    print(f"eta = {eta:.3e}: C1 = {flags.C1:+.4f}, admissible = {flags.admissible}")

# %%
# Iteration threshold and rate of the K / (B sqrt(T)) learning-rate rule.
print("T_min(L=1, K=2, tau=0, rho=0) =", analysis.proposition1_threshold(1.0, 2, 0, 0.0))
print("T_min(L=1, K=8, tau=7, complete graph) = %.3e" % analysis.proposition1_threshold(1.0, 8, 7, 6 / 7))
print("bound example:", analysis.proposition1_bound(1.0, 1.0, 1.0, 0.0, 10, 1e-4, 16, 4096))

# %%
# Iteration count and utility of the private algorithm. The prescribed T is so
# large that the subsampling regime check fails, and the package says so.
p = analysis.proposition2_package(1.0, 1.0, 1.0, 0.1, B=256, mu=0.5, K=16, n1=3125, eps=5.0, delta=0.01,
                                  d=10, G=1.0)
print(f"T = {p.priv_T:.1f}, C4 = {p.C4:.4f}, utility bound = {p.priv_utility_rhs:.4f}, feasible = {p.feasible}")
