"""
Gossip graphs and their spectral gap
====================================

Workers average their models in pairs. How fast information spreads depends on
rho, the second-largest eigenvalue magnitude of E[A^T A] over the random
pairing. The convergence constants grow quickly as rho approaches 1.
"""

import numpy as np

from adp2sgd import topology

# %%
# The ring splits workers into senders (even ids) and receivers (odd ids).
ring = topology.ring_partition(8)
print("senders:", sorted(ring.senders), "receivers:", sorted(ring.receivers))
print("edges:", sorted(ring.edges))

# %%
# Every sampled averaging matrix is doubly stochastic, so the model mean never moves.
rng = np.random.default_rng(0)
models = rng.normal(size=(8, 3))
A = topology.sample_gossip_matrix(ring, worker=0, rng=rng)
mixed = topology.apply_averaging(models, A)
print("paired workers:", A.pair)
print("mean drift:", np.abs(mixed.mean(axis=0) - models.mean(axis=0)).max())

# %%
# Exact spectral gap for a few graphs, plus a Monte-Carlo estimate.
for name, graph in [("ring K=2", topology.ring_partition(2)), ("complete K=4", topology.complete_graph(4)),
                    ("ring K=8", ring), ("complete K=8", topology.complete_graph(8)),
                    ("bipartite K=8", topology.full_bipartite(8))]:
    est = topology.estimate_spectral_gap(graph)
    print(f"{name:<14} rho = {est.rho:.6f}   rho_bar = {est.rho_bar:.4g}")

mc = topology.estimate_spectral_gap(topology.complete_graph(4), "monte_carlo", 100_000, rng)
print(f"Monte-Carlo rho for complete K=4: {mc.rho:.4f} (exact 2/3)")
