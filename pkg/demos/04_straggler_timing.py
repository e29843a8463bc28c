"""
Stragglers in virtual time
==========================

The simulator charges each minibatch a compute time. A synchronous round waits
for its slowest worker; the asynchronous scheme keeps every fast worker busy.
"""

from adp2sgd import tasks, topology
from adp2sgd.engine import Scenario, run_adpsgd, run_sync, throughput_summary

K = 16
task = tasks.make_task("quadratic", 2, K, 8, seed=0)
ring = topology.ring_partition(K)

# %%
# Case I: in every iteration one random worker runs at half speed.
case1 = Scenario("random_slow", factor=2.0)
sync = throughput_summary(run_sync(task, ring, 0.0, case1, 0.1, 1, 100))
asyn = throughput_summary(run_adpsgd(task, ring, 0.0, case1, 0.01, 1, 10_000, probe_stride=10_000))
print("SYNC round time:", sync["round_times"][0], "(2 t_c + t_a)")
print(f"ADPSGD mean time per update: {asyn['mean_update_interval']:.4f} (expected 1.0625)")

# %%
# Case II: worker 0 is always ten times slower.
case2 = Scenario("fixed_straggler", factor=10.0, worker=0)
sync = throughput_summary(run_sync(task, ring, 0.0, case2, 0.1, 1, 100))
base = throughput_summary(run_adpsgd(task, ring, 0.0, None, 0.01, 1, 10_000, probe_stride=10_000))
slow = throughput_summary(run_adpsgd(task, ring, 0.0, case2, 0.01, 1, 10_000, probe_stride=10_000))
print("SYNC round time:", sync["round_times"][0], "(10 t_c + t_a)")
print(f"ADPSGD throughput vs homogeneous: {slow['updates_per_time'] / base['updates_per_time']:.4f} "
      f"(renewal prediction {15.1 / 16:.4f})")
print(f"max staleness with the straggler: {slow['max_staleness']}")
