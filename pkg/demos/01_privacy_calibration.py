"""
Calibrating the noise level for a privacy budget
================================================

Each step releases a clipped minibatch gradient plus Gaussian noise. The
accountant tracks the Renyi-DP cost of that step, adds the costs up over the
run, and converts the total to an (eps, delta) guarantee. Here we solve for the
noise variance that meets a target budget.
"""

from adp2sgd import privacy

# %%
# A feasible budget: 16 workers with 3125 records each, batch 256 and 20000 steps.
params = privacy.calibrate_sigma(eps=5.0, delta=0.01, mu=0.5, K=16, n1=3125, B=256, T=20000, G=1.0)
print(f"alpha = {params.alpha:.6f}  sigma^2 = {params.sigma2:.6g}")
for check in params.checks():
    print(("ok   " if check.ok else "FAIL ") + str(check))

# %%
# Running the accountant forward at the calibrated order reproduces the budget.
print("accounted eps after T steps:", privacy.accountant_epsilon(params))
for t in (0, params.T // 4, params.T):
    print(f"  released after t={t:>5}: eps = {privacy.per_iteration_epsilon(t, params):.4f}")

# %%
# A tighter budget with fewer steps fails: the required order alpha exceeds the
# range where the subsampling bound is valid.
try:
    privacy.calibrate_sigma(eps=2.0, delta=1e-5, mu=0.5, K=16, n1=3125, B=256, T=1000, G=1.0)
except privacy.InfeasibleBudgetError as err:
    print("infeasible:", err)

# %%
# The split mu between the composed cost and the conversion term can be searched.
best = privacy.find_mu(eps=5.0, delta=0.01, K=16, n1=3125, B=256, T=20000, G=1.0)
print(f"grid search picks mu = {best.mu:.2f} with sigma^2 = {best.sigma2:.6g}")
