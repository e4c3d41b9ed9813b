"""
Weights for a Gaussian target inside a Gaussian hull
====================================================

A ten-dimensional target centred at 10 is projected onto three controls
centred at 50, 200 and -50, all with the same equicorrelated covariance.
The controls' means straddle the target, so some convex mixture of their
tangent fields should land right on it.
"""

# %%
import numpy as np

from wproj.projection import ProjectOptions
from wproj.simulate import GaussianStudy, run_study, sample_gaussians

study = GaussianStudy(n=2000, seed=0)
target, *controls = sample_gaussians(study)
print("target mean  ", target.mean()[:3].round(2), "...")
for j, c in enumerate(controls, 1):
    print(f"control {j} mean", c.mean()[:3].round(2), "...")

# %%
# Exact OT at n=2000 takes a few seconds per control.
sr = run_study([target, *controls], ProjectOptions())
res = sr.result
print("lambda     ", res.lam.round(4))
print("KKT gap    ", f"{res.kkt_gap:.1e}")
print("residual   ", f"{res.objective:.4f}")
print("W2 to each ", res.per_control_w2.round(2))

# %%
# The weighted control means should sit on top of the target's, coordinate by coordinate.
for row in sr.mean_table(columns=5):
    print(f"{row.pop('row'):>18}", " ".join(f"{v:7.3f}" for v in row.values()))

# %%
# Larger samples pin the weights down; the entropic path handles n=10000 in about a minute.
fast = ProjectOptions(method="entropic", epsilon_scale=0.02, sinkhorn_tol=0.01,
                      sinkhorn_relaxation=1.6, sinkhorn_float32=True)
for n in (250, 1000, 4000):
    lam = run_study(sample_gaussians(GaussianStudy(n=n, seed=1)), fast).result.lam
    print(f"n={n:5d}", np.round(lam, 4))
