"""
Tuning gains with Jaya
======================

The optimizer first meets a toy problem, then tunes the barrier controller
on a short stretch of the desk stroke. Budgets are small so this runs in a
few seconds.
"""

import numpy as np

from emla_ctrl.config import load_scenario
from emla_ctrl.optimizer import JayaConfig, ScenarioObjective, default_bounds, optimize
from emla_ctrl.sim import compute_metrics, run

# Gains must stay positive, so the search box is positive as well. On the
# sphere the optimum then sits at the lower corner of the box.
cfg = JayaConfig((1e-6, 1e-6), (10.0, 10.0), n_c=15, generations=100, seed=0)
res = optimize(lambda x: float(np.sum(x**2)), cfg)
print("sphere best:", res.best, "f =", res.best_fx)

# The closed-loop objective is the root of the summed squared position and
# velocity errors over the run. Runs that hit a barrier are penalized.
sc = load_scenario().with_(duration=1.0, substeps=2)
lo, hi = default_bounds("drsblf")
objective = ScenarioObjective(sc, "drsblf")
print("objective with the stored gains:", objective(sc.gains.to_vector()))

res = optimize(objective, JayaConfig(lo, hi, n_c=10, generations=10, seed=3),
               callback=lambda g, best, mean, worst: print(f"generation {g:2d}  best {best:.4g}"))

# The winning vector drops straight back into a scenario.
tuned = objective.scenario_for(res.best)
print("position RMS with tuned gains:", compute_metrics(run(tuned)).position_rms)
