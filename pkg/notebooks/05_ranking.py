"""
Ranking a cloud of sampled trajectories
=======================================

Each step's samples are fitted with a bivariate Gaussian. A trajectory's score
is the sum of its per-step densities, and the highest score is the most
likely prediction.
"""

import numpy as np

from dcenet import ranking

rng = np.random.default_rng(3)
centre = np.cumsum(rng.normal(size=(12, 2)), axis=0)
devs = rng.normal(scale=0.5, size=(4, 12, 2))
cloud = np.concatenate([centre + devs, [centre], centre - devs])  # centre sits at index 4

pset = ranking.score_and_select(cloud)
print("scores:", np.round(pset.scores, 3))
print("most likely index:", pset.most_likely_index)

g = ranking.fit_step_gaussian(cloud[:, -1])
print("last-step fit:", g)
