"""Do methods differ across datasets? Rank within each dataset, then test the mean ranks."""

import numpy as np

from nsnmf import friedman_statistic, rank_methods

methods = ["a", "b", "c"]
# detections per dataset (rows) and method (columns)
counts = np.array([
    [9, 4, 5],
    [7, 7, 3],
    [8, 2, 6],
    [5, 3, 3],
    [10, 6, 4],
    [6, 5, 1],
])
ranks = rank_methods(counts, methods=methods)
print("mean ranks:", dict(zip(methods, ranks.mean_ranks.round(2))))

res = friedman_statistic(ranks)
plain = friedman_statistic(ranks, tie_correction=False)
print(f"chi2 = {res.statistic:.3f}, dof = {res.dof}, p = {res.p_value:.4f}")
print(f"without the tie correction: p = {plain.p_value:.4f}")
