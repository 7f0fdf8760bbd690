"""Shared toy data: two clusters of inliers plus a few scattered outliers."""

import numpy as np

from nsnmf.data import normalize_minmax


def clusters_with_outliers(n_inliers=200, n_outliers=6, p=6, seed=0):
    rng = np.random.default_rng(seed)
    centres = rng.random((2, p))
    inliers = np.vstack([c + 0.03 * rng.standard_normal((n_inliers // 2, p)) for c in centres])
    outliers = rng.random((n_outliers, p)) * 1.6 - 0.3
    X = np.vstack([inliers, outliers])
    labels = np.r_[np.zeros(len(inliers), bool), np.ones(n_outliers, bool)]
    order = rng.permutation(len(X))
    return normalize_minmax(X[order]), labels[order]
