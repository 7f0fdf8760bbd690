"""Streaming detection with a live quantile threshold.

Memory stays bounded by the buffer size: only the last z observations and
their weight rows are kept, plus two small accumulators for the basis.
"""

import numpy as np
from _synthetic import clusters_with_outliers

from nsnmf import OnlineNSNMF
from nsnmf.online import LiveThreshold

X, labels = clusters_with_outliers(n_inliers=400, n_outliers=8, seed=3)
det = OnlineNSNMF(p=X.shape[1], k=3, buffer=20, seed=0)
live = LiveThreshold(quantile=0.95, window=200, warmup=20)

alarms = []
for i, row in enumerate(X):
    score = det.ingest(row)
    if score is not None and live.update(score):
        alarms.append(i)

print("phase at end:", det.phase.name)
print("live alarms:", alarms)
print("of which true outliers:", int(labels[alarms].sum()), "/", int(labels.sum()))
print("memory bound (bytes):", det.memory_bound())
print("rows scored:", len(det.scores), "of", len(X))
print("top 8 by score:", sorted(np.argsort(det.scores)[::-1][:8].tolist()))
