"""Batch detection: fit W and H with block SGD, flag the largest reconstruction errors.

The toy clusters are tight, so tree edges are short and their similarities
large; the structure term then dominates the fit. See 04_baselines.py for a
real dataset.
"""

from _synthetic import clusters_with_outliers

from nsnmf import HyperParams, SgdSchedule, detect_offline
from nsnmf.evaluation import precision_at_n

X, labels = clusters_with_outliers()
report = detect_offline(X, HyperParams(k=3, top_n=int(labels.sum())), SgdSchedule(seed=0))

print("flagged rows:", sorted(report.flagged_rows.tolist()))
print("true outliers:", sorted(labels.nonzero()[0].tolist()))
print(f"precision at n: {precision_at_n(report, labels):.2f}")
