"""NS-NMF against three factorisation baselines on breast-cancer biopsies.

Needs the optional ``pydataset`` package (``pip install pydataset``). The
data are the complete-case biopsy records: every benign row plus ten
malignant ones drawn with a fixed seed, min-max scaled. Each detector flags
as many rows as there are malignant ones.
"""

import numpy as np
from pydataset import data

from nsnmf import HyperParams, SgdSchedule, detect_baseline, detect_offline, detect_online
from nsnmf.data import normalize_minmax
from nsnmf.evaluation import true_positives

b = data("biopsy").dropna()
X = b[[f"V{i}" for i in range(1, 10)]].to_numpy(float)
y = (b["class"] == "malignant").to_numpy()
rng = np.random.default_rng(0)
keep = np.sort(np.r_[np.flatnonzero(~y), rng.choice(np.flatnonzero(y), 10, replace=False)])
X, labels = normalize_minmax(X[keep]), y[keep]

n = int(labels.sum())
h = HyperParams(top_n=n)
sched = SgdSchedule(seed=0)
reports = {
    "ns-nmf": detect_offline(X, h, sched),
    "ns-nmf online": detect_online(X, h, seed=0),
}
for method in ("nmf", "gnmf", "snmf"):
    reports[method] = detect_baseline(X, method, n, schedule=sched)

for name, rep in reports.items():
    print(f"{name:14s} {true_positives(rep, labels)}/{n}")
