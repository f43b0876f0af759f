"""Regenerates lightgbm_small.txt, lightgbm_vectors.csv and lightgbm_expected.txt.

Requires the `lightgbm` and `numpy` Python packages. Outputs are committed; the
Rust tests only read them.
"""
import lightgbm as lgb
import numpy as np

rng = np.random.default_rng(20240611)
n, f = 2000, 6
x = rng.uniform(-2.0, 2.0, size=(n, f))
y = np.sin(x[:, 0]) + 0.5 * x[:, 1] * x[:, 2] - (x[:, 3] > 0.3) + 0.1 * rng.normal(size=n)

params = {
    "objective": "regression",
    "num_leaves": 16,
    "learning_rate": 0.2,
    "min_data_in_leaf": 10,
    "verbose": -1,
    "seed": 7,
    "deterministic": True,
    "force_row_wise": True,
}
booster = lgb.train(params, lgb.Dataset(x, label=y), num_boost_round=12)
booster.save_model("lightgbm_small.txt")

probe = rng.uniform(-2.5, 2.5, size=(100, f))
# exact threshold hits exercise the <= routing rule
for i in range(10):
    probe[i, 0] = 0.0
np.savetxt("lightgbm_vectors.csv", probe, delimiter=",", fmt="%.17g")
pred = booster.predict(probe, raw_score=True)
np.savetxt("lightgbm_expected.txt", pred, fmt="%.17g")
