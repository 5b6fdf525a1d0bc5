# # Instance-wise estimator weights
#
# Every leaf carries a weight logit.  A sample collects one logit per tree
# (from the leaf it lands in) and the softmax of those logits weights the
# trees for that sample only.  We plant a local rule in the data and check
# that the model gives rule-satisfying samples to specialised trees.

import numpy as np

from grande import TrainConfig, fit
from grande.explain import estimator_weights, explain_instance, weight_report

rng = np.random.default_rng(1)
n = 3000
x = rng.normal(size=(n, 5))
rule = x[:, 0] > 1.0
y = np.where(rule, 1, (x[:, 1] + x[:, 2] + rng.normal(0, 1.0, n) > 0.8).astype(int))
print(f"{rule.mean():.1%} of rows satisfy the rule")

config = TrainConfig(n_estimators=64, depth=4, max_epochs=30, lr_weights=0.05, seed=1)
params, _ = fit(x, y, config=config)

# ## How concentrated are the weights?

w = estimator_weights(params, x)
uniform = 1.0 / params.n_estimators
print(f"uniform weight 1/E = {uniform:.4f}")
print(f"mean max weight, rule rows:  {w[rule].max(axis=1).mean():.4f}")
print(f"mean max weight, other rows: {w[~rule].max(axis=1).mean():.4f}")

report = weight_report(params, x).to_dict()
for key in ("modal_argmax_share", "distinct_argmax", "skewness", "kurtosis", "mean_internal_nodes"):
    print(f"{key:>22}: {report[key]:.4g}")

# ## Explaining one rule-satisfying row
#
# The argmax tree is pruned against the data and printed as rules.

row = int(np.flatnonzero(rule)[0])
out = explain_instance(params, x[row], k=3, reference=x)
print(f"p(y=1) = {out['probability']:.3f}; top trees:",
      [(t["estimator"], round(t["weight"], 3)) for t in out["top_estimators"]])
print(out["rules"])
