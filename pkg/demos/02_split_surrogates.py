# # Split surrogates and their gradients
#
# The forward pass always uses hard splits.  The surrogate only decides
# which gradient flows back through a split.  Here we compare the three
# built-in choices.

import numpy as np

from grande.model import split_surrogate

z = np.array([-100.0, -10.0, -2.0, -1.0, -0.25, 0.0, 0.25, 1.0, 2.0, 10.0, 100.0])

print(f"{'z':>8} " + " ".join(f"{k:>20}" for k in ("softsign", "sigmoid", "entmoid")))
for value in z:
    cells = []
    for kind in ("softsign", "sigmoid", "entmoid"):
        s, d = split_surrogate(value, kind)
        cells.append(f"{s:8.4f} / {d:9.2e}")
    print(f"{value:8.2f} " + " ".join(f"{c:>20}" for c in cells))

# Softsign keeps a polynomially decaying gradient far from the threshold,
# sigmoid decays exponentially and entmoid is exactly flat beyond |z| = 2.
# A split whose samples all sit far from the threshold can therefore still
# move under softsign.

for kind in ("softsign", "sigmoid", "entmoid"):
    print(f"{kind:>8}: derivative at z=100 is {split_surrogate(100.0, kind)[1]:.3e}")
