"""A short walk through the tape.

Builds a cosine similarity between a parameter and a constant, checks the
analytic gradient against central differences, then shows what the tape
recorded along the way.
"""

import numpy as np

from graphlog import autodiff as ad
from graphlog.autodiff import Tensor

w = ad.parameter([1.0, 2.0, -0.5], name="w")
target = Tensor([0.5, 0.5, 0.5])

sim = ad.cosine_similarity(w, target)
print("ops on the tape:", [n.op for n in ad.current_tape().nodes])
ad.backward(sim)
print(f"cos(w, target) = {sim.item():.6f}")
print("analytic grad  =", np.round(w.grad, 8))

# central differences, one coordinate at a time
numeric = np.zeros(3)
for i in range(3):
    hi, lo = w.values.copy(), w.values.copy()
    hi[i] += 1e-6
    lo[i] -= 1e-6
    with ad.no_grad():
        numeric[i] = (ad.cosine_similarity(Tensor(hi), target).item()
                      - ad.cosine_similarity(Tensor(lo), target).item()) / 2e-6
print("numeric grad   =", np.round(numeric, 8))

# a zero vector is clamped instead of producing NaN
z = ad.cosine_similarity(Tensor([0.0, 0.0, 0.0]), target)
print("cos(0, target) =", z.item(), "| clamps so far:", ad.diagnostics["cosine_clamped"])

# strict mode turns silent NaNs into errors
with ad.strict_numerics():
    try:
        ad.relu(Tensor([1.0, np.nan]))
    except ad.NumericError as exc:
        print("strict mode:", exc)
