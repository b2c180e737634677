"""Central-difference check of the BiLSTM gradients on a shrunk network.

Run: python demos/gradient_check.py
Shows the relative error per parameter group and how it moves with the step h.
"""
import numpy as np

from covid_acoustics import model as nn

p = nn.init_params(nn.Dims(6, 8, 8), seed=3)
p.flat[...] *= 4.0  # larger weights give gradients well above round-off
x = np.random.default_rng(3).normal(size=(6, 5))
y = 1

_, grads = nn.loss_and_grad(p, x, y)
for name in p.names():
    print(f"{name:14s} |grad| max {np.abs(grads[name]).max():.2e}")

for h in (1e-3, 1e-4, 1e-5, 1e-6):
    rep = nn.grad_check(p, x, y, h=h)
    print(f"h={h:.0e}: worst relative error {rep.max_rel_error:.2e} on {rep.worst_param}")
