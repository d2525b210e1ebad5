"""The dipole field behind the lattice constant alpha.

Prints psi_1 on a small window of offsets and checks it against the
punctured discrete Laplace equation it solves.
"""
import numpy as np

from twosep.coefficients import psi_table, transport_coefficients

c = transport_coefficients(2)
print(f"beta = {c.beta:.12f}, alpha = {c.alpha:.12f} (pi/2 - 1 = {np.pi / 2 - 1:.12f})")
t = psi_table(2, radius=10)
R = 4
print("psi_1(v1, v2), v2 down, v1 across")
for v2 in range(R, -R - 1, -1):
    print(" ".join(f"{t((v1, v2))[0]:8.4f}" for v1 in range(-R, R + 1)))

worst = 0.0
for v1 in range(-3, 4):
    for v2 in range(-3, 4):
        v = np.array([v1, v2])
        if not v.any():
            continue
        lap = sum(t(v + e) + t(v - e) for e in np.eye(2, dtype=int)) - 4 * t(v)
        worst = max(worst, float(np.abs(lap - v * (abs(v1) + abs(v2) == 1)).max()))
print(f"largest Laplace residual for |v| <= 3: {worst:.1e}")
