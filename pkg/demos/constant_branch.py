"""Watch the constant solution lose nondegeneracy as eps shrinks.

On the flat unit torus with the double well and mass nu, the constant
solution u = nu is degenerate exactly when eps^2 times a Laplacian eigenvalue
equals 1 - 3 nu^2.  This script prints sigma_min along eps and compares the
dips with those predicted values.
"""
import numpy as np

from volac import Field, MetricSpec, degenerate_epsilons, double_well, min_singular, torus

N, NU = 32, 0.1
pot = double_well()
g = MetricSpec.identity(2)
u = Field.constant(torus(2, N).grid, NU)

predicted = degenerate_epsilons(pot, NU, torus(2, N), 2)
print("predicted degenerate eps:")
for eps, mult in predicted:
    print(f"  {eps:.6f}  (kernel dimension {mult})")

print("\n   eps      sigma_min   class")
for eps in np.linspace(0.12, 0.18, 13):
    rep = min_singular(eps, g, pot, u)
    print(f"  {eps:.4f}   {rep.sigma_min:.3e}   {rep.classification}")

eps1, _ = predicted[0]
rep = min_singular(eps1, g, pot, u)
print(f"\nat eps = {eps1:.6f}: {rep.classification}, sigma_min = {rep.sigma_min:.1e}")
