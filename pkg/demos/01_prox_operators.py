"""Proximal operators of the non-negative group regularizer, on small vectors."""
import numpy as np

from invdiff import prox

x = np.array([-1.0, 3.0, 4.0])

# The ball version shrinks the positive part towards zero as a group.
# x+ = [0, 3, 4] has norm 5, so a radius of 2.5 halves it.
print(prox.prox_nonneg_group_ball(x, 2.5))

# Once the radius reaches the norm of x+, the whole group is switched off
print(prox.prox_nonneg_group_ball(x, 5.0))

# With weights xi the shrinkage is anisotropic: bins with large weights are
# penalized more and shrink faster.
xi = np.array([1.0, 2.0, 4.0])
y = prox.prox_nonneg_group_weighted(np.ones(3), xi, 0.3)
print(y)

# The weighted prox is x+ minus a projection onto an ellipsoid. The projection
# carries a Lagrange multiplier that is found numerically.
proj, lam = prox.project_ellipsoid(np.ones(3), xi, 0.3)
print(proj, lam)
print(np.linalg.norm(proj / xi))  # sits on the boundary, radius 0.3

# Moreau: prox of f plus prox of its conjugate gives back the input
rng = np.random.default_rng(0)
z = rng.normal(size=8)
w = np.exp(rng.normal(size=8))
p = prox.prox_nonneg_group_weighted(z, w, 0.7)
q = prox.prox_conjugate(z, w, 0.7)
print(np.max(np.abs(p + q - z)))

# On a whole K x M x N stack the group is the fiber of each pixel
stack = rng.normal(size=(4, 3, 3))
out = prox.apply_prox_stack(stack, threshold=2.0)
print(np.sqrt((out**2).sum(axis=0)).round(3))  # many pixels switched off
