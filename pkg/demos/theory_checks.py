"""Linearization, identifiability and likelihood checks on small fixtures."""

import numpy as np

from regiontomo.metrics import scaling_bounds_check
from regiontomo.regions import GEOMETRIES, build_geometry, from_regions
from regiontomo.theory import (
    build_fixture,
    finite_difference_remainder,
    identifiability_report,
    kl_mle_identity_check,
    tangent_basis,
)

chain = from_regions(3, [[0, 1], [1, 2]], kind="chain3")
fx = build_fixture(chain, seed=0)
rng = np.random.default_rng(0)

# Full confusion perturbations leave a large kernel; per-qubit structure shrinks it.
for par in ("full", "tensor"):
    model = tangent_basis(fx, par)
    rep = identifiability_report(model)
    v = rng.standard_normal(model.dim)
    v /= np.linalg.norm(v)
    ratio = finite_difference_remainder(model, v, 1e-2) / finite_difference_remainder(model, v, 5e-3)
    print(f"{par:>6}: dim={rep.tangent_dim:4d} rank={rep.rank:3d} kernel={rep.kernel_dim:4d} "
          f"sigma_min={rep.sigma_min:.3e}  remainder ratio (t halved)={ratio:.3f}")

# Multinomial likelihood equals T*KL up to the empirical entropy.
rho, c = fx.regional_truths[0], fx.confusions_truth[0]
p = c @ fx.povm(0).probabilities(rho.matrix)
counts = rng.multinomial(5000, p / p.sum())
kl = kl_mle_identity_check(counts, rho, c)
print(f"NLL={kl.nll:.6f}  T*KL - T*H={kl.rhs:.6f}  rel. gap={kl.rel_discrepancy:.1e}")

# Parameter and communication counts against the scaling bounds.
for g in GEOMETRIES:
    rep = scaling_bounds_check(build_geometry(g))
    print(f"{g:>6}: " + ", ".join(f"{c.name}={'ok' if c.holds else 'FAIL'}" for c in rep.checks))
