import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regiontomo.errors import ResourceLimitError, UndefinedLikelihoodError
from regiontomo.qmat import born, tensor_povm
from regiontomo.regions import build_geometry, from_regions
from regiontomo.theory import (
    build_fixture,
    finite_difference_remainder,
    identifiability_report,
    kernel_complement_basis,
    kl_mle_identity_check,
    linearized_map,
    quadratic_growth_probe,
    tangent_basis,
)

SINGLE = from_regions(1, [[0]])
CHAIN3 = from_regions(3, [[0, 1], [1, 2]])
TRIANGLE = from_regions(3, [[0, 1], [1, 2], [0, 2]])


@pytest.fixture(scope="module")
def single_full():
    return tangent_basis(build_fixture(SINGLE, seed=1), "full")


@pytest.fixture(scope="module")
def chain_models():
    fx = build_fixture(CHAIN3, seed=2)
    return tangent_basis(fx, "full"), tangent_basis(fx, "tensor")


def unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


# -- tangent basis -----------------------------------------------------------


def test_single_qubit_dimension(single_full):
    assert single_full.dim == 3 + 12


def test_identical_regions_share_state_block():
    twin = from_regions(2, [[0, 1], [0, 1]])
    model = tangent_basis(build_fixture(twin, seed=0), "full")
    assert model.n_state == 15  # one traceless 4x4 Hermitian, not two
    drho, _ = model.split(unit(np.random.default_rng(0), model.dim))
    assert np.abs(drho[0] - drho[1]).max() < 1e-12


@pytest.mark.parametrize("par", ["full", "tensor"])
def test_basis_orthonormal_and_feasible(chain_models, par):
    model = chain_models[0 if par == "full" else 1]
    amb = model.ambient_basis()
    assert np.abs(amb.T @ amb - np.eye(model.dim)).max() < 1e-10
    assert np.abs(model.ambient_constraints() @ amb).max() < 1e-10
    # the same holds for the Hermitian/trace part via split
    drho, dc = model.split(unit(np.random.default_rng(1), model.dim))
    for d in drho:
        assert np.allclose(d, d.conj().T) and abs(np.trace(d)) < 1e-12
    for d in dc:
        assert np.abs(d.sum(axis=0)).max() < 1e-12


def test_dimension_cap():
    with pytest.raises(ResourceLimitError):
        tangent_basis(build_fixture(build_geometry("ring"), seed=0), "full").matrix()


# -- linearized map ----------------------------------------------------------


def test_confusion_direction_annihilating_pi_gives_zero_column(single_full):
    model = single_full
    pi = model.pi_star[0]
    rng = np.random.default_rng(3)
    w = rng.standard_normal((3, 4))
    w -= np.outer(w @ pi, pi) / (pi @ pi)
    v = np.zeros(model.dim)
    v[model.n_state:] = w.reshape(-1)
    assert np.abs(model.apply(v)).max() < 1e-14
    assert np.linalg.norm(w) > 0.1


def test_state_direction_is_linear(single_full):
    model = single_full
    v = np.zeros(model.dim)
    v[0] = 1.0
    assert np.allclose(model.apply(3.5 * v), 3.5 * model.apply(v))
    a = linearized_map(build_fixture(SINGLE, seed=1))
    assert np.allclose(a @ v, model.apply(v))


def test_map_matches_columnwise_apply(chain_models):
    model = chain_models[1]
    mat = model.matrix()
    for k in (0, model.n_state, model.dim - 1):
        e = np.zeros(model.dim)
        e[k] = 1.0
        assert np.allclose(mat[:, k], model.apply(e), atol=1e-14)


@pytest.mark.parametrize("par", ["full", "tensor"])
def test_finite_difference_decay(chain_models, par):
    model = chain_models[0 if par == "full" else 1]
    rng = np.random.default_rng(4)
    for _ in range(5):
        v = unit(rng, model.dim)
        ratio = finite_difference_remainder(model, v, 1e-3) / finite_difference_remainder(model, v, 1e-4)
        assert 80 <= ratio <= 120
        ratio = finite_difference_remainder(model, v, 1e-2) / finite_difference_remainder(model, v, 5e-3)
        assert abs(ratio - 4) <= 0.5


# -- identifiability ---------------------------------------------------------


def test_single_qubit_rank_nullity(single_full):
    rep = identifiability_report(single_full)
    assert rep.kernel_dim >= 15 - 4
    assert rep.rank + rep.kernel_dim == rep.tangent_dim
    assert rep.sigma_min > 0
    assert np.isclose(rep.growth_constant_estimate, rep.sigma_min**2 / 8)


def test_tensor_structure_shrinks_kernel(chain_models):
    full, tensor = (identifiability_report(m) for m in chain_models)
    assert full.kernel_dim > 0
    assert tensor.kernel_dim < full.kernel_dim
    assert full.rank + full.kernel_dim == full.tangent_dim
    assert tensor.gap_ratio > 10


def test_triangle_tensor_kernel_smaller():
    fx = build_fixture(TRIANGLE, seed=3)
    full, tensor = (identifiability_report(fx, par) for par in ("full", "tensor"))
    assert tensor.kernel_dim < full.kernel_dim


def test_compressed_matrix_has_same_spectrum(chain_models):
    for model in chain_models:
        s1 = np.linalg.svd(model.matrix(), compute_uv=False)
        s2 = np.linalg.svd(model.compressed_matrix(), compute_uv=False)
        k = min(len(s1), len(s2))
        assert np.allclose(s1[:k], s2[:k], atol=1e-10)


def test_benchmark_full_kernel_reported():
    fx = build_fixture(build_geometry("ring"), seed=0)
    rep = identifiability_report(fx, "full")
    assert rep.kernel_dim > 0
    assert rep.kernel_dim >= rep.tangent_dim - sum(p.n_outcomes for p in fx.povms)
    assert rep.rank + rep.kernel_dim == rep.tangent_dim


# -- quadratic growth --------------------------------------------------------


def test_growth_probe_linear_limit_and_homogeneity(chain_models):
    model = chain_models[1]
    comp, ker = kernel_complement_basis(model)
    v = comp[:, 0]
    probe = quadratic_growth_probe(model, v, [1e-4, 2e-4])
    r1, r2 = probe.rows
    assert r1.feasible and r2.feasible
    assert abs(r1.ratio - probe.linear_limit) <= 0.01 * probe.linear_limit
    assert abs(r2.d2 / r1.d2 - 4) < 1e-9
    assert probe.quadratic_growth


def test_growth_probe_kernel_direction(chain_models):
    model = chain_models[0]
    _, ker = kernel_complement_basis(model)
    # smallest confusion entries are ~1e-5, so steps stay below that
    probe = quadratic_growth_probe(model, ker[:, 0], [1e-4, 1e-5, 1e-6])
    assert probe.in_kernel and not probe.quadratic_growth
    ratios = [row.ratio for row in probe.rows]
    assert ratios[2] < ratios[1] < ratios[0] < 1e-10
    # misfit is O(t^4), so the ratio falls by ~100 per decade
    assert 50 < ratios[0] / ratios[1] < 200


def test_growth_probe_lower_bound_on_complement(chain_models):
    model = chain_models[1]
    comp, _ = kernel_complement_basis(model)
    sigma_min = identifiability_report(model).sigma_min
    rng = np.random.default_rng(5)
    for _ in range(5):
        v = comp @ unit(rng, comp.shape[1])
        for row in quadratic_growth_probe(model, v, [1e-3, 1e-4]).rows:
            assert row.ratio >= 0.9 * sigma_min**2 / 2


def test_growth_probe_marks_infeasible_steps(single_full):
    rng = np.random.default_rng(6)
    probe = quadratic_growth_probe(single_full, unit(rng, single_full.dim), [10.0])
    assert not probe.rows[0].feasible and probe.rows[0].note
    with pytest.raises(ValueError):
        quadratic_growth_probe(single_full, 2 * unit(rng, single_full.dim), [1e-3])


# -- KL identity -------------------------------------------------------------


def test_kl_identity_exact_distribution():
    # maximally mixed qubit, ideal readout: predicted p is uniform, counts match it exactly
    counts = np.full(4, 25)
    rep = kl_mle_identity_check(counts, np.eye(2) / 2, np.eye(4))
    entropy_term = -100 * np.log(0.25)
    assert np.isclose(rep.nll, entropy_term) and np.isclose(rep.rhs, entropy_term)
    assert rep.rel_discrepancy < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_kl_identity_random_one_qubit(seed):
    fx = build_fixture(SINGLE, seed=seed)
    rho, c = fx.regional_truths[0], fx.confusions_truth[0]
    p = c @ born(rho, tensor_povm(1))
    counts = np.random.default_rng(seed).multinomial(1000, p / p.sum())
    assert kl_mle_identity_check(counts, rho, c, t_shots=1000).rel_discrepancy < 1e-9


def test_kl_identity_single_bin_and_errors():
    fx = build_fixture(SINGLE, seed=8)
    rho, c = fx.regional_truths[0], fx.confusions_truth[0]
    rep = kl_mle_identity_check(np.array([0, 0, 50, 0]), rho, c)
    assert rep.rel_discrepancy < 1e-12
    with pytest.raises(ValueError):
        kl_mle_identity_check(np.array([0, 0, 50, 0]), rho, c, t_shots=49)
    zero = np.diag([1.0, 0.0])
    c_det = np.zeros((4, 4))
    c_det[0, :] = 1.0
    with pytest.raises(UndefinedLikelihoodError):
        kl_mle_identity_check(np.array([0, 5, 0, 0]), zero, c_det)
