"""Numeric checks of local identifiability, quadratic growth and the KL/likelihood identity.

All perturbations live in ambient real coordinates: regional Hermitian
matrices through the isometric map of :func:`regiontomo.qmat.herm_to_vec`
and confusion matrices entrywise (row-major).  Distances in these
coordinates are therefore plain Euclidean norms.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ResourceLimitError, UndefinedLikelihoodError
from .qmat import (
    DensityMatrix,
    Povm,
    herm_to_vec,
    partial_trace_operator,
    partial_trace_vector,
    tensor_povm,
    trace_coordinates,
    vec_to_herm,
)
from .regions import RegionGraph

MAX_TANGENT_DIM = 50_000
MAX_DENSE_ENTRIES = 40_000_000
KERNEL_RTOL = 1e-8


class Parameterization(str, enum.Enum):
    FULL = "full"
    TENSOR = "tensor"

    @classmethod
    def parse(cls, value) -> Parameterization:
        if isinstance(value, Parameterization):
            return value
        key = str(value).lower().replace("confusion", "")
        if key not in ("full", "tensor"):
            raise ValueError(f"unknown confusion parameterization {value!r}")
        return cls(key)


# ---------------------------------------------------------------------------
# fixtures


@dataclass
class Fixture:
    """Interior reference pair: full-rank regional states and strictly positive confusions.

    ``confusion_factors[r]`` holds the per-qubit 4x4 factors whose tensor
    product is ``confusions_truth[r]`` (first qubit most significant).
    """

    graph: RegionGraph
    regional_truths: list[DensityMatrix]
    confusions_truth: list[np.ndarray]
    confusion_factors: list[list[np.ndarray]] | None = None
    _povms: dict = field(default_factory=dict, repr=False)

    def povm(self, r: int) -> Povm:
        n = len(self.graph.regions[r])
        if n not in self._povms:
            self._povms[n] = tensor_povm(n)
        return self._povms[n]

    @property
    def povms(self) -> list[Povm]:
        return [self.povm(r) for r in range(self.graph.n_regions)]


def _kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


def random_qubit_confusion(rng: np.random.Generator, weight: float = 0.1) -> np.ndarray:
    """``(1 - w) I + w D`` with Dirichlet columns ``D``: column-stochastic, entrywise positive."""
    d = rng.dirichlet(np.ones(4), size=4).T
    return (1.0 - weight) * np.eye(4) + weight * d


def build_fixture(graph: RegionGraph, seed: int = 0, nu: float = 0.3,
                  confusion_weight: float = 0.1) -> Fixture:
    """Reference pair for identifiability checks on ``graph``.

    States are reductions of ``(1 - nu)|psi><psi| + nu I/Q`` with Haar
    ``psi`` (full rank for ``nu > 0``); confusions are tensor products of
    random per-qubit factors, so both parameterizations apply.
    """
    if not 0.0 < nu < 1.0:
        raise ValueError("nu must lie in (0, 1) for an interior reference")
    rng = np.random.default_rng(seed)
    q = graph.n_sites
    g = rng.standard_normal((2**q, 2)) @ np.array([1.0, 1j])
    psi = g / np.linalg.norm(g)
    truths, confs, factors = [], [], []
    for sites in graph.regions:
        red = partial_trace_vector(psi, q, list(sites))
        dim = red.shape[0]
        mat = (1.0 - nu) * red + (nu / dim) * np.eye(dim)
        truths.append(DensityMatrix(tuple(sites), 0.5 * (mat + mat.conj().T)))
        fs = [random_qubit_confusion(rng, confusion_weight) for _ in sites]
        factors.append(fs)
        confs.append(_kron_all(fs))
    return Fixture(graph=graph, regional_truths=truths, confusions_truth=confs,
                   confusion_factors=factors)


def _helmert(m: int) -> np.ndarray:
    """Orthonormal basis (columns) of the complement of the all-ones vector in R^m."""
    u = np.zeros((m, m - 1))
    for k in range(1, m):
        u[:k, k - 1] = 1.0
        u[k, k - 1] = -k
        u[:, k - 1] /= np.sqrt(k * (k + 1))
    return u


# ---------------------------------------------------------------------------
# linearized model


@dataclass
class _ConfusionBlock:
    """Orthonormal tangent basis of one region's confusion perturbations.

    Full: basis vector ``(a, j)`` is ``U[:, a] e_j^T``.  Tensor: basis is
    ``sum_k coeff[k, i] D_k`` over raw per-qubit directions ``D_k``.
    """

    m: int
    helmert: np.ndarray
    raw: list[tuple[int, np.ndarray]] | None = None  # (qubit, 4x4 delta) for tensor
    factors: list[np.ndarray] | None = None
    coeff: np.ndarray | None = None

    @property
    def dim(self) -> int:
        if self.coeff is None:
            return self.m * (self.m - 1)
        return self.coeff.shape[1]

    def raw_matrix(self, k: int) -> np.ndarray:
        j, delta = self.raw[k]
        mats = list(self.factors)
        mats[j] = delta
        return _kron_all(mats)

    def ambient(self, coeffs: np.ndarray) -> np.ndarray:
        """``Delta C`` (M x M) for tangent coordinates ``coeffs``."""
        if self.coeff is None:
            return self.helmert @ coeffs.reshape(self.m - 1, self.m)
        w = self.coeff @ coeffs
        out = np.zeros((self.m, self.m))
        for k, wk in enumerate(w):
            if wk != 0.0:
                out += wk * self.raw_matrix(k)
        return out

    def images(self, pi: np.ndarray) -> np.ndarray:
        """Columns ``Delta C_k pi`` for every basis direction."""
        if self.coeff is None:
            return np.kron(self.helmert, pi[None, :])
        raw = np.stack([self._raw_apply(k, pi) for k in range(len(self.raw))], axis=1)
        return raw @ self.coeff

    def compressed(self, pi: np.ndarray) -> np.ndarray:
        """A matrix with the same Gram ``(images)(images)^T`` but fewer columns."""
        if self.coeff is None:
            return np.linalg.norm(pi) * self.helmert
        return self.images(pi)

    def _raw_apply(self, k: int, pi: np.ndarray) -> np.ndarray:
        j, delta = self.raw[k]
        n = len(self.factors)
        t = pi.reshape((4,) * n)
        for i in range(n):
            mat = delta if i == j else self.factors[i]
            t = np.moveaxis(np.tensordot(mat, t, axes=([1], [i])), 0, i)
        return t.reshape(-1)


def _tensor_block(factors: Sequence[np.ndarray]) -> _ConfusionBlock:
    n = len(factors)
    m = 4**n
    h4 = _helmert(4)
    raw = []
    for j in range(n):
        for a in range(3):
            for col in range(4):
                delta = np.zeros((4, 4))
                delta[:, col] = h4[:, a]
                raw.append((j, delta))
    # ambient Gram via <kron X_i, kron Y_i> = prod <X_i, Y_i>
    fro = [[float(np.sum(f * f)) for f in factors]]
    nraw = len(raw)
    gram = np.empty((nraw, nraw))
    for k, (jk, dk) in enumerate(raw):
        for l, (jl, dl) in enumerate(raw):
            val = 1.0
            for i in range(n):
                x = dk if i == jk else factors[i]
                y = dl if i == jl else factors[i]
                val *= float(np.sum(x * y)) if (i in (jk, jl)) else fro[0][i]
            gram[k, l] = val
    w, v = np.linalg.eigh(gram)
    keep = w > 1e-12 * w[-1]
    coeff = v[:, keep] / np.sqrt(w[keep])
    return _ConfusionBlock(m=m, helmert=_helmert(m), raw=raw, factors=list(factors), coeff=coeff)


@dataclass
class LinearizedModel:
    """Tangent space of the feasible set at a reference pair and the linearized prediction map."""

    graph: RegionGraph
    rho_star: list[np.ndarray]
    c_star: list[np.ndarray]
    born: list[np.ndarray]
    parameterization: Parameterization
    state_basis: np.ndarray  # (sum Q_r^2, n_state), orthonormal
    state_offsets: list[int]
    conf_blocks: list[_ConfusionBlock]
    constraint_matrix: np.ndarray = field(repr=False)

    @property
    def n_state(self) -> int:
        return self.state_basis.shape[1]

    @property
    def conf_dims(self) -> list[int]:
        return [b.dim for b in self.conf_blocks]

    @property
    def dim(self) -> int:
        return self.n_state + sum(self.conf_dims)

    @property
    def output_dim(self) -> int:
        return sum(b.shape[0] for b in self.born)

    @property
    def pi_star(self) -> list[np.ndarray]:
        return [b @ herm_to_vec(r) for b, r in zip(self.born, self.rho_star)]

    def split(self, v: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Ambient perturbations ``(Delta rho_r, Delta C_r)`` of tangent coordinates ``v``."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}")
        xs = self.state_basis @ v[: self.n_state]
        drho = [
            vec_to_herm(xs[self.state_offsets[r]: self.state_offsets[r + 1]])
            for r in range(len(self.born))
        ]
        dc = []
        pos = self.n_state
        for blk in self.conf_blocks:
            dc.append(blk.ambient(v[pos: pos + blk.dim]))
            pos += blk.dim
        return drho, dc

    def apply(self, v: np.ndarray) -> np.ndarray:
        drho, dc = self.split(v)
        out = []
        for b, c, pi, d_r, d_c in zip(self.born, self.c_star, self.pi_star, drho, dc):
            out.append(d_c @ pi + c @ (b @ herm_to_vec(d_r)))
        return np.concatenate(out)

    def _state_images(self) -> np.ndarray:
        rows = []
        for r, (b, c) in enumerate(zip(self.born, self.c_star)):
            sl = slice(self.state_offsets[r], self.state_offsets[r + 1])
            rows.append(c @ (b @ self.state_basis[sl]))
        return np.vstack(rows)

    def matrix(self) -> np.ndarray:
        """Dense ``A o B``: one column per tangent basis direction."""
        if self.output_dim * self.dim > MAX_DENSE_ENTRIES:
            raise ResourceLimitError(
                f"dense linearized map would hold {self.output_dim * self.dim} entries"
            )
        cols = [self._state_images()]
        offs = np.cumsum([0] + [b.shape[0] for b in self.born])
        for r, (blk, pi) in enumerate(zip(self.conf_blocks, self.pi_star)):
            img = blk.images(pi)
            block = np.zeros((self.output_dim, img.shape[1]))
            block[offs[r]: offs[r + 1]] = img
            cols.append(block)
        return np.hstack(cols)

    def compressed_matrix(self) -> np.ndarray:
        """Same nonzero singular values as :meth:`matrix` with at most ``n_state + sum M_r`` columns."""
        cols = [self._state_images()]
        offs = np.cumsum([0] + [b.shape[0] for b in self.born])
        for r, (blk, pi) in enumerate(zip(self.conf_blocks, self.pi_star)):
            img = blk.compressed(pi)
            block = np.zeros((self.output_dim, img.shape[1]))
            block[offs[r]: offs[r + 1]] = img
            cols.append(block)
        return np.hstack(cols)

    def ambient_basis(self) -> np.ndarray:
        """Explicit orthonormal basis of the tangent space in ambient coordinates."""
        n_amb = self.state_basis.shape[0] + sum(b.m ** 2 for b in self.conf_blocks)
        if n_amb * self.dim > MAX_DENSE_ENTRIES:
            raise ResourceLimitError(f"ambient basis would hold {n_amb * self.dim} entries")
        out = np.zeros((n_amb, self.dim))
        out[: self.state_basis.shape[0], : self.n_state] = self.state_basis
        row = self.state_basis.shape[0]
        col = self.n_state
        for blk in self.conf_blocks:
            for k in range(blk.dim):
                e = np.zeros(blk.dim)
                e[k] = 1.0
                out[row: row + blk.m ** 2, col + k] = blk.ambient(e).reshape(-1)
            row += blk.m ** 2
            col += blk.dim
        return out

    def ambient_constraints(self) -> np.ndarray:
        """Stacked linear constraints of the tangent space in ambient coordinates."""
        n_s = self.state_basis.shape[0]
        m_tot = sum(b.m ** 2 for b in self.conf_blocks)
        rows = [np.hstack([self.constraint_matrix, np.zeros((self.constraint_matrix.shape[0], m_tot))])]
        col = n_s
        for blk in self.conf_blocks:
            cs = np.zeros((blk.m, n_s + m_tot))
            for j in range(blk.m):
                cs[j, col + j: col + blk.m ** 2: blk.m] = 1.0
            rows.append(cs)
            col += blk.m ** 2
        return np.vstack(rows)


def _state_constraints(graph: RegionGraph) -> tuple[np.ndarray, list[int]]:
    qdims = [2 ** len(r) for r in graph.regions]
    offsets = list(np.cumsum([0] + [q * q for q in qdims]))
    n = offsets[-1]
    rows = []
    for r, q in enumerate(qdims):
        row = np.zeros(n)
        row[offsets[r]: offsets[r + 1]] = trace_coordinates(q)
        rows.append(row[None, :])
    for ov in graph.overlaps:
        pa = partial_trace_operator(len(graph.regions[ov.a]), graph.local_positions(ov.a, ov.shared))
        pb = partial_trace_operator(len(graph.regions[ov.b]), graph.local_positions(ov.b, ov.shared))
        block = np.zeros((pa.shape[0], n))
        block[:, offsets[ov.a]: offsets[ov.a + 1]] = pa
        block[:, offsets[ov.b]: offsets[ov.b + 1]] -= pb
        rows.append(block)
    return np.vstack(rows), [int(o) for o in offsets]


def tangent_basis(fixture, parameterization="full") -> LinearizedModel:
    """Orthonormal basis of the linearized feasible set at the fixture's reference pair.

    ``fixture`` is a :class:`Fixture` or an instance with ``graph``,
    ``regional_truths``, ``confusions_truth`` and ``povms``; the tensor
    parameterization additionally needs ``confusion_factors``.
    """
    par = Parameterization.parse(parameterization)
    graph = fixture.graph
    povms = fixture.povms
    q_r = graph.region_qubits()
    n_state_amb = sum(4**q for q in q_r)
    if par is Parameterization.FULL:
        conf_dim = sum(m.n_outcomes * (m.n_outcomes - 1) for m in povms)
    else:
        conf_dim = sum(12 * q for q in q_r)
    if n_state_amb + conf_dim > MAX_TANGENT_DIM and par is Parameterization.TENSOR:
        raise ResourceLimitError(f"tangent dimension {n_state_amb + conf_dim} over cap")
    if n_state_amb > MAX_TANGENT_DIM:
        raise ResourceLimitError(f"state dimension {n_state_amb} over cap")
    cons, offsets = _state_constraints(graph)
    basis = scipy.linalg.null_space(cons, rcond=1e-10)
    blocks = []
    for r, povm in enumerate(povms):
        m = povm.n_outcomes
        if par is Parameterization.FULL:
            blocks.append(_ConfusionBlock(m=m, helmert=_helmert(m)))
        else:
            factors = getattr(fixture, "confusion_factors", None)
            if factors is None:
                raise ValueError("tensor parameterization needs per-qubit confusion factors")
            if povm.n_outcomes != 4 ** len(factors[r]):
                raise ValueError("confusion factors do not match the POVM size")
            blocks.append(_tensor_block(factors[r]))
    return LinearizedModel(
        graph=graph,
        rho_star=[np.asarray(t.matrix if hasattr(t, "matrix") else t) for t in fixture.regional_truths],
        c_star=[np.asarray(c, dtype=float) for c in fixture.confusions_truth],
        born=[p.born_matrix for p in povms],
        parameterization=par,
        state_basis=basis,
        state_offsets=offsets,
        conf_blocks=blocks,
        constraint_matrix=cons,
    )


def linearized_map(fixture, parameterization="full") -> np.ndarray:
    return tangent_basis(fixture, parameterization).matrix()


def prediction(model: LinearizedModel, rhos, confusions) -> np.ndarray:
    return np.concatenate([c @ (b @ herm_to_vec(r)) for b, r, c in zip(model.born, rhos, confusions)])


def finite_difference_remainder(model: LinearizedModel, v: np.ndarray, t: float) -> float:
    """``|| C(t) pi(rho(t)) - C* pi(rho*) - t (A o B) v ||`` along the straight line ``t v``."""
    drho, dc = model.split(v)
    base = prediction(model, model.rho_star, model.c_star)
    pert = prediction(
        model,
        [r + t * d for r, d in zip(model.rho_star, drho)],
        [c + t * d for c, d in zip(model.c_star, dc)],
    )
    return float(np.linalg.norm(pert - base - t * model.apply(v)))


# ---------------------------------------------------------------------------
# reports


@dataclass
class IdentifiabilityReport:
    parameterization: str
    tangent_dim: int
    output_dim: int
    rank: int
    kernel_dim: int
    sigma_max: float
    sigma_min: float
    growth_constant_estimate: float
    kappa: float
    gap_ratio: float
    injective: bool
    singular_values: list[float] = field(repr=False)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def born_norm(born_matrix: np.ndarray) -> float:
    """Largest ``||pi(X)||_2`` over unit-Frobenius Hermitian ``X``."""
    return float(np.linalg.norm(born_matrix, 2))


def identifiability_report(fixture_or_model, parameterization="full") -> IdentifiabilityReport:
    """Singular-value analysis of the linearized prediction map on the tangent space.

    The kernel threshold is ``1e-8 * sigma_max``.  When the dense map is too
    large, a column-compressed matrix with the same Gram matrix is used.
    """
    model = (fixture_or_model if isinstance(fixture_or_model, LinearizedModel)
             else tangent_basis(fixture_or_model, parameterization))
    if model.output_dim * model.dim <= MAX_DENSE_ENTRIES // 4:
        mat = model.matrix()
    else:
        mat = model.compressed_matrix()
    s = np.linalg.svd(mat, compute_uv=False)
    s_max = float(s[0]) if s.size else 0.0
    thresh = KERNEL_RTOL * s_max
    above = s[s >= thresh]
    below = s[s < thresh]
    rank = int(above.size)
    kernel = model.dim - rank
    s_min = float(above[-1]) if above.size else 0.0
    largest_below = float(below[0]) if below.size else 0.0
    gap = float("inf") if largest_below == 0.0 else s_min / largest_below
    return IdentifiabilityReport(
        parameterization=model.parameterization.value,
        tangent_dim=model.dim,
        output_dim=model.output_dim,
        rank=rank,
        kernel_dim=kernel,
        sigma_max=s_max,
        sigma_min=s_min,
        growth_constant_estimate=s_min**2 / 8.0,
        kappa=max(born_norm(b) for b in model.born),
        gap_ratio=gap,
        injective=kernel == 0,
        singular_values=[float(x) for x in s],
    )


def kernel_complement_basis(model: LinearizedModel) -> tuple[np.ndarray, np.ndarray]:
    """Right singular vectors of ``A o B``: (complement columns, kernel columns)."""
    mat = model.matrix()
    _, s, vt = np.linalg.svd(mat, full_matrices=True)
    thresh = KERNEL_RTOL * (s[0] if s.size else 0.0)
    rank = int(np.sum(s >= thresh))
    return vt[:rank].T, vt[rank:].T


@dataclass
class GrowthRow:
    t: float
    d2: float
    misfit: float
    ratio: float
    envelope: float
    feasible: bool
    note: str = ""


@dataclass
class GrowthProbe:
    linear_limit: float  # ||(A o B) v||^2 / 2
    in_kernel: bool
    rows: list[GrowthRow]

    @property
    def quadratic_growth(self) -> bool:
        return not self.in_kernel

    def to_dict(self) -> dict:
        return {
            "linear_limit": self.linear_limit,
            "in_kernel": self.in_kernel,
            "quadratic_growth": self.quadratic_growth,
            "rows": [r.__dict__ for r in self.rows],
        }


def quadratic_growth_probe(model: LinearizedModel, v: np.ndarray, t_grid: Sequence[float],
                           alpha: float | None = None) -> GrowthProbe:
    """Ratio of population misfit to squared distance along ``t v``.

    ``envelope`` is the lower bound ``(alpha d - kappa d^2 / 2)_+^2 / (2 d^2)``
    with ``alpha`` defaulting to the smallest nonzero singular value.
    """
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("direction must be unit-norm")
    drho, dc = model.split(v)
    av = model.apply(v)
    s_max = np.linalg.norm(model.compressed_matrix(), 2)
    kappa = max(born_norm(b) for b in model.born)
    if alpha is None:
        alpha = identifiability_report(model).sigma_min
    base = prediction(model, model.rho_star, model.c_star)
    rows = []
    for t in t_grid:
        rhos = [r + t * d for r, d in zip(model.rho_star, drho)]
        confs = [c + t * d for c, d in zip(model.c_star, dc)]
        min_eig = min(float(np.linalg.eigvalsh(r)[0]) for r in rhos)
        c_ok = all(np.all(c >= 0) and np.all(c <= 1) for c in confs)
        if min_eig < 0 or not c_ok:
            rows.append(GrowthRow(t, float("nan"), float("nan"), float("nan"), float("nan"),
                                  False, "perturbed pair leaves the feasible set"))
            continue
        d2 = sum(float(np.sum(np.abs(r - r0) ** 2)) for r, r0 in zip(rhos, model.rho_star))
        d2 += sum(float(np.sum((c - c0) ** 2)) for c, c0 in zip(confs, model.c_star))
        resid = prediction(model, rhos, confs) - base
        misfit = 0.5 * float(resid @ resid)
        d = np.sqrt(d2)
        env = max(alpha * d - 0.5 * kappa * d2, 0.0) ** 2 / (2.0 * d2)
        rows.append(GrowthRow(t, d2, misfit, misfit / d2, env, True))
    return GrowthProbe(
        linear_limit=0.5 * float(av @ av),
        in_kernel=bool(np.linalg.norm(av) < KERNEL_RTOL * s_max),
        rows=rows,
    )


@dataclass
class KlIdentity:
    nll: float
    rhs: float
    abs_discrepancy: float
    rel_discrepancy: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def kl_mle_identity_check(counts, rho, confusion, t_shots: int | None = None,
                          povm: Povm | None = None) -> KlIdentity:
    """Compare the multinomial negative log-likelihood with ``T KL(pi_hat || C pi) - T sum pi_hat log pi_hat``.

    Zero-count bins contribute nothing to either side.
    """
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    total = int(counts.sum())
    if t_shots is None:
        t_shots = total
    if t_shots != total or total < 1:
        raise ValueError(f"shot count {t_shots} does not match sum of counts {total}")
    mat = np.asarray(getattr(rho, "matrix", rho))
    if povm is None:
        n = int(round(np.log2(mat.shape[0])))
        povm = tensor_povm(n)
    p = np.asarray(confusion, dtype=float) @ povm.probabilities(mat)
    if p.shape != counts.shape:
        raise ValueError("counts and predicted distribution differ in length")
    hit = counts > 0
    if np.any(p[hit] <= 0):
        raise UndefinedLikelihoodError("zero predicted probability on an observed outcome")
    c = counts[hit].astype(float)
    ph = c / t_shots
    nll = -float(np.sum(c * np.log(p[hit])))
    kl = float(np.sum(ph * np.log(ph / p[hit])))
    ent = float(np.sum(ph * np.log(ph)))
    rhs = t_shots * kl - t_shots * ent
    diff = abs(nll - rhs)
    return KlIdentity(nll=nll, rhs=rhs, abs_discrepancy=diff,
                      rel_discrepancy=diff / max(abs(nll), 1e-300))
