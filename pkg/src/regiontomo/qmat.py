"""Dense Hermitian linear algebra for multi-qubit density matrices.

Conventions
-----------
Computational basis index bits follow the order of the site list: the first
(lowest-numbered) site is the most significant bit.  Hermitian matrices are
mapped to real coordinate vectors with :func:`herm_to_vec`, which is an
isometry for the Frobenius inner product, so ``<A, B>_F == herm_to_vec(A) @
herm_to_vec(B)`` for Hermitian ``A`` and ``B``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ResourceLimitError

MAX_POVM_QUBITS = 6
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
CLAMP_TOL = 1e-12

_SQRT3 = np.sqrt(3.0)
SIC_BLOCH_VECTORS = np.array(
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
) / _SQRT3

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


# ---------------------------------------------------------------------------
# real coordinates for Hermitian matrices


def _triu(dim: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(dim, k=1)


def herm_to_vec(mat: np.ndarray) -> np.ndarray:
    """Isometric real coordinates of a Hermitian matrix (or a stack of them).

    Layout: the ``dim`` diagonal entries, then ``sqrt(2) * Re`` of the strict
    upper triangle (row-major), then ``sqrt(2) * Im`` of the same entries.
    """
    mat = np.asarray(mat)
    dim = mat.shape[-1]
    iu, ju = _triu(dim)
    diag = np.real(np.diagonal(mat, axis1=-2, axis2=-1))
    upper = mat[..., iu, ju]
    return np.concatenate(
        [diag, np.sqrt(2.0) * upper.real, np.sqrt(2.0) * upper.imag], axis=-1
    )


def vec_to_herm(vec: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Inverse of :func:`herm_to_vec`."""
    vec = np.asarray(vec, dtype=float)
    if dim is None:
        dim = int(round(np.sqrt(vec.shape[-1])))
    if dim * dim != vec.shape[-1]:
        raise ValueError(f"coordinate length {vec.shape[-1]} is not a square")
    n_up = dim * (dim - 1) // 2
    iu, ju = _triu(dim)
    out = np.zeros(vec.shape[:-1] + (dim, dim), dtype=complex)
    idx = np.arange(dim)
    out[..., idx, idx] = vec[..., :dim]
    upper = (vec[..., dim : dim + n_up] + 1j * vec[..., dim + n_up :]) / np.sqrt(2.0)
    out[..., iu, ju] = upper
    out[..., ju, iu] = upper.conj()
    return out


def trace_coordinates(dim: int) -> np.ndarray:
    """Vector ``a`` with ``a @ herm_to_vec(X) == Tr(X)``."""
    a = np.zeros(dim * dim)
    a[:dim] = 1.0
    return a


# ---------------------------------------------------------------------------
# random states


def _complex_gaussian_columns(n_cols: int, dim: int, seed: int) -> np.ndarray:
    # Columns are drawn first-to-last so the first column depends only on the
    # first 2*dim normal variates; haar_state relies on this prefix property.
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_cols, dim, 2))
    return ((z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)).T


def random_unitary(dim: int, seed: int) -> np.ndarray:
    """Haar-random unitary via QR of a complex Gaussian matrix with phase fix."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    g = _complex_gaussian_columns(dim, dim, seed)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    phases = d / np.abs(d)
    return q * phases[np.newaxis, :]


def haar_state(dim: int, seed: int) -> np.ndarray:
    """First column of ``random_unitary(dim, seed)`` without forming the matrix.

    With the phase correction the first column of ``Q diag(R_ii/|R_ii|)`` is
    exactly ``g / ||g||`` for the first Gaussian column ``g``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    g = _complex_gaussian_columns(1, dim, seed)[:, 0]
    return g / np.linalg.norm(g)


# ---------------------------------------------------------------------------
# density matrices


@dataclass(frozen=True)
class DensityMatrix:
    """A density matrix on an ascending list of global site indices."""

    sites: tuple[int, ...]
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        sites = tuple(int(s) for s in self.sites)
        if list(sites) != sorted(set(sites)):
            raise ValueError(f"sites must be strictly ascending, got {sites}")
        mat = np.asarray(self.matrix, dtype=complex)
        dim = 2 ** len(sites)
        if mat.shape != (dim, dim):
            raise ValueError(f"matrix shape {mat.shape} does not match {len(sites)} sites")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return len(self.sites)

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def violations(self) -> list[str]:
        """Return invariant violations; empty when the matrix is a valid state."""
        mat = self.matrix
        out = []
        if not np.all(np.isfinite(mat)):
            out.append("non-finite entries")
            return out
        herm = np.max(np.abs(mat - mat.conj().T))
        if herm > HERMITIAN_TOL:
            out.append(f"not Hermitian (max |A - A^dag| = {herm:.3e})")
        tr = np.trace(mat)
        if abs(tr - 1.0) > TRACE_TOL:
            out.append(f"trace {tr.real:.15g} != 1")
        lam = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0]
        if lam < -PSD_TOL:
            out.append(f"minimum eigenvalue {lam:.3e} < -{PSD_TOL:g}")
        return out

    def is_valid(self) -> bool:
        return not self.violations()


def as_matrix(rho) -> np.ndarray:
    return rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)


def maximally_mixed(sites: Sequence[int]) -> DensityMatrix:
    dim = 2 ** len(sites)
    return DensityMatrix(tuple(sites), np.eye(dim, dtype=complex) / dim)


def pure_state(psi: np.ndarray, sites: Sequence[int]) -> DensityMatrix:
    psi = np.asarray(psi, dtype=complex)
    return DensityMatrix(tuple(sites), np.outer(psi, psi.conj()))


# ---------------------------------------------------------------------------
# POVMs


@dataclass(frozen=True)
class Povm:
    """Ordered list of effects, stored as an ``(M, dim, dim)`` array."""

    effects: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        eff = np.asarray(self.effects, dtype=complex)
        if eff.ndim != 3 or eff.shape[1] != eff.shape[2]:
            raise ValueError("effects must have shape (M, dim, dim)")
        object.__setattr__(self, "effects", eff)

    @property
    def dim(self) -> int:
        return self.effects.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.effects.shape[0]

    @cached_property
    def born_matrix(self) -> np.ndarray:
        """Real ``(M, dim**2)`` matrix ``B`` with ``B @ herm_to_vec(X) = [Tr(E_m X)]_m``."""
        return herm_to_vec(self.effects)

    def probabilities(self, mat: np.ndarray) -> np.ndarray:
        """Linear Born map ``X -> [Re Tr(E_m X)]`` for any Hermitian ``X``, no clamping."""
        return self.born_matrix @ herm_to_vec(mat)

    def violations(self, tol: float = PSD_TOL) -> list[str]:
        out = []
        total = self.effects.sum(axis=0)
        err = np.max(np.abs(total - np.eye(self.dim)))
        if err > tol:
            out.append(f"effects sum to identity only within {err:.3e}")
        for m, e in enumerate(self.effects):
            lam = np.linalg.eigvalsh(0.5 * (e + e.conj().T))[0]
            if lam < -tol:
                out.append(f"effect {m} has eigenvalue {lam:.3e}")
        return out

    def gram_matrix(self) -> np.ndarray:
        """Real Gram matrix of vectorized effects; full rank iff informationally complete."""
        b = self.born_matrix
        return b @ b.T


def sic_qubit_povm() -> Povm:
    """Tetrahedral SIC POVM: ``E_m = (I + r_m . sigma) / 4``."""
    eye = np.eye(2, dtype=complex)
    effects = [
        (eye + r[0] * PAULI_X + r[1] * PAULI_Y + r[2] * PAULI_Z) / 4.0
        for r in SIC_BLOCH_VECTORS
    ]
    return Povm(np.array(effects))


def tensor_povm(n_qubits: int) -> Povm:
    """All ``4**n`` tensor products of SIC effects; first qubit is the most significant digit."""
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    if n_qubits > MAX_POVM_QUBITS:
        raise ResourceLimitError(
            f"tensor_povm is capped at {MAX_POVM_QUBITS} qubits ({4 ** MAX_POVM_QUBITS} effects)"
        )
    single = sic_qubit_povm().effects
    effects = single
    for _ in range(n_qubits - 1):
        # (M, d, d) x (4, 2, 2) -> (M*4, 2d, 2d), new qubit least significant
        m, d = effects.shape[0], effects.shape[1]
        effects = np.einsum("aij,bkl->abikjl", effects, single).reshape(m * 4, 2 * d, 2 * d)
    return Povm(effects)


def clamp_probabilities(p: np.ndarray) -> np.ndarray:
    """Clamp tiny negatives to zero; larger negatives signal a non-PSD input."""
    p = np.array(p, dtype=float)
    low = p.min() if p.size else 0.0
    if low < -CLAMP_TOL:
        raise ValueError(f"probability {low:.3e} below clamping window")
    p[p < 0] = 0.0
    return p


def born(rho, povm: Povm) -> np.ndarray:
    """Born probabilities ``Re Tr(E_m rho)`` with the negative-clamping window applied."""
    mat = as_matrix(rho)
    if mat.shape != (povm.dim, povm.dim):
        raise ValueError(f"state dim {mat.shape[0]} != POVM dim {povm.dim}")
    return clamp_probabilities(povm.probabilities(mat))


def check_probability_vector(p: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be a nonempty 1-d array")
    if not np.all(np.isfinite(p)):
        raise ValueError("probability vector has non-finite entries")
    p = clamp_probabilities(p)
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"probabilities sum to {p.sum():.15g}")
    return p


# ---------------------------------------------------------------------------
# partial trace


def _reduce_perm(n_qubits: int, keep: Sequence[int]) -> tuple[list[int], int, int]:
    keep = list(keep)
    rest = [i for i in range(n_qubits) if i not in keep]
    return keep + rest, 2 ** len(keep), 2 ** len(rest)


def partial_trace_array(mat: np.ndarray, n_qubits: int, keep: Sequence[int]) -> np.ndarray:
    """Reduce a ``2**n`` square matrix onto local qubit positions ``keep`` (ascending).

    Works on stacks: leading axes of ``mat`` are preserved.
    """
    mat = np.asarray(mat)
    lead = mat.shape[:-2]
    perm, dk, dr = _reduce_perm(n_qubits, keep)
    nl = len(lead)
    t = mat.reshape(lead + (2,) * (2 * n_qubits))
    axes = list(range(nl)) + [nl + p for p in perm] + [nl + n_qubits + p for p in perm]
    t = t.transpose(axes).reshape(lead + (dk, dr, dk, dr))
    return np.einsum("...ijkj->...ik", t)


def embed_array(mat: np.ndarray, n_qubits: int, keep: Sequence[int]) -> np.ndarray:
    """Adjoint of :func:`partial_trace_array`: ``Y -> Y (x) I`` in the original qubit order."""
    mat = np.asarray(mat)
    perm, dk, dr = _reduce_perm(n_qubits, keep)
    full = np.kron(mat, np.eye(dr))
    inv = np.argsort(perm)
    t = full.reshape((2,) * (2 * n_qubits))
    t = t.transpose(list(inv) + [n_qubits + i for i in inv])
    return t.reshape(2**n_qubits, 2**n_qubits)


def partial_trace(rho: DensityMatrix, keep_sites: Sequence[int]) -> DensityMatrix:
    """Reduced state of ``rho`` on the global sites ``keep_sites``."""
    keep_sites = sorted(set(int(s) for s in keep_sites))
    if not keep_sites:
        raise ValueError("keep_sites must be nonempty")
    missing = set(keep_sites) - set(rho.sites)
    if missing:
        raise ValueError(f"sites {sorted(missing)} are not in the state's sites {rho.sites}")
    keep = [rho.sites.index(s) for s in keep_sites]
    return DensityMatrix(tuple(keep_sites), partial_trace_array(rho.matrix, rho.n_qubits, keep))


def partial_trace_vector(psi: np.ndarray, n_qubits: int, keep: Sequence[int]) -> np.ndarray:
    """Reduced density matrix of the pure state ``psi`` without forming ``|psi><psi|``."""
    perm, dk, dr = _reduce_perm(n_qubits, keep)
    a = np.asarray(psi).reshape((2,) * n_qubits).transpose(perm).reshape(dk, dr)
    return a @ a.conj().T


def partial_trace_operator(n_qubits: int, keep: Sequence[int]) -> np.ndarray:
    """Real matrix of the partial trace acting on :func:`herm_to_vec` coordinates."""
    dim = 2**n_qubits
    eye = np.eye(dim * dim)
    basis = vec_to_herm(eye, dim)
    return herm_to_vec(partial_trace_array(basis, n_qubits, keep)).T


# ---------------------------------------------------------------------------
# projections


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}`` by sort-and-threshold."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("project_simplex expects a nonempty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("project_simplex input has non-finite entries")
    return project_simplex_columns(v[:, np.newaxis])[:, 0]


def project_simplex_columns(mat: np.ndarray) -> np.ndarray:
    """Project every column of ``mat`` onto the probability simplex."""
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0]
    u = -np.sort(-mat, axis=0)
    css = np.cumsum(u, axis=0) - 1.0
    k = np.arange(1, n + 1, dtype=float)[:, np.newaxis]
    cond = u - css / k > 0
    # last index where the condition holds; index 0 always qualifies
    rho = n - 1 - np.argmax(cond[::-1], axis=0)
    cols = np.arange(mat.shape[1])
    theta = css[rho, cols] / (rho + 1.0)
    return np.maximum(mat - theta[np.newaxis, :], 0.0)


def project_density_array(mat: np.ndarray) -> np.ndarray:
    """Frobenius-nearest density matrix, for a single matrix or a stack."""
    mat = np.asarray(mat, dtype=complex)
    if not np.all(np.isfinite(mat)):
        raise ValueError("project_density input has non-finite entries")
    h = 0.5 * (mat + np.swapaxes(mat, -1, -2).conj())
    w, v = np.linalg.eigh(h)
    lead = w.shape[:-1]
    w2 = project_simplex_columns(w.reshape(-1, w.shape[-1]).T).T.reshape(lead + w.shape[-1:])
    out = (v * w2[..., np.newaxis, :]) @ np.swapaxes(v, -1, -2).conj()
    return 0.5 * (out + np.swapaxes(out, -1, -2).conj())


def project_density(mat, sites: Sequence[int] | None = None) -> DensityMatrix:
    """Project a Hermitian matrix onto the density-matrix set.

    ``sites`` defaults to ``0..n-1`` for an ``2**n`` matrix.
    """
    mat = as_matrix(mat)
    if sites is None:
        n = int(round(np.log2(mat.shape[0])))
        sites = tuple(range(n))
    return DensityMatrix(tuple(sites), project_density_array(mat))
