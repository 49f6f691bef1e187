"""Synthetic benchmark instances: ground truth, readout confusion and shot data."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .arrayio import read_array, write_array
from .errors import ResourceLimitError
from .qmat import (
    DensityMatrix,
    Povm,
    born,
    check_probability_vector,
    haar_state,
    partial_trace_vector,
    project_simplex_columns,
    random_unitary,
    tensor_povm,
)
from .regions import RegionGraph

DENSE_GLOBAL_MAX_QUBITS = 10
VECTOR_GLOBAL_MAX_QUBITS = 24

DEFAULT_NU = 0.1
DEFAULT_SHOTS = 10_000
# delta_C grows ~1.88 eps at m = 256; 0.0425 lands on delta_C ~ 0.080
DEFAULT_EPS = 0.0425

_TAG_STATE, _TAG_CONFUSION, _TAG_SAMPLING = 0, 1, 2
# uniforms drawn per block; the stream is identical to one big draw
_SHOT_CHUNK = 1 << 22


def make_global_state(q: int, nu: float, seed: int) -> DensityMatrix:
    """Dense ``(1 - nu)|psi><psi| + nu I / 2**q`` with ``|psi> = U|0...0>``."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if not 0.0 <= nu < 1.0:
        raise ValueError(f"nu must lie in [0, 1), got {nu}")
    if q > DENSE_GLOBAL_MAX_QUBITS:
        raise ResourceLimitError(
            f"dense global state capped at {DENSE_GLOBAL_MAX_QUBITS} qubits; "
            "use global_state_vector for larger systems"
        )
    dim = 2**q
    psi = random_unitary(dim, seed)[:, 0]
    mat = (1.0 - nu) * np.outer(psi, psi.conj()) + (nu / dim) * np.eye(dim)
    return DensityMatrix(tuple(range(q)), mat)


def global_state_vector(q: int, seed: int) -> np.ndarray:
    """The pure component ``U|0...0>`` of the global state, as a ``2**q`` vector."""
    if q > VECTOR_GLOBAL_MAX_QUBITS:
        raise ResourceLimitError(f"state vector capped at {VECTOR_GLOBAL_MAX_QUBITS} qubits")
    return haar_state(2**q, seed)


def regional_truth(psi: np.ndarray, q: int, nu: float, sites: Sequence[int]) -> DensityMatrix:
    """Reduction of the mixed global state onto ``sites``; the identity part reduces analytically."""
    dim = 2 ** len(sites)
    red = partial_trace_vector(psi, q, list(sites))
    mat = (1.0 - nu) * red + (nu / dim) * np.eye(dim)
    mat = 0.5 * (mat + mat.conj().T)
    return DensityMatrix(tuple(sites), mat)


def gen_confusion(m: int, eps: float, seed: int) -> np.ndarray:
    """Column-stochastic ``proj(I + eps |G|)`` with ``G`` standard normal."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    g = np.random.default_rng(seed).standard_normal((m, m))
    return project_simplex_columns(np.eye(m) + eps * np.abs(g))


def deviation_delta_c(confusions: Sequence[np.ndarray]) -> float:
    """Mean relative Frobenius distance ``||C_r - I||_F / ||I||_F``."""
    if len(confusions) == 0:
        raise ValueError("need at least one confusion matrix")
    total = 0.0
    for c in confusions:
        c = np.asarray(c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {c.shape}")
        eye = np.eye(c.shape[0])
        total += np.linalg.norm(c - eye) / np.linalg.norm(eye)
    return total / len(confusions)


def calibrate_eps(target_delta: float, graph: RegionGraph, seed: int = 0,
                  tol: float = 1e-6, max_iter: int = 100) -> float:
    """Bisect ``eps`` so the instance built from ``(graph, seed)`` has ``delta_C`` near target.

    ``delta_C`` is nondecreasing in ``eps`` for fixed Gaussian draws, so the
    bracket ``[0, hi]`` is doubled until it contains the target.
    """
    if target_delta < 0:
        raise ValueError("target delta must be >= 0")
    if target_delta == 0:
        return 0.0
    seeds = seed_ledger(seed, graph)
    sizes = [4 ** len(reg) for reg in graph.regions]

    def delta(eps: float) -> float:
        return deviation_delta_c(
            [gen_confusion(m, eps, s) for m, s in zip(sizes, seeds["confusion"])]
        )

    lo, hi = 0.0, 0.05
    while delta(hi) < target_delta:
        lo, hi = hi, 2 * hi
        if hi > 1e6:
            raise ValueError(f"target delta {target_delta} unreachable")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if delta(mid) < target_delta:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


def sample_shots(p: np.ndarray, t: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``t`` categorical outcomes by inverse CDF; returns ``(frequencies, counts)``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    p = check_probability_vector(p)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    rng = np.random.default_rng(seed)
    counts = np.zeros(p.size, dtype=np.int64)
    for start in range(0, t, _SHOT_CHUNK):
        u = rng.random(min(_SHOT_CHUNK, t - start))
        idx = np.searchsorted(cdf, u, side="right")
        counts += np.bincount(idx, minlength=p.size)
    return counts / t, counts


def derive_seed(master: int, *key: int) -> int:
    """Counter-based 64-bit sub-seed; independent of generation order."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _kind_key(kind: str) -> int:
    return zlib.crc32(kind.encode("utf-8"))


def seed_ledger(master: int, graph: RegionGraph) -> dict:
    kk = _kind_key(graph.kind)
    return {
        "master": int(master),
        "state": derive_seed(master, kk, _TAG_STATE),
        "confusion": [derive_seed(master, kk, _TAG_CONFUSION, r) for r in range(graph.n_regions)],
        "sampling": [derive_seed(master, kk, _TAG_SAMPLING, r) for r in range(graph.n_regions)],
    }


@dataclass
class Instance:
    graph: RegionGraph
    nu: float
    eps: float
    shots: list[int]
    psi: np.ndarray = field(repr=False)
    regional_truths: list[DensityMatrix] = field(repr=False)
    confusions_truth: list[np.ndarray] = field(repr=False)
    counts: list[np.ndarray] = field(repr=False)
    seeds: dict = field(default_factory=dict)
    _povms: dict = field(default_factory=dict, repr=False)

    @property
    def n_regions(self) -> int:
        return self.graph.n_regions

    @property
    def empirical(self) -> list[np.ndarray]:
        return [c / t for c, t in zip(self.counts, self.shots)]

    def povm(self, r: int) -> Povm:
        n = len(self.graph.regions[r])
        if n not in self._povms:
            self._povms[n] = tensor_povm(n)
        return self._povms[n]

    @property
    def povms(self) -> list[Povm]:
        return [self.povm(r) for r in range(self.n_regions)]

    @property
    def delta_c(self) -> float:
        return deviation_delta_c(self.confusions_truth)

    @property
    def total_shots(self) -> int:
        return int(sum(self.shots))

    def global_truth(self) -> DensityMatrix:
        """Dense global state; only available for small systems."""
        q = self.graph.n_sites
        if q > DENSE_GLOBAL_MAX_QUBITS:
            raise ResourceLimitError(f"dense global state capped at {DENSE_GLOBAL_MAX_QUBITS} qubits")
        dim = 2**q
        mat = (1 - self.nu) * np.outer(self.psi, self.psi.conj()) + (self.nu / dim) * np.eye(dim)
        return DensityMatrix(tuple(range(q)), mat)

    def noisy_distribution(self, r: int) -> np.ndarray:
        return self.confusions_truth[r] @ born(self.regional_truths[r], self.povm(r))

    def manifest(self) -> dict:
        return {
            "version": __version__,
            "graph": self.graph.to_dict(),
            "nu": self.nu,
            "eps": self.eps,
            "shots": list(self.shots),
            "seeds": self.seeds,
            "delta_c": self.delta_c,
        }

    def save(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        write_array(d / "psi.qtdm", self.psi)
        for r in range(self.n_regions):
            write_array(d / f"rho_true_{r}.qtdm", self.regional_truths[r].matrix)
            write_array(d / f"confusion_true_{r}.qtdm", self.confusions_truth[r])
            write_array(d / f"counts_{r}.qtdm", self.counts[r])
            write_array(d / f"empirical_{r}.qtdm", self.empirical[r])
        return d

    @classmethod
    def load(cls, directory: str | Path) -> Instance:
        d = Path(directory)
        man = json.loads((d / "manifest.json").read_text())
        graph = RegionGraph.from_dict(man["graph"])
        truths, confs, counts = [], [], []
        for r in range(graph.n_regions):
            truths.append(DensityMatrix(graph.regions[r], read_array(d / f"rho_true_{r}.qtdm")))
            confs.append(read_array(d / f"confusion_true_{r}.qtdm"))
            counts.append(read_array(d / f"counts_{r}.qtdm"))
        return cls(
            graph=graph,
            nu=man["nu"],
            eps=man["eps"],
            shots=[int(t) for t in man["shots"]],
            psi=read_array(d / "psi.qtdm"),
            regional_truths=truths,
            confusions_truth=confs,
            counts=counts,
            seeds=man["seeds"],
        )


def build_instance(
    graph: RegionGraph,
    nu: float = DEFAULT_NU,
    eps: float = DEFAULT_EPS,
    t_r: int | Sequence[int] = DEFAULT_SHOTS,
    seed: int = 0,
) -> Instance:
    """Ground truth, per-region confusion matrices and sampled shot data.

    Every random draw uses a named sub-seed of ``seed`` so regions can be
    generated in any order with identical results.
    """
    if not 0.0 <= nu < 1.0:
        raise ValueError(f"nu must lie in [0, 1), got {nu}")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    shots = [int(t_r)] * graph.n_regions if np.isscalar(t_r) else [int(t) for t in t_r]
    if len(shots) != graph.n_regions or min(shots) < 1:
        raise ValueError("need one positive shot count per region")
    seeds = seed_ledger(seed, graph)
    q = graph.n_sites
    psi = global_state_vector(q, seeds["state"])
    truths, confs, counts = [], [], []
    povms: dict[int, Povm] = {}
    for r, sites in enumerate(graph.regions):
        rho = regional_truth(psi, q, nu, sites)
        n = len(sites)
        if n not in povms:
            povms[n] = tensor_povm(n)
        povm = povms[n]
        c = gen_confusion(povm.n_outcomes, eps, seeds["confusion"][r])
        p = c @ born(rho, povm)
        p = np.clip(p, 0.0, None)
        p /= p.sum()
        _, cnt = sample_shots(p, shots[r], seeds["sampling"][r])
        truths.append(rho)
        confs.append(c)
        counts.append(cnt)
    return Instance(
        graph=graph,
        nu=float(nu),
        eps=float(eps),
        shots=shots,
        psi=psi,
        regional_truths=truths,
        confusions_truth=confs,
        counts=counts,
        seeds=seeds,
        _povms=povms,
    )
