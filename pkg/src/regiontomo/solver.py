"""Distributed proximal-alternating ADMM for joint regional state and readout estimation.

The state block is solved by overlap-consensus ADMM with the confusion
matrices held fixed; the confusion block is then updated region by region.
Regional states, consensus variables and duals are held in the real
isometric coordinates of :func:`regiontomo.qmat.herm_to_vec`, so Frobenius
inner products are plain dot products.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .arrayio import write_array
from .metrics import optimality_gap
from .qmat import (
    DensityMatrix,
    herm_to_vec,
    partial_trace_operator,
    project_density_array,
    project_simplex_columns,
    trace_coordinates,
    vec_to_herm,
)


class Mode(str, enum.Enum):
    IDEAL = "ideal"
    JOINT = "joint"
    ORACLE = "oracle"

    @classmethod
    def parse(cls, value) -> Mode:
        if isinstance(value, Mode):
            return value
        key = str(value).strip().lower()
        aliases = {
            "i": cls.IDEAL, "idealfixed": cls.IDEAL, "ideal": cls.IDEAL,
            "j": cls.JOINT, "joint": cls.JOINT,
            "o": cls.ORACLE, "oraclefixed": cls.ORACLE, "oracle": cls.ORACLE,
        }
        if key not in aliases:
            raise ValueError(f"unknown estimator mode {value!r}")
        return aliases[key]


@dataclass
class SolverConfig:
    """Solver hyperparameters; defaults follow the benchmark settings.

    ``lam`` is serialized as ``"lambda"``.
    """

    beta: float = 1.0
    gamma_rho: float = 0.1
    gamma_c: float = 0.1
    lam: float = 1e-2
    reference_confusions: list | None = None
    inner_tol: float = 1e-6
    inner_max: int = 200
    outer_tol: float = 1e-5
    outer_max: int = 50
    subsolver_tol: float = 1e-8
    subsolver_max: int = 2000
    mode: Mode = Mode.JOINT
    threads: int = 1

    def __post_init__(self) -> None:
        self.mode = Mode.parse(self.mode)
        self.validate()

    def validate(self) -> None:
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        for name in ("gamma_rho", "gamma_c", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("inner_tol", "outer_tol", "subsolver_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.inner_max < 1 or self.subsolver_max < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.outer_max < 0:
            raise ValueError("outer_max must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        out["lambda"] = out.pop("lam")
        out["mode"] = self.mode.value
        out.pop("threads")
        if out["reference_confusions"] is not None:
            out["reference_confusions"] = "custom"
        return out

    @classmethod
    def from_dict(cls, data: dict) -> SolverConfig:
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown solver config field(s): {', '.join(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# small exact updates


def consensus_update(reduced_r, reduced_rp, dual_r, dual_rp, beta: float):
    """Minimizer of the augmented Lagrangian over one shared consensus variable."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    return 0.5 * (reduced_r + reduced_rp + (dual_r + dual_rp) / beta)


def dual_update(dual, reduced, consensus, beta: float):
    return dual + beta * (reduced - consensus)


def state_objective(rhos, confusions, anchor_rhos, gamma_rho: float, empirical, povms) -> float:
    """Fixed-confusion state objective: squared-error fit plus proximal term, summed over regions."""
    if not (len(rhos) == len(confusions) == len(anchor_rhos) == len(empirical) == len(povms)):
        raise ValueError("per-region inputs must have equal lengths")
    total = 0.0
    for rho, c, anchor, pihat, povm in zip(rhos, confusions, anchor_rhos, empirical, povms):
        rho_m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
        anc_m = anchor.matrix if isinstance(anchor, DensityMatrix) else np.asarray(anchor)
        if rho_m.shape != (povm.dim, povm.dim) or anc_m.shape != rho_m.shape:
            raise ValueError("state dimension does not match the POVM")
        c = np.asarray(c)
        if c.shape != (povm.n_outcomes, povm.n_outcomes) or len(pihat) != povm.n_outcomes:
            raise ValueError("confusion/empirical dimension does not match the POVM")
        resid = np.asarray(pihat) - c @ povm.probabilities(rho_m)
        total += 0.5 * float(resid @ resid)
        total += 0.5 * gamma_rho * float(np.real(np.vdot(rho_m - anc_m, rho_m - anc_m)))
    return total


# ---------------------------------------------------------------------------
# accelerated projected gradient


@dataclass
class SubsolverInfo:
    iterations: int = 0
    converged: bool = True
    exact: bool = False


def accelerated_projected_gradient(
    grad: Callable[[np.ndarray], np.ndarray],
    objective: Callable[[np.ndarray], float],
    project: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    lipschitz: float,
    strong_convexity: float,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, SubsolverInfo]:
    """Nesterov projected gradient with function-value restart.

    Returns the best iterate seen, so the result never has a larger objective
    than the feasible starting point ``x0``.  Stops when the step length falls
    below ``tol * max(1, ||x||)``.
    """
    step = 1.0 / lipschitz
    if strong_convexity > 0:
        sk = np.sqrt(lipschitz / strong_convexity)
        fixed_momentum = (sk - 1.0) / (sk + 1.0)
    else:
        fixed_momentum = None
    x = x0
    x_prev = x0
    f_x = objective(x0)
    best, f_best = x0, f_x
    t = 1.0
    info = SubsolverInfo(converged=False)
    for it in range(1, max_iter + 1):
        if fixed_momentum is None:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            mom = (t - 1.0) / t_next
            t = t_next
        else:
            mom = fixed_momentum
        y = x + mom * (x - x_prev)
        x_new = project(y - step * grad(y))
        f_new = objective(x_new)
        if f_new > f_x:
            # momentum restart
            t = 1.0
            x_new = project(x - step * grad(x))
            f_new = objective(x_new)
        moved = np.linalg.norm(x_new - x)
        x_prev, x, f_x = x, x_new, f_new
        if f_x < f_best:
            best, f_best = x, f_x
        info.iterations = it
        if moved <= tol * max(1.0, np.linalg.norm(x)):
            info.converged = True
            break
    return best, info


# ---------------------------------------------------------------------------
# problem layout


@dataclass
class _OverlapOps:
    a: int
    b: int
    dim: int  # real coordinate length on the shared subsystem
    p_a: np.ndarray
    p_b: np.ndarray


class Layout:
    """Static, graph-dependent operators in real coordinates."""

    def __init__(self, graph, povms) -> None:
        self.graph = graph
        self.n_regions = graph.n_regions
        self.qdims = [2 ** len(reg) for reg in graph.regions]
        self.dims = [q * q for q in self.qdims]
        self.born = [p.born_matrix for p in povms]
        self.trace_vecs = [trace_coordinates(q) for q in self.qdims]
        self.overlaps: list[_OverlapOps] = []
        self.incidence: list[list[tuple[int, int]]] = [[] for _ in range(self.n_regions)]
        cache: dict = {}
        for o, ov in enumerate(graph.overlaps):
            mats = []
            for r in (ov.a, ov.b):
                key = (len(graph.regions[r]), tuple(graph.local_positions(r, ov.shared)))
                if key not in cache:
                    cache[key] = partial_trace_operator(key[0], list(key[1]))
                mats.append(cache[key])
            self.overlaps.append(_OverlapOps(ov.a, ov.b, 4 ** len(ov.shared), mats[0], mats[1]))
            self.incidence[ov.a].append((o, 0))
            self.incidence[ov.b].append((o, 1))
        self.consensus_gram = []
        for r in range(self.n_regions):
            g = np.zeros((self.dims[r], self.dims[r]))
            for o, side in self.incidence[r]:
                p = self.overlaps[o].p_a if side == 0 else self.overlaps[o].p_b
                g += p.T @ p
            self.consensus_gram.append(g)

    def reduction(self, o: int, side: int, x: np.ndarray) -> np.ndarray:
        ops = self.overlaps[o]
        return (ops.p_a if side == 0 else ops.p_b) @ x

    def consensus_dimension(self) -> int:
        """Total real dimension of the directed overlap residuals."""
        return 2 * sum(ov.dim for ov in self.overlaps)


class RegionSubproblem:
    """Quadratic ADMM state subproblem of one region for fixed ``C_r``.

    The objective is ``0.5 x'Hx - b'x`` over density-matrix coordinates; ``H``
    depends only on ``C_r`` and the penalties, ``b`` on anchor, duals and
    consensus variables.
    """

    def __init__(self, layout: Layout, r: int, confusion: np.ndarray, pihat: np.ndarray,
                 gamma_rho: float, beta: float) -> None:
        self.r = r
        self.qdim = layout.qdims[r]
        self.dim = layout.dims[r]
        self.gamma_rho = gamma_rho
        self.beta = beta
        self.fit_map = np.asarray(confusion) @ layout.born[r]
        self.pihat = np.asarray(pihat, dtype=float)
        h = self.fit_map.T @ self.fit_map + beta * layout.consensus_gram[r]
        h[np.diag_indices_from(h)] += gamma_rho
        self.hessian = 0.5 * (h + h.T)
        self.fit_rhs = self.fit_map.T @ self.pihat
        w, v = np.linalg.eigh(self.hessian)
        self.lipschitz = float(w[-1])
        self.strong_convexity = float(max(w[0], 0.0))
        self._eigvecs = v
        self._eigvals = w
        self._invertible = w[0] > 1e-12 * max(w[-1], 1e-300)
        self._a = layout.trace_vecs[r]
        if self._invertible:
            self._ha = self._solve(self._a)
            self._aha = float(self._a @ self._ha)

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        v = self._eigvecs
        return v @ ((v.T @ rhs) / self._eigvals)

    def objective(self, x: np.ndarray, rhs: np.ndarray) -> float:
        return 0.5 * float(x @ (self.hessian @ x)) - float(rhs @ x)

    def project(self, x: np.ndarray) -> np.ndarray:
        return herm_to_vec(project_density_array(vec_to_herm(x, self.qdim)))

    def solve(self, rhs: np.ndarray, warm: np.ndarray, tol: float, max_iter: int):
        """Minimize over the density matrices; exact when the trace-plane minimizer is PSD."""
        start = warm
        if self._invertible:
            hb = self._solve(rhs)
            nu = (1.0 - self._a @ hb) / self._aha
            cand = hb + nu * self._ha
            lam_min = np.linalg.eigvalsh(vec_to_herm(cand, self.qdim))[0]
            if lam_min >= 0.0:
                return cand, SubsolverInfo(iterations=0, converged=True, exact=True)
            proj = self.project(cand)
            if self.objective(proj, rhs) < self.objective(warm, rhs):
                start = proj
        h = self.hessian
        x, info = accelerated_projected_gradient(
            grad=lambda y: h @ y - rhs,
            objective=lambda y: self.objective(y, rhs),
            project=self.project,
            x0=start,
            lipschitz=self.lipschitz,
            strong_convexity=self.strong_convexity,
            tol=tol,
            max_iter=max_iter,
        )
        if self.objective(x, rhs) > self.objective(warm, rhs):
            x = warm
        return x, info


# ---------------------------------------------------------------------------
# state and traces


@dataclass
class SolverState:
    """Iterates of the outer/inner loops, in real coordinates."""

    k: int
    x: list[np.ndarray]  # regional states
    confusions: list[np.ndarray]
    z: list[np.ndarray]  # consensus variables per overlap
    dual_a: list[np.ndarray]  # Lambda_{ab} for overlap (a, b)
    dual_b: list[np.ndarray]  # Lambda_{ba}

    def copy(self) -> SolverState:
        return SolverState(
            k=self.k,
            x=[v.copy() for v in self.x],
            confusions=[c.copy() for c in self.confusions],
            z=[v.copy() for v in self.z],
            dual_a=[v.copy() for v in self.dual_a],
            dual_b=[v.copy() for v in self.dual_b],
        )

    def rho_matrices(self) -> list[np.ndarray]:
        return [vec_to_herm(x) for x in self.x]

    def dual_matrices(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(vec_to_herm(a), vec_to_herm(b)) for a, b in zip(self.dual_a, self.dual_b)]


def initial_state(layout: Layout, confusions: Sequence[np.ndarray]) -> SolverState:
    """Maximally mixed regional and consensus states, zero duals."""
    x = [herm_to_vec(np.eye(q) / q) for q in layout.qdims]
    z = []
    for ov in layout.overlaps:
        qd = int(round(np.sqrt(ov.dim)))
        z.append(herm_to_vec(np.eye(qd) / qd))
    zeros = [np.zeros(ov.dim) for ov in layout.overlaps]
    return SolverState(
        k=0,
        x=x,
        confusions=[np.array(c, dtype=float) for c in confusions],
        z=z,
        dual_a=[v.copy() for v in zeros],
        dual_b=[v.copy() for v in zeros],
    )


TRACE_COLUMNS = (
    "k", "l", "r_cons", "objective", "wall_ns",
    "dual_asym", "min_eig", "trace_err", "sub_iters", "warnings",
)


@dataclass
class TraceRow:
    k: int
    l: int
    r_cons: float
    objective: float
    wall_ns: int
    dual_asym: float
    min_eig: float
    trace_err: float
    sub_iters: int
    warnings: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in TRACE_COLUMNS)


def consensus_residual(layout: Layout, state: SolverState) -> float:
    """``sqrt(sum ||rho_r[r'] - z||^2 + ||rho_r'[r] - z||^2)`` over overlap pairs."""
    total = 0.0
    for o, ov in enumerate(layout.overlaps):
        da = ov.p_a @ state.x[ov.a] - state.z[o]
        db = ov.p_b @ state.x[ov.b] - state.z[o]
        total += float(da @ da + db @ db)
    return float(np.sqrt(total))


def _objective(subs: Sequence[RegionSubproblem], x, anchors) -> float:
    total = 0.0
    for sp, xr, ar in zip(subs, x, anchors):
        resid = sp.pihat - sp.fit_map @ xr
        d = xr - ar
        total += 0.5 * float(resid @ resid) + 0.5 * sp.gamma_rho * float(d @ d)
    return total


def _region_rhs(layout: Layout, sp: RegionSubproblem, r: int, anchor, state: SolverState,
                beta: float) -> np.ndarray:
    rhs = sp.fit_rhs + sp.gamma_rho * anchor
    for o, side in layout.incidence[r]:
        ops = layout.overlaps[o]
        p = ops.p_a if side == 0 else ops.p_b
        dual = state.dual_a[o] if side == 0 else state.dual_b[o]
        rhs = rhs + p.T @ (beta * state.z[o] - dual)
    return rhs


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class InnerResult:
    state: SolverState
    rows: list[TraceRow]
    iterations: int
    converged: bool
    warnings: int


def inner_admm(
    layout: Layout,
    subs: Sequence[RegionSubproblem],
    state: SolverState,
    anchors: Sequence[np.ndarray],
    config: SolverConfig,
    *,
    inner_max: int | None = None,
    inner_tol: float | None = None,
    check_invariants: bool = True,
) -> InnerResult:
    """Overlap-consensus ADMM for the state block at a fixed outer iterate.

    Each iteration solves every region against the previous consensus/dual
    snapshot, then updates consensus variables and duals pair by pair.
    """
    beta = config.beta
    inner_max = config.inner_max if inner_max is None else inner_max
    inner_tol = config.inner_tol if inner_tol is None else inner_tol
    threshold = inner_tol * np.sqrt(max(layout.consensus_dimension(), 1))
    state = state.copy()
    rows: list[TraceRow] = []
    total_warn = 0
    converged = False
    t0 = time.perf_counter_ns()
    ell = 0
    for ell in range(1, inner_max + 1):
        snapshot = state

        def solve_region(r: int):
            sp = subs[r]
            rhs = _region_rhs(layout, sp, r, anchors[r], snapshot, beta)
            return sp.solve(rhs, snapshot.x[r], config.subsolver_tol, config.subsolver_max)

        results = _map(solve_region, range(layout.n_regions), config.threads)
        new_x = [res[0] for res in results]
        warn = sum(0 if res[1].converged else 1 for res in results)
        sub_iters = sum(res[1].iterations for res in results)
        total_warn += warn

        new_z, new_a, new_b = [], [], []
        sq = 0.0
        asym = 0.0
        for o, ops in enumerate(layout.overlaps):
            red_a = ops.p_a @ new_x[ops.a]
            red_b = ops.p_b @ new_x[ops.b]
            z = consensus_update(red_a, red_b, state.dual_a[o], state.dual_b[o], beta)
            la = dual_update(state.dual_a[o], red_a, z, beta)
            lb = dual_update(state.dual_b[o], red_b, z, beta)
            da, db = red_a - z, red_b - z
            sq += float(da @ da + db @ db)
            asym = max(asym, float(np.max(np.abs(la + lb))))
            new_z.append(z)
            new_a.append(la)
            new_b.append(lb)
        state = SolverState(k=state.k, x=new_x, confusions=state.confusions,
                            z=new_z, dual_a=new_a, dual_b=new_b)
        r_cons = float(np.sqrt(sq))
        if check_invariants:
            min_eig = min(float(np.linalg.eigvalsh(vec_to_herm(x))[0]) for x in new_x)
            trace_err = max(abs(float(a @ x) - 1.0) for a, x in zip(layout.trace_vecs, new_x))
        else:
            min_eig, trace_err = float("nan"), float("nan")
        rows.append(TraceRow(
            k=state.k, l=ell, r_cons=r_cons,
            objective=_objective(subs, new_x, anchors),
            wall_ns=time.perf_counter_ns() - t0,
            dual_asym=asym, min_eig=min_eig, trace_err=trace_err,
            sub_iters=sub_iters, warnings=warn,
        ))
        if r_cons <= threshold:
            converged = True
            break
    return InnerResult(state=state, rows=rows, iterations=ell, converged=converged,
                       warnings=total_warn)


# ---------------------------------------------------------------------------
# confusion block


def confusion_objective(c, probs, pihat, reference, anchor, lam, gamma_c) -> float:
    resid = pihat - c @ probs
    return (0.5 * float(resid @ resid) + lam * float(np.sum((c - reference) ** 2))
            + 0.5 * gamma_c * float(np.sum((c - anchor) ** 2)))


def confusion_update(
    probs: np.ndarray,
    anchor: np.ndarray,
    reference: np.ndarray,
    lam: float,
    gamma_c: float,
    pihat: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 2000,
) -> tuple[np.ndarray, SubsolverInfo]:
    """Regional confusion-matrix update over column-stochastic matrices.

    ``probs`` is the ideal Born vector of the freshly updated regional state.
    """
    probs = np.asarray(probs, dtype=float)
    pihat = np.asarray(pihat, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    reference = np.asarray(reference, dtype=float)
    lipschitz = float(probs @ probs) + 2.0 * lam + gamma_c
    if lipschitz <= 0:
        return anchor.copy(), SubsolverInfo(iterations=0, converged=True, exact=True)

    def grad(c):
        return (-np.outer(pihat - c @ probs, probs) + 2.0 * lam * (c - reference)
                + gamma_c * (c - anchor))

    def obj(c):
        return confusion_objective(c, probs, pihat, reference, anchor, lam, gamma_c)

    return accelerated_projected_gradient(
        grad=grad,
        objective=obj,
        project=project_simplex_columns,
        x0=anchor,
        lipschitz=lipschitz,
        strong_convexity=2.0 * lam + gamma_c,
        tol=tol,
        max_iter=max_iter,
    )


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class OuterRow:
    k: int
    inner_iterations: int
    inner_converged: bool
    rho_change: float
    confusion_change: float
    e_rho: float
    e_c: float


@dataclass
class EstimateResult:
    rhos: list[np.ndarray]
    confusions: list[np.ndarray]
    trace: list[TraceRow]
    outer: list[OuterRow]
    mode: Mode
    converged: bool
    warnings: int = 0
    final_state: SolverState | None = field(default=None, repr=False)

    @property
    def mean_inner_iterations(self) -> float:
        if not self.outer:
            return 0.0
        return float(np.mean([row.inner_iterations for row in self.outer]))


def _rel_errors(xs, truths) -> float:
    return float(np.mean([np.linalg.norm(a - b) / np.linalg.norm(b) for a, b in zip(xs, truths)]))


def build_subproblems(layout: Layout, confusions, empirical, config: SolverConfig):
    return [
        RegionSubproblem(layout, r, confusions[r], empirical[r], config.gamma_rho, config.beta)
        for r in range(layout.n_regions)
    ]


def run_estimator(instance, config: SolverConfig) -> EstimateResult:
    """Run the outer proximal alternating loop for one estimator mode.

    ``ideal`` pins every confusion matrix to the identity, ``oracle`` pins
    them to the ground truth, ``joint`` alternates state and confusion updates.
    """
    config.validate()
    mode = Mode.parse(config.mode)
    graph = instance.graph
    povms = instance.povms
    layout = Layout(graph, povms)
    empirical = instance.empirical
    eyes = [np.eye(p.n_outcomes) for p in povms]
    reference = (
        [np.asarray(c, dtype=float) for c in config.reference_confusions]
        if config.reference_confusions is not None else eyes
    )
    if mode is Mode.IDEAL:
        conf0 = eyes
    elif mode is Mode.ORACLE:
        conf0 = [np.asarray(c, dtype=float) for c in instance.confusions_truth]
    else:
        conf0 = reference
    state = initial_state(layout, conf0)
    truths_x = [herm_to_vec(t.matrix) for t in instance.regional_truths]
    truths_c = instance.confusions_truth

    trace: list[TraceRow] = []
    outer: list[OuterRow] = []
    converged = False
    warnings = 0
    subs = build_subproblems(layout, state.confusions, empirical, config)
    for k in range(config.outer_max):
        state.k = k
        anchors = [x.copy() for x in state.x]
        inner = inner_admm(layout, subs, state, anchors, config)
        trace.extend(inner.rows)
        warnings += inner.warnings
        new_state = inner.state
        rho_change = max(float(np.linalg.norm(a - b)) for a, b in zip(new_state.x, anchors))
        conf_change = 0.0
        if mode is Mode.JOINT:
            def update(r: int):
                probs = layout.born[r] @ new_state.x[r]
                return confusion_update(
                    probs, state.confusions[r], reference[r], config.lam, config.gamma_c,
                    empirical[r], tol=config.subsolver_tol, max_iter=config.subsolver_max,
                )
            results = _map(update, range(layout.n_regions), config.threads)
            new_conf = [res[0] for res in results]
            warnings += sum(0 if res[1].converged else 1 for res in results)
            conf_change = max(
                float(np.linalg.norm(a - b)) for a, b in zip(new_conf, state.confusions)
            )
            new_state.confusions = new_conf
            subs = build_subproblems(layout, new_conf, empirical, config)
        new_state.k = k + 1
        state = new_state
        outer.append(OuterRow(
            k=k + 1,
            inner_iterations=inner.iterations,
            inner_converged=inner.converged,
            rho_change=rho_change,
            confusion_change=conf_change,
            e_rho=_rel_errors(state.x, truths_x),
            e_c=_rel_errors(state.confusions, truths_c),
        ))
        if rho_change + conf_change < config.outer_tol:
            converged = True
            break
    rhos = [vec_to_herm(x) for x in state.x]
    return EstimateResult(
        rhos=rhos,
        confusions=[c.copy() for c in state.confusions],
        trace=trace,
        outer=outer,
        mode=mode,
        converged=converged,
        warnings=warnings,
        final_state=state,
    )


def solve_state_subproblem(
    layout: Layout,
    r: int,
    confusion: np.ndarray,
    anchor: np.ndarray,
    state: SolverState,
    pihat: np.ndarray,
    config: SolverConfig,
) -> tuple[np.ndarray, SubsolverInfo]:
    """One region's ADMM state update as a standalone call (coordinates in, coordinates out)."""
    sp = RegionSubproblem(layout, r, confusion, pihat, config.gamma_rho, config.beta)
    rhs = _region_rhs(layout, sp, r, anchor, state, config.beta)
    return sp.solve(rhs, state.x[r], config.subsolver_tol, config.subsolver_max)


# ---------------------------------------------------------------------------
# optimality gap and serialization


def optimality_gap_trace(instance, config: SolverConfig, reference_iterations: int = 2000,
                         ) -> tuple[list[float], list[float], float]:
    """First-outer-iteration inner loop against a long reference run from the same start.

    Returns ``(r_cons trace, g_opt trace, J_min)`` where the reference value
    ``J_min`` comes from ``reference_iterations`` inner iterations without
    early stopping.
    """
    mode = Mode.parse(config.mode)
    layout = Layout(instance.graph, instance.povms)
    if mode is Mode.ORACLE:
        conf = instance.confusions_truth
    elif mode is Mode.IDEAL or config.reference_confusions is None:
        conf = [np.eye(p.n_outcomes) for p in instance.povms]
    else:
        conf = config.reference_confusions
    state = initial_state(layout, conf)
    subs = build_subproblems(layout, state.confusions, instance.empirical, config)
    anchors = [x.copy() for x in state.x]
    run = inner_admm(layout, subs, state, anchors, config)
    ref = inner_admm(layout, subs, state, anchors, config, inner_max=reference_iterations,
                     inner_tol=1e-300, check_invariants=False)
    j_min = min(row.objective for row in ref.rows)
    gaps = [optimality_gap(row.objective, j_min) for row in run.rows]
    return [row.r_cons for row in run.rows], gaps, j_min


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_trace_csv(path, blocks: Sequence[tuple[str, Sequence[TraceRow]]]) -> None:
    """Trace rows of one or more modes; the leading ``mode`` column tags each row."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(("mode",) + TRACE_COLUMNS) + "\n")
        for mode, rows in blocks:
            for row in rows:
                fh.write(",".join([mode] + [_fmt(v) for v in row.as_tuple()]) + "\n")


def read_trace_csv(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            row = {"mode": rec["mode"]}
            for col in TRACE_COLUMNS:
                val = rec[col]
                row[col] = int(val) if col in ("k", "l", "wall_ns", "sub_iters", "warnings") else float(val)
            out.append(row)
    return out


def save_result(result: EstimateResult, directory, prefix: str | None = None) -> None:
    """Estimated states and confusions as binary arrays, one file per region."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tag = f"{prefix}_" if prefix else ""
    for r, (rho, c) in enumerate(zip(result.rhos, result.confusions)):
        write_array(d / f"{tag}rho_{r}.qtdm", rho)
        write_array(d / f"{tag}confusion_{r}.qtdm", c)
