"""Accuracy, gain, budget and parameter-count metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import UndefinedMetricError
from .regions import RegionGraph


def _mat(x) -> np.ndarray:
    return np.asarray(getattr(x, "matrix", x))


def _mean_relative_error(estimates, truths) -> float:
    if len(estimates) != len(truths):
        raise ValueError(f"got {len(estimates)} estimates for {len(truths)} truths")
    if len(truths) == 0:
        raise ValueError("need at least one region")
    total = 0.0
    for est, tru in zip(estimates, truths):
        est, tru = _mat(est), _mat(tru)
        if est.shape != tru.shape:
            raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
        total += np.linalg.norm(est - tru) / np.linalg.norm(tru)
    return float(total / len(truths))


def state_error(estimates: Sequence, truths: Sequence) -> float:
    """Mean over regions of ``||rho_hat - rho||_F / ||rho||_F``."""
    return _mean_relative_error(estimates, truths)


def confusion_error(estimates: Sequence, truths: Sequence) -> float:
    return _mean_relative_error(estimates, truths)


def consensus_residual(pairs: Sequence[tuple]) -> float:
    """Aggregate overlap mismatch.

    ``pairs`` holds ``(reduced_r, reduced_rp, consensus)`` triples, one per
    unordered overlap; both directed residuals are measured against the same
    consensus variable.
    """
    total = 0.0
    for red_a, red_b, z in pairs:
        da = np.asarray(red_a) - np.asarray(z)
        db = np.asarray(red_b) - np.asarray(z)
        total += float(np.real(np.vdot(da, da) + np.vdot(db, db)))
    return math.sqrt(total)


def optimality_gap(objective: float, reference: float) -> float:
    """``(J - J_min) / max(1, |J_min|)``, floored at zero within 1e-12."""
    gap = (objective - reference) / max(1.0, abs(reference))
    return 0.0 if gap < 1e-12 else float(gap)


def recovery_gain(e_ideal: float, e_joint: float) -> float:
    """Percentage reduction in state error of the joint estimator over the ideal one."""
    if not e_ideal > 0:
        raise UndefinedMetricError("recovery gain needs e_I > 0")
    return 100.0 * (e_ideal - e_joint) / e_ideal


def oracle_gap(e_ideal: float, e_joint: float, e_oracle: float) -> float:
    """Share (percent) of the ideal-to-oracle error gap closed by joint estimation."""
    if not e_ideal > e_oracle:
        raise UndefinedMetricError(
            f"oracle gap undefined when e_I <= e_O (e_I={e_ideal}, e_O={e_oracle})"
        )
    return 100.0 * (e_ideal - e_joint) / (e_ideal - e_oracle)


# ---------------------------------------------------------------------------
# budgets and parameter counts


def _overlap_sizes(graph: RegionGraph) -> list[int]:
    return [ov.n_qubits for ov in graph.overlaps]


def _check_m(graph: RegionGraph, m_r: Sequence[int] | None) -> list[int]:
    q_r = graph.region_qubits()
    if m_r is None:
        return [4**q for q in q_r]
    m_r = [int(m) for m in m_r]
    if len(m_r) != graph.n_regions:
        raise ValueError(f"need {graph.n_regions} POVM sizes, got {len(m_r)}")
    return m_r


def budgets(graph: RegionGraph, m_r: Sequence[int] | None = None, l_bar: float = 1.0,
            global_m: int | None = None) -> dict:
    """Communication/work budgets and the parameter counts of the scaling comparison.

    ``c_bud`` sums unordered overlap pairs while ``n_comm`` counts both
    transmission directions.
    """
    if l_bar < 0:
        raise ValueError("l_bar must be >= 0")
    m_r = _check_m(graph, m_r)
    q_r = graph.region_qubits()
    pair_sum = sum(4**s for s in _overlap_sizes(graph))
    work = sum(4**q for q in q_r) + sum(m * m for m in m_r)
    q = graph.n_sites
    m_glob = 4**q if global_m is None else int(global_m)
    p_reg = sum((4**q - 1) + m * (m - 1) for q, m in zip(q_r, m_r))
    p_glob = (4**q - 1) + m_glob * (m_glob - 1)
    return {
        "c_bud": l_bar * pair_sum,
        "w_bud": l_bar * work,
        "n_comm": 2 * pair_sum,
        "p_reg": p_reg,
        "p_glob": p_glob,
        "f_mem": Fraction(p_glob, p_reg),
    }


@dataclass
class BoundCheck:
    name: str
    lhs: Fraction
    rhs: Fraction
    holds: bool

    @property
    def slack(self) -> Fraction:
        return abs(self.rhs - self.lhs)

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": float(self.lhs), "rhs": float(self.rhs),
                "slack": float(self.slack), "holds": self.holds,
                "lhs_exact": str(self.lhs), "rhs_exact": str(self.rhs)}


@dataclass
class ScalingReport:
    passed: bool
    checks: list[BoundCheck]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def scaling_bounds_check(graph: RegionGraph, m_r: Sequence[int] | None = None,
                         mu: float | Fraction = 1, global_m: int | None = None) -> ScalingReport:
    """Evaluate the five parameter/communication scaling inequalities exactly.

    All quantities are Python integers or :class:`fractions.Fraction`, so the
    comparisons are exact even where ``16**q`` exceeds double precision.
    """
    mu = Fraction(mu)
    if mu < 1:
        raise ValueError("mu must be >= 1")
    m_r = _check_m(graph, m_r)
    q_r = graph.region_qubits()
    for r, (q, m) in enumerate(zip(q_r, m_r)):
        if not (4**q <= m <= mu * 4**q):
            raise ValueError(f"region {r}: need 4**{q} <= M_r <= mu*4**{q}, got M_r={m}")
    q = graph.n_sites
    if global_m is not None and global_m < 4**q:
        raise ValueError(f"need global M >= 4**{q}")
    b = budgets(graph, m_r, 1, global_m)
    R = graph.n_regions
    q_max, q_min = max(q_r), min(q_r)
    ov = _overlap_sizes(graph)
    q_ov_max = max(ov, default=0)
    d_max = graph.max_degree()
    reg_cap = (1 + mu * mu) * R * 16**q_max
    glob_floor = 16**q - 4**q
    ratio_cap = Fraction(d_max) / (1 - Fraction(1, 4**q_min)) * Fraction(4) ** (q_ov_max - 2 * q_min)
    p_reg, p_glob, n_comm = Fraction(b["p_reg"]), Fraction(b["p_glob"]), Fraction(b["n_comm"])
    checks = [
        BoundCheck("p_reg_upper", p_reg, Fraction(reg_cap), p_reg <= reg_cap),
        BoundCheck("p_glob_lower", p_glob, Fraction(glob_floor), p_glob >= glob_floor),
        BoundCheck("f_mem_lower", b["f_mem"], Fraction(glob_floor) / reg_cap,
                   b["f_mem"] >= Fraction(glob_floor) / reg_cap),
        BoundCheck("n_comm_upper", n_comm, Fraction(d_max * R * 4**q_ov_max),
                   n_comm <= d_max * R * 4**q_ov_max),
        BoundCheck("comm_per_param_upper", n_comm / p_reg, ratio_cap, n_comm / p_reg <= ratio_cap),
    ]
    return ScalingReport(passed=all(c.holds for c in checks), checks=checks)


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricReport:
    e_rho: float
    e_c: float
    l_bar: float
    c_bud: float
    w_bud: float
    p_reg: int
    p_glob: int
    n_comm: int
    f_mem: float
    g_rho: float | None = None
    gamma_rho_gap: float | None = None
    r_cons: list[float] = field(default_factory=list)
    g_opt: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.e_rho < 0 or self.e_c < 0:
            raise ValueError("errors must be >= 0")
        if self.c_bud < 0 or self.w_bud < 0:
            raise ValueError("budgets must be >= 0")
        if not self.f_mem > 0:
            raise ValueError("f_mem must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> MetricReport:
        return cls(**data)


def build_report(graph: RegionGraph, rhos, truths, confusions, confusion_truths,
                 l_bar: float, r_cons: Sequence[float] = (), g_opt: Sequence[float] = (),
                 m_r: Sequence[int] | None = None) -> MetricReport:
    b = budgets(graph, m_r, l_bar)
    return MetricReport(
        e_rho=state_error(rhos, truths),
        e_c=confusion_error(confusions, confusion_truths),
        l_bar=float(l_bar),
        c_bud=float(b["c_bud"]),
        w_bud=float(b["w_bud"]),
        p_reg=int(b["p_reg"]),
        p_glob=int(b["p_glob"]),
        n_comm=int(b["n_comm"]),
        f_mem=float(b["f_mem"]),
        r_cons=[float(x) for x in r_cons],
        g_opt=[float(x) for x in g_opt],
    )
