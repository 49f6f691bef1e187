"""Command-line experiment runner: ``run``, ``sweep``, ``theory`` and ``report``.

Exit codes: 0 ok, 2 configuration error, 3 contract failure, 4 partial
sweep failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import ResourceLimitError
from .instance import DEFAULT_EPS, DEFAULT_NU, DEFAULT_SHOTS, build_instance, calibrate_eps
from .metrics import (
    budgets,
    build_report,
    oracle_gap,
    recovery_gain,
    scaling_bounds_check,
)
from .regions import GEOMETRIES, build_geometry, from_regions
from .solver import (
    Mode,
    SolverConfig,
    optimality_gap_trace,
    run_estimator,
    save_result,
    write_trace_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT, EXIT_PARTIAL = 0, 2, 3, 4
MODE_ORDER = ("ideal", "joint", "oracle")
DEFAULT_DELTA_GRID = (0.0, 0.02, 0.05, 0.08, 0.12)
DEFAULT_TTOT_GRID = (6_000, 20_000, 60_000, 200_000)


class ConfigError(ValueError):
    pass


def worker_cap() -> int:
    raw = os.environ.get("QTDM_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"QTDM_THREADS: expected a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("QTDM_THREADS: must be >= 1")
    return n


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    geometry: str = "ring"
    nu: float = DEFAULT_NU
    eps: float | None = None
    target_delta: float | None = None
    shots: int = DEFAULT_SHOTS
    t_tot: int | None = None
    seed: int = 0
    seeds: int = 1
    modes: list[str] = field(default_factory=lambda: list(MODE_ORDER))
    solver: dict = field(default_factory=dict)
    out: str = "runs"
    gopt: bool = False
    # sweep grids
    delta_grid: list[float] | None = None
    eps_grid: list[float] | None = None
    t_tot_grid: list[int] | None = None
    geometries: list[str] | None = None
    max_points: int = 400

    def validate(self) -> None:
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry: expected one of {', '.join(GEOMETRIES)}, got {self.geometry!r}")
        if not 0 <= self.nu < 1:
            raise ConfigError(f"nu: must lie in [0, 1), got {self.nu}")
        if self.eps is not None and self.eps < 0:
            raise ConfigError("eps: must be >= 0")
        if self.eps is not None and self.target_delta is not None:
            raise ConfigError("eps/target_delta: give at most one")
        if self.shots < 1:
            raise ConfigError("shots: must be >= 1")
        if self.seeds < 1:
            raise ConfigError("seeds: must be >= 1")
        if not self.modes:
            raise ConfigError("modes: need at least one mode")
        try:
            self.modes = [Mode.parse(m).value for m in self.modes]
            self.solver_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"solver/modes: {exc}") from exc

    def solver_config(self, mode: str = "joint") -> SolverConfig:
        data = dict(self.solver)
        data["mode"] = mode
        return SolverConfig.from_dict(data)

    def shots_per_region(self, n_regions: int) -> int:
        if self.t_tot is not None:
            if self.t_tot < n_regions:
                raise ConfigError("t_tot: fewer shots than regions")
            return self.t_tot // n_regions
        return self.shots

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    data: dict = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        unknown = sorted(set(data) - _CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"{path}: unknown field(s) {', '.join(unknown)}")
    solver = dict(data.get("solver", {}))
    solver.update(overrides.pop("solver", {}))
    data.update({k: v for k, v in overrides.items() if v is not None})
    data["solver"] = solver
    try:
        cfg = ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# single run


def _resolve_eps(cfg: ExperimentConfig, graph, seed: int) -> float:
    if cfg.target_delta is not None:
        return calibrate_eps(cfg.target_delta, graph, seed)
    return DEFAULT_EPS if cfg.eps is None else float(cfg.eps)


def execute_run(cfg: ExperimentConfig, out_dir: Path, seed: int, threads: int = 1) -> dict:
    """Build one instance, run the requested modes and write the run directory."""
    graph = build_geometry(cfg.geometry)
    eps = _resolve_eps(cfg, graph, seed)
    t_r = cfg.shots_per_region(graph.n_regions)
    inst = build_instance(graph, nu=cfg.nu, eps=eps, t_r=t_r, seed=seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    inst.save(out_dir / "instance")
    manifest = {
        "version": __version__,
        # output location is left out so identical runs give identical manifests
        "experiment": {k: v for k, v in cfg.to_dict().items() if k != "out"} | {"seed": seed},
        "eps": eps,
        "delta_c": inst.delta_c,
        "shots_per_region": t_r,
        "seeds": inst.seeds,
        "solver": {m: cfg.solver_config(m).to_dict() for m in cfg.modes},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    reports: dict = {}
    blocks = []
    errors = {}
    for mode in sorted(cfg.modes, key=MODE_ORDER.index):
        sc = cfg.solver_config(mode)
        sc.threads = threads
        res = run_estimator(inst, sc)
        save_result(res, out_dir / "results", prefix=mode)
        blocks.append((mode, res.trace))
        r_cons, g_opt = [], []
        if cfg.gopt:
            r_cons, g_opt, _ = optimality_gap_trace(inst, sc)
        rep = build_report(
            graph, res.rhos, inst.regional_truths, res.confusions, inst.confusions_truth,
            l_bar=res.mean_inner_iterations, r_cons=r_cons, g_opt=g_opt,
        )
        reports[mode] = rep.to_dict() | {
            "outer_iterations": len(res.outer),
            "converged": res.converged,
            "warnings": res.warnings,
        }
        errors[mode] = rep.e_rho
    write_trace_csv(out_dir / "trace.csv", blocks)
    summary: dict = {"geometry": cfg.geometry, "seed": seed, "modes": reports}
    if "ideal" in errors and "joint" in errors:
        summary["g_rho"] = _safe(recovery_gain, errors["ideal"], errors["joint"])
        if "oracle" in errors:
            summary["gamma_rho"] = _safe(oracle_gap, errors["ideal"], errors["joint"], errors["oracle"])
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _safe(fn, *args):
    try:
        return fn(*args)
    except ValueError:
        return None


def cmd_run(cfg: ExperimentConfig) -> int:
    threads = worker_cap()
    base = Path(cfg.out)
    for i in range(cfg.seeds):
        seed = cfg.seed + i
        d = base if cfg.seeds == 1 else base / f"seed{seed}"
        summary = execute_run(cfg, d, seed, threads=threads)
        line = " ".join(
            f"{m}:e_rho={summary['modes'][m]['e_rho']:.4f}" for m in summary["modes"]
        )
        print(f"{d}: {line}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

SWEEP_COLUMNS = (
    "geometry", "delta_target", "eps", "delta_c", "t_tot", "seed", "mode",
    "e_rho", "e_c", "g_rho", "gamma_rho", "l_bar", "c_bud", "w_bud", "status",
)


def _sweep_point(args) -> list[dict]:
    geometry, delta, eps, t_tot, seed, cfg_dict = args
    cfg = ExperimentConfig(**cfg_dict)
    rows = []
    base = {"geometry": geometry, "delta_target": delta, "t_tot": t_tot, "seed": seed}
    try:
        graph = build_geometry(geometry)
        if eps is None:
            eps = calibrate_eps(delta, graph, seed)
        t_r = max(t_tot // graph.n_regions, 1)
        inst = build_instance(graph, nu=cfg.nu, eps=eps, t_r=t_r, seed=seed)
        errs = {}
        for mode in sorted(cfg.modes, key=MODE_ORDER.index):
            res = run_estimator(inst, cfg.solver_config(mode))
            rep = build_report(graph, res.rhos, inst.regional_truths, res.confusions,
                               inst.confusions_truth, l_bar=res.mean_inner_iterations)
            errs[mode] = rep.e_rho
            rows.append(base | {
                "eps": eps, "delta_c": inst.delta_c, "mode": mode, "e_rho": rep.e_rho,
                "e_c": rep.e_c, "l_bar": rep.l_bar, "c_bud": rep.c_bud, "w_bud": rep.w_bud,
                "status": "ok",
            })
        for row in rows:
            if row["mode"] == "joint" and "ideal" in errs:
                row["g_rho"] = _safe(recovery_gain, errs["ideal"], errs["joint"])
                if "oracle" in errs:
                    row["gamma_rho"] = _safe(oracle_gap, errs["ideal"], errs["joint"], errs["oracle"])
    except Exception as exc:  # recorded per row; the sweep goes on
        rows = [base | {"eps": eps, "mode": m, "status": f"error: {type(exc).__name__}: {exc}"}
                for m in cfg.modes]
    return rows


def _median(values):
    vals = [v for v in values if v is not None and v == v]
    return float(np.median(vals)) if vals else None


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_sweep(cfg: ExperimentConfig) -> int:
    geometries = cfg.geometries or [cfg.geometry]
    for g in geometries:
        if g not in GEOMETRIES:
            raise ConfigError(f"geometries: unknown geometry {g!r}")
    if cfg.eps_grid is not None:
        levels = [(None, float(e)) for e in cfg.eps_grid]
    else:
        levels = [(float(d), None) for d in (cfg.delta_grid or DEFAULT_DELTA_GRID)]
    t_grid = [int(t) for t in (cfg.t_tot_grid or DEFAULT_TTOT_GRID)]
    seeds = [cfg.seed + i for i in range(cfg.seeds)]
    points = list(itertools.product(geometries, levels, t_grid, seeds))
    if len(points) > cfg.max_points:
        raise ConfigError(f"max_points: grid has {len(points)} points, budget is {cfg.max_points}")
    cfg_dict = cfg.to_dict()
    jobs = [(g, d, e, t, s, cfg_dict) for g, (d, e), t, s in points]
    workers = worker_cap()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows = [row for block in results for row in block]
    failed = sum(1 for r in rows if r["status"] != "ok")
    # medians per grid point and mode, appended after the per-seed rows
    medians = []
    for g, (d, e), t in itertools.product(geometries, levels, t_grid):
        for mode in MODE_ORDER:
            sel = [r for r in rows if r["geometry"] == g and r["delta_target"] == d
                   and r["t_tot"] == t and r["mode"] == mode and r["status"] == "ok"
                   and (e is None or r["eps"] == e)]
            if not sel:
                continue
            med = {"geometry": g, "delta_target": d, "t_tot": t, "seed": "median", "mode": mode,
                   "status": "ok"}
            for col in ("eps", "delta_c", "e_rho", "e_c", "g_rho", "gamma_rho", "l_bar", "c_bud", "w_bud"):
                med[col] = _median([r.get(col) for r in sel])
            medians.append(med)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows + medians:
            writer.writerow([_csv_value(row.get(c)) for c in SWEEP_COLUMNS])
    (out / "manifest.json").write_text(json.dumps(
        {"version": __version__, "experiment": cfg.to_dict(),
         "delta_grid": [d for d, _ in levels], "t_tot_grid": t_grid},
        indent=2, sort_keys=True) + "\n")
    print(f"{out / 'sweep.csv'}: {len(rows)} rows, {failed} failed")
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# theory


def _theory_fixtures():
    return {
        "single_qubit": from_regions(1, [[0]], kind="single_qubit"),
        "chain3": from_regions(3, [[0, 1], [1, 2]], kind="chain3"),
        "triangle": from_regions(3, [[0, 1], [1, 2], [0, 2]], kind="triangle"),
    }


def cmd_theory(cfg: ExperimentConfig, povm_sizes: Sequence[int] | None = None,
               n_kl: int = 50, n_dirs: int = 20) -> int:
    from .theory import (
        build_fixture,
        finite_difference_remainder,
        identifiability_report,
        kernel_complement_basis,
        kl_mle_identity_check,
        quadratic_growth_probe,
        tangent_basis,
    )

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    rng = np.random.default_rng(cfg.seed)

    # scaling bounds on the benchmark geometries
    scaling = {}
    for g in GEOMETRIES:
        graph = build_geometry(g)
        m_r = None
        if povm_sizes is not None:
            m_r = list(povm_sizes) * graph.n_regions if len(povm_sizes) == 1 else list(povm_sizes)
        try:
            rep = scaling_bounds_check(graph, m_r, mu=1 if m_r is None else max(
                1, max(m / 4**q for m, q in zip(m_r, graph.region_qubits()))))
        except ValueError as exc:
            raise ConfigError(f"povm_sizes: {exc}") from exc
        scaling[g] = rep.to_dict()
        if not rep.passed:
            failures.append(f"scaling bounds fail on {g}")

    # identifiability, finite differences and growth on small fixtures
    ident = {}
    for name, graph in _theory_fixtures().items():
        fx = build_fixture(graph, seed=cfg.seed)
        entry = {}
        kernels = {}
        for par in ("full", "tensor"):
            model = tangent_basis(fx, par)
            rep = identifiability_report(model)
            kernels[par] = rep.kernel_dim
            if rep.kernel_dim + rep.rank != model.dim:
                failures.append(f"rank-nullity mismatch on {name}/{par}")
            fd = []
            for _ in range(n_dirs):
                v = rng.standard_normal(model.dim)
                v /= np.linalg.norm(v)
                fd.append(finite_difference_remainder(model, v, 1e-2)
                          / finite_difference_remainder(model, v, 5e-3))
            if not all(abs(x - 4.0) <= 0.5 for x in fd):
                failures.append(f"finite-difference decay off on {name}/{par}")
            comp, ker = kernel_complement_basis(model)
            grid = [1e-2, 1e-3, 1e-4]
            probes = {"complement": quadratic_growth_probe(model, comp[:, -1], grid,
                                                           alpha=rep.sigma_min).to_dict()}
            if ker.shape[1]:
                probes["kernel"] = quadratic_growth_probe(model, ker[:, 0], grid,
                                                          alpha=rep.sigma_min).to_dict()
            entry[par] = {"identifiability": rep.to_dict(), "fd_ratios": fd, "growth": probes}
        if kernels["full"] < model.dim - model.output_dim:
            failures.append(f"kernel below rank-nullity bound on {name}")
        ident[name] = entry

    # KL / likelihood identity on random interior fixtures
    kl = []
    for i in range(n_kl):
        graph = from_regions(1, [[0]])
        fx = build_fixture(graph, seed=cfg.seed + 1000 + i)
        p = fx.confusions_truth[0] @ fx.povm(0).probabilities(fx.regional_truths[0].matrix)
        counts = rng.multinomial(1000, p / p.sum())
        res = kl_mle_identity_check(counts, fx.regional_truths[0], fx.confusions_truth[0], 1000)
        kl.append(res.to_dict())
        if res.rel_discrepancy >= 1e-9:
            failures.append(f"KL identity off on fixture {i}")

    for name, payload in (("scaling.json", scaling), ("identifiability.json", ident),
                          ("kl_identity.json", kl)):
        (out / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    summary = {"passed": not failures, "failures": failures}
    (out / "theory_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name, entry in ident.items():
        for par, data in entry.items():
            if data["growth"].get("kernel", {}).get("in_kernel"):
                print(f"{name}/{par}: kernel direction shows no quadratic growth (expected)")
    print("theory checks passed" if not failures else "\n".join(failures))
    return EXIT_OK if not failures else EXIT_CONTRACT


# ---------------------------------------------------------------------------
# report

REPORT_COLUMNS = ("geometry", "q", "R", "q_ov", "e_rho_I", "e_rho_J", "e_rho_O", "e_C_J",
                  "G_rho", "Gamma_rho", "C_bud", "W_bud", "status")


def collect_runs(paths: Sequence[str]) -> list[Path]:
    found = []
    for p in paths:
        p = Path(p)
        if (p / "report.json").exists():
            found.append(p)
        else:
            found.extend(sorted(q.parent for q in p.rglob("report.json")))
    return sorted(set(found))


def benchmark_table(run_dirs: Sequence[Path]) -> list[dict]:
    by_geo: dict[str, list[dict]] = {}
    for d in run_dirs:
        rep = json.loads((d / "report.json").read_text())
        by_geo.setdefault(rep["geometry"], []).append(rep)
    rows = []
    for geo in sorted(by_geo, key=lambda g: GEOMETRIES.index(g) if g in GEOMETRIES else 99):
        reps = sorted(by_geo[geo], key=lambda r: r["seed"])
        graph = build_geometry(geo)
        row = {"geometry": geo, "q": graph.n_sites, "R": graph.n_regions,
               "q_ov": max(ov.n_qubits for ov in graph.overlaps)}
        complete = all(all(m in r["modes"] for m in MODE_ORDER) for r in reps)
        med = lambda mode, key: _median([r["modes"][mode][key] for r in reps if mode in r["modes"]])
        row["e_rho_I"] = med("ideal", "e_rho")
        row["e_rho_J"] = med("joint", "e_rho")
        row["e_rho_O"] = med("oracle", "e_rho")
        row["e_C_J"] = med("joint", "e_c")
        row["G_rho"] = _median([r.get("g_rho") for r in reps])
        row["Gamma_rho"] = _median([r.get("gamma_rho") for r in reps])
        l_bar = next((v for v in (med(m, "l_bar") for m in ("joint", "ideal", "oracle"))
                      if v is not None), None)
        if l_bar is not None:
            b = budgets(graph, None, l_bar)
            row["C_bud"], row["W_bud"] = float(b["c_bud"]), float(b["w_bud"])
        row["status"] = "ok" if complete else "incomplete"
        rows.append(row)
    return rows


def _fmt_cell(col: str, v) -> str:
    if v is None:
        return "-"
    if col.startswith("e_"):
        return f"{v:.3f}"
    if col in ("G_rho", "Gamma_rho"):
        text = f"{v:.1f}"
        return "0.0" if text == "-0.0" else text
    if col in ("C_bud", "W_bud"):
        return f"{v:.2e}"
    return str(v)


def render_table(rows: Sequence[dict]) -> tuple[str, str]:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([_csv_value(row.get(c)) for c in REPORT_COLUMNS])
    cells = [list(REPORT_COLUMNS)] + [[_fmt_cell(c, row.get(c)) for c in REPORT_COLUMNS] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(REPORT_COLUMNS))]
    text = "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells) + "\n"
    return buf.getvalue(), text


def cmd_report(paths: Sequence[str], out: str | None) -> int:
    runs = collect_runs(paths)
    if not runs:
        raise ConfigError("report: no run directories with report.json found")
    rows = benchmark_table(runs)
    csv_text, text = render_table(rows)
    if out:
        o = Path(out)
        o.mkdir(parents=True, exist_ok=True)
        (o / "benchmark.csv").write_text(csv_text)
        (o / "benchmark.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(float(x)) for x in text.split(",") if x.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override it")
    p.add_argument("--geometry", choices=GEOMETRIES)
    p.add_argument("--nu", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--target-delta", type=float, dest="target_delta")
    p.add_argument("--shots", type=int, help="shots per region")
    p.add_argument("--t-tot", type=int, dest="t_tot", help="total shots, split evenly")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds")
    p.add_argument("--mode", "--modes", dest="modes", type=lambda s: s.split(","))
    p.add_argument("--out")
    for name in ("beta", "gamma-rho", "gamma-c", "lambda", "inner-tol", "outer-tol",
                 "subsolver-tol"):
        p.add_argument(f"--{name}", type=float, dest=f"solver_{name.replace('-', '_')}")
    for name in ("inner-max", "outer-max", "subsolver-max"):
        p.add_argument(f"--{name}", type=int, dest=f"solver_{name.replace('-', '_')}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regiontomo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="estimate one instance per seed")
    _add_common(run)
    run.add_argument("--gopt", action="store_true", default=None,
                     help="also record the first-outer-iteration optimality gap trace")
    sweep = sub.add_parser("sweep", help="grid over readout deviation and total shots")
    _add_common(sweep)
    sweep.add_argument("--geometries", type=lambda s: s.split(","))
    sweep.add_argument("--delta-grid", type=_floats, dest="delta_grid")
    sweep.add_argument("--eps-grid", type=_floats, dest="eps_grid")
    sweep.add_argument("--t-tot-grid", type=_ints, dest="t_tot_grid")
    sweep.add_argument("--max-points", type=int, dest="max_points")
    theory = sub.add_parser("theory", help="identifiability, growth, KL and scaling checks")
    theory.add_argument("--out", default="theory")
    theory.add_argument("--seed", type=int, default=0)
    theory.add_argument("--povm-sizes", type=_ints, dest="povm_sizes",
                        help="override M_r (one value or one per region)")
    theory.add_argument("--kl-fixtures", type=int, default=50)
    theory.add_argument("--directions", type=int, default=20)
    report = sub.add_parser("report", help="benchmark table from run directories")
    report.add_argument("paths", nargs="+")
    report.add_argument("--out")
    return parser


def _overrides(ns: argparse.Namespace) -> dict:
    out: dict = {"solver": {}}
    for key, val in vars(ns).items():
        if val is None or key in ("command", "config", "povm_sizes", "kl_fixtures", "directions", "paths"):
            continue
        if key.startswith("solver_"):
            name = key[len("solver_"):]
            out["solver"]["lambda" if name == "lambda" else name] = val
        else:
            out[key] = val
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "report":
            return cmd_report(ns.paths, ns.out)
        if ns.command == "theory":
            cfg = ExperimentConfig(out=ns.out, seed=ns.seed)
            return cmd_theory(cfg, ns.povm_sizes, ns.kl_fixtures, ns.directions)
        cfg = load_config(ns.config, _overrides(ns))
        if ns.command == "run":
            return cmd_run(cfg)
        return cmd_sweep(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
