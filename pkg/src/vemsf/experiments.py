"""Experiment drivers and CSV/JSON reports."""
from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy

from . import __version__
from .macrodiv import NULLSPACE_CUTOFF
from .mesh import generate_mesh
from .poly import dim_p
from .system import (DEFAULT_ZERO_THRESHOLD, DIRECT_LIMIT, METHODS, Discretization,
                     assemble_global, assemble_matrices, compute_errors, default_exactness,
                     solve_system, spectrum_stats)

EXPERIMENTS = ("convergence", "local-spectrum", "collapsing-hexagons", "patch-test", "timing")
CSV_COLUMNS = ("method", "k", "h", "dofs", "err_l2", "err_grad", "order_l2", "order_grad",
               "lam_max", "lam_min_nz", "n_zero", "cond", "seconds")
REFINABLE = ("convex-poly", "nonconvex-poly", "uniform-quads", "anisotropic-quads")
SPECTRUM_MESHES = (("regular-hexagon", "hexagon-Hi", {"i": 0}),
                   ("perturbed-hexagon", "quasi-regular-hexagon", {}),
                   ("hanging-node-square", "square-hanging-nodes", {}))
# ill-conditioned but nonsingular matrices (thin cells, anisotropic meshes)
FINE_ZERO_THRESHOLD = 1e-14
SOLVER_RTOL = 1e-12


class ConfigError(ValueError):
    pass


class InfeasibleError(ValueError):
    """Requested run exceeds the DoF cap."""

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


# ---------------------------------------------------------------------------
# exact solutions
# ---------------------------------------------------------------------------

def _sin_u(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


def _sin_grad(x):
    return np.pi * np.column_stack([np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
                                    np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])])


def _sin_f(x):
    return (2 * np.pi ** 2 + 2) * _sin_u(x)


def _linear_u(x):
    return 1.0 + x[:, 0] + x[:, 1]


def _linear_grad(x):
    return np.ones((len(x), 2))


def _ones(x):
    return np.ones(len(x))


# ---------------------------------------------------------------------------
# configuration and report
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    experiment: str
    methods: list = field(default_factory=lambda: ["SFNCVEM"])
    ks: list = field(default_factory=lambda: [1])
    mesh: str = "convex-poly"
    levels: int = 4
    alpha: float = 2.0
    out: str = "results"
    threads: int = 1
    quad_exactness: int | None = None
    zero_threshold: float | None = None
    interior_basis: str | None = None
    max_dofs: int = 200_000
    coarsest: int = 4

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {sorted(METHODS)}")
        if not self.ks or any(int(k) != k or not 1 <= k <= 10 for k in self.ks):
            raise ConfigError("every k must be an integer in 1..10")
        if self.experiment in ("convergence", "timing") and self.mesh not in REFINABLE:
            raise ConfigError(f"mesh {self.mesh!r} is not refinable; choose from {REFINABLE}")
        if self.experiment == "convergence" and self.levels < 2:
            raise ConfigError("convergence needs at least 2 refinement levels")
        if self.levels < 1 or self.coarsest < 2:
            raise ConfigError("levels must be positive and the coarsest mesh at least 2x2")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if self.quad_exactness is not None and not 1 <= self.quad_exactness <= 30:
            raise ConfigError("quadrature exactness must lie in 1..30")
        if self.zero_threshold is not None and not 0 < self.zero_threshold < 1:
            raise ConfigError("zero threshold must lie in (0, 1)")
        if self.interior_basis not in (None, "monomial", "orthonormal"):
            raise ConfigError("interior basis must be 'monomial' or 'orthonormal'")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        alias = {"method": "methods", "k": "ks"}
        kw = {}
        for key, value in data.items():
            key = alias.get(key.replace("-", "_"), key.replace("-", "_"))
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            kw[key] = value
        if "experiment" not in kw:
            raise ConfigError("config needs an 'experiment' entry")
        for key in ("methods", "ks"):
            if key in kw and not isinstance(kw[key], (list, tuple)):
                kw[key] = [kw[key]]
        if "ks" in kw:
            kw["ks"] = [int(k) for k in kw["ks"]]
        return cls(**kw).validate()

    @property
    def threshold(self) -> float:
        if self.zero_threshold is not None:
            return self.zero_threshold
        if self.experiment in ("collapsing-hexagons", "patch-test"):
            return FINE_ZERO_THRESHOLD
        return DEFAULT_ZERO_THRESHOLD

    def exactness(self, k: int) -> int:
        return self.quad_exactness or default_exactness(k)


@dataclass
class RunRecord:
    method: str
    k: int
    h: float | None = None
    dofs: int | None = None
    err_l2: float | None = None
    err_grad: float | None = None
    order_l2: float | None = None
    order_grad: float | None = None
    lam_max: float | None = None
    lam_min_nz: float | None = None
    n_zero: int | None = None
    cond: float | None = None
    seconds: float | None = None
    label: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)
    fits: list = field(default_factory=list)
    timing_ratios: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def environment_stamp(config: ExperimentConfig) -> dict:
    return {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "quad_exactness": {str(k): config.exactness(k) for k in config.ks},
        "quad_exactness_rule": "override" if config.quad_exactness else "2k+4",
        "zero_threshold": config.threshold,
        "zero_threshold_kind": "relative to the largest eigenvalue",
        "kernel_deflated": config.experiment == "collapsing-hexagons",
        "nullspace_cutoff": NULLSPACE_CUTOFF,
        "solver_rtol": SOLVER_RTOL,
        "direct_limit": DIRECT_LIMIT,
        "interior_basis": _interior_basis(config),
        "threads": config.threads,
    }


def _interior_basis(config: ExperimentConfig) -> str:
    if config.interior_basis:
        return config.interior_basis
    return "orthonormal" if config.experiment == "collapsing-hexagons" else "monomial"


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def refinable_mesh(family: str, n: int):
    if family == "anisotropic-quads":
        return generate_mesh(family, hx=1.0 / n, hy=1.0 / n)
    return generate_mesh(family, n=n)


def estimate_dofs(mesh, method: str, k: int) -> int:
    family = METHODS[method][0]
    per_edge = k if family == "NC" else k - 1
    vertices = mesh.n_vertices if family == "C" else 0
    return vertices + mesh.n_edges * per_edge + mesh.n_cells * dim_p(k - 2)


def _check_size(mesh, method, k, cap):
    est = estimate_dofs(mesh, method, k)
    if est > cap:
        raise InfeasibleError(
            f"{method} k={k} needs about {est} DoFs, above the cap of {cap}", est)
    return est


def refinable_meshes(config: ExperimentConfig, ns) -> list:
    """Meshes from coarse to fine, refusing at the first one over the DoF cap
    so that oversized meshes are never generated."""
    meshes = []
    for n in ns:
        mesh = refinable_mesh(config.mesh, n)
        for method in config.methods:
            for k in config.ks:
                _check_size(mesh, method, k, config.max_dofs)
        meshes.append(mesh)
    return meshes


def _disc(config, mesh, method, k, cache=True):
    return Discretization(mesh, method, k, exactness=config.exactness(k),
                          interior_basis=_interior_basis(config), cache=cache,
                          threads=config.threads)


def observed_orders(errors) -> list:
    """log2(e_coarse / e_fine) for each consecutive pair (None for the first)."""
    out = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(float(np.log2(a / b)) if a > 0 and b > 0 else None)
    return out


def fitted_rate(h, errors) -> float | None:
    """Least-squares slope of log(error) against log(h)."""
    h, e = np.asarray(h, float), np.asarray(errors, float)
    ok = (h > 0) & (e > 0)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(h[ok]), np.log(e[ok]), 1)[0])


def run_convergence(config: ExperimentConfig, report: ExperimentReport):
    ns = [config.coarsest * 2 ** l for l in range(config.levels)]
    meshes = refinable_meshes(config, ns)
    for method in config.methods:
        for k in config.ks:
            rows = []
            for n, mesh in zip(ns, meshes):
                t0 = time.perf_counter()
                disc = _disc(config, mesh, method, k)
                system = assemble_global(disc, config.alpha, _sin_f)
                u = solve_system(system, rtol=SOLVER_RTOL)
                err = compute_errors(disc, u, _sin_u, _sin_grad)
                rows.append(RunRecord(method, k, mesh.mesh_size(), disc.dofmap.n_dofs,
                                      err["l2_error"], err["grad_error"],
                                      seconds=time.perf_counter() - t0,
                                      label={"mesh": config.mesh, "n": n}))
            for r, o0, o1 in zip(rows, observed_orders([r.err_l2 for r in rows]),
                                 observed_orders([r.err_grad for r in rows])):
                r.order_l2, r.order_grad = o0, o1
            report.records.extend(rows)
            report.fits.append({
                "method": method, "k": k,
                "rate_l2": fitted_rate([r.h for r in rows], [r.err_l2 for r in rows]),
                "rate_grad": fitted_rate([r.h for r in rows], [r.err_grad for r in rows]),
            })


def local_stiffness(config, mesh, method, k):
    disc = _disc(config, mesh, method, k)
    return disc, disc.local_matrices(0, 0.0).stiffness


def run_local_spectrum(config: ExperimentConfig, report: ExperimentReport):
    for name, family, params in SPECTRUM_MESHES:
        mesh = generate_mesh(family, **params)
        for method in config.methods:
            for k in config.ks:
                t0 = time.perf_counter()
                disc, A = local_stiffness(config, mesh, method, k)
                s = spectrum_stats(A, config.threshold)
                report.records.append(RunRecord(
                    method, k, mesh.mesh_size(), disc.dofmap.n_dofs, lam_max=s.lam_max,
                    lam_min_nz=s.lam_min_nz, n_zero=s.n_zero, cond=s.cond,
                    seconds=time.perf_counter() - t0, label={"mesh": name}))


def run_collapsing(config: ExperimentConfig, report: ExperimentReport, indices=range(13)):
    for method in config.methods:
        for k in config.ks:
            for i in indices:
                t0 = time.perf_counter()
                mesh = generate_mesh("hexagon-Hi", i=i)
                disc, A = local_stiffness(config, mesh, method, k)
                # the constants span the kernel; measure the spectrum on its complement
                s = spectrum_stats(A, config.threshold, deflate=disc.interpolate(_ones))
                report.records.append(RunRecord(
                    method, k, mesh.mesh_size(), disc.dofmap.n_dofs, lam_max=s.lam_max,
                    lam_min_nz=s.lam_min_nz, n_zero=s.n_zero, cond=s.cond,
                    seconds=time.perf_counter() - t0, label={"mesh": "hexagon-Hi", "i": i}))


def patch_cases(config: ExperimentConfig):
    """(case, mesh description, mesh, k) for the three linear patch tests."""
    for k in config.ks:
        yield 1, "convex-poly n=5", generate_mesh("convex-poly", n=5), k
    for i in range(1, 6):
        yield 2, f"convex-poly n={2 ** i}", generate_mesh("convex-poly", n=2 ** i), 3
    for i in range(1, 9):
        yield 3, f"anisotropic-quads hx=0.2 hy=2^-{i}", \
            generate_mesh("anisotropic-quads", hx=0.2, hy=2.0 ** -i), 3


def run_patch_test(config: ExperimentConfig, report: ExperimentReport):
    cases = list(patch_cases(config))
    for method in config.methods:
        for case, desc, mesh, k in cases:
            _check_size(mesh, method, k, config.max_dofs)
            t0 = time.perf_counter()
            disc = _disc(config, mesh, method, k)
            system = assemble_global(disc, 0.0, None, _linear_u)
            u = solve_system(system, method="direct")
            err = compute_errors(disc, u, _linear_u, _linear_grad)
            secs = time.perf_counter() - t0
            s = spectrum_stats(system.matrix, config.threshold)
            report.records.append(RunRecord(
                method, k, mesh.mesh_size(), disc.dofmap.n_dofs, err["l2_error"],
                err["grad_error"], lam_max=s.lam_max, lam_min_nz=s.lam_min_nz,
                n_zero=s.n_zero, cond=s.cond, seconds=secs,
                label={"case": case, "mesh": desc}))


def run_timing(config: ExperimentConfig, report: ExperimentReport):
    ns = [config.coarsest * 2 ** l for l in range(config.levels)]
    for n, mesh in zip(ns, refinable_meshes(config, ns)):
        for k in config.ks:
            times = {}
            for method in config.methods:
                t0 = time.perf_counter()
                # no shape cache: every cell pays for its own operators
                disc = _disc(config, mesh, method, k, cache=False)
                assemble_matrices(disc, 0.0)
                secs = time.perf_counter() - t0
                times[method] = secs
                report.records.append(RunRecord(method, k, mesh.mesh_size(), disc.dofmap.n_dofs,
                                                seconds=secs, label={"mesh": config.mesh, "n": n}))
            fastest = min(times.values())
            report.timing_ratios.append({
                "n": n, "k": k, "slowest": max(times, key=times.get),
                "ratios": {m: t / fastest for m, t in times.items()}})


RUNNERS = {"convergence": run_convergence, "local-spectrum": run_local_spectrum,
           "collapsing-hexagons": run_collapsing, "patch-test": run_patch_test,
           "timing": run_timing}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    config.validate()
    report = ExperimentReport(config, environment=environment_stamp(config))
    t0 = time.perf_counter()
    RUNNERS[config.experiment](config, report)
    if config.experiment != "timing":
        # wall time lives in the JSON label so the CSV stays reproducible
        for r in report.records:
            r.label["seconds"], r.seconds = r.seconds, None
    report.summary["seconds"] = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_to_dict(report: ExperimentReport) -> dict:
    return {
        "config": asdict(report.config),
        "environment": report.environment,
        "columns": list(CSV_COLUMNS),
        "records": [asdict(r) for r in report.records],
        "fits": report.fits,
        "timing_ratios": report.timing_ratios,
        "summary": report.summary,
    }


def report_from_dict(data: dict) -> ExperimentReport:
    config = ExperimentConfig(**data["config"])
    records = [RunRecord(**r) for r in data["records"]]
    return ExperimentReport(config, records, data.get("environment", {}), data.get("fits", []),
                            data.get("timing_ratios", []), data.get("summary", {}))


def write_report(report: ExperimentReport, formats=("csv", "json"), out: str | None = None) -> list:
    """Write ``<experiment>.csv`` and/or ``<experiment>.json``; returns the paths."""
    formats = set(formats)
    unknown = formats - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    out = out or report.config.out
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, report.config.experiment)
    paths = []
    if "csv" in formats:
        path = stem + ".csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in report.records:
                w.writerow([_cell(getattr(r, c)) for c in CSV_COLUMNS])
        paths.append(path)
    if "json" in formats:
        path = stem + ".json"
        with open(path, "w") as fh:
            json.dump(report_to_dict(report), fh, indent=1)
            fh.write("\n")
        paths.append(path)
    return paths


def load_report(path: str) -> ExperimentReport:
    with open(path) as fh:
        return report_from_dict(json.load(fh))
