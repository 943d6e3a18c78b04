"""Command-line harness for the experiment scenarios.

Every scenario writes ``results.csv`` and ``manifest.json`` into the output
directory; some add ``spectrum.csv`` and binary field files (see ``slod.io``).
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import io
from .core import StabilityWarning
from .fem import CoefficientField, ProblemSpec
from .grid import FineGrid, GridError, build_cartesian_mesh, element_patch
from .projection import p0_load
from .solver import (
    HelmholtzProblem,
    SourceTerm,
    adaptive_oversampling,
    build_slod_basis,
    local_source,
    max_ell,
    solve_slod,
)

log = logging.getLogger("slod")

SCENARIOS = {
    "spectrum": "singular values of the projected harmonic space for an interior element "
    "(singular value plot); the 2D run also writes the patch order map (patch plot), "
    "the 1D run writes local and ideal basis functions (1D basis plot)",
    "localization": "relative V-norm error vs ell for f = 1 over the coarse list (localization plot)",
    "convergence": "relative V-norm error vs H per ell for f = sin(pi x) cos(pi y) (convergence plot)",
    "heterogeneous": "periodic Mie-resonant inclusions, point source, V_A-norm error (scatterer plot)",
    "pml": "PML-truncated point source, error on the physical domain (PML plot)",
    "adaptive": "per-element ell from the singular value indicator (a posteriori strategy)",
}

# overrides applied on top of the global defaults before user values
SCENARIO_DEFAULTS = {
    "spectrum": {},
    "localization": {"kappa": 16.0, "coarse": [16], "ell": [1, 2, 3], "source": {"kind": "constant"}},
    "convergence": {"kappa": 16.0, "coarse": [8, 16, 32], "ell": [3], "source": {"kind": "sincos"}},
    "heterogeneous": {
        "kappa": 9.0,
        "coarse": [64],
        "ell": [2],
        "source": {"kind": "point", "center": [0.125, 0.5]},
    },
    "pml": {"kappa": 32.0, "coarse": [64], "ell": [2], "source": {"kind": "point", "center": [0.5, 0.5]}},
    "adaptive": {"kappa": 16.0, "coarse": [16], "fine": 128, "adaptive_tol": 1e-5, "source": {"kind": "constant"}},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str = "spectrum"
    dim: int = 2
    kappa: float = 32.0
    coarse: list = field(default_factory=lambda: [32])
    ell: list = field(default_factory=lambda: [1, 2, 3])
    fine: int = 256
    seed: int = 0
    eps: float = 1.0 / 16
    inclusion_box: list | None = None
    pml_width: int = 4
    source: dict = field(default_factory=lambda: {"kind": "constant"})
    out: str = "slod-out"
    adaptive_tol: float | None = None
    ell_min: int = 1
    ell_max: int = 4
    element: int | None = None
    tau_cond: float = 1e3
    drop_tol: float = 1e-12
    samples_per_element: int = 5
    reuse_translation: bool = False
    warnings: list = field(default_factory=list)

    def problem_spec(self) -> ProblemSpec:
        if self.scenario == "heterogeneous":
            coef = CoefficientField.periodic_inclusions(self.eps, self.inclusion_box)
        else:
            coef = CoefficientField.constant()
        bc = "pml" if self.scenario == "pml" else "impedance"
        return ProblemSpec(self.kappa, coef, bc=bc, pml_width=self.pml_width)

    def source_term(self) -> SourceTerm:
        s = dict(self.source)
        if "center" in s:
            s["center"] = tuple(s["center"])
        return SourceTerm(**s)

    def resolved(self) -> dict:
        d = asdict(self)
        d.pop("warnings")
        return d


_KEYS = {f.name for f in fields(ExperimentConfig)} - {"warnings"}
_SOURCE_KEYS = {"kind", "value", "center", "radius", "amplitude"}


def _as_int_list(name, v):
    if isinstance(v, str):
        v = [x for x in v.split(",") if x.strip()]
    if not isinstance(v, (list, tuple)):
        v = [v]
    try:
        out = [int(x) for x in v]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected integers, got {v!r}") from exc
    if not out:
        raise ConfigError(f"{name}: empty list")
    return out


def validate_config(raw: str | dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Parse YAML text (or a dict), apply scenario defaults and overrides, check consistency."""
    data = yaml.safe_load(raw) if isinstance(raw, str) else (raw or {})
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data = {**data, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    unknown = sorted(set(data) - _KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    scenario = data.get("scenario", "spectrum")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario: unknown {scenario!r}; choose from {', '.join(SCENARIOS)}")
    merged = {**SCENARIO_DEFAULTS[scenario], **data}
    if "source" in data and "source" in SCENARIO_DEFAULTS[scenario]:
        merged["source"] = {**SCENARIO_DEFAULTS[scenario]["source"], **data["source"]}
    cfg = ExperimentConfig(**merged)

    cfg.coarse = _as_int_list("coarse", cfg.coarse)
    cfg.ell = _as_int_list("ell", cfg.ell)
    for name in ("dim", "fine", "seed", "pml_width", "ell_min", "ell_max", "samples_per_element"):
        try:
            setattr(cfg, name, int(getattr(cfg, name)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: expected an integer") from exc
    for name in ("kappa", "eps", "tau_cond", "drop_tol"):
        try:
            setattr(cfg, name, float(getattr(cfg, name)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: expected a number") from exc
    if cfg.adaptive_tol is not None:
        cfg.adaptive_tol = float(cfg.adaptive_tol)

    if cfg.dim not in (1, 2):
        raise ConfigError(f"dim: must be 1 or 2, got {cfg.dim}")
    if cfg.dim == 1 and scenario in ("heterogeneous", "pml"):
        raise ConfigError(f"dim: scenario {scenario} is two-dimensional")
    if cfg.kappa <= 0:
        raise ConfigError("kappa: must be positive")
    if not isinstance(cfg.source, dict) or set(cfg.source) - _SOURCE_KEYS:
        raise ConfigError(f"source: allowed keys are {', '.join(sorted(_SOURCE_KEYS))}")
    for n in cfg.coarse:
        if n < 2:
            raise ConfigError(f"coarse: need at least 2 elements per side, got {n}")
        if cfg.fine % n:
            raise ConfigError(f"fine: {cfg.fine} is not divisible by coarse {n}")
        top = max_ell(build_cartesian_mesh(cfg.dim, n))
        if scenario == "adaptive":
            if cfg.ell_max > top:
                cfg.warnings.append(f"coarse {n}: ell_max {cfg.ell_max} capped at {top}")
        elif max(cfg.ell) > top:
            raise ConfigError(
                f"ell: {max(cfg.ell)} makes some patch cover the whole domain for coarse {n}; "
                f"use at most {top}"
            )
    if min(cfg.ell) < 1 or cfg.ell_min < 1 or cfg.ell_max < cfg.ell_min:
        raise ConfigError("ell: orders must be >= 1 and ell_min <= ell_max")
    if scenario == "adaptive" and not (cfg.adaptive_tol and cfg.adaptive_tol > 0):
        raise ConfigError("adaptive_tol: required and positive for the adaptive scenario")
    if scenario == "pml" and any(2 * cfg.pml_width >= n for n in cfg.coarse):
        raise ConfigError("pml_width: the layers leave no physical domain")

    spec = ProblemSpec(cfg.kappa)
    for n in cfg.coarse:
        if not spec.resolution_flags(1.0 / n)["resolved"]:
            cfg.warnings.append(
                f"coarse {n}: H*kappa = {cfg.kappa / n:.4g} exceeds pi/sqrt(2) = {np.pi / np.sqrt(2):.4g}"
            )
    return cfg


# -- scenarios -------------------------------------------------------------------


def _problem(cfg, n):
    mesh = build_cartesian_mesh(cfg.dim, n)
    return HelmholtzProblem(FineGrid(mesh, cfg.fine), cfg.problem_spec())


def _basis_kw(cfg):
    return {
        "seed": cfg.seed,
        "samples_per_element": cfg.samples_per_element,
        "drop_tol": cfg.drop_tol,
        "tau_cond": cfg.tau_cond,
        "reuse_translation": cfg.reuse_translation,
    }


def _report_row(n, ell, rep):
    return {
        "coarse": n,
        "H": 1.0 / n,
        "ell": ell,
        "err_L2": rep.errors["L2"],
        "err_V": rep.errors["V"],
        "err_VA": rep.errors["VA"],
        "sigma_max": rep.sigma_max,
        "riesz_condition": rep.riesz_condition,
        "coarse_residual": rep.residuals["coarse"],
        "stability_warnings": len(rep.warnings),
    }


def _central_element(mesh):
    return mesh.element_id([mesh.n_per_dim // 2] * mesh.d)


def run_spectrum(cfg, out: Path):
    n = cfg.coarse[0]
    prob = _problem(cfg, n)
    mesh = prob.mesh
    T = _central_element(mesh) if cfg.element is None else cfg.element
    rows, results = [], []
    for ell in cfg.ell:
        if element_patch(mesh, T, ell).touches_boundary:
            log.warning("patch of order %d around element %d touches the boundary", ell, T)
        src = local_source(prob, T, ell, cfg.seed, cfg.samples_per_element, cfg.drop_tol)
        for i, s in enumerate(src.spectrum):
            rows.append({"element_id": T, "ell": ell, "index": i, "sigma": float(s)})
        results.append({"element_id": T, "ell": ell, "size": len(src.spectrum), "rank": src.rank, "sigma_min": src.sigma})
    io.write_csv(out / "spectrum.csv", rows, ["element_id", "ell", "index", "sigma"])
    if cfg.dim == 2:
        coords = mesh.element_coords()
        order = np.max(np.abs(coords - coords[T]), axis=1)
        io.write_csv(
            out / "patch_orders.csv",
            [{"element_id": int(K), "order": int(o)} for K, o in enumerate(order)],
        )
    else:
        _write_1d_basis(cfg, prob, out)
    head = min(cfg.ell)
    return results, f"sigma_min(ell={head}) = {results[0]['sigma_min']:.3e}"


def _write_1d_basis(cfg, prob, out):
    """Local and ideal basis functions of one boundary and one interior element."""
    mesh = prob.mesh
    ell = min(cfg.ell)
    b = build_slod_basis(prob, ell, **_basis_kw(cfg))
    for label, T in (("boundary", 0), ("interior", _central_element(mesh))):
        p = b.pairs[T]
        ideal = prob.solve_load(p.region.extend(p0_load(p.g)))
        for kind, v in (("slod", p.region.extend(p.phi)), ("ideal", ideal)):
            io.write_field(out / f"basis_{label}_{kind}.fld", v, 1, cfg.fine, cfg.kappa, f"{kind} basis {label} T={T}")


def run_sweep(cfg, out: Path):
    f = cfg.source_term()
    results = []
    for n in cfg.coarse:
        prob = _problem(cfg, n)
        for ell in cfg.ell:
            rep = solve_slod(prob, f, ell, **_basis_kw(cfg))
            results.append(_report_row(n, ell, rep))
            log.info("coarse %d ell %d: V error %.3e", n, ell, rep.errors["V"])
    last = results[-1]
    return results, f"V error (coarse {last['coarse']}, ell {last['ell']}) = {last['err_V']:.3e}"


def run_single(cfg, out: Path):
    f = cfg.source_term()
    n, ell = cfg.coarse[0], cfg.ell[0]
    prob = _problem(cfg, n)
    rep = solve_slod(prob, f, ell, **_basis_kw(cfg))
    row = _report_row(n, ell, rep)
    x = prob.fine.vertex_coords()
    u = rep.reference
    if cfg.scenario == "heterogeneous":
        near = np.abs(u[x[:, 0] <= 0.5]).max()
        row["bulk_ratio"] = float(np.abs(u[x[:, 0] > 0.6]).max() / near) if near > 0 else 0.0
    for name, v in (("slod", rep.field), ("reference", rep.reference)):
        io.write_field(out / f"{name}.fld", v, cfg.dim, cfg.fine, cfg.kappa, name)
    key = "err_VA" if cfg.scenario == "heterogeneous" else "err_V"
    return [row], f"relative {key[4:]} error = {row[key]:.3e}"


def run_adaptive(cfg, out: Path):
    f = cfg.source_term()
    n = cfg.coarse[0]
    prob = _problem(cfg, n)
    kw = {"samples_per_element": cfg.samples_per_element, "drop_tol": cfg.drop_tol}
    ell_map, achieved, exhausted, cache = adaptive_oversampling(
        prob, cfg.adaptive_tol, cfg.ell_min, cfg.ell_max, cfg.seed, **kw
    )
    b = build_slod_basis(prob, ell_map, seed=cfg.seed, tau_cond=cfg.tau_cond, source_cache=cache, **kw)
    rep = solve_slod(prob, f, basis=b)
    rows = [
        {"element_id": T, "ell": ell_map[T], "sigma": achieved[T], "exhausted": int(T in exhausted)}
        for T in sorted(ell_map)
    ]
    io.write_csv(out / "ell_map.csv", rows, ["element_id", "ell", "sigma", "exhausted"])
    row = _report_row(n, "adaptive", rep)
    row["mean_ell"] = float(np.mean(list(ell_map.values())))
    return [row], f"V error = {rep.errors['V']:.3e} with mean ell {row['mean_ell']:.2f}"


RUNNERS = {
    "spectrum": run_spectrum,
    "localization": run_sweep,
    "convergence": run_sweep,
    "heterogeneous": run_single,
    "pml": run_single,
    "adaptive": run_adaptive,
}


def run_scenario(cfg: ExperimentConfig) -> str:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for w in cfg.warnings:
        log.warning(w)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", StabilityWarning)
        results, summary = RUNNERS[cfg.scenario](cfg, out)
    io.write_csv(out / "results.csv", results)
    io.write_manifest(
        out / "manifest.json",
        cfg.resolved(),
        {
            "warnings": cfg.warnings + [str(w.message) for w in caught],
            "elapsed_seconds": time.perf_counter() - t0,
            "summary": summary,
        },
    )
    return f"{cfg.scenario}: {summary}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slod", description="Super-localized Helmholtz experiments")
    sub = p.add_subparsers(dest="command")
    r = sub.add_parser(
        "run",
        help="run one scenario",
        description="Defaults: scenario spectrum, kappa 32, coarse 32, ell 1,2,3, fine 256, seed 0, "
        "eps 1/16, pml width 4 coarse cells. Scenario defaults override these; flags override the config file.",
    )
    r.add_argument("--scenario", choices=sorted(SCENARIOS))
    r.add_argument("--kappa", type=float)
    r.add_argument("--coarse", help="comma separated elements per side")
    r.add_argument("--ell", help="comma separated oversampling orders")
    r.add_argument("--fine", type=int, help="fine cells per side")
    r.add_argument("--seed", type=int)
    r.add_argument("--eps", type=float, help="inclusion period (heterogeneous)")
    r.add_argument("--dim", type=int, choices=(1, 2))
    r.add_argument("--out")
    r.add_argument("--adaptive-tol", type=float)
    r.add_argument("--config", help="YAML config file")
    r.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--list-scenarios", action="store_true", help="print scenarios and the plots they produce data for")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.list_scenarios:
        for name, desc in SCENARIOS.items():
            print(f"{name:14s} {desc}")
        return 0
    if args.command != "run":
        build_parser().print_help()
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    raw = Path(args.config).read_text() if args.config else None
    overrides = {
        "scenario": args.scenario,
        "kappa": args.kappa,
        "coarse": args.coarse,
        "ell": args.ell,
        "fine": args.fine,
        "seed": args.seed,
        "eps": args.eps,
        "dim": args.dim,
        "out": args.out,
        "adaptive_tol": args.adaptive_tol,
    }
    try:
        cfg = validate_config(raw, overrides)
        print(run_scenario(cfg))
    except (ConfigError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
