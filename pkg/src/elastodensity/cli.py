"""Command-line driver: check | trace | forward | invert | report.

Every command reads one JSON experiment config; ``--out``, ``--mode`` and
``--seed`` override the corresponding config entries.  Exit status is 0 on
success, 1 when a validation check fails, 2 on configuration or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import geometry, inversion, medium, transforms
from .errors import ConfigError, TrappedRayError

log = logging.getLogger("elastodensity")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


@dataclass
class ChordConfig:
    n_points: int = 200
    n_dirs: int = 20
    seed: int = 0


@dataclass
class SolverSection:
    alpha: float = 1e-4
    alphas: list | None = None  # L-curve sweep when given
    max_iter: int = 2000
    tol: float = 1e-10
    seed: int = 0


@dataclass
class ExperimentConfig:
    model: str | dict
    output_dir: str = "out"
    mode: str = "S"
    step: float = 0.025
    data_step: float | None = None
    lattice_n: int = 32
    perturbation: dict | None = None
    dataset: str | None = None
    inverse_crime: bool = False
    horizon: float | None = None
    chords: ChordConfig = field(default_factory=ChordConfig)
    solver: SolverSection = field(default_factory=SolverSection)
    base_dir: str = field(default=".", compare=False, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        return d

    @classmethod
    def from_dict(cls, doc, base_dir="."):
        doc = dict(doc)
        if "model" not in doc:
            raise ConfigError("config needs a 'model' entry")
        known = {f for f in cls.__dataclass_fields__} - {"base_dir", "chords", "solver"}
        unknown = set(doc) - known - {"chords", "solver"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            chords = ChordConfig(**doc.pop("chords", {}))
            solver = SolverSection(**doc.pop("solver", {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(chords=chords, solver=solver, base_dir=base_dir, **doc)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, os.path.dirname(os.path.abspath(path)))

    def resolve(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def validate(self):
        if isinstance(self.model, str) and not os.path.exists(self.resolve(self.model)):
            raise ConfigError(f"model file not found: {self.model}")
        if self.dataset is not None and not os.path.exists(self.resolve(self.dataset)):
            raise ConfigError(f"dataset file not found: {self.dataset}")
        if self.mode not in ("P", "S"):
            raise ConfigError("mode must be P or S")
        positive = {"step": self.step, "lattice_n": self.lattice_n, "chords.n_points": self.chords.n_points,
                    "chords.n_dirs": self.chords.n_dirs, "solver.max_iter": self.solver.max_iter,
                    "solver.tol": self.solver.tol}
        if self.data_step is not None:
            positive["data_step"] = self.data_step
        if self.horizon is not None:
            positive["horizon"] = self.horizon
        for k, v in positive.items():
            if not isinstance(v, (int, float)) or v <= 0:
                raise ConfigError(f"{k} must be positive, got {v!r}")
        if self.solver.alpha < 0 or any(a < 0 for a in (self.solver.alphas or [])):
            raise ConfigError("regularisation weights must be >= 0")
        if self.lattice_n < 5:
            raise ConfigError("lattice_n must be >= 5")
        self.load_model()
        self.load_perturbation()

    def load_model(self) -> medium.MediumModel:
        try:
            if isinstance(self.model, dict):
                return medium.MediumModel.from_dict(self.model)
            with open(self.resolve(self.model)) as fh:
                return medium.MediumModel.from_dict(json.load(fh))
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad model definition: {exc}") from exc

    def load_perturbation(self):
        if self.perturbation is None:
            return None
        try:
            return medium.field_from_dict(self.perturbation)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad perturbation: {exc}") from exc

    def chord_set(self, domain):
        c = self.chords
        return geometry.generate_chords(domain, c.n_points, c.n_dirs, c.seed)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(t)) if isinstance(t, (float, np.floating)) else t for t in r])


def cmd_check(cfg: ExperimentConfig) -> int:
    model = cfg.load_model()
    metric = geometry.ConformalMetric(model, cfg.mode)
    pos = medium.check_positivity(model)
    checks = {"positivity": pos.to_dict()}
    if pos.passed:
        checks["strict_convexity"] = geometry.check_strict_convexity(model.domain, metric).to_dict()
        checks["convex_foliation"] = geometry.check_convex_foliation(metric).to_dict()
        try:
            L = geometry.max_geodesic_length(model.domain, metric, cfg.chord_set(model.domain), cfg.step)
            ok = cfg.horizon is None or cfg.horizon > L
            checks["max_geodesic_length"] = {"value": L, "horizon": cfg.horizon, "passed": ok}
        except TrappedRayError as exc:
            checks["max_geodesic_length"] = {"value": None, "error": str(exc), "passed": False}
    passed = all(c["passed"] for c in checks.values()) and len(checks) == 4
    report = {"mode": cfg.mode, "model_digest": model.digest(), "checks": checks, "passed": passed}
    os.makedirs(cfg.output_dir, exist_ok=True)
    _write_json(os.path.join(cfg.output_dir, "check_report.json"), report)
    print(json.dumps({k: v["passed"] for k, v in checks.items()}))
    return EXIT_OK if passed else EXIT_FAIL


def cmd_trace(cfg: ExperimentConfig) -> int:
    model = cfg.load_model()
    metric = geometry.ConformalMetric(model, cfg.mode)
    chords = cfg.chord_set(model.domain)
    paths = geometry.trace_chords(metric, chords, cfg.step)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "paths.csv"), "w", newline="") as fh:
        csv.writer(fh).writerow(["ray_id", "s", "x1", "x2", "x3", "v1", "v2", "v3"])
        for i, p in enumerate(paths):
            if p is not None:
                p.write_csv(fh, ray_id=i)
    done = [p for p in paths if p is not None]
    summary = {
        "count": len(done),
        "trapped": len(paths) - len(done),
        "max_length": max((p.travel_time for p in done), default=None),
        "mode": cfg.mode, "step": cfg.step, "seed": cfg.chords.seed,
    }
    _write_json(os.path.join(cfg.output_dir, "trace_summary.json"), summary)
    with open(os.path.join(cfg.output_dir, "chords.json"), "w") as fh:
        fh.write(chords.to_json())
    return EXIT_OK


def _metadata(cfg, model, step):
    return {"model_digest": model.digest(), "step": step, "mode": cfg.mode,
            "chord_seed": cfg.chords.seed, "n_points": cfg.chords.n_points, "n_dirs": cfg.chords.n_dirs,
            "perturbation": cfg.perturbation}


def cmd_forward(cfg: ExperimentConfig) -> int:
    model = cfg.load_model()
    f = cfg.load_perturbation()
    if f is None:
        f = medium.Constant(0.0)
    step = cfg.data_step or cfg.step
    data = transforms.forward_dataset(model, cfg.chord_set(model.domain), f, step)
    os.makedirs(cfg.output_dir, exist_ok=True)
    transforms.write_dataset(data, os.path.join(cfg.output_dir, "dataset.csv"),
                             os.path.join(cfg.output_dir, "dataset_meta.json"), _metadata(cfg, model, step))
    return EXIT_OK


def cmd_invert(cfg: ExperimentConfig) -> int:
    model = cfg.load_model()
    f_true = cfg.load_perturbation()
    grid = inversion.Grid(cfg.lattice_n, model.domain)
    chords = cfg.chord_set(model.domain)
    op = inversion.build_forward(grid, chords, model, cfg.step)
    truth = None if f_true is None else grid.sample(f_true)
    if cfg.inverse_crime:
        if truth is None:
            raise ConfigError("inverse_crime needs a perturbation")
        data = op.forward(truth)
    else:
        path = cfg.resolve(cfg.dataset) if cfg.dataset else os.path.join(cfg.output_dir, "dataset.csv")
        if not os.path.exists(path):
            raise ConfigError(f"dataset not found: {path}")
        data = op.align(transforms.read_dataset(path))
    s = cfg.solver
    scfg = inversion.SolverConfig(s.alpha, s.max_iter, s.tol, s.seed)
    lcurve = None
    if s.alphas:
        lcurve = inversion.lcurve_sweep(op, data, s.alphas, scfg)
        result = lcurve.best
    else:
        result = inversion.solve(op, data, scfg)
    rho0 = float(model.rho.value(model.domain.c))
    rho = inversion.recover_density(result.f_hat, rho0)
    os.makedirs(cfg.output_dir, exist_ok=True)
    _write_rows(os.path.join(cfg.output_dir, "f_hat.csv"), ["x", "y", "z", "value"], result.f_hat.rows())
    _write_rows(os.path.join(cfg.output_dir, "rho.csv"), ["x", "y", "z", "value"], rho.rows())
    _write_rows(os.path.join(cfg.output_dir, "residuals.csv"), ["iteration", "residual"],
                enumerate(result.history))
    summary = {
        "alpha": result.alpha, "iterations": result.iterations, "converged": result.converged,
        "rows": op.shape[0], "unknowns": op.shape[1], "lattice_n": cfg.lattice_n,
        "rays": op.shape[0] // 2, "inverse_crime": cfg.inverse_crime, "rho0": rho0,
    }
    if lcurve is not None:
        summary["lcurve"] = {"alphas": lcurve.alphas.tolist(), "residual": lcurve.residual.tolist(),
                             "seminorm": lcurve.seminorm.tolist()}
    if truth is not None:
        rho_true = inversion.recover_density(truth, rho0)
        summary["f_interior_rel_error"] = inversion.interior_relative_error(result.f_hat, truth)
        summary["rho_interior_rel_error"] = float(
            np.linalg.norm((rho.free_values - rho_true.free_values))
            / np.linalg.norm(rho_true.free_values - rho0))
        summary["rho_bump_true"] = float(np.max(np.abs(rho_true.values - rho0)))
        summary["rho_bump_recovered"] = float(np.max(np.abs(rho.values - rho0)))
    _write_json(os.path.join(cfg.output_dir, "invert_summary.json"), summary)
    return EXIT_OK


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif not isinstance(v, list):
            out[key] = v
    return out


def cmd_report(cfg: ExperimentConfig, summaries=None) -> int:
    files = summaries or sorted(glob.glob(os.path.join(cfg.output_dir, "**", "*summary.json"), recursive=True))
    rows = []
    for fn in files:
        with open(fn) as fh:
            rows.append({"file": fn, **_flatten(json.load(fh))})
    cols = sorted({k for r in rows for k in r} - {"file"})
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "report.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, ["file"] + cols)
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


COMMANDS = {"check": cmd_check, "trace": cmd_trace, "forward": cmd_forward, "invert": cmd_invert,
            "report": cmd_report}


def build_parser():
    ap = argparse.ArgumentParser(prog="elastodensity", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="experiment config JSON")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--mode", choices=["P", "S"], help="wave mode (overrides mode)")
    ap.add_argument("--seed", type=int, help="chord seed (overrides chords.seed)")
    ap.add_argument("summaries", nargs="*", help="summary JSON files for 'report'")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.out:
            cfg = replace(cfg, output_dir=args.out)
        if args.mode:
            cfg = replace(cfg, mode=args.mode)
        if args.seed is not None:
            cfg = replace(cfg, chords=replace(cfg.chords, seed=args.seed))
        if not os.path.isabs(cfg.output_dir):
            cfg = replace(cfg, output_dir=os.path.join(os.getcwd(), cfg.output_dir))
        cfg.validate()
        if args.command == "report":
            return cmd_report(cfg, args.summaries)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
