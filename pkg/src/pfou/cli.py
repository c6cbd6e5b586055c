"""Command line entry point: ``pfou {simulate,estimate,asymptotics,mc} --config run.toml``.

Configuration is a TOML file.  Every key is checked against a fixed schema
before anything is computed; unknown keys are errors.

Exit codes: 0 success or PASS, 1 invalid configuration or input,
2 failure while computing, 3 experiment verdict FAIL.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from . import __version__
from .asymptotics import asymptotic_covariance, sigma2_stabilization, Sigma2Estimate
from .basis import BasisSpec, DriftParams, load_custom_basis
from .fgn import check_hurst
from .lse import CORRECTIONS, estimate
from .mc import SCALINGS, ExperimentPlan, run_clt, run_consistency
from .sde import (FIRST_KIND, SECOND_KIND, ModelSpec, PathFormatError, read_path_csv,
                  simulate_first_kind, simulate_second_kind, write_path_csv)

log = logging.getLogger("pfou")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_FAIL = 0, 1, 2, 3

_REQUIRED = object()

# section -> key -> (accepted types, default)
SCHEMA = {
    "": {"seed": (int, 0)},
    "model": {
        "kind": (str, FIRST_KIND),
        "H": ((int, float), _REQUIRED),
        "alpha": ((int, float), _REQUIRED),
        "mu": (list, _REQUIRED),
        "basis": (str, "constant_plus_fourier"),
        "basis_files": (list, []),
    },
    "simulate": {
        "n": (int, _REQUIRED),
        "m": (int, _REQUIRED),
        "noise": (str, None),
        "method": (str, "stationary_cov"),
        "output": (str, "path.csv"),
    },
    "estimate": {
        "input": (str, _REQUIRED),
        "correction": (str, "plugin"),
        "alpha": ((int, float), None),
        "output": (str, "estimate.json"),
    },
    "asymptotics": {
        "sigma_form": (str, "stated"),
        "tol": (float, 1e-10),
        "sigma2": ((int, float), None),
        "sigma2_replications": (int, 500),
        "sigma2_n": (int, 400),
        "sigma2_m": (int, 50),
        "output": (str, "asymptotics.json"),
    },
    "mc": {
        "scaling": (str, "consistency"),
        "n_list": (list, _REQUIRED),
        "m": (int, 50),
        "replications": (int, _REQUIRED),
        "correction": (str, "oracle"),
        "noise": (str, None),
        "normality_gate": (bool, True),
        "sigma2_replications": (int, 500),
        "prefix": (str, "mc"),
    },
}

COMMAND_SECTIONS = {
    "simulate": ("model", "simulate"),
    "estimate": ("model", "estimate"),
    "asymptotics": ("model", "asymptotics"),
    "mc": ("model", "mc"),
}


class ConfigError(ValueError):
    """The configuration file is malformed or inconsistent."""


def _check_section(name: str, raw: dict, partial: bool = False) -> dict:
    schema = SCHEMA[name]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        where = f"[{name}]" if name else "top level"
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    out = {}
    for key, (types, default) in schema.items():
        if key not in raw:
            if partial:
                continue
            if default is _REQUIRED:
                raise ConfigError(f"missing required key [{name}].{key}")
            out[key] = default
            continue
        value = raw[key]
        # bool is an int subclass; keep them apart
        if isinstance(value, bool) and types is not bool:
            raise ConfigError(f"[{name}].{key} must not be a boolean")
        if not isinstance(value, types):
            raise ConfigError(f"[{name}].{key} has the wrong type ({type(value).__name__})")
        out[key] = value
    return out


def resolve_config(raw: dict, command: str, seed: int | None = None) -> dict:
    """Validate a parsed TOML document for one subcommand.

    Returns the fully resolved configuration (defaults filled in).
    """
    wanted = COMMAND_SECTIONS[command]
    top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    sections = {k: v for k, v in raw.items() if isinstance(v, dict)}
    extra = sorted(set(sections) - set(SCHEMA))
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")
    resolved = _check_section("", top)
    if seed is not None:
        resolved["seed"] = int(seed)
    for name in wanted:
        if name not in sections:
            raise ConfigError(f"missing section [{name}]")
        resolved[name] = _check_section(name, sections[name])
    # sections for other subcommands are not resolved, but typos there still fail
    for name in set(sections) - set(wanted):
        _check_section(name, sections[name], partial=True)
    return resolved


@dataclass
class Prepared:
    config: dict
    model: ModelSpec


def _build_model(cfg: dict, base: Path) -> ModelSpec:
    m = cfg["model"]
    if m["kind"] not in (FIRST_KIND, SECOND_KIND):
        raise ConfigError(f"[model].kind must be {FIRST_KIND!r} or {SECOND_KIND!r}")
    H = check_hurst(m["H"])
    mu = np.asarray(m["mu"], dtype=float)
    if m["basis"] == "custom_table":
        if not m["basis_files"]:
            raise ConfigError("custom_table basis needs [model].basis_files")
        basis = load_custom_basis([base / f for f in m["basis_files"]])
    elif m["basis"] == "constant_plus_fourier":
        basis = BasisSpec(p=mu.size)
    else:
        raise ConfigError(f"unknown basis {m['basis']!r}")
    return ModelSpec(DriftParams(mu, m["alpha"], H), basis, m["kind"])


def prepare(command: str, config_path: Path, seed: int | None) -> Prepared:
    try:
        raw = tomllib.loads(Path(config_path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    cfg = resolve_config(raw, command, seed)
    model = _build_model(cfg, Path(config_path).parent)
    if command == "simulate":
        s = cfg["simulate"]
        if s["n"] < 1 or s["m"] < 2:
            raise ConfigError("[simulate] needs n >= 1 and m >= 2")
        allowed = {FIRST_KIND: ("fbm", "zero"), SECOND_KIND: ("y1", "zero")}[model.kind]
        if s["noise"] is not None and s["noise"] not in allowed:
            raise ConfigError(f"[simulate].noise must be one of {allowed}")
        if s["method"] not in ("stationary_cov", "time_change"):
            raise ConfigError("[simulate].method must be stationary_cov or time_change")
    elif command == "estimate":
        if cfg["estimate"]["correction"] not in CORRECTIONS:
            raise ConfigError(f"[estimate].correction must be one of {CORRECTIONS}")
    elif command == "asymptotics":
        a = cfg["asymptotics"]
        if a["sigma_form"] not in ("stated", "limit"):
            raise ConfigError("[asymptotics].sigma_form must be 'stated' or 'limit'")
        if a["sigma2_replications"] < 100:
            raise ConfigError("[asymptotics].sigma2_replications must be >= 100")
    elif command == "mc":
        c = cfg["mc"]
        if c["scaling"] not in SCALINGS:
            raise ConfigError(f"[mc].scaling must be one of {SCALINGS}, got {c['scaling']!r}")
        if c["replications"] < 2:
            raise ConfigError("[mc].replications must be at least 2")
        _plan(cfg, model)
    return Prepared(cfg, model)


def _plan(cfg: dict, model: ModelSpec) -> ExperimentPlan:
    c = cfg["mc"]
    return ExperimentPlan(model, tuple(c["n_list"]), c["m"], c["replications"], cfg["seed"],
                          scaling=c["scaling"], correction=c["correction"], noise=c["noise"],
                          normality_gate=c["normality_gate"],
                          sigma2_replications=c["sigma2_replications"])


def _provenance(cfg: dict) -> dict:
    return {"config": cfg, "version": __version__}


def _dump(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, newline="\n")
    return path


def cmd_simulate(prep: Prepared, out_dir: Path, fmt: str) -> int:
    cfg = prep.config
    s = cfg["simulate"]
    model = prep.model
    if model.kind == FIRST_KIND:
        path = simulate_first_kind(model, s["n"], s["m"], cfg["seed"], noise=s["noise"] or "fbm")
    else:
        path = simulate_second_kind(model, s["n"], s["m"], cfg["seed"],
                                    noise=s["noise"] or "y1", method=s["method"])
    dest = out_dir / s["output"]
    if fmt == "json":
        doc = {"meta": path.meta, "t": path.grid.points.tolist(), "x": path.x.tolist(),
               "dnoise": path.noise.tolist(), **_provenance(cfg)}
        _write(dest.with_suffix(".json"), _dump(doc))
    else:
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_path_csv(path, dest, _provenance(cfg))
    log.info("wrote %s", dest)
    return EXIT_OK


def cmd_estimate(prep: Prepared, out_dir: Path, fmt: str, config_dir: Path) -> int:
    cfg = prep.config
    e = cfg["estimate"]
    model = prep.model
    src = Path(e["input"])
    if not src.is_absolute():
        src = config_dir / src
    try:
        path = read_path_csv(src)
    except OSError as exc:
        raise ConfigError(f"cannot read path file: {exc}") from exc
    notes = []
    meta = path.meta
    for key, want in (("kind", model.kind), ("H", model.H), ("p", model.basis.p),
                      ("basis", model.basis.kind)):
        have = meta.get(key)
        if have is None:
            meta[key] = want
        elif have != want:
            notes.append(f"{key} in the path file ({have!r}) differs from the config "
                         f"({want!r}); the config value is used")
    meta["kind"], meta["H"] = model.kind, model.H
    for n in notes:
        log.warning(n)
    alpha = e["alpha"] if e["alpha"] is not None else model.drift.alpha
    est = estimate(path, model.basis, correction=e["correction"], alpha=alpha)
    extra = {"warnings": notes, **_provenance(cfg)}
    dest = out_dir / e["output"]
    if fmt == "csv":
        names = [f"mu{i + 1}_hat" for i in range(model.basis.p)] + ["alpha_hat"]
        text = "# " + json.dumps(extra, sort_keys=True) + "\n" + ",".join(names) + "\n"
        text += ",".join(repr(float(v)) for v in est.theta_hat) + "\n"
        _write(dest.with_suffix(".csv"), text)
    else:
        text = est.to_json(extra) + "\n"
        _write(dest, text)
    sys.stdout.write(est.to_json(extra) + "\n")
    return EXIT_OK


def cmd_asymptotics(prep: Prepared, out_dir: Path, fmt: str) -> int:
    cfg = prep.config
    a = cfg["asymptotics"]
    model = prep.model
    stab = None
    if model.kind == SECOND_KIND:
        if a["sigma2"] is not None:
            sigma2 = float(a["sigma2"])
        else:
            stab = sigma2_stabilization(model.H, model.drift.alpha, a["sigma2_replications"],
                                        a["sigma2_n"], a["sigma2_m"], cfg["seed"])
            s = stab["at_n"]
            sigma2 = Sigma2Estimate(s["sigma2"], s["sigma2_se"], s["n"], s["m"],
                                    s["replications"], s["seed"])
        cov = asymptotic_covariance(model, sigma2=sigma2, tol=a["tol"])
    else:
        cov = asymptotic_covariance(model, sigma_form=a["sigma_form"])
    extra = _provenance(cfg)
    if stab is not None:
        extra["sigma2_stabilization"] = stab
    dest = out_dir / a["output"]
    if fmt == "csv":
        lines = ["# " + json.dumps(extra, sort_keys=True), "matrix,row," + ",".join(
            f"c{j + 1}" for j in range(cov.M.shape[0]))]
        for name, mat in (("M", cov.M), ("Sigma", cov.Sigma), ("product", cov.product)):
            for i, row in enumerate(mat):
                lines.append(f"{name},{i + 1}," + ",".join(repr(float(v)) for v in row))
        _write(dest.with_suffix(".csv"), "\n".join(lines) + "\n")
    else:
        _write(dest, cov.to_json(extra) + "\n")
    sys.stdout.write(cov.to_json(extra) + "\n")
    return EXIT_OK


def cmd_mc(prep: Prepared, out_dir: Path, threads: int) -> int:
    cfg = prep.config
    plan = _plan(cfg, prep.model)
    if plan.scaling == "consistency":
        report = run_consistency(plan, threads=threads)
    else:
        report = run_clt(plan, threads=threads)
    prov = _provenance(cfg)
    prefix = cfg["mc"]["prefix"]
    _write(out_dir / f"{prefix}_rows.csv",
           "# " + json.dumps(prov, sort_keys=True) + "\n" + report.rows_csv())
    _write(out_dir / f"{prefix}_summary.json", report.to_json(prov) + "\n")
    table = report.verdict_table()
    _write(out_dir / f"{prefix}_verdicts.txt", table)
    sys.stdout.write(table)
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfou", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_SECTIONS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", type=Path, default=Path("."))
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (results do not depend on it)")
        p.add_argument("--format", choices=("csv", "json"), default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        log.error("--threads must be at least 1")
        return EXIT_CONFIG
    try:
        prep = prepare(args.command, args.config, args.seed)
    except (ConfigError, ValueError, PathFormatError) as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    default_fmt = "csv" if args.command == "simulate" else "json"
    fmt = args.format or default_fmt
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            if args.command == "simulate":
                return cmd_simulate(prep, args.out_dir, fmt)
            if args.command == "estimate":
                return cmd_estimate(prep, args.out_dir, fmt, args.config.parent)
            if args.command == "asymptotics":
                return cmd_asymptotics(prep, args.out_dir, fmt)
            return cmd_mc(prep, args.out_dir, args.threads)
    except (ConfigError, PathFormatError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
