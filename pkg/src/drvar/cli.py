"""Batch command line: ``drvar simulate | analyze | truth | demo-nb``.

Every command accepts ``--config FILE.json`` whose keys are the long flag
names with dashes replaced by underscores (``bootstrap_m``, ``ps_spec`` ...).
Flags given on the command line override the config file.

Exit codes: 0 success, 1 computation failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import simlab
from .core import Dataset, DesignSpec, Term, term
from .errors import DGPImplementationError, EstimationError, ValidationError
from .sscf import sscf_repeated
from .variance import bootstrap_joint, efficient_score_variance, joint_sandwich

FORMAT_VERSION = 1
FORMATS = ("json", "csv", "table")
ANALYZE_METHODS = ("plugin", "sandwich", "efficient", "bootstrap", "sscf")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text):
    if isinstance(text, (list, tuple)):
        return [str(t) for t in text]
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON config file; flags override its keys")
    p.add_argument("--out", type=Path, help="write the report here (default: standard output)")
    p.add_argument("--format", choices=FORMATS, help="report format (default json)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drvar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="Monte Carlo study on the built-in DGP")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int, help="number of replications")
    p.add_argument("--ps", choices=sorted(simlab.PS_SPECS))
    p.add_argument("--or", dest="or_", choices=sorted(simlab.OR_SPECS))
    p.add_argument("--methods", type=_csv_list)
    p.add_argument("--bootstrap-m", type=int)
    p.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")

    p = sub.add_parser("analyze", help="estimate the ACE on a CSV dataset")
    _common(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--outcome")
    p.add_argument("--treatment")
    p.add_argument("--covariates", type=_csv_list)
    p.add_argument("--methods", type=_csv_list)
    p.add_argument("--bootstrap-m", type=int)
    p.add_argument("--sscf-splits", type=int)
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("truth", help="Monte Carlo and closed-form ACE of the DGP")
    _common(p)
    p.add_argument("--mtrue", type=int)

    p = sub.add_parser("demo-nb", help="Poisson sandwich variance on negative binomial counts")
    _common(p)
    p.add_argument("--mu", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--n", type=int)
    return parser


DEFAULTS = {
    "simulate": {"n": 800, "m": 1000, "ps": "correct", "or_": "correct", "methods": ["plugin"],
                 "bootstrap_m": 200, "jobs": 1, "format": "json"},
    "analyze": {"methods": ["plugin", "sandwich", "efficient", "sscf"], "bootstrap_m": 500,
                "sscf_splits": 1, "jobs": 1, "format": "json"},
    "truth": {"mtrue": 1_000_000, "format": "json"},
    "demo-nb": {"mu": 2.0, "alpha": 0.5, "n": 100_000, "format": "json"},
}
CONFIG_ONLY = {"analyze": ("ps_spec", "or_spec")}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    cfg = dict(DEFAULTS[args.command])
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text())
        except OSError as exc:
            raise ValidationError(f"config: cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config: {args.config} is not valid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise ValidationError("config: top level must be an object")
        allowed = set(vars(args)) | set(CONFIG_ONLY.get(args.command, ())) | {"or"}
        allowed -= {"command", "config"}
        unknown = sorted(set(loaded) - allowed)
        if unknown:
            raise ValidationError(f"config: unknown key(s) {unknown}")
        if "or" in loaded:
            loaded["or_"] = loaded.pop("or")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in ("command", "config") or val is None:
            continue
        cfg[key] = val
    for key in ("out", "data"):
        if cfg.get(key) is not None:
            cfg[key] = Path(cfg[key])
    if "methods" in cfg:
        cfg["methods"] = _csv_list(cfg["methods"])
    if "covariates" in cfg and cfg["covariates"] is not None:
        cfg["covariates"] = _csv_list(cfg["covariates"])
    if cfg.get("format") not in FORMATS:
        raise ValidationError(f"format: expected one of {FORMATS}, got {cfg.get('format')!r}")
    return cfg


def _require_int(cfg, key, flag, minimum=None):
    val = cfg.get(key)
    if val is None:
        raise ValidationError(f"{flag}: required")
    if isinstance(val, bool) or not isinstance(val, int):
        raise ValidationError(f"{flag}: expected an integer, got {val!r}")
    if minimum is not None and val < minimum:
        raise ValidationError(f"{flag}: must be >= {minimum}, got {val}")
    return val


def _jsonable_config(cfg: dict) -> dict:
    out = {}
    for k, v in sorted(cfg.items()):
        if k in ("out", "jobs"):
            continue
        if isinstance(v, Path):
            v = str(v)
        if isinstance(v, DesignSpec):
            v = v.to_json()
        out["or" if k == "or_" else k] = v
    return out


def _emit(cfg: dict, text: str, stdout) -> None:
    if cfg.get("out") is not None:
        try:
            cfg["out"].write_text(text)
        except OSError as exc:
            raise ValidationError(f"--out: cannot write {cfg['out']}: {exc.strerror}") from None
    else:
        stdout.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_simulate(cfg: dict, stdout) -> int:
    seed = _require_int(cfg, "seed", "--seed")
    m = _require_int(cfg, "m", "--m", 1)
    n = _require_int(cfg, "n", "--n", 50)
    try:
        sim = simlab.SimConfig(
            n=n, M=m, seed=seed, ps_mode=cfg["ps"], or_mode=cfg["or_"],
            methods=tuple(cfg["methods"]), bootstrap_M=int(cfg["bootstrap_m"]),
            n_jobs=int(cfg.get("jobs") or 1),
        )
    except ValidationError as exc:
        field = str(exc).split(":", 1)[0]
        flag = {"M": "--m", "n": "--n", "methods": "--methods", "ps_mode": "--ps",
                "or_mode": "--or", "bootstrap_M": "--bootstrap-m"}.get(field, field)
        raise ValidationError(f"{flag}: {str(exc).split(':', 1)[-1].strip()}") from None
    summary = simlab.run_mc(sim)
    table = summary.to_table()
    fmt = cfg["format"]
    if fmt == "json":
        report = summary.to_dict()
        report["command"] = "simulate"
        report["resolved_config"] = _jsonable_config(cfg)
        text = json.dumps(report, indent=2) + "\n"
    elif fmt == "csv":
        text = summary.to_csv()
    else:
        text = table
    if cfg.get("out") is not None:
        stdout.write(table)
    _emit(cfg, text, stdout)
    return 0


def _default_specs(covariates):
    ps = DesignSpec.of(*(term(c) for c in covariates))
    outcome = DesignSpec.of(*(term(c) for c in covariates), Term((), True))
    return ps, outcome


def _spec_from_cfg(cfg, key, default):
    raw = cfg.get(key)
    if raw is None:
        return default
    if isinstance(raw, DesignSpec):
        return raw
    return DesignSpec.from_json(raw)


def analyze_dataset(ds: Dataset, ps_spec: DesignSpec, or_spec: DesignSpec, methods, seed=None,
                    bootstrap_m=500, sscf_splits=1, n_jobs=1) -> dict:
    """Point estimate, SE and 95% CI per method plus U-vs-PS-score correlations."""
    ps_spec.validate(ds)
    or_spec.validate(ds)
    sw = joint_sandwich(ds, ps_spec, or_spec)
    u = sw.ef.u
    mu = sw.theta_hat.mu
    se = {"plugin": float(np.sqrt(u @ u)) / ds.n, "sandwich": sw.se_mu}
    est = {"plugin": mu, "sandwich": mu}
    if "efficient" in methods:
        se["efficient"] = efficient_score_variance(sw.ef, blocks="ps").se_mu
        est["efficient"] = mu
    if "bootstrap" in methods:
        se["bootstrap"] = bootstrap_joint(ds, ps_spec, or_spec, bootstrap_m, seed, n_jobs).se_mu
        est["bootstrap"] = mu
    if "sscf" in methods:
        sc = sscf_repeated(ds, ps_spec, or_spec, sscf_splits, seed)
        se["sscf"] = sc.se_mu
        est["sscf"] = sc.mu_sscf
    rows = []
    for m in ANALYZE_METHODS:
        if m in methods:
            rows.append({"method": m, "mu_hat": est[m], "se": se[m],
                         "ci_low": est[m] - 1.96 * se[m], "ci_high": est[m] + 1.96 * se[m]})
    corr = simlab._pearson(u, sw.ef.v)
    correlations = [{"component": lab, "corr": float(c)} for lab, c in zip(ps_spec.labels(), corr)]
    return {
        "n": ds.n,
        "n_treated": int(ds.x.sum()),
        "se_convention": "standard error of mu_hat",
        "methods": rows,
        "correlations": correlations,
        "ps_coefficients": dict(zip(ps_spec.labels(), map(float, sw.theta_hat.psi))),
    }


def cmd_analyze(cfg: dict, stdout) -> int:
    for key in ("data", "outcome", "treatment"):
        if cfg.get(key) is None:
            raise ValidationError(f"--{key}: required")
    methods = cfg["methods"]
    unknown = [m for m in methods if m not in ANALYZE_METHODS]
    if unknown or not methods:
        raise ValidationError(f"--methods: unknown {unknown}; choose from {list(ANALYZE_METHODS)}")
    seed = None
    if "bootstrap" in methods or "sscf" in methods:
        seed = _require_int(cfg, "seed", "--seed")
    if "bootstrap" in methods:
        _require_int(cfg, "bootstrap_m", "--bootstrap-m", 2)
    splits = _require_int(cfg, "sscf_splits", "--sscf-splits", 1)
    try:
        ds = Dataset.from_csv(cfg["data"], cfg["outcome"], cfg["treatment"], cfg.get("covariates"))
    except OSError as exc:
        raise ValidationError(f"--data: cannot read {cfg['data']}: {exc.strerror}") from None
    default_ps, default_or = _default_specs(ds.covariate_names)
    ps_spec = _spec_from_cfg(cfg, "ps_spec", default_ps)
    or_spec = _spec_from_cfg(cfg, "or_spec", default_or)
    cfg["ps_spec"], cfg["or_spec"] = ps_spec, or_spec

    result = analyze_dataset(ds, ps_spec, or_spec, methods, seed, cfg.get("bootstrap_m"),
                             splits, int(cfg.get("jobs") or 1))
    lines = [f"n={result['n']} treated={result['n_treated']}",
             f"{'method':<10}{'mu_hat':>12}{'se':>10}{'ci_low':>12}{'ci_high':>12}"]
    for r in result["methods"]:
        lines.append(f"{r['method']:<10}{r['mu_hat']:>12.3f}{r['se']:>10.3f}"
                     f"{r['ci_low']:>12.3f}{r['ci_high']:>12.3f}")
    lines.append(f"{'PS component':<20}{'corr(U, V)':>12}")
    for c in result["correlations"]:
        lines.append(f"{c['component']:<20}{c['corr']:>12.4f}")
    table = "\n".join(lines) + "\n"

    fmt = cfg["format"]
    if fmt == "json":
        report = {"format_version": FORMAT_VERSION, "command": "analyze",
                  "resolved_config": _jsonable_config(cfg), **result}
        text = json.dumps(report, indent=2) + "\n"
    elif fmt == "csv":
        text = _csv_text(["method", "mu_hat", "se", "ci_low", "ci_high"],
                         [[r["method"], repr(r["mu_hat"]), repr(r["se"]), repr(r["ci_low"]),
                           repr(r["ci_high"])] for r in result["methods"]])
    else:
        text = table
    if cfg.get("out") is not None:
        stdout.write(table)
    _emit(cfg, text, stdout)
    return 0


def _kv_report(command, cfg, values: dict, stdout) -> int:
    fmt = cfg["format"]
    table = "".join(f"{k:<24}{v}\n" for k, v in values.items())
    if fmt == "json":
        text = json.dumps({"format_version": FORMAT_VERSION, "command": command,
                           "resolved_config": _jsonable_config(cfg), **values}, indent=2) + "\n"
    elif fmt == "csv":
        text = _csv_text(["key", "value"], [[k, v] for k, v in values.items()])
    else:
        text = table
    if cfg.get("out") is not None:
        stdout.write(table)
    _emit(cfg, text, stdout)
    return 0


def cmd_truth(cfg: dict, stdout) -> int:
    seed = _require_int(cfg, "seed", "--seed")
    mtrue = _require_int(cfg, "mtrue", "--mtrue", 1_000_000)
    rep = simlab.true_ace(mtrue, seed)
    return _kv_report("truth", cfg, rep.to_dict(), stdout)


def cmd_demo_nb(cfg: dict, stdout) -> int:
    seed = _require_int(cfg, "seed", "--seed")
    n = _require_int(cfg, "n", "--n", 1000)
    try:
        mu, alpha = float(cfg["mu"]), float(cfg["alpha"])
    except (TypeError, ValueError):
        raise ValidationError("--mu/--alpha: expected numbers") from None
    if not mu > 0:
        raise ValidationError(f"--mu: must be positive, got {mu}")
    if not alpha >= 0:
        raise ValidationError(f"--alpha: must be non-negative, got {alpha}")
    res = simlab.nb_poisson_demo(mu, alpha, n, seed)
    return _kv_report("demo-nb", cfg, res.to_dict(), stdout)


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "truth": cmd_truth,
            "demo-nb": cmd_demo_nb}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        return COMMANDS[args.command](cfg, stdout)
    except ValidationError as exc:
        stderr.write(f"drvar: error: {exc}\n")
        return 2
    except (EstimationError, DGPImplementationError) as exc:
        stderr.write(f"drvar: computation failed: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
