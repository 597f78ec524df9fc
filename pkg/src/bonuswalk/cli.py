"""Command-line interface.

Exit codes: 0 success, 1 replay produced different bytes, 2 invalid input,
3 numeric degeneracy (e.g. a prior that cannot be fitted).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .bms import PRESETS, load_preset, parse_bms_spec
from .config import (
    RunManifest,
    check_inputs,
    file_digest,
    make_run_id,
    read_manifest,
    resolve_config,
    write_manifest,
)
from .errors import DegeneracyError, ValidationError
from .estimators import (
    SCHEMES,
    ClassTenureObservation,
    QuadratureConfig,
    estimate_method1,
    estimate_method1_curve,
    estimate_method2,
    estimate_method3,
)
from .gamma_poisson import GammaPrior, estimate_prior_mom, read_exposure_csv
from .simulation import METHODS, export_report, run_comparison, simulate_portfolio, write_portfolio_csv

log = logging.getLogger("bonuswalk")

EXIT_OK, EXIT_DIFFERS, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3
REPORT_STEM = "report"
MANIFEST_NAME = "manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _add_system(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--system", choices=PRESETS, help="built-in bonus-malus system")
    g.add_argument("--spec-file", help="custom BMS rule file")


def _add_prior(p, required=False):
    p.add_argument("--alpha", type=float, required=required, help="Gamma prior shape")
    p.add_argument("--beta", type=float, required=required, help="Gamma prior rate")


def _add_quadrature(p):
    p.add_argument("--nodes", type=int, default=None, help="quadrature nodes (default 256)")
    p.add_argument("--scheme", choices=SCHEMES, default=None)


def _spec(args):
    if getattr(args, "spec_file", None):
        return parse_bms_spec(Path(args.spec_file).read_text())
    return load_preset(args.system or "hungarian")


def _qc(args) -> QuadratureConfig:
    kw = {}
    if args.nodes is not None:
        kw["node_count"] = args.nodes
    if args.scheme is not None:
        kw["scheme"] = args.scheme
    return QuadratureConfig(**kw)


def _class_index(spec, value: str) -> int:
    if value in spec.labels:
        return spec.labels.index(value) + 1
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"unknown class {value!r}; labels are {', '.join(spec.labels)}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bonuswalk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a portfolio and write it as CSV")
    p.add_argument("--config", help="run config file (key = value)")
    _add_system(p)
    _add_prior(p)
    p.add_argument("--n", type=int)
    p.add_argument("--years", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tenure", choices=("fixed", "mixed"), help="policy tenure layout")
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate-prior", help="moment fit of the Gamma prior from a claims CSV")
    p.add_argument("--in", dest="input", required=True, help="CSV with claims, exposure_years")

    p = sub.add_parser("estimate-lambda", help="estimate one claim frequency")
    p.add_argument("--method", choices=("1", "2", "3"), required=True)
    _add_system(p)
    _add_prior(p)
    _add_quadrature(p)
    p.add_argument("--class", dest="class_", help="method 1: class index or label")
    p.add_argument("--tenure", type=int, help="method 1: years in the system")
    p.add_argument("--in", dest="input", help="method 2: CSV with class_index, claims")
    p.add_argument("--claims", type=int, help="method 3: total claims")
    p.add_argument("--exposure", type=float, help="method 3: exposure in years")

    p = sub.add_parser("curve", help="method.1 estimates for every class and year")
    _add_system(p)
    _add_prior(p, required=True)
    _add_quadrature(p)
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("compare", help="full simulate-estimate-score experiment")
    p.add_argument("--config", help="run config file (key = value)")
    _add_system(p)
    _add_prior(p)
    _add_quadrature(p)
    p.add_argument("--n", type=int)
    p.add_argument("--years", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tenure", choices=("fixed", "mixed"), help="policy tenure layout")
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("replay", help="re-run a compare manifest and check the outputs")
    p.add_argument("manifest")
    p.add_argument("--out-dir", help="where to write (default: replay/ next to the manifest)")
    return parser


def _resolve(args):
    cli = {
        "system": args.system,
        "spec_file": args.spec_file,
        "alpha": args.alpha,
        "beta": args.beta,
        "n": args.n,
        "years": args.years,
        "seed": args.seed,
        "nodes": getattr(args, "nodes", None),
        "scheme": getattr(args, "scheme", None),
        "tenure": getattr(args, "tenure", None),
    }
    return resolve_config(cli, args.config)


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    spec = cfg.load_spec()
    portfolio = simulate_portfolio(
        spec, GammaPrior(cfg["alpha"], cfg["beta"]), cfg["n"], cfg["years"], cfg["seed"],
        tenure_mode=cfg["tenure"],
    )
    params = {k: cfg[k] for k in ("alpha", "beta", "n", "years", "seed", "tenure")}
    write_portfolio_csv(portfolio, args.out, header_comment=f"system={spec.name} {json.dumps(params)}")
    return EXIT_OK


def cmd_estimate_prior(args) -> int:
    prior = estimate_prior_mom(read_exposure_csv(args.input))
    print(json.dumps(asdict(prior)))
    return EXIT_OK


def _read_class_claims(path):
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    if not reader.fieldnames or not {"class_index", "claims"} <= set(reader.fieldnames):
        raise ValidationError(f"{path}: header must contain class_index, claims")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            out.append((int(row["class_index"]), int(row["claims"])))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: line {lineno}: {exc}") from None
    return out


def cmd_estimate_lambda(args) -> int:
    prior = None
    if args.alpha is not None or args.beta is not None:
        if args.alpha is None or args.beta is None:
            raise ValidationError("--alpha and --beta go together")
        prior = GammaPrior(args.alpha, args.beta)
    if args.method == "1":
        if prior is None or args.class_ is None or args.tenure is None:
            raise ValidationError("method 1 needs --alpha, --beta, --class and --tenure")
        spec = _spec(args)
        obs = ClassTenureObservation(_class_index(spec, args.class_), args.tenure)
        value = estimate_method1(spec, prior, obs, _qc(args))
        print(json.dumps({"method": "method.1", "class": spec.label(obs.class_index),
                          "tenure": obs.tenure_steps, "lambda_hat": value}))
    elif args.method == "2":
        if args.input is None:
            raise ValidationError("method 2 needs --in")
        n_classes = _spec(args).n_classes if (args.system or args.spec_file) else None
        table = estimate_method2(_read_class_claims(args.input), n_classes, prior)
        print(json.dumps({"method": "method.2",
                          "classes": {str(c): asdict(v) for c, v in table.items()}}))
    else:
        if prior is None or args.claims is None or args.exposure is None:
            raise ValidationError("method 3 needs --alpha, --beta, --claims and --exposure")
        value = estimate_method3(prior, args.claims, args.exposure)
        print(json.dumps({"method": "method.3", "lambda_hat": value}))
    return EXIT_OK


def cmd_curve(args) -> int:
    curve = estimate_method1_curve(_spec(args), GammaPrior(args.alpha, args.beta), args.horizon, _qc(args))
    if args.out:
        curve.to_csv(args.out)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["class_label", "year", "lambda_hat", "reachable"])
        for label, t, value, ok in curve.rows():
            writer.writerow([label, t, repr(float(value)) if ok else "", str(ok).lower()])
    return EXIT_OK


def _parse_methods(text):
    if text is None:
        return None
    return [m.strip() for m in text.split(",") if m.strip()]


def run_compare(cfg, out_dir: Path, methods=None, config_path=None, subcommand="compare") -> tuple[int, RunManifest]:
    """Run the experiment for a resolved config; always leaves a manifest behind."""
    start = time.perf_counter()
    out_dir.mkdir(parents=True, exist_ok=True)
    params = dict(cfg.params)
    if methods is not None:
        params["methods"] = list(methods)
    # only the rule file shapes the outputs; the config file is recorded but not hashed
    determining = {str(cfg["spec_file"]): file_digest(cfg["spec_file"])} if cfg["spec_file"] else {}
    inputs = dict(determining)
    if config_path:
        inputs[str(config_path)] = file_digest(config_path)
    run_id = make_run_id("compare", params, determining)
    manifest = RunManifest(
        subcommand=subcommand,
        parameters=params,
        parameter_sources=cfg.sources,
        overrides=cfg.overrides,
        seed=cfg["seed"],
        inputs=inputs,
        run_id=run_id,
    )
    code = EXIT_OK
    try:
        spec = cfg.load_spec()
        portfolio = simulate_portfolio(
            spec, GammaPrior(cfg["alpha"], cfg["beta"]), cfg["n"], cfg["years"], cfg["seed"],
            tenure_mode=cfg["tenure"],
        )
        qc = QuadratureConfig(node_count=cfg["nodes"], scheme=cfg["scheme"])
        report = run_comparison(portfolio, qc)
        paths = export_report(report, out_dir / REPORT_STEM, methods, run_id=run_id)
        manifest.outputs = [p.name for p in paths]
    except DegeneracyError as exc:
        code, manifest.error = EXIT_NUMERIC, str(exc)
    except (ValidationError, OSError) as exc:
        code, manifest.error = EXIT_VALIDATION, str(exc)
    if code != EXIT_OK:
        manifest.status = "error"
        manifest.exit_code = code
        log.error("%s", manifest.error)
    manifest.duration_seconds = round(time.perf_counter() - start, 3)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    return code, manifest


def cmd_compare(args) -> int:
    cfg = _resolve(args)
    code, _ = run_compare(cfg, Path(args.out_dir), _parse_methods(args.methods), args.config)
    return code


def cmd_replay(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    if manifest.subcommand != "compare":
        raise ValidationError(f"cannot replay a {manifest.subcommand!r} run")
    check_inputs(manifest, manifest_path.parent)
    params = dict(manifest.parameters)
    methods = params.pop("methods", None)
    cli = {k: v for k, v in params.items() if v is not None}
    cfg = resolve_config(cli)
    out_dir = Path(args.out_dir) if args.out_dir else manifest_path.parent / "replay"
    originals = {name: (manifest_path.parent / name).read_bytes()
                 for name in manifest.outputs if (manifest_path.parent / name).exists()}
    code, replayed = run_compare(cfg, out_dir, methods, subcommand="compare")
    if code != EXIT_OK:
        return code
    if replayed.run_id != manifest.run_id:
        log.warning("run id changed: %s -> %s", manifest.run_id, replayed.run_id)
    same = True
    for name, data in originals.items():
        identical = (out_dir / name).read_bytes() == data
        print(f"{name}: {'identical' if identical else 'DIFFERS'}")
        same &= identical
    return EXIT_OK if same else EXIT_DIFFERS


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate-prior": cmd_estimate_prior,
    "estimate-lambda": cmd_estimate_lambda,
    "curve": cmd_curve,
    "compare": cmd_compare,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DegeneracyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
