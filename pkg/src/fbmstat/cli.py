"""Command line entry point: ``fbmstat {simulate,estimate,test,mc,constants}``.

Every run that writes files also writes ``manifest.json`` (config, package
version, seed) into the output directory.  Flags may be given in a flat
TOML file via ``--config``; flags on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import constants as C
from . import estimators as E
from . import hypothesis_tests as T
from . import mc_harness as MC
from .fbm_engine import check_hurst, make_grid, sample_fbm, write_binary, write_csv
from .kernels import kernel_names, smooth
from .models import ModelSpec, simulate_model

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("fbmstat")

MODEL_FAMILIES = {
    "m4": "M4_additive",
    "m5": "M5_ou",
    "m6": "M6_geometric",
    "m7": "M7_mixed",
    "general": "GeneralMuZero",
    "affine": "AffineSigma",
    "euler": "GeneralEuler",
}


class UsageError(Exception):
    pass


def parse_eps(text: str) -> float:
    """Accept decimals or powers of two written ``2^-9``."""
    text = str(text).strip()
    try:
        if "^" in text:
            base, exp = text.split("^", 1)
            val = float(base) ** float(exp)
        else:
            val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r} as a number or 2^-n") from None
    if not val > 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return val


def _float_list(text: str) -> list[float]:
    try:
        return [parse_eps(t) for t in str(text).split(",") if t.strip()]
    except argparse.ArgumentTypeError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _real_list(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r} as comma-separated numbers") from None


def _positive(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return val


# --- parser -----------------------------------------------------------------------


def _global(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0, help="base seed")
    g.add_argument("--out", type=Path, default=None, help="output directory")
    g.add_argument("--config", type=Path, default=None, help="flat TOML file with flag values")
    g.add_argument("--kernel", choices=kernel_names(), default="second_difference")
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser, sigma_required: bool = False) -> None:
    p.add_argument("--model", choices=sorted(MODEL_FAMILIES), default="m4")
    p.add_argument("--sigma", default=None, required=sigma_required,
                   help="number, or name:value from the function catalog for general/euler")
    p.add_argument("--mu", default="0.0")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--mu-mode", choices=("constant", "linear"), default="constant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbmstat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fbmstat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an fBm path or a model trajectory")
    _global(p)
    _model_flags(p)
    p.add_argument("--raw", action="store_true", help="write the fBm path itself")
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--eps-max", type=parse_eps, default=2.0**-9)
    p.add_argument("--dt", type=parse_eps, default=None, help="grid step (default eps_max/16)")
    p.add_argument("--format", choices=("csv", "binary"), default="csv")

    p = sub.add_parser("estimate", help="simulate one trajectory and estimate")
    _global(p)
    _model_flags(p)
    p.add_argument("--h-true", type=float, required=True)
    p.add_argument("--estimator", choices=("regression", "known-h", "functional", "pointwise"), default="regression")
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--scales", type=_float_list, default=[1.0, 2.0])
    p.add_argument("--eps", type=parse_eps, default=2.0**-9)
    p.add_argument("--order", type=int, choices=(1, 2), default=2, help="functional estimator order")
    p.add_argument("--bandwidth", type=_positive, default=0.25)
    p.add_argument("--x-grid", type=_real_list, default=None, help="pointwise estimator levels")

    p = sub.add_parser("test", help="test sigma = sigma0 on simulated data")
    _global(p)
    p.add_argument("--variant", choices=T.VARIANTS, default="F_const")
    p.add_argument("--sigma0", type=_positive, required=True)
    p.add_argument("--d", type=float, default=0.0)
    p.add_argument("--d-values", type=_real_list, default=None, help="power curve over these d")
    p.add_argument("--f-shift", default="identity")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--eps", type=parse_eps, default=2.0**-9)
    p.add_argument("--h", type=float, default=0.7)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--mu-mode", choices=("constant", "linear"), default="constant")
    p.add_argument("--c", type=float, default=1.0)

    p = sub.add_parser("mc", help="run a Monte Carlo experiment")
    _global(p)
    p.add_argument("--experiment", required=True, help="catalog name or a TOML experiment file")
    p.add_argument("--replicates", type=int, default=None)

    p = sub.add_parser("constants", help="print the asymptotic constants as CSV")
    _global(p)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--k", type=_float_list, default=[2.0])
    p.add_argument("--scales", type=_float_list, default=None)
    return parser


# --- config ------------------------------------------------------------------------


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:  # noqa: SLF001 - argparse has no public accessor
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def load_config(path: Path) -> dict:
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    nested = [k for k, v in cfg.items() if isinstance(v, dict)]
    if nested:
        raise UsageError(f"config must be flat; found tables {nested}")
    return cfg


def dump_config(cfg: dict) -> str:
    """Flat TOML writer for the value types used by the parser."""
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if val is None:
            continue
        lines.append(f"{key} = {_toml_value(val)}")
    return "\n".join(lines) + "\n"


def _toml_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, (int, np.integer)):
        return str(int(val))
    if isinstance(val, (float, np.floating)):
        return repr(float(val))
    if isinstance(val, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in val) + "]"
    return json.dumps(str(val))


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    command, config = _prescan(argv)
    if command is not None and config is not None:
        sp = _subparser(parser, command)
        try:
            cfg = load_config(Path(config))
        except (OSError, UsageError, tomllib.TOMLDecodeError) as exc:
            sp.error(f"--config: {exc}")
        dests = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - dests - {"command"})
        if unknown:
            sp.error(f"--config: unknown keys {', '.join(unknown)}")
        cfg.pop("command", None)
        for key in ("out", "config"):
            if key in cfg:
                cfg[key] = Path(cfg[key])
        # config values become defaults; explicit flags still win
        for action in sp._actions:
            if action.dest in cfg and action.required:
                action.required = False
        sp.set_defaults(**cfg)
    return parser.parse_args(argv)


def _prescan(argv) -> tuple[str | None, str | None]:
    """Find the subcommand and ``--config`` value before full parsing."""
    command = next((a for a in argv if a in COMMANDS), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def config_of(args: argparse.Namespace) -> dict:
    out = {}
    for key, val in vars(args).items():
        if key in ("config", "verbose"):
            continue
        out[key] = str(val) if isinstance(val, Path) else val
    return out


def write_manifest(args: argparse.Namespace, outdir: Path, files: list[str]) -> None:
    cfg = config_of(args)
    manifest = {"version": __version__, "command": args.command, "seed": args.seed, "config": cfg,
                "files": files}
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    (outdir / "config.toml").write_text(dump_config(cfg))


# --- commands --------------------------------------------------------------------


def _model_spec(args) -> ModelSpec:
    family = MODEL_FAMILIES[args.model]
    if args.sigma is None:
        raise UsageError("--sigma is required")
    kw = dict(family=family, c=args.c, mu_mode=args.mu_mode, a=args.a, b=args.b)
    if family in ("GeneralMuZero", "GeneralEuler"):
        kw.update(sigma=args.sigma, mu=args.mu)
    else:
        try:
            kw.update(sigma=float(args.sigma), mu=float(args.mu))
        except ValueError:
            raise UsageError("--sigma and --mu must be numbers for this model") from None
        if family != "AffineSigma" and kw["sigma"] <= 0:
            raise UsageError("--sigma must be positive")
    try:
        return ModelSpec(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(args, payload: dict, files: dict[str, str]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=float)
    print(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        for name, content in files.items():
            (args.out / name).write_text(content)
        write_manifest(args, args.out, sorted(files))


def cmd_simulate(args) -> int:
    try:
        check_hurst(args.h)
    except ValueError as exc:
        raise UsageError(f"--h: {exc}") from None
    dt = args.dt if args.dt is not None else args.eps_max / 16.0
    t0, n = make_grid(args.eps_max, dt)
    path = sample_fbm(args.h, n, t0, dt, args.seed)
    if args.out is None:
        raise UsageError("--out is required for simulate")
    args.out.mkdir(parents=True, exist_ok=True)
    if args.raw:
        proc, name = path, "fbm"
    else:
        proc, name = simulate_model(_model_spec(args), path), "trajectory"
    if args.format == "binary":
        fname = f"{name}.fbm1"
        bin_path = path if args.raw else type(path)(proc.t0, proc.dt, proc.values, h=args.h, seed=args.seed)
        write_binary(bin_path, args.out / fname)
    else:
        fname = f"{name}.csv"
        write_csv(proc, args.out / fname)
    write_manifest(args, args.out, [fname])
    print(json.dumps({"file": str(args.out / fname), "n": n, "t0": t0, "dt": dt, "backend": path.backend}))
    return 0


def cmd_estimate(args) -> int:
    try:
        h = check_hurst(args.h_true, estimator=True)
    except ValueError as exc:
        raise UsageError(f"--h-true: {exc}") from None
    spec = _model_spec(args)
    eps = args.eps
    c_max = max(args.scales) if args.estimator == "regression" else 1.0
    dt = eps * min(args.scales if args.estimator == "regression" else [1.0]) / 16.0
    t0, n = make_grid(eps * c_max, dt)
    path = sample_fbm(h, n, t0, dt, args.seed)
    x = simulate_model(spec, path)
    family = "multiplicative" if spec.multiplicative else "additive"
    files = {}
    if args.estimator == "regression":
        est = E.estimate_H_sigma(x, args.kernel, args.k, E.ScaleSet(eps, args.scales), family)
        payload = {"estimator": "regression", **est.to_dict(), "scales": args.scales, "eps": eps}
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["scale", "h_i", "log_M_k"])
        for c, lm in zip(args.scales, est.per_scale_logM):
            w.writerow([repr(c), repr(c * eps), repr(float(lm))])
        files["log_m.csv"] = buf.getvalue()
    elif args.estimator == "known-h":
        s = E.estimate_sigma_known_H(x, args.kernel, args.k, eps, h, family)
        payload = {"estimator": "known-h", "k": args.k, "sigma_tilde": s, "eps": eps}
    elif args.estimator == "functional":
        sm = smooth(x, args.kernel, eps, orders=(0, 1, 2))
        payload = {"estimator": "functional", "order": args.order, "k": args.k, "eps": eps,
                   "value": E.functional_statistic(args.order, None, args.k, sm, h)}
    else:
        sm = smooth(x, args.kernel, eps, orders=(0, 2))
        xe = sm.x_eps
        grid = args.x_grid or list(np.linspace(xe.min(), xe.max(), 21))
        res = E.pointwise_sigma(sm, args.k, h, grid, args.bandwidth)
        payload = {"estimator": "pointwise", "k": args.k, "eps": eps, "bandwidth": args.bandwidth,
                   "x": list(map(float, res.x)), "sigma": [None if m else float(v) for v, m in zip(res.sigma, res.mask)],
                   "mass": list(map(float, res.mass))}
    payload["seed"] = args.seed
    files["estimate.json"] = json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n"
    _emit(args, payload, files)
    return 0


def cmd_test(args) -> int:
    try:
        spec = T.TestSpec(variant=args.variant, sigma0=args.sigma0, d=args.d, f_shift=args.f_shift,
                          mu_mode=args.mu_mode, mu=args.mu, c=args.c, h=args.h, alpha=args.alpha,
                          kernel=args.kernel)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.replicates < 1:
        raise UsageError("--replicates must be >= 1")
    files = {}
    if args.d_values is not None:
        rows = T.power_curve(spec, args.d_values, args.replicates, args.eps, args.seed, args.threads)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
        files["power_curve.csv"] = buf.getvalue()
        payload = {"power_curve": rows, "spec": asdict(spec), "eps": args.eps}
    elif args.replicates == 1:
        t0, n = make_grid(args.eps, args.eps / 16.0)
        path = sample_fbm(spec.h, n, t0, args.eps / 16.0, args.seed)
        _, y = T.simulate_alternative(spec, path, args.eps)
        rep = T.test_decision(T.statistic(spec, y), spec, y, mc_context={"seed": args.seed, "replicate": 0})
        payload = rep.to_dict()
    else:
        run = MC.run_replicates(lambda s: T.replicate_statistic(spec, args.eps, s), args.replicates, args.seed,
                                args.threads)
        ok = [r for r in run.results if r is not None]
        payload = {"spec": asdict(spec), "eps": args.eps, "replicates": len(ok), "failures": run.n_failed,
                   "rejection_rate": float(np.mean([r["reject"] for r in ok])),
                   "mean_statistic": float(np.mean([r["statistic"] for r in ok]))}
    files["report.json"] = json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n"
    _emit(args, payload, files)
    return 0


def cmd_mc(args) -> int:
    cat = MC.catalog()
    if args.experiment in cat:
        exp = cat[args.experiment]
    else:
        path = Path(args.experiment)
        if not path.exists():
            raise UsageError(f"--experiment: {args.experiment!r} is neither a catalog name ({', '.join(cat)}) "
                             "nor a file")
        try:
            exp = MC.experiment_from_config(load_config(path))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"--experiment: {exc}") from None
    if args.replicates is not None:
        exp.replicates = args.replicates
    exp.base_seed = args.seed
    exp.kernel = args.kernel
    summary = MC.run_experiment(exp, threads=args.threads)
    payload = summary.to_dict()
    files = {"summary.json": json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n"}
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        MC.write_long_csv(summary, args.out / "replicates.csv")
    _emit(args, payload, files)
    if args.out is not None:
        write_manifest(args, args.out, ["replicates.csv", "summary.json"])
    return 1 if summary.failed else 0


def cmd_constants(args) -> int:
    try:
        check_hurst(args.h)
    except ValueError as exc:
        raise UsageError(f"--h: {exc}") from None
    const = C.spectral_constants(args.h, args.kernel)
    rows = const.rows(args.k, args.scales or (1.0,))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "value"])
    for name, val in rows:
        w.writerow([name, repr(float(val))])
    print(buf.getvalue(), end="")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "constants.csv").write_text(buf.getvalue())
        write_manifest(args, args.out, ["constants.csv"])
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "test": cmd_test,
    "mc": cmd_mc,
    "constants": cmd_constants,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fbmstat {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"fbmstat {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
