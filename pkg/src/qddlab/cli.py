"""``qddlab`` command line: pulse schedules, sweeps, scheme comparisons, order checks."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import jsonschema

from . import analysis, engine
from . import hpmath as hm
from . import sequences as sq

SCHEMA_REVISION = "1"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

_DECIMAL = {"type": "string", "pattern": r"^\+?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?$"}
_ORDER = {"type": "integer", "minimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scheme": {"enum": list(engine.SCHEMES)},
        "m": {"oneOf": [_ORDER, {"type": "null"}]},
        "n": {"oneOf": [_ORDER, {"type": "array", "items": _ORDER, "minItems": 1}]},
        "tau": _DECIMAL,
        "J": _DECIMAL,
        "beta": _DECIMAL,
        "bath_qubits": {"type": "integer", "minimum": 2},
        "realizations": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "digits": {"type": "integer", "minimum": 20},
        "axis": {"enum": ["X", "Y", "Z"]},
        "sequence_file": {"type": "string"},
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["variable", "grid"],
            "properties": {
                "variable": {"enum": list(engine.SWEEP_VARIABLES)},
                "grid": {"oneOf": [
                    {"type": "array", "minItems": 1, "items": {"oneOf": [_DECIMAL, _ORDER]}},
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["start", "stop"],
                        "properties": {
                            "start": _DECIMAL,
                            "stop": _DECIMAL,
                            "per_decade": {"type": "integer", "minimum": 1},
                        },
                    },
                ]},
            },
        },
        "compare": {
            "type": "object",
            "minProperties": 1,
            "propertyNames": {"enum": ["free", "pdd", "cdd", "cudd", "udd", "qdd"]},
            "additionalProperties": {"type": "array", "items": _ORDER, "minItems": 1},
        },
    },
}

DEFAULT_ORDER_CHECK = {
    "beta": "1e-8",
    "realizations": 10,
    "sweep": {"variable": "J", "grid": {"start": "1e-7", "stop": "1e-5", "per_decade": 7}},
}


class UsageError(Exception):
    """Bad flags or configuration; exit code 2."""


# -- configuration -------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    validate_config(doc, str(path))
    return doc


def validate_config(doc: dict, source: str = "config") -> None:
    """Raise :class:`UsageError` naming the JSON path of the first violation."""
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise UsageError(f"{source}: {err.json_path}: {err.message}")


def expand_grid(spec) -> tuple:
    if isinstance(spec, dict):
        return engine.log_grid(spec["start"], spec["stop"], spec.get("per_decade", 7))
    return tuple(str(v) for v in spec)


def build_configs(doc: dict, args) -> list:
    """One :class:`engine.ExperimentConfig` per requested order ``n``.

    Precision comes from ``--digits``, then the config, then the environment.
    """
    base = {k: doc[k] for k in ("scheme", "m", "tau", "J", "beta", "bath_qubits",
                                 "realizations", "seed", "digits", "axis", "sequence_file") if k in doc}
    for flag, key in (("scheme", "scheme"), ("m", "m"), ("seed", "seed"), ("digits", "digits"),
                      ("axis", "axis"), ("sequence", "sequence_file")):
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    if base.get("sequence_file") and "scheme" not in base:
        base["scheme"] = "external-file"
    if "sweep" in doc:
        base["sweep_variable"] = doc["sweep"]["variable"]
        base["sweep_grid"] = expand_grid(doc["sweep"]["grid"])
    orders = doc.get("n", 1)
    if getattr(args, "n", None) is not None:
        orders = args.n
    orders = orders if isinstance(orders, list) else [orders]
    try:
        with hm.working_precision(base.get("digits")):
            return [engine.ExperimentConfig(n=n, **base) for n in orders]
    except engine.ConfigError as exc:
        raise UsageError(str(exc)) from None


def config_echo(cfg: engine.ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["sweep_grid"] = list(cfg.sweep_grid)
    return out


# -- outputs --------------------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, configs: list, outputs: list, started: float,
                   extra: dict | None = None) -> Path:
    """Everything needed to reproduce the run; the only file with timestamps."""
    manifest = {
        "schema_revision": SCHEMA_REVISION,
        "command": command,
        "argv": sys.argv[1:],
        "seed": configs[0].seed if configs else None,
        "configs": [config_echo(c) for c in configs],
        "outputs": [str(p) for p in outputs],
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "duration_seconds": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    path = out / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


_AXIS_LABEL = {"J": "log10(J tau)", "beta": "log10(beta tau)", "n": "n"}


def sweep_plot_script(csv_files: list, labels: list, cfg: engine.ExperimentConfig, image: str) -> str:
    """Gnuplot script: log10 mean D against the swept parameter with max-deviation bars."""
    var = cfg.sweep_variable
    tau = float(cfg.tau)
    lines = [
        'set datafile separator ","',
        "set terminal pngcairo size 900,650",
        f'set output "{image}"',
        f'set xlabel "{_AXIS_LABEL[var]}"',
        'set ylabel "log10(mean D)"',
        "set key outside right",
        "set grid",
        f"tau = {tau!r}",
        "lo(m, d) = d < m ? log10(m - d) : log10(m) - 3",
        "hi(m, d) = log10(m + d)",
    ]
    if var == "J":
        x = "(log10($1*tau))"
        lines.append(f"set arrow from {_log(cfg.beta, tau)}, graph 0 to {_log(cfg.beta, tau)}, graph 1 nohead dashtype 3")
    elif var == "beta":
        x = "(log10($1*tau))"
        lines.append(f"set arrow from {_log(cfg.J, tau)}, graph 0 to {_log(cfg.J, tau)}, graph 1 nohead dashtype 3")
    else:
        x = "1"
    series = [f'"{f}" skip 1 using {x}:3:(lo($2,$4)):(hi($2,$4)) with yerrorlines title "{t}"'
              for f, t in zip(csv_files, labels)]
    lines.append("plot " + ", \\\n     ".join(series))
    return "\n".join(lines) + "\n"


def _log(value: str, tau: float) -> str:
    return repr(hm.log10(hm.hp(value) * hm.hp(repr(tau))))


def compare_plot_script(csv_file: str, schemes: list, image: str) -> str:
    lines = [
        'set datafile separator ","',
        "set terminal pngcairo size 900,650",
        f'set output "{image}"',
        'set xlabel "log10(pulse count)"',
        'set ylabel "log10(mean D)"',
        "set key outside right",
        "set grid",
        "lo(m, d) = d < m ? log10(m - d) : log10(m) - 3",
        "hi(m, d) = log10(m + d)",
    ]
    series = [f'"{csv_file}" skip 1 using (strcol(1) eq "{s}" ? log10($3) : NaN):6:(lo($5,$7)):(hi($5,$7)) '
              f'with yerrorlines title "{s}"' for s in schemes]
    lines.append("plot " + ", \\\n     ".join(series))
    return "\n".join(lines) + "\n"


# -- subcommands ---------------------------------------------------------------------

def cmd_sequence(args) -> int:
    scheme = args.scheme or "qdd"
    n = 1 if args.n is None else args.n
    cfg_kwargs = dict(scheme=scheme, n=n, m=args.m, axis=args.axis or "X")
    if scheme == "external-file" or args.sequence:
        cfg_kwargs.update(scheme="external-file", sequence_file=args.sequence)
    try:
        cfg = engine.ExperimentConfig(**cfg_kwargs)
    except engine.ConfigError as exc:
        raise UsageError(str(exc)) from None
    T = hm.hp(args.T)
    if not T > 0:
        raise UsageError("-T must be positive")
    seq = engine.build_sequence(cfg)
    text = sq.schedule_text(seq)
    total = seq.total_duration
    slots = seq.interval_count
    summary = [
        f"scheme: {seq.label or scheme}",
        f"pulses: {slots} ({seq.pulse_count} non-identity)",
        f"intervals: {slots}",
        f"total normalized time: {hm.to_decimal(total, 15)}",
        f"minimum interval tau at T={hm.to_decimal(T, 15)}: {hm.to_decimal(T / total, 15)}",
        f"convergence needs lambda * tau < {hm.to_decimal(1 / total, 15)}",
    ]
    # lambda * total * tau < 1  <=>  1/tau > lambda * total
    rate = sq.min_pulse_rate(n, 1) if scheme == "qdd" and cfg.outer_order == n else total
    summary.append(f"minimum pulse rate: {hm.to_decimal(rate, 15)} * lambda")
    if args.out:
        out = _out_dir(args)
        path = out / f"sequence_{scheme}_m{cfg.outer_order}_n{n}.csv"
        path.write_text(text)
        write_manifest(out, "sequence", [cfg], [path], args._started, {"T": str(args.T)})
        print(f"wrote {path}")
        print("\n".join(summary))
    else:
        sys.stdout.write(text)
        print("\n".join(summary), file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = load_config(args.config)
    configs = build_configs(doc, args)
    if configs[0].sweep_variable is None:
        raise UsageError(f"{args.config}: $.sweep: a sweep needs 'sweep' with variable and grid")
    out = _out_dir(args)
    files, labels, outputs = [], [], []
    for cfg in configs:
        result = engine.run_experiment(cfg, args.jobs)
        name = f"sweep_{cfg.scheme}_{cfg.sweep_variable}_n{cfg.n}.csv"
        result.write_csv(out / name)
        files.append(name)
        labels.append(result.label)
        outputs.append(out / name)
        flagged = sum(not p.converged for p in result.points)
        note = f" ({flagged} points outside the convergence region)" if flagged else ""
        print(f"{result.label}: {len(result.points)} points -> {out / name}{note}")
    script = out / "sweep.gp"
    script.write_text(sweep_plot_script(files, labels, configs[0], "sweep.png"))
    outputs.append(script)
    write_manifest(out, "sweep", configs, outputs, args._started)
    return EXIT_OK


COMPARE_HEADER = ["scheme", "n", "pulses", "nonidentity_pulses", "mean_D", "log10_mean_D",
                  "max_deviation", "converged"]


def cmd_compare(args) -> int:
    doc = load_config(args.config)
    doc = {"J": "1e-6", "beta": "1e-6", **doc}
    plan = doc.pop("compare", None)
    if plan is None:
        scheme = args.scheme or doc.get("scheme", "qdd")
        orders = doc.get("n", [0, 1, 2, 3, 4])
        plan = {scheme: orders if isinstance(orders, list) else [orders]}
    doc.pop("sweep", None)
    doc.pop("n", None)
    rows_cfg = []
    for scheme, orders in plan.items():
        for n in orders:
            sub = argparse.Namespace(**{**vars(args), "scheme": scheme, "n": n})
            rows_cfg.append(build_configs(doc, sub)[0])
    raw = engine.run_points(rows_cfg, args.jobs)
    out = _out_dir(args)
    path = out / "compare.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        count = rows_cfg[0].realizations
        writer.writerow(COMPARE_HEADER + [f"realization_{r}" for r in range(count)])
        for cfg, rows in zip(rows_cfg, raw):
            seq = engine.build_sequence(cfg)
            point = engine.SweepPoint(None, [d for d, _ in rows], all(c for _, c in rows))
            writer.writerow([cfg.scheme, cfg.n, seq.interval_count, seq.pulse_count,
                             engine._fmt(point.mean), engine._fmt_log(point.mean),
                             engine._fmt(point.max_deviation), "true" if point.converged else "false"]
                            + [engine._fmt(d) for d in point.distances])
            print(f"{cfg.scheme:>5} n={cfg.n:<3} pulses={seq.interval_count:<5} "
                  f"log10(mean D)={point.log10_mean:.3f}")
    script = out / "compare.gp"
    script.write_text(compare_plot_script("compare.csv", list(plan), "compare.png"))
    write_manifest(out, "compare", rows_cfg, [path, script], args._started)
    return EXIT_OK


def cmd_check_order(args) -> int:
    doc = dict(DEFAULT_ORDER_CHECK)
    if args.config:
        doc.update(load_config(args.config))
    if args.sequence:
        sq.load_sequence(args.sequence)  # parse errors surface with line numbers
    if not args.sequence and not doc.get("sequence_file") and args.scheme is None and "scheme" not in doc:
        raise UsageError("check-order needs --sequence FILE, --scheme NAME or a config naming one")
    validate_config(doc, args.config or "check-order defaults")
    cfg = build_configs(doc, args)[0]
    try:
        estimate = analysis.estimate_suppression_order(cfg, jobs=args.jobs)
    except analysis.RegimeBoundaryError as exc:
        raise UsageError(f"refusing fit: {exc}") from None
    report = {"source": args.sequence or cfg.scheme, **estimate.to_dict()}
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        out = _out_dir(args)
        path = out / "order_report.json"
        path.write_text(text)
        write_manifest(out, "check-order", [cfg], [path], args._started)
    sys.stdout.write(text)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config JSON")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides config)")
    common.add_argument("--digits", type=int, metavar="N", help="working precision in decimal digits")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="concurrent realizations")
    common.add_argument("--scheme", choices=engine.SCHEMES, metavar="NAME",
                        help="one of: " + ", ".join(engine.SCHEMES))
    common.add_argument("-m", type=int, metavar="ORDER", help="outer order (qdd)")
    common.add_argument("-n", type=int, metavar="ORDER", help="order")
    common.add_argument("-T", default="1", metavar="TIME", help="total sequence time")
    common.add_argument("--axis", choices=["X", "Y", "Z"], help="pulse axis for udd")
    common.add_argument("--sequence", metavar="CSV", help="pulse schedule CSV (time,axis)")

    parser = _Parser(prog="qddlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("sequence", parents=[common], help="write a pulse schedule CSV").set_defaults(func=cmd_sequence)
    sub.add_parser("sweep", parents=[common], help="parameter sweep from a config").set_defaults(func=cmd_sweep)
    sub.add_parser("compare", parents=[common], help="compare schemes at fixed coupling").set_defaults(func=cmd_compare)
    sub.add_parser("check-order", parents=[common], help="estimate a sequence's suppression order").set_defaults(
        func=cmd_check_order)
    return parser


def main(argv=None) -> int:
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
        args._started = started
        if args.command in ("sweep", "compare") and not args.config:
            raise UsageError(f"{args.command} needs --config PATH")
        if args.command != "sequence" and not args.out and args.command != "check-order":
            args.out = "qddlab_output"
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        if args.digits is not None and args.digits < 20:
            raise UsageError("--digits must be at least 20")
        with hm.working_precision(args.digits):
            return args.func(args)
    except UsageError as exc:
        print(f"qddlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except sq.ScheduleFormatError as exc:
        print(f"qddlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (engine.ConfigError, analysis.AnalysisError, FileNotFoundError) as exc:
        print(f"qddlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, ValueError) as exc:
        print(f"qddlab: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
