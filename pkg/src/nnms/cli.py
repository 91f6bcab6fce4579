"""Command line: ``nnms {info,datagen-stats,train,eval,complexity}``.

Every subcommand also reads ``--config FILE``, a flat ``key = value`` file
whose keys are the long flag names (``snr-lo`` or ``snr_lo``); flags given on
the command line win.  Exit status: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import re
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bench import EvalConfig, admm_reference, complexity_count, emit_results, monte_carlo_eval
from .codes import resolve_code
from .decode import DecoderWeights, Kind, WeightScheme, softplus
from .learn import PRESETS, LossConfig, TrainingDiverged, TrainSettings, train
from .traindata import MixtureSpec, initial_ber, mixture_moments

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _points(text: str) -> int:
    # 0 stands for the continuous limit
    if text.lower() in ("continuous", "inf", "0"):
        return 0
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("need a positive count or 'continuous'")
    return n


def _add_code(p):
    p.add_argument("--code", required=True,
                   help="bundled code name (eg1023, gallager96) or alist/JSON path")


def _add_snr(p, lo=None, hi=None, points: str | None = "5"):
    p.add_argument("--snr-lo", type=float, default=lo, help="lowest Eb/N0 in dB")
    p.add_argument("--snr-hi", type=float, default=hi, help="highest Eb/N0 in dB")
    p.add_argument("--snr-points", type=_points, default=None if points is None else _points(points),
                   help="number of SNR points, or 'continuous'")


def _add_common(p):
    p.add_argument("--config", help="flat key=value file with flag defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="decoding processes")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="nnms", description="Neural normalized min-sum LDPC decoding toolkit")
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("info", help="summarize a parity-check matrix")
    _add_code(p)
    _add_common(p)

    p = sub.add_parser("datagen-stats", help="moments and initial BER of the training data")
    _add_code(p)
    _add_snr(p)
    _add_common(p)

    p = sub.add_parser("train", help="train a weighted min-sum decoder")
    _add_code(p)
    p.add_argument("--preset", choices=sorted(PRESETS), help="published training settings for a code (A, B or C)")
    p.add_argument("--scheme", choices=[k.value for k in Kind if k.trainable], default="unnms")
    p.add_argument("--t-max", type=int)
    _add_snr(p, points=None)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--batches", type=int, help="distinct minibatches per epoch")
    p.add_argument("--epochs", type=int)
    p.add_argument("--blended", action="store_true",
                   help="sample from the SNR points instead of the fitted Gaussian")
    p.add_argument("--plateau-window", type=int, default=200)
    p.add_argument("--checkpoint-every", type=int, default=2000)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--rho", type=float, default=0.2)
    p.add_argument("--kappa", type=float, default=100.0)
    _add_common(p)

    p = sub.add_parser("eval", help="Monte-Carlo BER/FER sweep")
    _add_code(p)
    p.add_argument("--weights", action="append", default=[],
                   help="trained weight file (repeat to compare)")
    p.add_argument("--scheme", action="append", default=[],
                   choices=[k.value for k in Kind if not k.trainable],
                   help="fixed decoder to include (repeatable)")
    p.add_argument("--factor", type=float, help="NMS normalization or OMS offset")
    p.add_argument("--t-max", type=int, help="iteration budget")
    _add_snr(p, points="1")
    p.add_argument("--min-frame-errors", type=int, default=100)
    p.add_argument("--max-frames", type=int, default=10 ** 7)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("complexity", help="operation counts per iteration")
    _add_code(p)
    p.add_argument("--t-max", type=int, default=10)
    _add_common(p)
    return top


# ---------------------------------------------------------------------------
# config files


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Turn ``--config`` file entries into subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    path = Path(known.config)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string("[run]\n" + path.read_text())
    cmd = next((a for a in argv if not a.startswith("-")), None)
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if cmd not in subs.choices:
        return
    sp = subs.choices[cmd]
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in cp["run"].items():
        dest = key.replace("-", "_")
        if dest not in actions or dest == "config":
            raise UsageError(f"unknown config key {key!r} for {cmd}")
        act = actions[dest]
        if isinstance(act, argparse._StoreTrueAction):
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(act, argparse._AppendAction):
            value = [v.strip() for v in raw.split(",") if v.strip()]
        else:
            value = act.type(raw.strip()) if act.type else raw.strip()
            if act.choices is not None and value not in act.choices:
                raise UsageError(f"config {key}: {value!r} is not one of {sorted(act.choices)}")
        defaults[dest] = value
    sp.set_defaults(**defaults)
    for dest in defaults:
        actions[dest].required = False


# ---------------------------------------------------------------------------
# commands


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def cmd_info(args) -> int:
    code = resolve_code(args.code)
    p = code.params
    g = code.graph
    dv = code.h.col_degrees()
    dc = code.h.row_degrees()

    def deg(d):
        return str(int(d[0])) if d.min() == d.max() else f"{d.min()}-{d.max()} (avg {d.mean():.3f})"

    print(f"code {code.name}")
    print(f"N={p.n} M={p.m} K={p.k} E={g.edge_count} dv={deg(dv)} dc={deg(dc)}")
    print(f"rank={code.rank} rate={p.k / p.n:.6f}")
    return 0


def _mixture(args, code) -> MixtureSpec:
    if args.snr_lo is None or args.snr_hi is None:
        raise UsageError("--snr-lo and --snr-hi are required")
    return MixtureSpec(args.snr_lo, args.snr_hi, args.snr_points or None, code.params)


def cmd_datagen_stats(args) -> int:
    code = resolve_code(args.code)
    if args.snr_lo is not None and args.snr_lo == args.snr_hi and not args.snr_points:
        raise UsageError("a single SNR needs a finite --snr-points")
    m = mixture_moments(_mixture(args, code))
    sys.stdout.write(_dumps({"mu_a": m.mu_a, "sigma2_a": m.sigma2_a, "initial_ber": initial_ber(m)}))
    return 0


def _train_settings(args) -> TrainSettings:
    base = PRESETS[args.preset] if args.preset else None

    def pick(name, fallback_attr):
        v = getattr(args, name)
        if v is not None:
            return v
        if base is None:
            raise UsageError(f"--{name.replace('_', '-')} is required without --preset")
        return getattr(base, fallback_attr)

    if args.snr_points is None:
        n_points = base.n_points if base is not None else 5
    else:
        n_points = args.snr_points or None
    return TrainSettings(pick("batches", "batches"), pick("batch_size", "batch_size"),
                         pick("epochs", "epochs"), pick("t_max", "t_max"),
                         pick("snr_lo", "snr_lo_db"), pick("snr_hi", "snr_hi_db"),
                         n_points, args.blended, plateau_window=args.plateau_window,
                         snapshot_every=args.checkpoint_every if args.checkpoint_every > 0 else 10 ** 12)


def cmd_train(args) -> int:
    code = resolve_code(args.code)
    settings = _train_settings(args)
    scheme = WeightScheme(Kind(args.scheme), settings.t_max)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    telemetry = open(out / "telemetry.jsonl", "w")

    def on_step(step, rec):
        telemetry.write(json.dumps(rec) + "\n")
        if (step + 1) % 100 == 0:
            telemetry.flush()
            print(f"step {step + 1}/{settings.total_steps} loss {rec['loss']:.4f} "
                  f"ber {rec['ber']:.5f} fer {rec['fer']:.3f}", file=sys.stderr)

    def on_snapshot(step, raw):
        # written as training goes, so an interrupted run keeps its checkpoints
        if 0 < step < settings.total_steps:
            DecoderWeights(scheme, raw).save(out / f"weights_step{step:06d}.json")

    status = 0
    try:
        report = train(code, scheme, settings, args.seed, LossConfig(args.rho, args.kappa),
                       on_step=on_step, on_snapshot=on_snapshot)
        weights = report.weights
        stopped = report.stopped
        steps = report.steps
        final_loss = report.loss[-1] if report.loss else None
    except TrainingDiverged as exc:
        weights = exc.weights
        stopped = f"diverged at step {exc.step}"
        steps = exc.step
        final_loss = None
        status = EXIT_RUNTIME
        print(f"nnms train: {exc}; last good weights kept", file=sys.stderr)
    finally:
        telemetry.close()
    weights.save(out / "weights.json")
    summary = {
        "code": code.name, "scheme": scheme.kind.value, "t_max": scheme.t_max,
        "settings": asdict(settings), "seed": args.seed, "steps": steps, "stopped": stopped,
        "final_loss": final_loss, "raw": weights.raw.tolist(),
        "effective": softplus(weights.raw).tolist(),
    }
    (out / "summary.json").write_text(_dumps(summary))
    return status


def _label(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.()+-]+", "_", text)


def cmd_eval(args) -> int:
    code = resolve_code(args.code)
    if args.snr_lo is None:
        raise UsageError("--snr-lo is required")
    hi = args.snr_lo if args.snr_hi is None else args.snr_hi
    n = 1 if args.snr_points is None else args.snr_points
    if n == 0:
        raise UsageError("evaluation needs a finite --snr-points")
    snrs = [args.snr_lo] if n == 1 else np.round(np.linspace(args.snr_lo, hi, n), 10).tolist()
    decoders = []
    for path in args.weights:
        w = DecoderWeights.load(path, code.graph)
        decoders.append((f"{Path(path).stem}-{w.scheme.label}", w))
    for kind in args.scheme:
        t = args.t_max
        if t is None:
            raise UsageError("--t-max is required for fixed decoders")
        factor = args.factor if Kind(kind) in (Kind.NMS, Kind.OMS) else None
        w = DecoderWeights.fixed(kind, t, factor)
        decoders.append((w.scheme.label, w))
    if not decoders:
        raise UsageError("give at least one --weights file or --scheme")
    cfg = EvalConfig(tuple(snrs), args.min_frame_errors, args.max_frames, args.t_max, args.seed,
                     workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seen = set()
    for label, w in decoders:
        label = _label(label)
        if label in seen:
            raise UsageError(f"two curves share the label {label}")
        seen.add(label)
        points = monte_carlo_eval(code, w, cfg, progress=lambda p, lab=label: print(
            f"{lab} {p.snr_db} dB: ber {p.ber:.3e} fer {p.fer:.3e} "
            f"({p.frame_errors} errors / {p.frames} frames)", file=sys.stderr))
        emit_results(points, args.format, out / f"{label}.{args.format}", label)
    return 0


def cmd_complexity(args) -> int:
    code = resolve_code(args.code)
    rows = [complexity_count(code, WeightScheme(k, args.t_max, 0.5 if k in (Kind.NMS, Kind.OMS) else None))
            for k in Kind]
    rows.append(admm_reference(code))
    sys.stdout.write(_dumps([asdict(r) for r in rows]))
    return 0


COMMANDS = {"info": cmd_info, "datagen-stats": cmd_datagen_stats, "train": cmd_train,
            "eval": cmd_eval, "complexity": cmd_complexity}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help, --version and usage errors
            return exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"nnms: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"nnms: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
