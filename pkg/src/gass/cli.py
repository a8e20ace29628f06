"""
``gass`` command line: mix -> oracle-irm -> eval, plus loss inspection,
toy training and the gradient check.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path


from . import __version__
from .audio_io import AudioError, load_manifest, read_wav, write_wav
from .dsp import SilentSourceError, StftConfig
from .metrics import ALL_METRICS, EvalItem, aggregate_report, evaluate_at_native_rate
from .mixgen import (DEFAULT_GAIN_RANGES_DB, MixConfig, MixError, MixtureSpec, generate_dataset,
                     list_mix_dirs, load_stem_set, read_config_file)
from .oracle import irm_separate
from .pit import NUM_SOURCES, LossConfig, pit_loss

log = logging.getLogger("gass")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _gain_table() -> str:
    names = {"speech_fg": "speech foreground", "event_fg": "sound event foreground",
             "event_bg": "sound event background", "music_fg": "music foreground",
             "music_bg": "music background"}
    rows = [f"  {k:<9} {names[k]:<23} [{lo:g}, {hi:g}] dB"
            for k, (lo, hi) in DEFAULT_GAIN_RANGES_DB.items()]
    return "default gain ranges (Beta(2,1) draw within range):\n" + "\n".join(rows)


MIX_DEFAULTS = (
    "defaults: task probabilities speech 0.25 / sound_event 0.25 / music 0.5; "
    "K uniform in {1,2,3,4}; 8.0 s mixes at 48000 Hz; at most 1 background per "
    "background type; 10 silent-fragment retries.\n\n" + _gain_table()
)


def _common(top_level: bool) -> argparse.ArgumentParser:
    # subcommands must not reset a global flag given before the subcommand name
    kw = {} if top_level else {"default": argparse.SUPPRESS}
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="TOML/JSON file with [mix], [stft], [train] tables",
                   **kw)
    g.add_argument("--seed", type=int, help="global random seed (default 0)", **kw)
    g.add_argument("--workers", type=int, help="worker processes (default 1)", **kw)
    g.add_argument("--quiet", action="store_true", help="only log errors", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common(False)
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="gass", description=__doc__, formatter_class=fmt,
                     parents=[_common(True)])
    parser.add_argument("--version", action="version", version=f"gass {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("mix", parents=[common], formatter_class=fmt, epilog=MIX_DEFAULTS,
                       help="render a mixture dataset from a source manifest")
    p.add_argument("--manifest", required=True, type=Path, help="JSONL source manifest")
    p.add_argument("--out", required=True, type=Path, help="output dataset directory")
    p.add_argument("--num", required=True, type=int, help="number of mixes")
    p.add_argument("--sample-rate", type=int, help="mix sample rate in Hz (default 48000)")
    p.add_argument("--duration", type=float, help="mix duration in s (default 8.0)")
    p.add_argument("--skip-bad", action="store_true",
                   help="skip malformed manifest lines instead of aborting")

    p = sub.add_parser("oracle-irm", parents=[common], formatter_class=fmt,
                       help="ideal-ratio-mask oracle separation of a generated dataset",
                       epilog="defaults: Hann STFT, 32 ms frames, 8 ms hop at the dataset rate; "
                              "writes <out>/<mix_id>/est1..4.wav")
    p.add_argument("--mix-dir", required=True, type=Path, help="dataset from `gass mix`")
    p.add_argument("--out", required=True, type=Path, help="estimate directory")
    p.add_argument("--frame-ms", type=float, default=32.0, help="frame length in ms (default 32)")
    p.add_argument("--hop-ms", type=float, default=8.0, help="hop in ms (default 8)")

    p = sub.add_parser("eval", parents=[common], formatter_class=fmt,
                       help="score estimates against a reference dataset",
                       epilog="active targets: mean energy > -80 dB; an estimate is nonzero "
                              "above (softest active target - 20 dB); numbers use 4 decimals")
    p.add_argument("--ref-dir", required=True, type=Path, help="reference dataset")
    p.add_argument("--est-dir", required=True, type=Path, help="<mix_id>/est1..4.wav tree")
    p.add_argument("--native-rate", type=int,
                   help="rate to score at; estimates are resampled to it (default: reference rate)")
    p.add_argument("--out", type=Path, help="report JSONL (default: stdout only)")
    p.add_argument("--metrics", default="sisdr,counting",
                   help=f"comma list from {','.join(ALL_METRICS)} (default sisdr,counting)")

    p = sub.add_parser("loss", parents=[common], formatter_class=fmt,
                       help="PIT log-MSE loss of one mix's estimates (JSON to stdout)")
    p.add_argument("--ref-dir", required=True, type=Path, help="one mix directory")
    p.add_argument("--est-dir", required=True, type=Path, help="directory with est1..4.wav")
    p.add_argument("--tau-db", type=float, default=-30.0, help="loss threshold in dB (default -30)")

    p = sub.add_parser("train-toy", parents=[common], formatter_class=fmt,
                       help="train the linear mask separator on a generated dataset",
                       epilog="defaults: lr 1e-3, momentum 0.9, batch 4, tau -30 dB, "
                              "32 ms / 8 ms STFT at the dataset rate")
    p.add_argument("--data", required=True, type=Path, help="dataset from `gass mix`")
    p.add_argument("--steps", type=int, help="optimization steps (default 2000)")
    p.add_argument("--out", required=True, type=Path, help="model.bin path")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-3)")
    p.add_argument("--batch-size", type=int, help="batch size (default 4)")
    p.add_argument("--momentum", type=float, help="momentum (default 0.9)")

    p = sub.add_parser("grad-check", parents=[common], formatter_class=fmt,
                       help="finite-difference check of the toy model gradients")
    p.add_argument("--instances", type=int, default=10, help="random instances (default 10)")
    p.add_argument("--params", type=int, default=50, help="coordinates per instance (default 50)")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error (default 1e-4)")

    p = sub.add_parser("inspect", parents=[common], formatter_class=fmt, epilog=_gain_table(),
                       help="pretty-print and validate a mix meta.json")
    p.add_argument("meta", type=Path, help="meta.json of one mix")

    p = sub.add_parser("fixtures", parents=[common], formatter_class=fmt,
                       help="write the synthetic 25-clip source corpus and its manifest")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    return parser


def _setup_logging(quiet: bool) -> None:
    level = "ERROR" if quiet else os.environ.get("GASS_LOG", "info").upper()
    level = {"WARN": "WARNING"}.get(level, level)
    if level not in ("ERROR", "WARNING", "INFO", "DEBUG"):
        level = "INFO"
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _file_config(args) -> dict:
    return read_config_file(args.config) if args.config else {}


def _seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _workers(args, cfg) -> int:
    return args.workers if args.workers is not None else int(cfg.get("workers", 1))


def cmd_mix(args) -> int:
    cfg = _file_config(args)
    mix_cfg = MixConfig.from_mapping(cfg.get("mix", {}))
    overrides = {}
    if args.sample_rate is not None:
        overrides["sample_rate_hz"] = args.sample_rate
    if args.duration is not None:
        overrides["duration_s"] = args.duration
    mix_cfg = MixConfig.from_mapping(overrides, base=mix_cfg)
    catalog = load_manifest(args.manifest, skip_bad=args.skip_bad)
    report = generate_dataset(catalog, mix_cfg, args.num, _seed(args, cfg), args.out,
                              _workers(args, cfg))
    print(json.dumps({k: report[k] for k in ("num_mixes", "seed", "task_counts", "k_counts")}))
    return EXIT_OK


def _stft_for(rate, args, cfg) -> StftConfig:
    stft_cfg = cfg.get("stft", {})
    if "frame_len" in stft_cfg:
        return StftConfig(int(stft_cfg["frame_len"]), int(stft_cfg.get("hop", stft_cfg["frame_len"] // 4)))
    return StftConfig.for_rate(rate, args.frame_ms, args.hop_ms)


def cmd_oracle_irm(args) -> int:
    cfg = _file_config(args)
    dirs = list_mix_dirs(args.mix_dir)
    if not dirs:
        raise MixError(f"no mix directories under {args.mix_dir}")
    for d in dirs:
        ss = load_stem_set(d)
        ests = irm_separate(ss.mixture, ss.stems, _stft_for(ss.mixture.sample_rate_hz, args, cfg))
        out = args.out / d.name
        out.mkdir(parents=True, exist_ok=True)
        for i, e in enumerate(ests, 1):
            write_wav(out / f"est{i}.wav", e)
        log.debug("separated %s", d.name)
    log.info("wrote IRM estimates for %d mixes to %s", len(dirs), args.out)
    return EXIT_OK


def _eval_one(job) -> dict:
    mix_dir, est_dir, native_rate, metrics = job
    mixture = read_wav(Path(mix_dir) / "mixture.wav")
    targets = [read_wav(Path(mix_dir) / f"stem{i}.wav") for i in range(1, NUM_SOURCES + 1)]
    ests = [read_wav(Path(est_dir) / f"est{i}.wav") for i in range(1, NUM_SOURCES + 1)]
    item = EvalItem(Path(mix_dir).name, targets, ests, mixture, native_rate)
    return evaluate_at_native_rate(item, metrics)


def cmd_eval(args) -> int:
    cfg = _file_config(args)
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    bad = set(metrics) - set(ALL_METRICS)
    if bad or not metrics:
        raise UsageError(f"--metrics must be a comma list from {', '.join(ALL_METRICS)}")
    dirs = list_mix_dirs(args.ref_dir)
    if not dirs:
        raise MixError(f"no mix directories under {args.ref_dir}")
    jobs = []
    for d in dirs:
        est = args.est_dir / d.name
        if not est.is_dir():
            raise MixError(f"missing estimates for {d.name} in {args.est_dir}")
        jobs.append((str(d), str(est), args.native_rate, metrics))
    workers = _workers(args, cfg)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_eval_one, jobs))
    else:
        records = [_eval_one(j) for j in jobs]
    report = aggregate_report(records)
    lines = report.lines()
    if args.out:
        with open(args.out, "w") as fh:
            for line in lines:
                fh.write(json.dumps(line) + "\n")
    print(json.dumps(lines[-1]))
    return EXIT_OK


def cmd_loss(args) -> int:
    mixture = read_wav(args.ref_dir / "mixture.wav")
    targets = [read_wav(args.ref_dir / f"stem{i}.wav") for i in range(1, NUM_SOURCES + 1)]
    ests = [read_wav(args.est_dir / f"est{i}.wav") for i in range(1, NUM_SOURCES + 1)]
    res = pit_loss(targets, ests, mixture, LossConfig(args.tau_db))
    print(json.dumps(res.to_dict()))
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .toy import ToyModel, TrainConfig, save_model, train

    cfg = _file_config(args)
    values = {f.name: v for f in fields(TrainConfig)
              if (v := cfg.get("train", {}).get(f.name)) is not None}
    for flag, name in (("steps", "steps"), ("lr", "learning_rate"), ("batch_size", "batch_size"),
                       ("momentum", "momentum"), ("seed", "seed")):
        if getattr(args, flag) is not None:
            values[name] = getattr(args, flag)
    values.setdefault("seed", int(cfg.get("seed", 0)))
    tcfg = TrainConfig(**values)
    dirs = list_mix_dirs(args.data)
    if not dirs:
        raise MixError(f"no mix directories under {args.data}")
    rate = read_wav(dirs[0] / "mixture.wav").sample_rate_hz
    model = ToyModel.init(rate, seed=tcfg.seed)
    result = train(model, args.data, tcfg)
    save_model(args.out, result.model)
    w = tcfg.log_every
    print(json.dumps({"steps": tcfg.steps, "initial_smoothed_loss": float(result.losses[:w].mean()),
                      "final_smoothed_loss": float(result.losses[-w:].mean()),
                      "model": str(args.out)}))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .toy import gradient_check

    cfg = _file_config(args)
    errs = gradient_check(_seed(args, cfg), args.instances, args.params)
    worst = max(errs)
    ok = worst <= args.tol
    print(json.dumps({"max_relative_error": worst, "per_instance": errs, "tolerance": args.tol,
                      "passed": ok}))
    return EXIT_OK if ok else EXIT_DATA


def cmd_inspect(args) -> int:
    cfg = _file_config(args)
    meta = json.loads(args.meta.read_text())
    spec = MixtureSpec.from_dict(meta)
    problems = spec.validate(MixConfig.from_mapping(cfg.get("mix", {})))
    print(json.dumps({**meta, "valid": not problems, "problems": problems}, indent=2))
    return EXIT_DATA if problems else EXIT_OK


def cmd_fixtures(args) -> int:
    from .fixtures import make_fixture_corpus

    cfg = _file_config(args)
    manifest = make_fixture_corpus(args.out, _seed(args, cfg))
    print(json.dumps({"manifest": str(manifest)}))
    return EXIT_OK


COMMANDS = {"mix": cmd_mix, "oracle-irm": cmd_oracle_irm, "eval": cmd_eval, "loss": cmd_loss,
            "train-toy": cmd_train_toy, "grad-check": cmd_grad_check, "inspect": cmd_inspect,
            "fixtures": cmd_fixtures}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.quiet)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gass: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AudioError, MixError, SilentSourceError, ValueError, KeyError, OSError,
            FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
