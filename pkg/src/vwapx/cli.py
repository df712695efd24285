"""Command line entry point: ``vwapx {synth,ingest,train,eval,selftest}``."""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import shutil
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import RunConfig
from .evaluation import evaluate, format_summary, write_report
from .synth import synth_series
from .trainer import (LEARNED_MODES, MarketData, build_models, load_models, train)

log = logging.getLogger("vwapx")

CLI_MODES = ("tul", "hul", "hu-ppo", "ppo", "naive", "oracle")


class CommandError(Exception):
    pass


@contextlib.contextmanager
def cleanup_on_failure(*dirs):
    """Remove whatever a failed command created under ``dirs``. An interrupt
    (Ctrl-C) keeps them so an interrupted training run can resume."""
    before = {}
    for d in dirs:
        d = Path(d)
        before[d] = set(d.rglob("*")) if d.exists() else None
    try:
        yield
    except Exception:
        for d, old in before.items():
            if old is None:
                shutil.rmtree(d, ignore_errors=True)
                continue
            for p in sorted(set(d.rglob("*")) - old, key=lambda p: len(p.parts), reverse=True):
                if p.is_dir():
                    shutil.rmtree(p, ignore_errors=True)
                else:
                    p.unlink(missing_ok=True)
        raise


def _load_data(cfg: RunConfig) -> MarketData:
    path = Path(cfg.data_dir)
    if not path.is_dir():
        raise CommandError(f"data directory {path} not found (run 'vwapx synth' or 'vwapx ingest')")
    return MarketData.load(path)


def _split(cfg: RunConfig, data: MarketData):
    if cfg.train_days + cfg.test_days > len(data):
        raise CommandError(f"{cfg.data_dir} has {len(data)} days; config needs "
                           f"{cfg.train_days} train + {cfg.test_days} test")
    return data.split(cfg.train_days, cfg.test_days)


def cmd_synth(cfg: RunConfig) -> int:
    with cleanup_on_failure(cfg.data_dir):
        market = synth_series(cfg.generator, cfg.n_days, cfg.seed)
        MarketData.from_synthetic(market).write(cfg.data_dir)
    print(f"wrote {cfg.n_days} synthetic tapes to {cfg.data_dir}")
    return 0


def cmd_ingest(cfg: RunConfig, source) -> int:
    """Validate tape files in ``source`` and copy them in canonical form to ``data_dir``."""
    src = Path(source)
    if not src.is_dir():
        raise CommandError(f"ingest source {src} is not a directory")
    data = MarketData.load(src)
    with cleanup_on_failure(cfg.data_dir):
        data.write(cfg.data_dir)
    print(f"ingested {len(data)} tapes into {cfg.data_dir}")
    return 0


def cmd_train(cfg: RunConfig, resume: bool = True) -> int:
    data = _load_data(cfg)
    train_data, _ = _split(cfg, data)
    tcfg = cfg.train_config()
    out = Path(cfg.out)
    with cleanup_on_failure(out):
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json())
        train(tcfg, train_data, out, resume=resume)
    print(f"trained {tcfg.mode} for {tcfg.outer_iterations} outer iterations; "
          f"model at {out / 'model.ckpt'}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    train_data, test = _split(cfg, data)
    if cfg.test_days == 0:
        raise CommandError("no test days configured")
    if cfg.mode in LEARNED_MODES:
        ck = cfg.checkpoint_path
        if not ck.exists():
            raise CommandError(f"checkpoint {ck} not found (train first or set 'checkpoint')")
        models, tcfg, _ = load_models(ck)
        if tcfg.mode != cfg.mode:
            raise CommandError(f"checkpoint {ck} holds a {tcfg.mode} model, not {cfg.mode}")
    else:
        tcfg = cfg.train_config()
        models = build_models(tcfg, train_data.ratios)
    report = Path(cfg.out) / "report"
    with cleanup_on_failure(report):
        summary = evaluate(models, tcfg, test, seed=cfg.seed, greedy=cfg.greedy)
        write_report(summary, report, cfg.bin_width_bps)
    print(format_summary(summary))
    print(f"report in {report}")
    return 0


def cmd_selftest() -> int:
    from .selftest import run_all
    ok = run_all()
    print("selftest passed" if ok else "selftest FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=CLI_MODES)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    p = argparse.ArgumentParser(prog="vwapx", description="Dual-level VWAP execution toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate synthetic tapes")
    s.add_argument("--data-dir")
    s.add_argument("--days", type=int, help="number of tapes")
    s = sub.add_parser("ingest", parents=[common], help="validate and import tape files")
    s.add_argument("source", help="directory of tape CSVs (plus optional daily_volumes.csv)")
    s.add_argument("--data-dir")
    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data-dir")
    s.add_argument("--iterations", type=int, help="outer iterations")
    s.add_argument("--no-resume", action="store_true", help="ignore existing checkpoints")
    s = sub.add_parser("eval", parents=[common], help="evaluate on test days and write the report")
    s.add_argument("--data-dir")
    s.add_argument("--checkpoint")
    s.add_argument("--greedy", action="store_true", help="argmax actions instead of sampling")
    sub.add_parser("selftest", parents=[common], help="run the invariant suites")
    return p


def _configure_logging():
    raw = os.environ.get("VWAPX_LOG", "WARNING").strip().upper()
    level = int(raw) if raw.isdigit() else logging.getLevelName(raw)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    flags = {"seed": args.seed, "mode": args.mode, "out": args.out,
             "data_dir": getattr(args, "data_dir", None),
             "n_days": getattr(args, "days", None),
             "checkpoint": getattr(args, "checkpoint", None)}
    if getattr(args, "greedy", False):
        flags["greedy"] = True
    cfg = cfg.override(**flags)
    if getattr(args, "iterations", None) is not None:
        cfg = cfg.override(train={**cfg.train, "outer_iterations": args.iterations})
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    if args.threads is not None and args.threads < 1:
        print("vwapx: error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = resolve_config(args)
        with threadpool_limits(limits=args.threads):
            if args.command == "synth":
                return cmd_synth(cfg)
            if args.command == "ingest":
                return cmd_ingest(cfg, args.source)
            if args.command == "train":
                return cmd_train(cfg, resume=not args.no_resume)
            if args.command == "eval":
                return cmd_eval(cfg)
            return cmd_selftest()
    except (CommandError, ValueError, FileNotFoundError, OSError) as e:
        print(f"vwapx {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
