"""Command-line entry point: ``sixdma run`` and ``sixdma summarize``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .experiment import (
    DEFAULT_SWEEP_VALUES,
    ConfigError,
    ExperimentConfig,
    dump_config,
    format_summary,
    load_config,
    read_results,
    run_experiment,
    summarize,
    write_diagnostics,
    write_results,
    write_summary,
    write_timings,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
THREADS_ENV = "SIXDMA_THREADS"

log = logging.getLogger("sixdma")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sixdma", description="6DMA statistical channel estimation experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a seeded pilot-length or SNR sweep")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="TOML experiment file")
    src.add_argument("--default", action="store_true", help="use the built-in default setup")
    r.add_argument("--seed", type=int, help="override master_seed")
    r.add_argument("--trials", type=int, help="override the number of trials")
    r.add_argument("--sweep", choices=("pilot", "snr"), help="override the sweep axis")
    r.add_argument("--out", type=Path, help="output directory (default: config 'output')")
    r.add_argument("--threads", type=int, help=f"worker processes (env {THREADS_ENV} also works)")
    r.add_argument("--verbose", action="store_true", help="log progress and write per-sweep objectives")
    r.add_argument("--figures", action="store_true", help="also write PNG NMSE plots")

    s = sub.add_parser("summarize", help="aggregate a results CSV")
    s.add_argument("--in", dest="infile", type=Path, required=True)
    s.add_argument("--out", type=Path, help="summary CSV path (default: next to the input)")
    s.add_argument("--figures", action="store_true", help="also write a PNG NMSE plot")

    sub.add_parser("config", help="print the default configuration as TOML")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig() if args.default else load_config(args.config)
    over = {}
    if args.seed is not None:
        over["master_seed"] = args.seed
    if args.trials is not None:
        over["trials"] = args.trials
    if args.sweep is not None and args.sweep != cfg.sweep:
        over["sweep"] = args.sweep
        over["sweep_values"] = DEFAULT_SWEEP_VALUES[args.sweep]
    if args.out is not None:
        over["output"] = str(args.out)
    threads = args.threads
    if threads is None and os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}: not an integer: {os.environ[THREADS_ENV]!r}") from None
    if threads is not None:
        over["threads"] = threads
    return replace(cfg, **over) if over else cfg


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(cfg))
    log.info("running %d trial(s) over %s=%s with %d worker(s)", cfg.trials, cfg.sweep,
             list(cfg.sweep_values), cfg.threads)
    diag = [] if args.verbose else None
    rows = run_experiment(cfg, verbose=args.verbose, diagnostics=diag)
    write_results(rows, cfg.sweep, out / "results.csv")
    write_timings(rows, out / "timings.csv")
    if diag is not None:
        write_diagnostics(diag, out / "diagnostics.csv")
    summary = summarize(rows)
    write_summary(summary, cfg.sweep, out / "summary.csv")
    sys.stdout.write(format_summary(summary, cfg.sweep))
    if args.figures:
        from .report import plot_summary
        plot_summary(summary, cfg.sweep, out / f"nmse_{cfg.sweep}.png")
    n_err = sum(1 for r in rows if r.error)
    if n_err:
        log.warning("%d of %d rows failed; see the error column", n_err, len(rows))
    return EXIT_OK


def cmd_summarize(args) -> int:
    try:
        sweep, rows = read_results(args.infile)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.infile}: {exc}") from None
    if not rows:
        raise ConfigError(f"{args.infile}: no result rows")
    summary = summarize(rows)
    out = args.out or args.infile.with_name("summary.csv")
    write_summary(summary, sweep, out)
    sys.stdout.write(format_summary(summary, sweep))
    if args.figures:
        from .report import plot_summary
        plot_summary(summary, sweep, out.with_suffix(".png"))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "summarize":
            return cmd_summarize(args)
        sys.stdout.write(dump_config(ExperimentConfig()))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
