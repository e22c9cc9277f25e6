"""Command line entry point: ``omh run | sweep | evaluate | export``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

import os

# single-threaded BLAS keeps runs bit-for-bit reproducible; must precede numpy
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import hierarchy as hier
from . import optim
from .errors import InvalidConfig, OMHError
from .linalg import format_real
from .synthdata import generate, load_dataset
from .transport import plan_entropy, write_report

log = logging.getLogger("omh")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

SUMMARY_COLUMNS = ["run", "probe_coarse_accuracy", "probe_coarse_miou", "mean_plan_entropy",
                   "plans_converged"]


def run_experiment(cfg, out_dir=None):
    """Train one configuration and write every artifact. Returns a summary dict."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.format(include_sweep=False))
    ds = generate(cfg.synth_params(), cfg.dataset_seed)
    state, history, metrics = optim.train(cfg, ds)
    run_id = cfg.hash()
    optim.write_loss_log(out / "train_log.csv", history, cfg.depth)
    optim.write_metrics(out / "metrics.csv", run_id, metrics)
    optim.save_checkpoint(state, cfg, out)
    hier.export_heatmaps(state.stack, out / "heatmaps")
    write_report(out / "plans.csv", state.stack.plans)
    for i, p in enumerate(state.stack.plans):
        if p.not_converged:
            log.warning("plan %d->%d stopped at violation %s after %d iterations", i, i + 1,
                        format_real(p.marginal_violation), p.iterations_run)
    final = optim.evaluate_levels(state, ds)
    probe = [r for r in final if r["level"] == "probe" and r["labels"] == "coarse"]
    entropies = [plan_entropy(p) for p in state.stack.plans]
    return {
        "run": str(out),
        "probe_coarse_accuracy": float(probe[0]["accuracy"]) if probe else float("nan"),
        "probe_coarse_miou": float(probe[0]["miou"]) if probe else float("nan"),
        "mean_plan_entropy": float(np.mean(entropies)) if entropies else float("nan"),
        "plans_converged": all(not p.not_converged for p in state.stack.plans),
    }


def _run_job(args):
    text, out_dir = args
    return run_experiment(config_mod.parse(text), out_dir)


def _value_label(v):
    return config_mod._format_scalar(v)


def sweep_jobs(cfg, axes):
    """Expand sweep axes into ``(config, output dir)`` pairs.

    Every run lands in a sibling directory under ``cfg.output_dir`` named by
    its swept values, e.g. ``ot_temperature=0.05``.
    """
    if not axes:
        raise InvalidConfig("sweep needs at least one axis (--axis, --preset or sweep = ...)")
    names = [k for k, _ in axes]
    if len(set(names)) != len(names):
        raise InvalidConfig(f"a field is swept twice: {names}")
    root = Path(cfg.output_dir)
    jobs = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        values = dict(zip(names, combo))
        run_cfg = cfg.with_values(sweep=[], **values)
        run_cfg.validate()
        label = "_".join(f"{k}={_value_label(v)}" for k, v in values.items())
        jobs.append((run_cfg, root / label))
    return jobs


def write_summary(path, rows):
    lines = [",".join(SUMMARY_COLUMNS)]
    for r in rows:
        lines.append(",".join(format_real(r[c]) if isinstance(r[c], float) else str(r[c])
                              for c in SUMMARY_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# verbs

def cmd_run(args, cfg):
    summary = run_experiment(cfg)
    log.info("run finished: %s", summary)
    return EXIT_OK


def cmd_sweep(args, cfg):
    axes = list(cfg.sweep)
    for name in args.preset or []:
        if name not in config_mod.PRESETS:
            raise InvalidConfig(f"unknown preset {name!r}; choose from {sorted(config_mod.PRESETS)}")
        axes.extend(config_mod.PRESETS[name])
    axes.extend(config_mod.parse_axis(a) for a in args.axis or [])
    jobs = sweep_jobs(cfg, axes)
    payload = [(c.format(include_sweep=False), str(d)) for c, d in jobs]
    workers = max(1, min(args.jobs or os.cpu_count() or 1, len(payload)))
    if workers == 1:
        rows = [_run_job(p) for p in payload]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_job, payload))
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    write_summary(Path(cfg.output_dir) / "sweep_summary.csv", rows)
    log.info("sweep finished: %d runs", len(rows))
    return EXIT_OK


def _dataset_for(cfg, data_dir):
    if data_dir is None:
        return generate(cfg.synth_params(), cfg.dataset_seed)
    return load_dataset(data_dir)


def cmd_evaluate(args, cfg):
    state, ck_cfg = optim.load_checkpoint(args.checkpoint)
    ds = _dataset_for(ck_cfg, args.data)
    rows = optim.evaluate_levels(state, ds)
    out = Path(args.out or Path(args.checkpoint) / "eval_metrics.csv")
    optim.write_metrics(out, ck_cfg.hash(), rows)
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_export(args, cfg):
    state, ck_cfg = optim.load_checkpoint(args.checkpoint)
    out = Path(args.out or Path(args.checkpoint) / "heatmaps")
    files = hier.export_heatmaps(state.stack, out)
    write_report(out / "plans.csv", state.stack.plans)
    if args.dataset:
        generate(ck_cfg.synth_params(), ck_cfg.dataset_seed).dump(out / "dataset")
    log.info("wrote %d heatmap files to %s", len(files), out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="omh", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field (repeatable)")

    sp = sub.add_parser("run", help="train one configuration and write its artifacts")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a grid of configurations")
    common(sp)
    sp.add_argument("--axis", action="append", metavar="FIELD=V1,V2",
                    help="swept field and its values (repeatable)")
    sp.add_argument("--preset", action="append", help="named ablation: "
                    + ", ".join(sorted(config_mod.PRESETS)))
    sp.add_argument("--jobs", type=int, help="worker processes (default: CPU count)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("evaluate", help="score a checkpoint against planted labels")
    sp.add_argument("checkpoint", help="run directory written by 'omh run'")
    sp.add_argument("--data", help="dataset directory (default: regenerate from the manifest)")
    sp.add_argument("--out", help="metrics CSV path")
    sp.set_defaults(func=cmd_evaluate, config=None, set=[])

    sp = sub.add_parser("export", help="write affinity/plan heatmaps from a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--dataset", action="store_true", help="also dump the synthetic dataset")
    sp.set_defaults(func=cmd_export, config=None, set=[])
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; those are configuration errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = config_mod.load(args.config, args.set)
        return args.func(args, cfg)
    except InvalidConfig as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (OMHError, OSError, ValueError, ArithmeticError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
