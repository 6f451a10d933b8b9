"""Command-line entry points: ``run``, ``validate`` and ``bench``.

Exit statuses: 0 success, 1 a validation suite failed, 2 bad config,
3 numerical failure, 4 I/O error.
"""

import argparse
import dataclasses
import sys
from pathlib import Path

from . import _accel
from .errors import CkmpmError, ConfigError, OutputError

EXIT_OK, EXIT_SUITE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4


def _overrides(config, args):
    kw = {}
    for name in ("kernel", "transfer", "precision", "threads", "frames"):
        value = getattr(args, name, None)
        if value is not None:
            kw[name] = value
    if getattr(args, "deterministic", False):
        kw["deterministic"] = True
    if getattr(args, "threads", None) is not None and not args.deterministic:
        kw["deterministic"] = False
    if getattr(args, "no_snapshots", False):
        kw["snapshots"] = False
    if getattr(args, "binary", False):
        kw["binary"] = True
    return dataclasses.replace(config, **kw).validate() if kw else config


def snapshot_name(frame, binary=False):
    return f"frame_{frame:05d}.{'bin' if binary else 'txt'}"


def cmd_run(args, out=None):
    out = out or sys.stdout
    from .config import load_config
    from .io import DiagnosticsWriter, snapshot_of, write_snapshot
    from .sim import Simulation

    config = _overrides(load_config(args.config), args)
    outdir = Path(args.out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {outdir}: {exc}") from exc
    if config.threads > 1 and not config.deterministic:
        _accel.set_threads(config.threads)
    sim = Simulation(config)
    print(f"{config.name}: {len(sim.particles)} particles, {config.kernel} kernel, "
          f"{config.transfer}, {config.frames} frames -> {outdir}", file=out)

    with DiagnosticsWriter(outdir / "diagnostics.csv") as diag:
        def on_frame(s):
            if config.snapshots and s.frame % config.snapshot_every == 0:
                write_snapshot(outdir / snapshot_name(s.frame, config.binary),
                               snapshot_of(s.particles, s.frame, s.time, config.dx), config.binary)
            if not args.quiet:
                print(f"frame {s.frame:5d}  t={s.time:.4f}s  steps={s.step_count}", file=out)

        sim.run(config.frames, on_frame=on_frame, on_step=lambda s, d: diag.write(d))
    return EXIT_OK


def cmd_validate(args, out=None):
    out = out or sys.stdout
    from .validation import format_table, run_suites

    results = run_suites(fast_sine=args.fast_sine, single_grid=args.single_grid)
    print(format_table(results), file=out)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed", file=out)
    return EXIT_SUITE if failed else EXIT_OK


def cmd_bench(args, out=None):
    out = out or sys.stdout
    from .bench import run_backends, run_bench
    from .config import load_config

    config = _overrides(load_config(args.config), args)
    report = run_bench(config, steps=args.steps, warmup=args.warmup,
                       transfer=args.transfer or "pic")
    print(report.format(), file=out)
    if report.speedup_transfer < 1.2:
        print("warning: transfer speedup below the 1.2x target", file=out)
    if args.backends:
        times = run_backends(config)
        print(f"numba {1e3 * times['numba']:.1f} ms/step, numpy {1e3 * times['numpy']:.1f} ms/step "
              f"({times['numpy'] / times['numba']:.1f}x)", file=out)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="ckmpm", description="Compact-kernel MPM on a dual grid")
    sub = ap.add_subparsers(dest="command", required=True)

    def scene_opts(p):
        p.add_argument("config", help="scene TOML file, or the name of a bundled config")
        p.add_argument("--kernel", choices=("compact", "quadratic"))
        p.add_argument("--transfer", choices=("pic", "apic", "mls"))
        p.add_argument("--precision", choices=("double", "single"))
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded, bit-reproducible execution")
        p.add_argument("--threads", type=int, help="worker threads for the transfer phases")

    run = sub.add_parser("run", help="simulate a scene, writing snapshots and diagnostics")
    scene_opts(run)
    run.add_argument("--out", default="out", help="output directory (default: ./out)")
    run.add_argument("--frames", type=int, help="override the frame count")
    run.add_argument("--no-snapshots", action="store_true", help="only write diagnostics.csv")
    run.add_argument("--binary", action="store_true", help="binary snapshots")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="run the self-check suites")
    val.add_argument("--fast-sine", action="store_true",
                     help="use a float32 per-node sine in the transfers (should fail)")
    val.add_argument("--single-grid", action="store_true",
                     help="drop one of the two grids (should fail)")
    val.set_defaults(func=cmd_validate)

    bench = sub.add_parser("bench", help="compact vs quadratic timing on one scene")
    scene_opts(bench)
    bench.add_argument("--steps", type=int, default=40)
    bench.add_argument("--warmup", type=int, default=3)
    bench.add_argument("--backends", action="store_true", help="also time numba against numpy")
    bench.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CkmpmError as exc:
        step = getattr(exc, "step", None)
        where = f" at step {step}" if step is not None else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
