"""Command-line interface.

Subcommands::

    sscontagion validate POLYGONS EVENTS
    sscontagion run POLYGONS EVENTS --out-dir OUT [--seed N] [--sims N] ...
    sscontagion synth --out-dir OUT [--communities N] [--events N] [--process P]

Exit codes: 0 success, 1 validation failure, 2 runtime or stage failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .domain import Timeline
from .io import SchemaError, ingest, write_dataset
from .nullmodels import DEFAULT_SIMS, MIN_SIMS
from .pipeline import THRESHOLD_MODES, RunConfig, input_hashes, run_pipeline
from .synth import PROCESSES, synth_region

SEED_ENV = "SSCONTAGION_SEED"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("sscontagion")


def resolve_seed(flag: int | None, env=None) -> int:
    """The ``--seed`` flag wins; otherwise ``SSCONTAGION_SEED``; otherwise 0."""
    if flag is not None:
        return flag
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV, "").strip()
    if raw:
        try:
            return int(raw, 0)
        except ValueError:
            raise SystemExit(f"{SEED_ENV} must be an integer, got {raw!r}")
    return 0


def _years(text: str) -> Timeline:
    try:
        return Timeline(tuple(int(y) for y in text.split(",")))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _sims(text: str) -> int:
    n = int(text)
    if n < MIN_SIMS:
        raise argparse.ArgumentTypeError(f"need at least {MIN_SIMS} simulations")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sscontagion", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def inputs(sp):
        sp.add_argument("polygons", type=Path, help="FeatureCollection of community polygons")
        sp.add_argument("events", type=Path, help="FeatureCollection of adoption events")
        sp.add_argument("--years", type=_years, default=Timeline(),
                        help="comma-separated snapshot years (default: %(default)s)")

    v = sub.add_parser("validate", help="check inputs and report violations")
    inputs(v)

    r = sub.add_parser("run", help="run the full analysis")
    inputs(r)
    r.add_argument("--out-dir", type=Path, required=True)
    r.add_argument("--seed", type=int, default=None,
                   help=f"master seed (default: ${SEED_ENV} or 0)")
    r.add_argument("--sims", type=_sims, default=DEFAULT_SIMS, help="null simulations per year pair")
    r.add_argument("--grid-step", type=float, default=10.0, help="distance grid step in meters")
    r.add_argument("--threshold-mode", choices=THRESHOLD_MODES, default="period")
    r.add_argument("--jobs", type=int, default=1, help="worker processes")

    s = sub.add_parser("synth", help="write a synthetic dataset in the input schema")
    s.add_argument("--out-dir", type=Path, required=True)
    s.add_argument("--communities", type=int, default=20)
    s.add_argument("--events", type=int, default=300, help="events per community")
    s.add_argument("--process", choices=PROCESSES, default="contagion")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--p", type=float, default=0.9, help="contagion probability")
    s.add_argument("--kernel-range", type=float, default=20.0)
    s.add_argument("--sigma", type=float, default=15.0, help="Thomas cluster scale")
    return p


def _report(dataset) -> None:
    rep = dataset.report
    for cid, msg in rep.errors.items():
        log.error("community %s: %s", cid, msg)
    for v in rep.violations:
        log.warning("community %s: %s%s", v.community_id, v.kind,
                    f" (event {v.event_id})" if v.event_id else f" ({v.detail})")
    for i, cid in dataset.orphans:
        log.warning("event feature %d references unknown community %s", i, cid)
    log.info("%d communities, %d analysable, %d excluded", len(dataset.communities),
             len(dataset.usable), len(rep.excluded))


def cmd_validate(args) -> int:
    dataset = ingest(args.polygons, args.events, args.years)
    _report(dataset)
    clean = dataset.report.ok and not dataset.report.violations and not dataset.orphans
    print(f"communities={len(dataset.communities)} usable={len(dataset.usable)} "
          f"violations={len(dataset.report.violations)} errors={len(dataset.report.errors)} "
          f"orphans={len(dataset.orphans)}")
    return EXIT_OK if clean else EXIT_VALIDATION


def cmd_run(args) -> int:
    dataset = ingest(args.polygons, args.events, args.years)
    _report(dataset)
    if not dataset.report.ok:
        return EXIT_VALIDATION
    cfg = RunConfig(seed=resolve_seed(args.seed), n_sims=args.sims, grid_step=args.grid_step,
                    threshold_mode=args.threshold_mode, jobs=args.jobs, timeline=args.years)
    manifest = run_pipeline(dataset, cfg, args.out_dir,
                            input_hashes=input_hashes(args.polygons, args.events),
                            input_paths=[args.polygons, args.events])
    print(f"run_id={manifest['run_id']} status={manifest['status']} out={args.out_dir}")
    return EXIT_OK if manifest["status"] == "ok" else EXIT_RUNTIME


def cmd_synth(args) -> int:
    params = {"contagion": {"p": args.p, "kernel_range": args.kernel_range},
              "thomas": {"sigma": args.sigma}, "cstr": {}}[args.process]
    comms = synth_region(args.communities, events=args.events, process=args.process,
                         seed=resolve_seed(args.seed), **params)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_dataset(comms, args.out_dir / "polygons.geojson", args.out_dir / "events.geojson")
    print(f"wrote {len(comms)} communities to {args.out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"validate": cmd_validate, "run": cmd_run, "synth": cmd_synth}[args.command](args)
    except SchemaError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - map to the runtime exit code
        log.exception("run failed: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
