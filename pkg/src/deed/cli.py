"""Command-line interface.

    deed init [PATH]                    scaffold a config file
    deed split CONFIG --run-dir DIR     validate corpus + write the splits
    deed collect --run-dir DIR          next iteration's error collection
    deed revise --run-dir DIR           revision phase for pending errors
    deed train --run-dir DIR            training phase; completes the iteration
    deed run CONFIG --run-dir DIR [--iterations N]
    deed run --resume DIR
    deed eval --run-dir DIR [--model-ref R] [--n N] [--ks 1,5,10] [--repeats R]
    deed report PATH [PATH ...]         compare eval reports

Exits 0 on success, 1 on a pipeline error (tagged with the failing
phase), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, scaffold_config
from .errors import DeedError
from .evaluator import EvalReport, render_report_table
from .pipeline import Pipeline

log = logging.getLogger(__name__)


def _cmd_init(args) -> int:
    path = Path(args.path)
    if path.exists() and not args.force:
        raise DeedError(f"{path} already exists (use --force to overwrite)")
    path.write_text(scaffold_config().dumps(), encoding="utf-8")
    print(f"wrote config scaffold to {path}")
    return 0


def _cmd_split(args) -> int:
    cfg = RunConfig.load(args.config)
    pipeline = Pipeline.prepare(cfg, args.run_dir)
    manifest = pipeline.manifest
    print(
        f"split {len(pipeline.problems)} problems: "
        f"{len(manifest.train_ids)} train / {len(manifest.test_ids)} test, "
        f"{len(manifest.revise_seed_ids)} revise-seed / {len(manifest.adapt_ids)} adapt"
    )
    return 0


def _cmd_collect(args) -> int:
    count = Pipeline.resume(args.run_dir).step_collect()
    print(f"collected {count} error records")
    return 0


def _cmd_revise(args) -> int:
    count = Pipeline.resume(args.run_dir).step_revise()
    print(f"accepted {count} revisions")
    return 0


def _cmd_train(args) -> int:
    stats = Pipeline.resume(args.run_dir).step_train()
    if stats.trained:
        print(
            f"iteration {stats.iteration}: trained {stats.base_model_ref} -> "
            f"{stats.model_ref} (loss {stats.final_loss:.6f})"
        )
    else:
        print(f"iteration {stats.iteration}: no new revised codes, training skipped")
    return 0


def _cmd_run(args) -> int:
    if args.resume:
        if args.config or args.iterations is not None:
            raise DeedError("--resume takes no config or --iterations override")
        pipeline = Pipeline.resume(args.resume)
    else:
        if not args.config:
            raise DeedError("a CONFIG file is required unless --resume is given")
        if not args.run_dir:
            raise DeedError("--run-dir is required unless --resume is given")
        cfg = RunConfig.load(args.config)
        if args.iterations is not None:
            cfg.max_iterations = args.iterations
        pipeline = Pipeline.prepare(cfg, args.run_dir)
    state = pipeline.run()
    for stats in state.history:
        loss = "-" if stats.final_loss is None else f"{stats.final_loss:.6f}"
        print(
            f"iteration {stats.iteration}: errors={stats.n_errors} "
            f"revisions={stats.n_revisions} cumulative={stats.cumulative_revisions} "
            f"loss={loss} model={stats.model_ref}"
        )
    print(f"finished after {state.iteration} iteration(s); model: {state.current_model_ref}")
    return 0


def _cmd_eval(args) -> int:
    pipeline = Pipeline.resume(args.run_dir)
    ks = [int(k) for k in args.ks.split(",")] if args.ks else None
    report = pipeline.evaluate(
        model_ref=args.model_ref, n=args.n, ks=ks, repeats=args.repeats
    )
    print(render_report_table([report]))
    print(f"report written to {pipeline.run_dir / 'eval' / 'report'}")
    return 0


def _cmd_report(args) -> int:
    reports = []
    for raw in args.paths:
        path = Path(raw)
        if path.is_dir():
            path = path / "eval" / "report"
        if not path.exists():
            raise DeedError(f"no eval report at {path}")
        reports.append(EvalReport.load(path))
    print(render_report_table(reports))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a config scaffold")
    p.add_argument("path", nargs="?", default="deed.json")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("split", help="validate the corpus and write the splits")
    p.add_argument("config")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=_cmd_split)

    for name, func, help_text in (
        ("collect", _cmd_collect, "collect error records for the next iteration"),
        ("revise", _cmd_revise, "revise the pending error records"),
        ("train", _cmd_train, "train on the replay union; completes the iteration"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--run-dir", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("run", help="run the full adaptation loop")
    p.add_argument("config", nargs="?")
    p.add_argument("--run-dir")
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", metavar="DIR")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="evaluate a model on the test split")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--model-ref")
    p.add_argument("--n", type=int)
    p.add_argument("--ks")
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render a comparison table of eval reports")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DeedError as exc:
        phase = getattr(exc, "phase", None) or args.command
        print(f"deed {phase}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
