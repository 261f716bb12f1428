"""Command-line entry point. Exit status: 0 success, 2 configuration error, 3 stage failure."""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import dataclasses
import json
import logging
import multiprocessing
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RolloutConfig, load_config
from .errors import HoiError

log = logging.getLogger("hoisynth")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _print(doc) -> None:
    sys.stdout.write(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _config(args) -> RolloutConfig:
    if args.config is None:
        raise ConfigError(f"{args.command} needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "text", None):
        cfg = dataclasses.replace(cfg, text=args.text)
    return cfg


def item_seeds(seed: int, n: int) -> list[int]:
    """Independent per-item seeds spawned from one global seed; stable for any worker count."""
    return [int(c.generate_state(1, np.uint64)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


# --- subcommands ------------------------------------------------------------------


def cmd_plan(args) -> int:
    from .pipeline import load_assets, make_planner

    cfg = _config(args)
    assets = load_assets(cfg)
    planner = make_planner(cfg.planner, assets.db.categories, assets.rig.part_names)
    if not cfg.text.strip():
        raise ConfigError("no text given (set text in the config or pass --text)")
    _print(planner(cfg.text).to_record())
    return EXIT_OK


def cmd_retrieve(args) -> int:
    from .body import body_sdf, skin
    from .pipeline import StageError, load_assets, make_planner
    from .retrieval import FitSettings, retrieve_initial_state
    from .worldmodel import transform_to_record

    cfg = _config(args)
    assets = load_assets(cfg)
    planner = make_planner(cfg.planner, assets.db.categories, assets.rig.part_names)
    try:
        plan = planner(cfg.text)
    except HoiError as exc:
        raise StageError("plan", exc) from exc
    try:
        a1 = assets.provider.initial_action(plan, cfg.seed)
        first = a1[0]
        chosen, results = retrieve_initial_state(
            assets.db, plan.contact_parts, plan.object_category, skin(assets.rig, first),
            body_sdf(assets.rig, first, cfg.retrieval.body_sdf_cell), np.random.default_rng([cfg.seed, 1]),
            settings=FitSettings(cfg.retrieval.iterations, cfg.retrieval.step), mode=cfg.retrieval.mode)
    except HoiError as exc:
        raise StageError("retrieve", exc) from exc
    _print({"plan": plan.to_record(), "object": transform_to_record(chosen.object_state),
            "source_id": chosen.source_id, "e_fit": chosen.e_fit, "e_cont": chosen.e_cont, "e_pene": chosen.e_pene,
            "candidates": [{"source_id": r.source_id, "score": r.score, "e_pene": r.e_pene} for r in results]})
    return EXIT_OK


def cmd_rollout(args) -> int:
    from .pipeline import rollout_to_dir

    cfg = _config(args)
    if args.output:
        cfg = dataclasses.replace(cfg, output=Path(args.output))
    if cfg.output is None:
        raise ConfigError("no output directory (set output in the config or pass --output)")
    seq, out = rollout_to_dir(cfg)
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    _print({"output": str(out), "frames": len(seq), "category": seq.category,
            **{k: metrics[k] for k in ("pene", "cmd", "trans_err_mm", "rot_err_rad")}})
    return EXIT_OK


def cmd_train(args) -> int:
    from .fixtures import default_rig
    from .worldmodel import save_net, train_dynamics
    from .worldmodel.corpus import load_corpus, synthetic_samples

    cfg = _config(args)
    dyn = cfg.dynamics.settings
    history, future = (dyn.initial_history, dyn.initial_future) if args.initial else (dyn.history, dyn.future)
    train = cfg.train
    settings = train.settings
    if args.epochs is not None:
        settings = dataclasses.replace(settings, epochs=args.epochs)
    settings = dataclasses.replace(settings, seed=cfg.seed)
    output = Path(args.output) if args.output else train.output
    if output is None:
        raise ConfigError("no output path for the trained net (train.output or --output)")
    if train.corpus is not None:
        samples = load_corpus(train.corpus, history, future, dyn)
    else:
        n = args.samples if args.samples is not None else train.samples
        samples = synthetic_samples(n, history, future, cfg.seed, default_rig(), dyn)
    log.info("training on %d samples (%d history, %d forecast frames)", len(samples), history, future)
    net, loss, _ = train_dynamics(samples, history, future, settings)
    output.parent.mkdir(parents=True, exist_ok=True)
    save_net(net, output)
    _print({"output": str(output), "samples": len(samples), "epochs": settings.epochs, "final_loss": loss,
            "history": history, "future": future})
    return EXIT_OK


def _eval_item(cfg: RolloutConfig, index: int, out: Path) -> dict:
    from .pipeline import StageError, rollout_to_dir

    try:
        seq, _ = rollout_to_dir(cfg, out)
    except StageError as err:
        return {"index": index, "text": cfg.text, "seed": cfg.seed, "status": "failed", "stage": err.stage,
                "error": str(err.cause)}
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    return {"index": index, "text": cfg.text, "seed": cfg.seed, "status": "ok", "frames": len(seq),
            **{k: metrics[k] for k in ("pene", "cmd", "trans_err_mm", "rot_err_rad")}}


def _mean(rows, key):
    vals = [r[key] for r in rows if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def cmd_eval(args) -> int:
    from .pipeline import make_planner
    from .planning import load_labeled

    cfg = _config(args)
    out = Path(args.output) if args.output else (cfg.output / "eval" if cfg.output else None)
    if out is None:
        raise ConfigError("no output directory for eval")
    summary = {"seed": cfg.seed}
    if cfg.eval.planner_labels is not None or args.planner:
        from .body import load_rig
        from .planning import eval_planner
        from .retrieval import load_db

        db, rig = load_db(cfg.db), load_rig(cfg.rig)
        planner = make_planner(cfg.planner, db.categories, rig.part_names)
        summary["planner"] = eval_planner(planner, load_labeled(cfg.eval.planner_labels)).to_record()
    items = cfg.eval.items
    if items and not args.planner:
        seeds = item_seeds(cfg.seed, len(items))
        jobs = [(cfg.with_text(it.text, it.gt).with_seed(s), i, out / f"item_{i:03d}")
                for i, (it, s) in enumerate(zip(items, seeds))]
        workers = args.workers or cfg.eval.workers
        if workers == 1 or len(jobs) == 1:
            rows = [_eval_item(*job) for job in jobs]
        else:
            ctx = multiprocessing.get_context("spawn")
            with cf.ProcessPoolExecutor(max_workers=min(workers, len(jobs)), mp_context=ctx) as pool:
                rows = list(pool.map(_eval_item, *zip(*jobs)))
        ok = [r for r in rows if r["status"] == "ok"]
        summary["items"] = rows
        summary["mean"] = {k: _mean(ok, k) for k in ("pene", "cmd", "trans_err_mm", "rot_err_rad")}
        summary["failed"] = len(rows) - len(ok)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _print(summary)
    return EXIT_STAGE if summary.get("failed") else EXIT_OK


def cmd_export(args) -> int:
    from .body import load_rig
    from .export import export_sequence, load_sequence
    from .retrieval import load_db

    cfg = _config(args)
    seq = load_sequence(args.input)
    rig, db = load_rig(cfg.rig), load_db(cfg.db)
    gt_path = args.gt or cfg.gt
    gt = load_sequence(gt_path) if gt_path else None
    meshes = args.meshes or cfg.export_meshes
    out = export_sequence(seq, args.output, rig, db.template(seq.category), meshes, gt)
    _print({"output": str(out), "frames": len(seq), "meshes": meshes})
    return EXIT_OK


def cmd_init_fixture(args) -> int:
    from .demo import write_demo

    path = write_demo(args.directory)
    _print({"config": str(path)})
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hoisynth", description="Text-guided human-object interaction synthesis.")
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed (unsigned 64-bit)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("plan", help="turn the description into a plan")
    s.add_argument("--text")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("retrieve", help="plan, first action and initial object pose")
    s.add_argument("--text")
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("rollout", help="generate and export one sequence")
    s.add_argument("--text")
    s.add_argument("--output", help="export directory (overrides the config)")
    s.set_defaults(func=cmd_rollout)

    s = sub.add_parser("train-dynamics", help="train the learned world model")
    s.add_argument("--samples", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--output")
    s.add_argument("--initial", action="store_true", help="train the single-frame-history model for the first step")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="roll out every configured item in parallel and summarize metrics")
    s.add_argument("--workers", type=int)
    s.add_argument("--output")
    s.add_argument("--planner", action="store_true", help="only score the planner on the labeled texts")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export", help="re-export a sequence with metrics and optional OBJ frames")
    s.add_argument("input", help="exported directory or sequence JSON-lines file")
    s.add_argument("output")
    s.add_argument("--meshes", action="store_true")
    s.add_argument("--gt", help="ground-truth sequence for contact and pose metrics")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("init-fixture", help="write the bundled demo inputs and config")
    s.add_argument("directory")
    s.set_defaults(func=cmd_init_fixture)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except HoiError as exc:
        persisted = getattr(exc, "persisted", None)
        sys.stderr.write(f"error: {exc}\n" + (f"partial output kept in {persisted}\n" if persisted else ""))
        log.debug("failure detail", exc_info=True)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
