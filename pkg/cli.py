"""
Corredor de experimentos: train-blackbox, train-selector, evaluate, render-overlays, toy-oracle.

    python cli.py train-blackbox --config configs/mnist_3v8.yaml --out runs
    python cli.py train-selector --config configs/mnist_3v8.yaml --k 4 6 8
    python cli.py evaluate --config configs/mnist_3v8.yaml --set evaluation.max_instances=500
    python cli.py render-overlays --config configs/mnist_3v8.yaml --k 5 --seed 0
    python cli.py toy-oracle

Códigos de salida: 0 ok, 2 error de usuario/config, 3 falla numérica.
"""
from __future__ import annotations

import argparse
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import yaml
from pydantic import ValidationError

from blackbox import ClassifierModel, evaluate_accuracy, train_reference_cnn
from core.config import RunConfig, get_settings, load_run_config
from core.context import ExperimentContext, build_context
from core.errors import EXIT_OK, EXIT_NUMERIC, EXIT_USER, CausalXError, ConfigurationError
from core.logs import configure_logging
from core.paths import blackbox_checkpoint_path, blackbox_report_path, cell_dir, dataset_dir
from features.baselines import BASELINES, baseline_explanations
from features.metrics import evaluate_explanations
from features.patching import SubsetMask
from reports import write_json, write_loss_curve, write_masks
from selector import SelectorModel, explain_batch, train_selector
from services.checkpoints import load_checkpoint, save_checkpoint
from services.diagnostics import run_oracle_suite
from services.exec_summary import render_summary_text, write_summary
from ui.overlays import write_overlay
from utils.labels import make_class_labels

logger = logging.getLogger("causalx")

SELECTOR_FILE = "selector.ckpt"
REPORT_FILE = "report.json"
# elecciones no fijadas por el método; viajan en cada artefacto
DECISIONS = {
    "explanation_masks": "hard top-m at evaluation",
    "target_gradient": "stopped through F(X)",
    "saliency_gradients": "absolute, patch-averaged",
    "ice_target_class": "argmax F(x)",
    "seed_std": "selector retrained per seed",
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _selector_path(ctx: ExperimentContext, k: int, seed: int) -> Path:
    return cell_dir(ctx.out_dir, ctx.dataset_name, "causal", k, seed) / SELECTOR_FILE


def _load_blackbox(ctx: ExperimentContext) -> ClassifierModel:
    path = blackbox_checkpoint_path(ctx.out_dir)
    if not path.exists():
        raise ConfigurationError(f"black-box checkpoint missing: {path} (run train-blackbox first)")
    return load_checkpoint(path, input_shape=ctx.train.image_shape, kind="blackbox")


def _load_selector(ctx: ExperimentContext, k: int, seed: int) -> SelectorModel:
    path = _selector_path(ctx, k, seed)
    if not path.exists():
        raise ConfigurationError(f"selector checkpoint missing for k={k} seed={seed}: {path} (run train-selector)")
    selector = load_checkpoint(path, input_shape=ctx.train.image_shape, kind="selector")
    if selector.k != k or selector.grid != ctx.grid:
        raise ConfigurationError(f"{path}: trained for k={selector.k} on grid {selector.grid.grid_dims}")
    return selector


def _validation_source(cfg: RunConfig) -> str:
    ds = cfg.dataset
    official = ds.test_files if ds.format == "cifar" else (ds.test_images and ds.test_labels)
    return "official test split" if official else f"carve-out of train (val_fraction={ds.val_fraction})"


def _cell_echo(cfg: RunConfig, k: int, seed: int) -> dict:
    return {**cfg.echo(), "cell": {"k": k, "seed": seed}, "decisions": DECISIONS}


# ---------- subcomandos ----------

def cmd_train_blackbox(cfg: RunConfig, args: argparse.Namespace) -> int:
    ctx = build_context(cfg)
    started = _now()
    model = train_reference_cnn(ctx.train, cfg.blackbox)
    test_acc = evaluate_accuracy(model, ctx.validation)
    train_acc = evaluate_accuracy(model, ctx.train)
    ckpt = save_checkpoint(model, blackbox_checkpoint_path(ctx.out_dir), config=cfg.echo())
    id_to_label, _ = make_class_labels(ctx.train.class_names, ctx.train.class_ids)
    write_json(
        blackbox_report_path(ctx.out_dir),
        {
            "dataset": ctx.dataset_name,
            "checkpoint": str(ckpt),
            "classes": [id_to_label[i] for i in range(ctx.train.num_classes)],
            "n_train": len(ctx.train),
            "n_test": len(ctx.validation),
            "validation_source": _validation_source(cfg),
            "train_accuracy": train_acc,
            "test_accuracy": test_acc,
            "history": model.history,
            "config": cfg.echo(),
            "timestamps": {"started": started, "finished": _now()},
        },
    )
    logger.info("blackbox test_accuracy=%.4f -> %s", test_acc, ckpt)
    print(f"precisión en test: {test_acc:.4f}")
    return EXIT_OK


def cmd_train_selector(cfg: RunConfig, args: argparse.Namespace) -> int:
    ctx = build_context(cfg)
    for k in ctx.ks:
        ctx.check_k(k)
    blackbox = _load_blackbox(ctx)
    written = 0
    for k in ctx.ks:
        for seed in cfg.seeds:
            sel_cfg = cfg.selector.model_copy(update={"seed": seed})
            selector = train_selector(blackbox, ctx.train, ctx.grid, k, sel_cfg)
            path = _selector_path(ctx, k, seed)
            save_checkpoint(selector, path, config=_cell_echo(cfg, k, seed))
            write_loss_curve(selector.history, path.parent / "loss_curve.csv")
            written += 1
            logger.info("selector k=%d seed=%d -> %s", k, seed, path)
    print(f"checkpoints de selector escritos: {written}")
    return EXIT_OK


def _explanations(method: str, ctx: ExperimentContext, blackbox, images: torch.Tensor, k: int, seed: int) -> SubsetMask:
    batch = ctx.cfg.evaluation.batch_size
    if method == "causal":
        return explain_batch(_load_selector(ctx, k, seed), images, k, batch)
    return baseline_explanations(BASELINES[method], blackbox, images, ctx.grid, k, np.random.default_rng((seed, k)), batch)


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> int:
    ctx = build_context(cfg)
    for k in ctx.ks:
        ctx.check_k(k)
    blackbox = _load_blackbox(ctx)
    if "causal" in cfg.evaluation.methods:
        missing = [str(_selector_path(ctx, k, s)) for k in ctx.ks for s in cfg.seeds if not _selector_path(ctx, k, s).exists()]
        if missing:
            raise ConfigurationError(f"missing selector checkpoints: {', '.join(missing)}")

    val = ctx.validation.head(cfg.evaluation.max_instances)
    images = torch.from_numpy(np.array(val.images))
    for method in cfg.evaluation.methods:
        for k in ctx.ks:
            for seed in cfg.seeds:
                explanations = _explanations(method, ctx, blackbox, images, k, seed)
                echo = _cell_echo(cfg, k, seed)
                report = evaluate_explanations(
                    blackbox,
                    val,
                    explanations,
                    ctx.grid,
                    method=method,
                    dataset_name=ctx.dataset_name,
                    k=k,
                    seed=seed,
                    repeats=cfg.evaluation.repeats,
                    batch_size=cfg.evaluation.batch_size,
                    config=echo,
                )
                cell = cell_dir(ctx.out_dir, ctx.dataset_name, method, k, seed)
                write_json(cell / REPORT_FILE, report.model_dump(mode="json"))
                write_masks(cell / "masks.json", explanations, ctx.grid, method=method, k=k, seed=seed, config=echo)
                logger.info(
                    "%s k=%d seed=%d post_hoc=%.4f ace=%.4f", method, k, seed, report.post_hoc_accuracy, report.ace
                )

    csv_path, txt_path, summary = write_summary(dataset_dir(ctx.out_dir, ctx.dataset_name), ctx.dataset_name)
    logger.info("summary -> %s, %s", csv_path, txt_path)
    print(render_summary_text(summary, ctx.dataset_name))
    return EXIT_OK


def cmd_render_overlays(cfg: RunConfig, args: argparse.Namespace) -> int:
    ctx = build_context(cfg)
    n_examples = args.n_examples if args.n_examples is not None else cfg.overlays.n_examples
    if n_examples < 1:
        raise ConfigurationError("n_examples must be >= 1")
    val = ctx.validation
    rng = np.random.default_rng(cfg.overlays.seed)
    idx = np.sort(rng.choice(len(val), size=min(n_examples, len(val)), replace=False))
    images = torch.from_numpy(np.array(val.images[idx]))

    written = 0
    for k in ctx.ks:
        ctx.check_k(k)
        for seed in cfg.seeds:
            explanations = explain_batch(_load_selector(ctx, k, seed), images, k)
            out = cell_dir(ctx.out_dir, ctx.dataset_name, "causal", k, seed) / "overlays"
            echo = _cell_echo(cfg, k, seed)
            for j, i in enumerate(idx):
                write_overlay(
                    out / f"{j:03d}_idx{int(i)}.png",
                    val.images[i],
                    explanations[j],
                    ctx.grid,
                    cfg.overlays.scale,
                    metadata={**echo, "index": int(i), "label": int(val.labels[i])},
                )
                written += 1
            write_masks(out / "masks.json", explanations, ctx.grid, method="causal", k=k, seed=seed, config=echo)
            logger.info("overlays k=%d seed=%d -> %s", k, seed, out)
    print(f"overlays escritos: {written}")
    return EXIT_OK


def cmd_toy_oracle(cfg: RunConfig, args: argparse.Namespace) -> int:
    started = _now()
    report = run_oracle_suite(cfg.oracle)
    out = Path(cfg.out_dir) / "toy_oracle"
    report["config"] = cfg.echo()
    report["timestamps"] = {"started": started, "finished": _now()}
    write_json(out / REPORT_FILE, report)
    for w in report["warnings"]:
        logger.warning(w)
    if report["errors"]:
        write_json(out / "offending_joints.json", report["offending_joints"])
        for e in report["errors"]:
            logger.error(e)
        return EXIT_NUMERIC
    ident = report["checks"]["identity"]
    sel = report["checks"]["toy_selector"]
    print(f"identidad: {ident['agree']}/{ident['joints']}  selector de juguete: {sel['matches']}/{sel['joints']}")
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "train-blackbox": cmd_train_blackbox,
    "train-selector": cmd_train_selector,
    "evaluate": cmd_evaluate,
    "render-overlays": cmd_render_overlays,
    "toy-oracle": cmd_toy_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML de corrida (configs/*.yaml)")
    common.add_argument("--out", default=None, help="Directorio de salida (pisa out_dir)")
    common.add_argument("--seed", type=int, default=None, help="Una sola semilla (pisa seeds)")
    common.add_argument("--k", type=int, nargs="+", default=None, help="Uno o más tamaños de explicación")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override, p.ej. selector.epochs=2")
    common.add_argument("--log-level", default=None, help="debug | info | warning | error")

    ap = argparse.ArgumentParser(prog="causalx", description="Explicaciones causales por parches.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "render-overlays":
            p.add_argument("--n-examples", type=int, default=None)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    configure_logging(args.log_level or settings.LOG_LEVEL)
    if settings.NUM_THREADS > 0:
        torch.set_num_threads(settings.NUM_THREADS)
    try:
        cfg = load_run_config(args.config, args.set, out_dir=args.out, seed=args.seed, k=args.k)
        if "out_dir" not in cfg.model_fields_set:
            cfg = cfg.model_copy(update={"out_dir": settings.OUT_DIR})
        return COMMANDS[args.command](cfg, args)
    except CausalXError as e:
        logger.error("%s", e)
        return e.exit_code
    except ValidationError as e:
        logger.error("invalid configuration:\n%s", e)
        return EXIT_USER
    except yaml.YAMLError as e:
        logger.error("unreadable config: %s", e)
        return EXIT_USER


if __name__ == "__main__":
    raise SystemExit(main())
