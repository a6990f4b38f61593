"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 alignment error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mamifuse import __version__, kernels
from mamifuse.config import load_config, require, run_root, snapshot
from mamifuse.data import LABELS, Dataset, label_prevalence, load_external_negatives, load_main_corpus
from mamifuse.ensemble import (
    DEFAULT_ALPHA,
    PredictionMatrix,
    align,
    binarize,
    ensemble,
    hierarchy_postprocess,
    load_submission,
    write_submission,
)
from mamifuse.errors import AlignmentError, ConfigError, DataError, MamifuseError
from mamifuse.metrics import ZERO_DIVISION_NOTE, macro_f1_binary_task, multilabel_f1, results_table
from mamifuse.splitting import FoldPlan, fold_balance_report, stratified_kfold

log = logging.getLogger("mamifuse")


def _out_dir(args, default_name: str) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else run_root() / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_train(cfg: dict) -> Dataset:
    require(cfg, "data.train")
    return load_main_corpus(cfg["data.train"], labeled=True, image_root=cfg["data.image_root"])


def cmd_synthesize(args) -> int:
    from mamifuse.synthetic import synthesize_corpus

    paths = synthesize_corpus(args.out, n_train=args.n_train, n_test=args.n_test, n_external=args.n_external,
                              seed=args.seed, image_size=args.image_size, cue_rate=args.cue_rate)
    for name, p in paths.items():
        print(f"{name}\t{p}")
    return 0


def cmd_split(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.k is not None:
        cfg["split.k"] = args.k
    if args.seed is not None:
        cfg["split.seed"] = args.seed
    train = _load_train(cfg)
    k = int(cfg["split.k"])
    if k < 2:
        raise ConfigError("split.k must be >= 2")
    if k > len(train):
        raise ConfigError(f"split.k={k} exceeds corpus size {len(train)}")
    plan = stratified_kfold(train, k, int(cfg["split.seed"]))
    out = _out_dir(args, "split")
    plan.save(out / "folds.tsv")
    report = fold_balance_report(plan, train)
    (out / "balance.txt").write_text(report.format(), encoding="utf-8")
    print(report.format(), end="")
    return 0


def _resolve_train_inputs(args, cfg: dict) -> tuple[int, str, Path]:
    manifest = {}
    if args.config and str(args.config).endswith(".json"):
        manifest = json.loads(Path(args.config).read_text())
    stage = args.stage if args.stage is not None else manifest.get("stage")
    arch = args.arch if args.arch is not None else manifest.get("arch")
    if stage not in (1, 2):
        raise ConfigError("--stage must be 1 or 2")
    if arch not in ("double_tower", "single_flow"):
        raise ConfigError("--arch must be double_tower or single_flow")
    if args.folds:
        cfg["split.folds"] = str(args.folds)
    require(cfg, "data.train", "split.folds")
    if stage == 2:
        require(cfg, "data.external")
    for key in ("data.train", "split.folds", "data.external", "data.test"):
        if cfg.get(key) and not Path(cfg[key]).exists():
            raise ConfigError(f"{key} points to a missing file: {cfg[key]}")
    return stage, arch, Path(cfg["split.folds"])


def cmd_train(args) -> int:
    from mamifuse.models import save_weights
    from mamifuse.training import RunManifest, TrainingConfig, train_stage1, train_stage2

    cfg = load_config(args.config, args.set)
    stage, arch, folds_path = _resolve_train_inputs(args, cfg)
    tc = TrainingConfig.from_config(cfg)
    train = _load_train(cfg)
    plan = FoldPlan.load(folds_path, seed=int(cfg["split.seed"]))
    if set(plan.assignment) != set(train.ids):
        raise DataError(f"fold plan {folds_path} does not cover the training corpus")
    test = load_main_corpus(cfg["data.test"], labeled=False, image_root=cfg["data.image_root"]) if cfg["data.test"] else None
    external = None
    if stage == 2:
        external = load_external_negatives(cfg["data.external"], cfg["data.negative_levels"],
                                           image_root=cfg["data.image_root"])
    out = _out_dir(args, f"stage{stage}_{arch}")
    manifest = RunManifest(out / "manifest.json", cfg, stage, arch, plan)
    manifest.data["kernel_backend"] = kernels.BACKEND
    manifest.write()
    if stage == 1:
        result = train_stage1(train, plan, arch, tc, cfg, test)
    else:
        result = train_stage2(train, external, plan, arch, tc, cfg, test)
    outputs = {}
    oof_path = out / f"stage{stage}_oof.tsv"
    result.oof.save(oof_path)
    outputs["oof"] = oof_path.name
    if result.test is not None:
        test_path = out / f"stage{stage}_test.tsv"
        result.test.save(test_path)
        outputs["test"] = test_path.name
    for fold, spec in zip(result.folds, result.specs):
        save_weights(fold.model, out / "models" / f"fold{fold.fold}", spec, extra={"fold": fold.fold, "stage": stage})
    manifest.finalize(result, outputs)
    print(f"wrote {out}")
    return 0


def cmd_predict(args) -> int:
    data = load_main_corpus(args.data, labeled=False, image_root=args.image_root)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.baseline:
        if not args.train:
            raise ConfigError("--baseline needs --train to estimate label priors")
        prior = label_prevalence(load_main_corpus(args.train, labeled=True))
        values = np.tile([prior[name] for name in LABELS], (len(data), 1))
        PredictionMatrix(data.ids, LABELS, values).save(out)
        print(f"wrote {out}")
        return 0
    if not args.model_dir:
        raise ConfigError("predict needs --model-dir (or --baseline)")
    from mamifuse.models import load_weights
    from mamifuse.training import ImageStore, TrainingConfig, predict_probs

    run = Path(args.model_dir)
    manifest_path = run / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json in {run}")
    manifest = json.loads(manifest_path.read_text())
    cfg = load_config(manifest_path)
    tc = TrainingConfig.from_config(cfg)
    fold_dirs = sorted((run / "models").glob("fold*"), key=lambda p: int(p.name[4:]))
    if not fold_dirs:
        raise ConfigError(f"no fold models under {run / 'models'}")
    if tc.fold_aggregation == "single":
        fold_dirs = fold_dirs[:1]
    tasks = tuple(manifest.get("tasks", LABELS))
    images = ImageStore(tc.resize)
    total = None
    for d in fold_dirs:
        model = load_weights(d)
        p = predict_probs(model, list(data), images, tta=tc.tta and not args.no_tta, crop=tc.crop,
                          batch_size=tc.batch_size)
        if p.shape[1] != len(tasks):
            raise DataError(f"{d}: model emits {p.shape[1]} columns, manifest lists {len(tasks)} tasks")
        total = p if total is None else total + p
    PredictionMatrix(data.ids, tasks, total / len(fold_dirs)).save(out)
    print(f"wrote {out}")
    return 0


def cmd_ensemble(args) -> int:
    y1 = PredictionMatrix.load(args.y1)
    y2 = PredictionMatrix.load(args.y2)
    alpha = DEFAULT_ALPHA if args.alpha is None else args.alpha
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    result = ensemble(y1, y2, alpha)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.save(out)
    _write_json(out.with_name(out.stem + ".manifest.json"), {
        "command": "ensemble",
        "alpha": alpha,
        "alpha_source": "default" if args.alpha is None else "argument",
        "y1": str(args.y1),
        "y2": str(args.y2),
        "rows": len(result),
    })
    print(f"wrote {out}")
    return 0


def cmd_postprocess(args) -> int:
    sub_b = PredictionMatrix.load(args.subtask_b)
    mis = PredictionMatrix.load(args.misogyny)
    if "misogynous" in mis.columns and len(mis.columns) > 1:
        mis = mis.select(["misogynous"])
    replace = not args.keep_misogynous
    fixed = hierarchy_postprocess(sub_b, mis, args.threshold, replace_misogynous=replace)
    out = _out_dir(args, "postprocess")
    fixed.save(out / "postprocessed.tsv")
    write_submission(mis.sorted(), out / "submission_A.tsv", args.threshold)
    write_submission(fixed, out / "submission_B.tsv", args.threshold)
    _write_json(out / "manifest.json", {
        "command": "postprocess",
        "subtask_b": str(args.subtask_b),
        "misogyny": str(args.misogyny),
        "threshold": args.threshold,
        "replace_misogynous": replace,
        "rows": len(fixed),
    })
    print(f"wrote {out}")
    return 0


def _load_any_prediction(path: Path) -> PredictionMatrix:
    first = path.read_text(encoding="utf-8").split("\n", 1)[0]
    if first.startswith("sample_id\t"):
        return PredictionMatrix.load(path)
    width = len(first.split("\t")) - 1
    if width == len(LABELS):
        return load_submission(path, LABELS)
    if width == 1:
        return load_submission(path, ("misogynous",))
    raise DataError(f"{path}: cannot tell the prediction layout ({width} value columns)")


def cmd_evaluate(args) -> int:
    gold_ds = load_main_corpus(args.gold, labeled=True)
    gold = PredictionMatrix(gold_ds.ids, LABELS, gold_ds.label_matrix())
    mode = args.mode
    entries = []
    details = []
    for item in args.pred:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        pred = _load_any_prediction(Path(path))
        if "misogynous" not in pred.columns:
            raise DataError(f"{path}: no misogynous column")
        g, p = align(gold.select(pred.columns), pred)
        bins = binarize(p.values, args.threshold)
        gvals = g.values.astype(np.uint8)
        score_a = macro_f1_binary_task(bins[:, 0], gvals[:, 0])
        score_b = None
        if tuple(pred.columns) == LABELS:
            ml = multilabel_f1(bins, gvals)
            score_b = ml.score(mode)
            details.append((name, ml))
        entries.append((name, score_a, score_b))
    table = results_table(entries, footnote=f"Sub-task A: macro F1 over both classes. Sub-task B ({mode}): "
                                            f"per-label F1 averaged. {ZERO_DIVISION_NOTE}")
    out = _out_dir(args, "evaluate")
    lines = [table.text]
    tsv = [table.tsv.rstrip("\n")]
    for name, ml in details:
        lines.append(f"[{name}] macro={ml.macro:.4f} weighted={ml.weighted:.4f}")
        for label in LABELS:
            lines.append(f"  {label:<16} F1={ml.per_label[label]:.4f} support={ml.support[label]}")
            tsv.append(f"{name}:{label}\t{ml.per_label[label]:.6f}\t{ml.support[label]}")
        tsv.append(f"{name}:macro\t{ml.macro:.6f}\t")
        tsv.append(f"{name}:weighted\t{ml.weighted:.6f}\t")
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "report.tsv").write_text("\n".join(tsv) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mamifuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="YAML config file or a run manifest.json")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("synthesize-corpus", help="write a synthetic labeled corpus with images")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--n-external", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--cue-rate", type=float, default=0.8)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("split", help="multi-label stratified k-fold plan")
    add_config(p)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train stage 1 (multi-task) or stage 2 (misogyny + external negatives)")
    add_config(p)
    p.add_argument("--stage", type=int, choices=(1, 2))
    p.add_argument("--arch", choices=("double_tower", "single_flow"))
    p.add_argument("--folds", help="fold plan TSV (overrides split.folds)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="fold-averaged predictions from a trained run, or a prior baseline")
    p.add_argument("--data", required=True, help="corpus TSV to predict")
    p.add_argument("--model-dir")
    p.add_argument("--baseline", action="store_true", help="emit training-set label priors for every row")
    p.add_argument("--train", help="labeled corpus for --baseline")
    p.add_argument("--image-root")
    p.add_argument("--no-tta", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ensemble", help="alpha * y1 + (1 - alpha) * y2")
    p.add_argument("--y1", required=True, help="single-flow predictions")
    p.add_argument("--y2", required=True, help="double-tower predictions")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("postprocess", help="hierarchy correction and submission files")
    p.add_argument("--subtask-b", required=True, help="five-column prediction TSV")
    p.add_argument("--misogyny", required=True, help="single-task misogyny prediction TSV")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--keep-misogynous", action="store_true",
                   help="keep the sub-task B misogynous column instead of the single-task one")
    p.add_argument("--out")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", help="score prediction files against gold labels")
    p.add_argument("--gold", required=True, help="labeled corpus TSV")
    p.add_argument("--pred", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--mode", choices=("macro", "weighted"), default="macro")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MamifuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
