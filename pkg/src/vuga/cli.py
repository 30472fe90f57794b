"""Command line entry point: train, eval, predict, crossdb, gmad, sweep."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import plots
from .config import (ConfigError, config_hash, load_config_file, model_config, resolve, run_dir_for,
                     runs_root, train_config, write_snapshot)
from .data import ManifestError, PreprocessConfig, load_image, load_manifest, preprocess, split_dataset
from .evaluate import EvalResult, cross_database, evaluate, evaluate_model
from .gmad import compete
from .inference import predict_tensors
from .metrics import median_over_repeats
from .train import Checkpoint, train_from_scratch

logger = logging.getLogger("vuga")

RESOLUTIONS = (224, 512, 768, 1024)
ABLATIONS = (("w/o CMP", "ablate_cmp"), ("w/o SDA", "ablate_sda"), ("w/o CAE", "ablate_cae"), ("VUGA", None))


class RunExists(RuntimeError):
    pass


def _add_config_flags(p):
    g = p.add_argument_group("configuration (flag > --config file > default)")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--manifest")
    g.add_argument("--train-fraction", type=float)
    g.add_argument("--repeats", type=int, help="train/test repetitions reported by median (train only)")
    g.add_argument("--resolution", type=int)
    g.add_argument("--backbone")
    g.add_argument("--stage-channels", help="comma separated, e.g. 96,192,384,768")
    g.add_argument("--pretrained-source", help="torchvision:swin_v2_t | file:<path> | random:<seed>")
    g.add_argument("--fusion-channels", type=int)
    g.add_argument("--no-cmp", dest="ablate_cmp", action="store_const", const=True)
    g.add_argument("--no-sda", dest="ablate_sda", action="store_const", const=True)
    g.add_argument("--no-cae", dest="ablate_cae", action="store_const", const=True)
    g.add_argument("--dropout", type=float)
    g.add_argument("--regressor-hidden", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--cache-features", dest="cache_features", action="store_const", const=True,
                   help="run the frozen backbone once per image and train on cached features")
    p.add_argument("--force", action="store_true", help="reuse an existing run directory")


CONFIG_FLAGS = ("manifest", "train_fraction", "repeats", "resolution", "backbone", "stage_channels", "pretrained_source",
                "fusion_channels", "ablate_cmp", "ablate_sda", "ablate_cae", "dropout", "regressor_hidden",
                "epochs", "batch_size", "lr", "weight_decay", "seed", "cache_features", "test_manifest")


def config_from_args(args) -> dict:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    cli_values = {k: getattr(args, k, None) for k in CONFIG_FLAGS}
    values = resolve(file_values, cli_values)
    for key in ("manifest", "test_manifest"):
        if values[key]:
            values[key] = str(Path(values[key]).resolve())
    return values


def _prepare_run_dir(command, values, force):
    run_dir = run_dir_for(command, values)
    if run_dir.exists() and any(run_dir.iterdir()) and not force:
        raise RunExists(f"run directory {run_dir} already exists; pass --force to overwrite")
    run_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(run_dir / "config.snapshot", values)
    return run_dir


def _require_manifest(values, key="manifest"):
    if not values[key]:
        raise ConfigError([f"{key} is required (flag or config file)"])
    return load_manifest(values[key])


def _with_splits(manifest, values):
    if all(r.split is not None for r in manifest.records):
        return manifest
    return split_dataset(manifest, values["train_fraction"], values["seed"])


def _train_and_eval(values, run_dir):
    manifest = _with_splits(_require_manifest(values), values)
    manifest.write_csv(run_dir / "split.csv")
    train_records, test_records = manifest.subset("train"), manifest.subset("test")
    mcfg, tcfg = model_config(values), train_config(values)
    model, result = train_from_scratch(mcfg, train_records, tcfg, run_dir, val_records=test_records)
    (run_dir / "run.json").write_text(json.dumps({
        "backbone_checksum": model.backbone.checksum,
        "trainable_parameters": model.num_trainable(),
        "epoch_losses": result.epoch_losses,
        "val_srcc": result.val_srcc,
    }, indent=2), encoding="utf-8")
    plots.loss_curve(run_dir / "train.log", run_dir / "train_loss.png")
    eval_result = None
    if len(test_records) >= 5:
        model.load_state_dict(result.best.model_state, strict=False)
        eval_result = evaluate_model(model, test_records, batch_size=tcfg.batch_size,
                                     out_path=run_dir / "eval_result.json")
        plots.eval_scatter(eval_result, run_dir / "eval_scatter.png")
    return model, eval_result


def cmd_train(args):
    values = config_from_args(args)
    run_dir = _prepare_run_dir("train", values, args.force)
    if values["repeats"] == 1:
        _, result = _train_and_eval(values, run_dir)
        print(f"run_dir\t{run_dir}")
        if result is not None:
            print(f"srcc\t{result.srcc:.6f}\nplcc\t{result.plcc:.6f}")
        return 0
    # repeat i re-draws the split and the head initialisation with seed + i
    results = []
    for i in range(values["repeats"]):
        sub = run_dir / f"repeat{i:02d}"
        sub.mkdir(exist_ok=True)
        _, result = _train_and_eval(dict(values, seed=values["seed"] + i), sub)
        if result is None:
            raise ValueError("repeats need a test split of at least 5 images")
        results.append(result)
    rho, lin = median_over_repeats(results)
    print(f"run_dir\t{run_dir}")
    print("repeat\tsrcc\tplcc")
    for i, r in enumerate(results):
        print(f"{i}\t{r.srcc:.6f}\t{r.plcc:.6f}")
    print(f"median\t{rho:.6f}\t{lin:.6f}")
    return 0


def _resolve_ckpt(ckpt, run_dir=None) -> Path:
    if ckpt in ("best", "last"):
        if run_dir is None:
            candidates = sorted((p for p in runs_root().glob("*") if (p / f"ckpt_{ckpt}").is_file()),
                                key=lambda p: (p / f"ckpt_{ckpt}").stat().st_mtime)
            if not candidates:
                raise FileNotFoundError(f"no run with ckpt_{ckpt} under {runs_root()}")
            run_dir = candidates[-1]
        return Path(run_dir) / f"ckpt_{ckpt}"
    return Path(ckpt)


def cmd_eval(args):
    ckpt_path = _resolve_ckpt(args.ckpt, args.run_dir)
    manifest = load_manifest(args.manifest)
    split = args.split
    if split != "all" and any(r.split is None for r in manifest.records):
        logger.warning("manifest has no split column; evaluating all records")
        split = "all"
    out = Path(args.out) if args.out else ckpt_path.parent / "eval_result.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    result = evaluate(ckpt_path, manifest, split, out_path=out, batch_size=args.batch_size)
    plots.eval_scatter(result, out.with_name(out.stem.replace("eval_result", "eval_scatter") + ".png"))
    print(f"srcc\t{result.srcc:.6f}\nplcc\t{result.plcc:.6f}\nresult\t{out}")
    return 0


def cmd_predict(args):
    ckpt = Checkpoint.load(_resolve_ckpt(args.ckpt, args.run_dir))
    model = ckpt.restore()
    pre_cfg = PreprocessConfig(target_resolution=model.cfg.resolution)
    items = []
    if args.manifest:
        items.extend((r.image_id, r.path) for r in load_manifest(args.manifest).records)
    items.extend((Path(p).stem, p) for p in args.images)
    if not items:
        raise ConfigError(["predict needs image paths or --manifest"])
    for i in range(0, len(items), args.batch_size):
        chunk = items[i:i + args.batch_size]
        tensors = [preprocess(load_image(path), pre_cfg) for _, path in chunk]
        for (image_id, _), score in zip(chunk, predict_tensors(model, tensors, args.batch_size)):
            print(f"{image_id}\t{score:.6f}")
    return 0


def cmd_crossdb(args):
    values = config_from_args(args)
    if not values["test_manifest"]:
        raise ConfigError(["crossdb needs --test-manifest"])
    run_dir = _prepare_run_dir("crossdb", values, args.force)
    train_m = _require_manifest(values)
    test_m = _require_manifest(values, "test_manifest")
    result = cross_database(train_m, test_m, model_config(values), train_config(values), run_dir,
                            values["train_fraction"])
    plots.eval_scatter(result, run_dir / "eval_scatter.png")
    print(f"run_dir\t{run_dir}\nsrcc\t{result.srcc:.6f}\nplcc\t{result.plcc:.6f}")
    return 0


def read_scores(path) -> dict:
    """``image_id<TAB>score`` lines (predict output) or an eval_result.json."""
    path = Path(path)
    if path.suffix == ".json":
        return {p["image_id"]: float(p["pred"]) for p in json.loads(path.read_text(encoding="utf-8"))["predictions"]}
    scores = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected image_id<TAB>score")
            scores[parts[0]] = float(parts[1])
    return scores


def cmd_gmad(args):
    a, b = read_scores(args.model_a), read_scores(args.model_b)
    names = tuple(args.names.split(",")) if args.names else (Path(args.model_a).stem, Path(args.model_b).stem)
    if len(names) != 2:
        raise ConfigError(["--names takes two comma separated names"])
    report = compete(a, b, args.levels, args.tolerance, args.pairs_per_level, names)
    out = Path(args.out) if args.out else runs_root() / f"gmad-{names[0]}-vs-{names[1]}"
    out.mkdir(parents=True, exist_ok=True)
    paths = mos = None
    if args.manifest:
        records = load_manifest(args.manifest).records
        paths = {r.image_id: r.path for r in records}
        mos = {r.image_id: r.mos for r in records}
    payload = {}
    for role, entry in report.items():
        pairs = entry["pairs"]
        payload[role] = dict(entry, pairs=[asdict(p) for p in pairs])
        defender, attacker = (a, b) if entry["defender"] == names[0] else (b, a)
        if paths is not None:
            for p in pairs:
                if p.image_a in paths and p.image_b in paths:
                    fig = plots.gmad_montage(p, paths, defender, attacker,
                                             out / f"{role}_level{p.level}_{p.image_a}_{p.image_b}.png", mos,
                                             (entry["defender"], entry["attacker"]))
                    payload[role].setdefault("montages", []).append(fig.name)
    (out / "gmad_report.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print("role\tlevel\timage_a\timage_b\tdefender_gap\tattacker_gap")
    for role, entry in report.items():
        for p in entry["pairs"]:
            print(f"{role}\t{p.level}\t{p.image_a}\t{p.image_b}\t{p.defender_gap:.6g}\t{p.attacker_gap:.6g}")
    print(f"report\t{out / 'gmad_report.json'}")
    return 0


def sweep_variants(kind, values, resolutions=RESOLUTIONS):
    if kind == "resolution":
        return [(str(r), dict(values, resolution=r)) for r in resolutions]
    if kind == "ablation":
        return [(label, dict(values, **({flag: True} if flag else {}))) for label, flag in ABLATIONS]
    raise ConfigError([f"unknown sweep kind {kind!r}"])


def cmd_sweep(args):
    values = config_from_args(args)
    resolutions = tuple(int(r) for r in args.resolutions.split(",")) if args.resolutions else RESOLUTIONS
    variants = sweep_variants(args.kind, values, resolutions)
    for _, v in variants:
        resolve({}, v)  # validate every variant before spending time training
    sweep_dir = runs_root() / f"sweep-{args.kind}-{config_hash(values)}-s{values['seed']}"
    if sweep_dir.exists() and any(sweep_dir.iterdir()) and not args.force:
        raise RunExists(f"sweep directory {sweep_dir} already exists; pass --force to overwrite")
    sweep_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(sweep_dir / "config.snapshot", values)
    rows = []
    for label, v in variants:
        run_dir = sweep_dir / label.replace("/", "").replace(" ", "_")
        run_dir.mkdir(parents=True, exist_ok=True)
        write_snapshot(run_dir / "config.snapshot", v)
        model, result = _train_and_eval(v, run_dir)
        rows.append({"label": label, "resolution": v["resolution"], "trainable_parameters": model.num_trainable(),
                     "srcc": result.srcc if result else float("nan"),
                     "plcc": result.plcc if result else float("nan")})
    header = ["label", "resolution", "trainable_parameters", "srcc", "plcc"]
    with open(sweep_dir / "sweep.tsv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, header, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    plots.sweep_chart(rows, args.kind, sweep_dir / "sweep.png")
    print("\t".join(header))
    for r in rows:
        print("\t".join(f"{r[h]:.6f}" if isinstance(r[h], float) else str(r[h]) for h in header))
    print(f"table\t{sweep_dir / 'sweep.tsv'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="vuga", description="Blind omnidirectional image quality model")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a manifest's train split, evaluate on its test split")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split with a checkpoint, write eval_result.json")
    p.add_argument("--ckpt", required=True, help="checkpoint path, or best/last")
    p.add_argument("--run-dir", help="run directory used to resolve best/last")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--out")
    p.add_argument("--batch-size", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="print image_id<TAB>score per input")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--run-dir")
    p.add_argument("--manifest")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("images", nargs="*")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("crossdb", help="train on 80%% of one manifest, test on all of another")
    _add_config_flags(p)
    p.add_argument("--test-manifest")
    p.set_defaults(func=cmd_crossdb)

    p = sub.add_parser("gmad", help="gMAD pair selection between two models' scores")
    p.add_argument("--model-a", required=True, help="predict output TSV or eval_result.json")
    p.add_argument("--model-b", required=True)
    p.add_argument("--names", help="two comma separated model names")
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--tolerance", type=float, help="defender tolerance (default 1%% of its score range)")
    p.add_argument("--pairs-per-level", type=int, default=1)
    p.add_argument("--manifest", help="image paths and MOS for montages")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gmad)

    p = sub.add_parser("sweep", help="resolution or ablation sweep, emits a combined table")
    _add_config_flags(p)
    p.add_argument("--kind", choices=("resolution", "ablation"), required=True)
    p.add_argument("--resolutions", help="override the 224,512,768,1024 grid")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (ManifestError, FileNotFoundError, RunExists, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
