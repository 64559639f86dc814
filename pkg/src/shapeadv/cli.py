"""Command line entry point: ``shapeadv <subcommand> ...``.

Subcommands
-----------
gen-data   write the synthetic dataset as XYZ files plus a manifest
train      fit the classifier (optionally adversarially) and save a checkpoint
attack     attack one cloud file or a dataset split; writes PLY and JSON per cloud
defend     apply SRS or SOR to cloud files
evaluate   attack-versus-defense MetricReport JSON for every configured pair
report     merge report JSON/CSV files into one CSV table and a figure
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from . import classifier as clf
from .attack import config_dict, si_score
from .classifier import ClassifierModel, Dataset
from .cloud import CloudFormatError, PointCloud, load_cloud, save_cloud
from .config import ConfigError, ExperimentConfig, load_config
from .data import ShapeSpec, split_dataset
from .defense import AttackSpec, DefenseSpec, apply_defense, evaluate_suite, generate
from .report import build_report

logger = logging.getLogger("shapeadv")

MANIFEST = "manifest.json"


class CliError(Exception):
    def __init__(self, kind: str, message: str, details: Optional[List[str]] = None):
        super().__init__(message)
        self.kind, self.details = kind, details or []


# ------------------------------------------------------------------ helpers


def export_colored(cloud: PointCloud, channel: str, path: str) -> None:
    """Write ``cloud`` as PLY with the scalar attribute ``channel`` attached."""
    if channel not in cloud.attrs:
        raise KeyError(f"cloud has no channel {channel!r}; available: {sorted(cloud.attrs)}")
    save_cloud(PointCloud(cloud.points, cloud.label, {channel: cloud.attrs[channel]}), path, "ply")


def _write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _datasets(cfg: ExperimentConfig, data_dir: Optional[str]):
    if data_dir:
        return read_dataset(data_dir, "train"), read_dataset(data_dir, "test")
    d = cfg.dataset
    spec = ShapeSpec(d.families[0], d.m, d.jitter, d.seed, d.variation)
    return split_dataset(spec, d.train_per_class, d.test_per_class, d.seed, d.families)


def write_dataset(train: Dataset, test: Dataset, out: str) -> str:
    os.makedirs(out, exist_ok=True)
    manifest = {"class_names": list(train.class_names), "splits": {}}
    for ds in (train, test):
        entries = []
        os.makedirs(os.path.join(out, ds.split), exist_ok=True)
        for i, c in enumerate(ds.clouds):
            rel = os.path.join(ds.split, f"{ds.class_names[c.label]}_{i:04d}.xyz")
            save_cloud(c, os.path.join(out, rel), "xyz")
            entries.append({"file": rel, "label": int(c.label)})
        manifest["splits"][ds.split] = entries
    path = os.path.join(out, MANIFEST)
    _write_json(path, manifest)
    return path


def read_dataset(data_dir: str, split: str) -> Dataset:
    path = os.path.join(data_dir, MANIFEST)
    if not os.path.exists(path):
        raise CliError("missing_file", f"dataset manifest not found: {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    if split not in manifest["splits"]:
        raise CliError("bad_split", f"split {split!r} not in {path}")
    clouds = [load_cloud(os.path.join(data_dir, e["file"]), label=e["label"])
              for e in manifest["splits"][split]]
    return Dataset(clouds, manifest["class_names"], split)


def _load_model(path: Optional[str]) -> ClassifierModel:
    if not path:
        raise CliError("missing_argument", "--model is required")
    if not os.path.exists(path):
        raise CliError("missing_file", f"model checkpoint not found: {path}")
    return ClassifierModel.load(path)


def _attack_spec(cfg: ExperimentConfig, kind: str) -> AttackSpec:
    return AttackSpec(kind, cfg.attack, cfg.region, cfg.hardening,
                      cfg.evaluation.ifgm_budget, cfg.evaluation.ifgm_steps)


def _out_dir(args, cfg) -> str:
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    return out


# -------------------------------------------------------------- subcommands


def cmd_gen_data(args, cfg):
    train, test = _datasets(cfg, None)
    path = write_dataset(train, test, _out_dir(args, cfg))
    print(path)


def cmd_train(args, cfg):
    train, test = _datasets(cfg, args.data)
    t = cfg.training
    if t.adversarial:
        model = clf.adversarial_train(train, t.at_budget, t.at_steps, t.epochs, t.seed, t.lr,
                                      t.batch_size, t.momentum, t.decay_every)
    else:
        model = clf.train(train, t.epochs, t.lr, t.seed, t.batch_size, t.momentum, t.decay_every)
    out = _out_dir(args, cfg)
    path = os.path.join(out, args.name)
    model.save(path)
    summary = {"checkpoint": path, "train_accuracy": clf.accuracy(model, train),
               "test_accuracy": clf.accuracy(model, test), "adversarial": t.adversarial}
    _write_json(os.path.join(out, os.path.splitext(args.name)[0] + "_summary.json"), summary)
    print(json.dumps(summary, sort_keys=True))


def _attack_one(model, cloud: PointCloud, stem: str, spec: AttackSpec, cfg, out: str, label_source: str):
    res = spec.run(model, cloud)
    si = si_score(cloud, model, cfg.region, cfg.attack.alpha)
    shift = np.linalg.norm(res.adversarial.points - cloud.points, axis=1)
    adv = PointCloud(res.adversarial.points, cloud.label, {"si": si.combined, "displacement": shift})
    ply = os.path.join(out, f"{stem}_adv.ply")
    save_cloud(adv, ply, "ply")
    doc = res.to_json(ply)
    doc.update(input=stem, label_source=label_source, config=(
        config_dict(cfg.attack) if spec.kind != "ifgm" else {"budget": spec.ifgm_budget, "steps": spec.ifgm_steps}))
    _write_json(os.path.join(out, f"{stem}_adv.json"), doc)
    return res


def cmd_attack(args, cfg):
    model = _load_model(args.model)
    spec = _attack_spec(cfg, args.method)
    out = _out_dir(args, cfg)
    results = []
    if args.input:
        for path in args.input:
            if not os.path.exists(path):
                raise CliError("missing_file", f"input cloud not found: {path}")
            cloud = load_cloud(path)
            if args.label is not None:
                label, source = args.label, "argument"
            else:
                label, source = clf.predict(model, cloud), "prediction"
            stem = os.path.splitext(os.path.basename(path))[0]
            res = _attack_one(model, cloud.with_label(label), stem, spec, cfg, out, source)
            results.append({"input": path, "success": bool(res.success)})
    else:
        test = read_dataset(args.data, args.split) if args.data else _datasets(cfg, None)[1]
        limit = args.limit if args.limit is not None else cfg.evaluation.limit
        for i, cloud in enumerate(test.clouds):
            if limit is not None and len(results) >= limit:
                break
            if clf.predict(model, cloud) != cloud.label:
                continue
            res = _attack_one(model, cloud, f"{test.split}_{i:04d}", spec, cfg, out, "dataset")
            results.append({"input": i, "success": bool(res.success)})
    print(json.dumps({"attacked": len(results), "successes": sum(r["success"] for r in results)}))


def cmd_defend(args, cfg):
    spec = DefenseSpec(args.defense, seed=args.seed) if args.defense else cfg.defenses[-1]
    out = _out_dir(args, cfg)
    for path in args.input:
        if not os.path.exists(path):
            raise CliError("missing_file", f"input cloud not found: {path}")
        cloud = load_cloud(path)
        kept = apply_defense(cloud, spec)
        stem, ext = os.path.splitext(os.path.basename(path))
        fmt = "ply" if ext == ".ply" else "xyz"
        dest = os.path.join(out, f"{stem}_{spec.kind}.{fmt}")
        save_cloud(kept, dest, fmt)
        print(f"{dest} {cloud.m} -> {kept.m}")


def cmd_evaluate(args, cfg):
    model = _load_model(args.model)
    model_at = ClassifierModel.load(args.model_at) if args.model_at else None
    test = read_dataset(args.data, "test") if args.data else _datasets(cfg, None)[1]
    out = _out_dir(args, cfg)
    written = []
    for kind in cfg.evaluation.attacks:
        spec = _attack_spec(cfg, kind)
        gen = generate(model, test, spec, cfg.evaluation.limit)
        for d in cfg.defenses:
            rep = evaluate_suite(model, test, spec, d, model_at=model_at, generated=gen)
            tag = "_at" if model_at is not None else ""
            path = os.path.join(out, f"report_{kind}_{d.kind}{tag}.json")
            with open(path, "w") as fh:
                fh.write(rep.to_json())
            written.append(path)
            print(f"{path} asr={rep.asr:.3f}")
    return written


def cmd_report(args, cfg):
    for p in args.inputs:
        if not os.path.exists(p):
            raise CliError("missing_file", f"report not found: {p}")
    out = args.csv
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    fig = args.figure if args.figure else os.path.splitext(out)[0] + ".png"
    rows = build_report(args.inputs, out, None if args.no_figure else fig)
    print(f"{out} ({len(rows)} rows)")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapeadv", description="Shape-based adversarial point clouds")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="experiment INI file (default: bundled mini-config)")
        if out:
            sp.add_argument("--out", help="output directory (default: $SHAPEADV_OUTPUT or ./shapeadv_out)")
        return sp

    common(sub.add_parser("gen-data", help="write the synthetic dataset"))

    sp = common(sub.add_parser("train", help="train the classifier"))
    sp.add_argument("--data", help="dataset directory from gen-data (default: generate from config)")
    sp.add_argument("--name", default="model.json", help="checkpoint file name")

    sp = common(sub.add_parser("attack", help="attack clouds"))
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", nargs="+", help="cloud files (xyz, off, ply)")
    sp.add_argument("--label", type=int, help="true label for --input (default: model prediction)")
    sp.add_argument("--data", help="dataset directory for batch mode")
    sp.add_argument("--split", default="test")
    sp.add_argument("--limit", type=int)
    sp.add_argument("--method", default="hit_adv", choices=("hit_adv", "ifgm", "hit_adv_hardened"))

    sp = common(sub.add_parser("defend", help="apply a preprocessing defense"))
    sp.add_argument("--input", nargs="+", required=True)
    sp.add_argument("--defense", choices=("none", "srs", "sor"))
    sp.add_argument("--seed", type=int, default=0)

    sp = common(sub.add_parser("evaluate", help="attack-versus-defense reports"))
    sp.add_argument("--model", required=True)
    sp.add_argument("--model-at", help="adversarially trained checkpoint used as the defended model")
    sp.add_argument("--data")

    sp = common(sub.add_parser("report", help="merge reports into CSV and a figure"), out=False)
    sp.add_argument("inputs", nargs="+", help="report JSON or CSV files")
    sp.add_argument("--csv", required=True, help="output CSV path")
    sp.add_argument("--figure", help="output figure path (default: CSV path with .png)")
    sp.add_argument("--no-figure", action="store_true")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "attack": cmd_attack,
    "defend": cmd_defend, "evaluate": cmd_evaluate, "report": cmd_report,
}


def _fail(kind: str, message: str, details=None, code: int = 1) -> int:
    doc = {"error": kind, "message": message}
    if details:
        doc["details"] = details
    print(json.dumps(doc), file=sys.stderr)
    return code


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail("config", str(exc), exc.problems, code=2)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.details)
    except FileNotFoundError as exc:
        return _fail("missing_file", str(exc))
    except CloudFormatError as exc:
        return _fail("bad_cloud_file", str(exc))
    except (ValueError, KeyError) as exc:
        return _fail("invalid_input", str(exc))
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
