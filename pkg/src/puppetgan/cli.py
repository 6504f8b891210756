"""Command-line entry point: ``puppetgan [global flags] COMMAND [args] [--section.key=value ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from . import domains as dm
from .config import PRESETS, ExperimentConfig, load_config
from .data import ARCHIVE_FILES, build_pool, domain_specs, write_archive, write_manifest
from .errors import ConfigError, DataFormatError, PuppetError, StateError
from .evaluation import evaluate, load_for_eval, model_tag, saturation
from .metrics.evaluate import append_csv, manipulator, write_sidecar
from .report import build_report, grid_png
from .trainer import fit

log = logging.getLogger("puppetgan")

EXPERIMENT_MANIFEST = "experiment.json"


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _globals(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; suppressed defaults keep earlier values
    g = argparse.ArgumentParser(add_help=False,
                                argument_default=argparse.SUPPRESS if suppress else None)
    g.add_argument("--config", type=Path, help="YAML config with data/model/loss/train/eval sections")
    g.add_argument("--seed", type=int, help="seed for data generation and training")
    g.add_argument("--workspace", type=Path, help="root directory for experiment outputs")
    g.add_argument("--force", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="overwrite existing outputs")
    # presets accumulate across both positions, so the subcommand copy has its own dest
    g.add_argument("--preset", action="append", choices=sorted(PRESETS),
                   dest="sub_preset" if suppress else "preset", help="named config preset; may repeat")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _globals(suppress=True)
    p = argparse.ArgumentParser(prog="puppetgan", parents=[_globals(suppress=False)],
                                description="Attribute manipulation by synthetic demonstration.")
    sub = p.add_subparsers(dest="command", required=True)

    gd = sub.add_parser("generate-data", parents=[common], argument_default=argparse.SUPPRESS,
                        help="render real and triplet archives")
    gd.add_argument("--out", type=Path, help="output directory (default WORKSPACE/data)")

    tr = sub.add_parser("train", parents=[common], argument_default=argparse.SUPPRESS,
                        help="train PuppetGAN or the baseline")
    tr.add_argument("--experiment", help="experiment id (default derived from the config)")
    tr.add_argument("--data", type=Path, help="archive directory written by generate-data")
    tr.add_argument("--resume", type=Path, help="checkpoint to continue from")

    ev = sub.add_parser("evaluate", parents=[common], argument_default=argparse.SUPPRESS,
                        help="append a metrics row for a checkpoint")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--out", type=Path, help="metrics CSV (default: beside the checkpoint)")
    ev.add_argument("--tag", help="model name in the CSV row")
    ev.add_argument("--saturation", action="store_true", help="also run the out-of-range probe")
    ev.add_argument("--cache", type=Path, help="classifier cache directory")

    mp = sub.add_parser("manipulate", parents=[common], argument_default=argparse.SUPPRESS,
                        help="render a real-by-reference output grid")
    mp.add_argument("--checkpoint", type=Path, required=True)
    mp.add_argument("--real", type=Path, help="IDX images or PNG file/directory of real inputs")
    mp.add_argument("--references", type=Path, help="IDX images or PNG file/directory of references")
    mp.add_argument("--n-real", type=int, default=6, help="sampled reals when --real is absent")
    mp.add_argument("--n-references", type=int, default=8,
                    help="sampled references when --references is absent")
    mp.add_argument("--out", type=Path, required=True, help="output PNG")

    rp = sub.add_parser("report", parents=[common], argument_default=argparse.SUPPRESS,
                        help="comparison table and scatter plots")
    rp.add_argument("csvs", nargs="+", type=Path)
    rp.add_argument("--out", type=Path, required=True, help="output directory")
    return p


def parse(argv: Sequence[str]):
    """Split ``--section.key=value`` overrides from regular arguments."""
    overrides: List[str] = []
    rest: List[str] = []
    for a in argv:
        head = a[2:].split("=", 1)[0] if a.startswith("--") else ""
        if "." in head and "=" in a and "/" not in head:
            overrides.append(a)
        else:
            rest.append(a)
    args = build_parser().parse_args(rest)
    args.overrides = overrides
    args.preset = (args.preset or []) + getattr(args, "sub_preset", [])
    return args


def config_from(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides = [f"data.seed={args.seed}", f"train.seed={args.seed}"] + overrides
    return load_config(args.config, args.preset or (), overrides)


def _workspace(args) -> Path:
    return Path(args.workspace) if args.workspace else Path.cwd() / "workspace"


def _claim(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise StateError(f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


# ------------------------------------------------------------------ commands

def cmd_generate_data(args) -> int:
    cfg = config_from(args)
    out = getattr(args, "out", None) or _workspace(args) / "data"
    _claim(Path(out), args.force)
    pool = build_pool(cfg.data, cfg.model.image_size)
    files = write_archive(pool, out)
    real, syn = domain_specs(cfg.data, cfg.model.image_size)
    names = {v: k for k, v in ARCHIVE_FILES.items()}
    write_manifest(out, {
        "seed": cfg.data.seed,
        "aoi": dm.canonical_aoi(cfg.data.aoi),
        "domains": cfg.data.domains,
        "real_spec": real.to_dict(),
        "synthetic_spec": syn.to_dict(),
        "counts": {"real": int(len(pool.real)), "triplets": int(len(pool.b1))},
        "datasets": [
            {"role": "real", "images_path": ARCHIVE_FILES["real_images"],
             "labels_path": ARCHIVE_FILES["real_labels"]},
            *({"role": f"triplet_{k}", "images_path": ARCHIVE_FILES[k],
               "labels_path": ARCHIVE_FILES["triplet_labels"] if k == "b3" else None}
              for k in ("b1", "b2", "b3")),
        ],
        "files": sorted(names[f.name] for f in files),
    })
    print(out)
    return 0


def experiment_id(cfg: ExperimentConfig, presets: Optional[Sequence[str]]) -> str:
    parts = [model_tag(cfg), *(presets or ())]
    return "-".join(dict.fromkeys(parts)) + f"-{cfg.hash()[:8]}"


def write_experiment_manifest(exp_dir: Path, exp_id: str, metrics_csv: Optional[Path] = None) -> Path:
    path = exp_dir / EXPERIMENT_MANIFEST
    old = json.loads(path.read_text()) if path.exists() else {"id": exp_id, "created": _now()}
    old.update({
        "config": "config.yaml",
        "checkpoints": sorted(p.name for p in exp_dir.glob("*.npz")
                              if p.name.startswith(("ckpt-", "last"))),
        "log": "losses.csv",
        "updated": _now(),
    })
    if metrics_csv is not None:
        old["metrics_csv"] = str(metrics_csv)
    path.write_text(json.dumps(old, indent=2))
    return path


def cmd_train(args) -> int:
    cfg = config_from(args)
    data_dir = getattr(args, "data", None)
    if data_dir is not None:
        cfg.data.archive = str(data_dir)
    exp_id = getattr(args, "experiment", None) or experiment_id(cfg, args.preset)
    exp_dir = _workspace(args) / exp_id
    resume = getattr(args, "resume", None)
    if resume is None:
        _claim(exp_dir, args.force)
    result = fit(cfg, exp_dir, resume=str(resume) if resume else None)
    write_experiment_manifest(exp_dir, exp_id)
    print(result.checkpoint)
    return 0


def cmd_evaluate(args) -> int:
    _, cfg, _ = load_for_eval(args.checkpoint)
    ev = load_config(args.config, args.preset or (), args.overrides).eval if (
        args.config or args.preset or args.overrides) else cfg.eval
    out = getattr(args, "out", None) or args.checkpoint.parent / "metrics.csv"
    report, series = evaluate(args.checkpoint, ev, getattr(args, "cache", None), getattr(args, "tag", None))
    report.validate()
    append_csv(out, report)
    write_sidecar(out, report, series)
    if getattr(args, "saturation", False):
        sat = saturation(args.checkpoint, ev)
        stem = Path(out).with_suffix("")
        Path(f"{stem}-saturation.json").write_text(json.dumps(sat.to_dict(), indent=2))
        grid_png(f"{stem}-saturation.png", sat.grid)
    if (args.checkpoint.parent / EXPERIMENT_MANIFEST).exists():
        manifest = json.loads((args.checkpoint.parent / EXPERIMENT_MANIFEST).read_text())
        write_experiment_manifest(args.checkpoint.parent, manifest["id"], Path(out))
    print(",".join(str(v) for v in report.row().values()))
    return 0


def load_images(path: Path, image_size: int) -> np.ndarray:
    """IDX image file, a single PNG, or a directory of PNGs, as (n, S, S) in [-1, 1]."""
    from PIL import Image

    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise DataFormatError(f"{path}: no PNG files")
    elif path.suffix.lower() == ".png":
        files = [path]
    else:
        imgs = dm.from_bytes(dm.read_idx_images(path))
        return dm._resize(imgs, image_size) if imgs.shape[1] != image_size else imgs
    arrs = []
    for f in files:
        img = Image.open(f).convert("L")
        if img.size != (image_size, image_size):
            img = img.resize((image_size, image_size), Image.BILINEAR)
        arrs.append(np.asarray(img, dtype=np.uint8))
    return dm.from_bytes(np.stack(arrs))


def cmd_manipulate(args) -> int:
    nets, cfg, _ = load_for_eval(args.checkpoint)
    size = cfg.model.image_size
    real_spec, syn_spec = domain_specs(cfg.data, size)
    rng = np.random.default_rng(cfg.eval.seed if args.seed is None else args.seed)
    real_path = getattr(args, "real", None)
    ref_path = getattr(args, "references", None)
    reals = (load_images(real_path, size) if real_path
             else dm.sample_real_batch(rng, real_spec, args.n_real)[0])
    refs = (load_images(ref_path, size) if ref_path
            else dm.render_batch([dm.sample_params(rng, syn_spec) for _ in range(args.n_references)],
                                 syn_spec))
    f = manipulator(nets)
    n, m = len(reals), len(refs)
    rt = torch.from_numpy(np.repeat(reals, m, axis=0)).float().unsqueeze(1)
    ft = torch.from_numpy(np.tile(refs, (n, 1, 1))).float().unsqueeze(1)
    cells = f(ft, rt).squeeze(1).numpy().reshape(n, m, size, size)
    grid_png(args.out, cells, row_heads=reals, col_heads=refs)
    print(args.out)
    return 0


def cmd_report(args) -> int:
    summary = build_report(args.csvs, args.out)
    print((Path(args.out) / "report.md").read_text(), end="")
    for name, t in summary["trends"].items():
        print(f"{name}: binned Spearman {t['spearman']:.3f}")
    return 0


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "manipulate": cmd_manipulate,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except SystemExit as exc:  # argparse usage errors count as config errors
        return int(exc.code or 0) and ConfigError.exit_code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except PuppetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataFormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
