"""Command-line interface: train, translate, check, metrics, param-count.

Configuration merges, lowest precedence first: built-in defaults, the named
profile, the JSON config file, command-line flags. Unknown config keys are
rejected. Environment overrides: HFLOW_RUN_DIR (run directory root),
HFLOW_VGG_WEIGHTS (pretrained weight container).

Exit codes: 0 success, 1 user error, 2 check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from . import checks
from .config import ModelConfig, canonical_variant, make_config, variant_config, VARIANT_EXPANSIONS
from .errors import ConfigurationError, HierarchyFlowError
from .images import load_image, save_image
from .metrics import compare_images
from .nets import build_model, param_count_breakdown
from .perceptual import make_extractor
from .training import RunLog, TrainConfig, load_pool, train_loop

PROFILES = {
    "desk": {
        "train": {
            "iterations": 2000,
            "resize": [64, 64],
            "crop": [64, 64],
            "checkpoint_every": 500,
            "log_every": 1,
            "sample_every": 500,
        },
        "backend": "standin",
    },
    "paper": {
        "train": {
            "iterations": 300_000,
            "resize": [256, 512],
            "crop": [256, 256],
            "checkpoint_every": 10_000,
            "log_every": 100,
            "sample_every": 10_000,
        },
        "backend": "vgg19",
    },
}

CONFIG_SCHEMA = {
    "model": {"variant", "expansions", "style_widths", "affine_hidden_cap"},
    "loss": {"style_weight", "k"},
    "train": {
        "iterations",
        "batch_size",
        "lr",
        "seed",
        "resize",
        "crop",
        "checkpoint_every",
        "log_every",
        "sample_every",
    },
    "backend": None,
    "paths": {"source_dir", "target_dir", "run_dir", "vgg_weights"},
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    for key, value in data.items():
        if key not in CONFIG_SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r}")
        allowed = CONFIG_SCHEMA[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise ConfigurationError(f"config section {key!r} must be an object")
            for sub in value:
                if sub not in allowed:
                    raise ConfigurationError(f"unknown config key {key}.{sub}")
    return data


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _effective_config(args) -> dict:
    merged: dict = {"model": {}, "loss": {}, "train": {}, "backend": "standin", "paths": {}}
    if getattr(args, "profile", None):
        merged = _merge(merged, PROFILES[args.profile])
    if getattr(args, "config", None):
        merged = _merge(merged, _load_config_file(args.config))

    flag_map = {
        "variant": ("model", "variant"),
        "expansions": ("model", "expansions"),
        "iterations": ("train", "iterations"),
        "lr": ("train", "lr"),
        "seed": ("train", "seed"),
        "style_weight": ("loss", "style_weight"),
        "k": ("loss", "k"),
        "backend": ("backend", None),
        "source": ("paths", "source_dir"),
        "target": ("paths", "target_dir"),
        "run_dir": ("paths", "run_dir"),
        "vgg_weights": ("paths", "vgg_weights"),
    }
    for flag, (section, key) in flag_map.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if key is None:
            merged[section] = value
        else:
            merged[section][key] = value

    if "run_dir" not in merged["paths"] and os.environ.get("HFLOW_RUN_DIR"):
        merged["paths"]["run_dir"] = os.environ["HFLOW_RUN_DIR"]
    if "vgg_weights" not in merged["paths"] and os.environ.get("HFLOW_VGG_WEIGHTS"):
        merged["paths"]["vgg_weights"] = os.environ["HFLOW_VGG_WEIGHTS"]
    return merged


def _model_config_from(merged: dict) -> ModelConfig:
    model_section = merged.get("model", {})
    if model_section.get("expansions"):
        expansions = model_section["expansions"]
        if isinstance(expansions, str):
            expansions = [int(x) for x in expansions.split(",") if x]
        kwargs = {}
        if "style_widths" in model_section:
            kwargs["style_widths"] = tuple(model_section["style_widths"])
        if "affine_hidden_cap" in model_section:
            kwargs["affine_hidden_cap"] = model_section["affine_hidden_cap"]
        return make_config(expansions, variant=model_section.get("variant"), **kwargs)
    variant = model_section.get("variant") or "HF"
    return variant_config(variant)


def _train_config_from(merged: dict) -> TrainConfig:
    section = dict(merged.get("train", {}))
    loss = merged.get("loss", {})
    if "style_weight" in loss:
        section["style_weight"] = loss["style_weight"]
    if "k" in loss:
        section["k"] = loss["k"]
    if "resize" in section:
        section["resize"] = tuple(section["resize"])
    if "crop" in section:
        section["crop"] = tuple(section["crop"])
    return TrainConfig(**section)


def _make_backend(merged: dict, seed: int):
    return make_extractor(
        merged.get("backend", "standin"),
        seed=seed,
        weight_file=merged["paths"].get("vgg_weights"),
    )


def _resize_to(img, hw):
    return F.interpolate(
        img.unsqueeze(0), size=hw, mode="bilinear", align_corners=False
    ).squeeze(0)


def cmd_train(args) -> int:
    merged = _effective_config(args)
    model_config = _model_config_from(merged)
    cfg = _train_config_from(merged)
    paths = merged["paths"]
    for required in ("source_dir", "target_dir", "run_dir"):
        if required not in paths:
            raise ConfigurationError(f"missing required path {required!r} (flag or config file)")
    source_pool = load_pool(paths["source_dir"])
    target_pool = load_pool(paths["target_dir"])
    extractor = _make_backend(merged, cfg.seed)

    model = build_model(model_config, seed=cfg.seed)
    start = 0
    opt_state = None
    if args.resume:
        state = ckpt.restore_model(model, args.resume)
        if state is None:
            raise ConfigurationError(f"checkpoint {args.resume} has no training state to resume")
        from .training import AdamState

        opt_state = AdamState(dict(model.named_parameters()))
        opt_state.step = state["adam_step"]
        for name in opt_state.m:
            opt_state.m[name] = torch.from_numpy(state["m"][name]).to(torch.float32)
            opt_state.v[name] = torch.from_numpy(state["v"][name]).to(torch.float32)
        start = state["iteration"]

    run_dir = Path(paths["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)

    def on_sample(iteration: int, samples_dir: Path):
        src = _resize_to(load_image(source_pool[0]), cfg.crop)
        tgt = _resize_to(load_image(target_pool[0]), cfg.crop)
        with torch.no_grad():
            out = model.translate(src, tgt)
        save_image(out, samples_dir / f"sample_{iteration:07d}.png")

    final = train_loop(
        model,
        cfg,
        source_pool,
        target_pool,
        run_dir,
        extractor,
        start_iteration=start,
        opt_state=opt_state,
        load_image=load_image,
        on_sample=on_sample,
    )
    if not args.no_figures:
        records = RunLog.read(run_dir / "runlog.jsonl")
        if records:
            from .figures import loss_curve

            loss_curve(records, run_dir / "loss_curve.png")
    print(f"final checkpoint: {final}")
    return 0


def _translate_one(model, source_path, style_img, out_path, args):
    src = load_image(source_path)
    with torch.no_grad():
        out = model.translate(
            src,
            style_img,
            adain_bypass=args.adain_bypass,
            alpha_override=1.0 if args.alpha_one else None,
        )
    save_image(out, out_path)


def cmd_translate(args) -> int:
    config, _, _ = ckpt.load_model(args.checkpoint)
    model = build_model(config, seed=0)
    ckpt.restore_model(model, args.checkpoint)
    model.eval()

    style_img = None
    if not args.adain_bypass:
        if not args.style:
            raise ConfigurationError("--style is required unless --adain-bypass is set")
        style_img = load_image(args.style)

    source = Path(args.source)
    out = Path(args.out)
    if source.is_dir():
        paths = sorted(
            p for p in source.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not paths:
            raise ConfigurationError(f"no images to translate in {source}")
        out.mkdir(parents=True, exist_ok=True)
        for p in paths:
            _translate_one(model, p, style_img, out / (p.stem + ".png"), args)
        print(f"translated {len(paths)} images into {out}")
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        _translate_one(model, source, style_img, out, args)
        print(f"wrote {out}")
    return 0


def cmd_check(args) -> int:
    variants = [args.variant] if args.variant else None
    if args.checkpoint:
        config, _, _ = ckpt.load_model(args.checkpoint)
        model = build_model(config, seed=args.seed)
        ckpt.restore_model(model, args.checkpoint)
        results = checks.check_model_inversion(model, seed=args.seed)
        if args.suite not in ("inversion", "all"):
            results.extend(checks.run_suite(args.suite, seed=args.seed, variants=variants))
    else:
        results = checks.run_suite(args.suite, seed=args.seed, variants=variants)
    for r in results:
        print(r.line())
    if args.out:
        with open(args.out, "w") as f:
            for r in results:
                f.write(
                    json.dumps(
                        {
                            "suite": r.suite,
                            "name": r.name,
                            "passed": r.passed,
                            "value": r.value,
                            "threshold": r.threshold,
                        }
                    )
                    + "\n"
                )
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 2 if failed else 0


def _metric_pairs(a: Path, b: Path):
    if a.is_dir() != b.is_dir():
        raise ConfigurationError("metrics needs two files or two directories")
    if not a.is_dir():
        return [(a.name, a, b)]
    names_a = {p.name: p for p in a.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")}
    names_b = {p.name: p for p in b.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")}
    unpaired = sorted(set(names_a) ^ set(names_b))
    for name in unpaired:
        side = str(a) if name in names_a else str(b)
        print(f"warning: skipping unpaired file {name} (only in {side})", file=sys.stderr)
    return [(name, names_a[name], names_b[name]) for name in sorted(set(names_a) & set(names_b))]


def cmd_metrics(args) -> int:
    pairs = _metric_pairs(Path(args.first), Path(args.second))
    if not pairs:
        raise ConfigurationError("no image pairs to compare")
    records = []
    for name, pa, pb in pairs:
        report = compare_images(name, load_image(pa), load_image(pb))
        records.append(report.to_record())
    for rec in records:
        print(json.dumps(rec))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
        if not args.no_figures:
            from .figures import metrics_summary

            metrics_summary(records, out.with_suffix(".png"))
    return 0


def cmd_param_count(args) -> int:
    names = list(VARIANT_EXPANSIONS) if args.variant == "all" else [canonical_variant(args.variant)]
    for name in names:
        model = build_model(variant_config(name), seed=0)
        breakdown = param_count_breakdown(model)
        print(f"{name}")
        for key, value in breakdown.items():
            if key != "total":
                print(f"  {key:<16s} {value:>12,}")
        total = breakdown["total"]
        print(f"  {'total':<16s} {total:>12,}  ({total / 1e6:.2f}M)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="hflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on two unpaired image directories")
    p.add_argument("--config", help="JSON config file (see README for the schema)")
    p.add_argument("--profile", choices=sorted(PROFILES), help="named settings profile")
    p.add_argument("--variant", help="model variant: HF, HF+, HF++, HF† (alias HFt)")
    p.add_argument("--expansions", help="custom per-block expansions, e.g. '10,4'")
    p.add_argument("--source", help="source-domain image directory")
    p.add_argument("--target", help="target-domain image directory")
    p.add_argument("--run-dir", dest="run_dir", help="output directory for this run")
    p.add_argument("--backend", choices=["standin", "vgg19"], help="feature backend")
    p.add_argument("--vgg-weights", dest="vgg_weights", help="pretrained weight container")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--style-weight", dest="style_weight", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--resume", help="training-state checkpoint to resume from")
    p.add_argument("--no-figures", action="store_true", help="skip the loss-curve figure")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate an image (or directory) with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True, help="source image or directory")
    p.add_argument("--style", help="target-style image")
    p.add_argument("--out", required=True, help="output file or directory")
    p.add_argument("--adain-bypass", dest="adain_bypass", action="store_true",
                   help="skip style injection (reconstruction mode)")
    p.add_argument("--alpha-one", dest="alpha_one", action="store_true",
                   help="force every fusion weight to 1 (exact-inverse debug mode)")
    p.add_argument("--k", type=float, default=0.8,
                   help="style-selection fraction; recorded for provenance, "
                        "no effect at inference")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("check", help="run verification suites")
    p.add_argument("--suite", default="all",
                   choices=sorted(checks.SUITE_NAMES) + ["all"])
    p.add_argument("--variant", help="restrict inversion checks to one variant")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="check a saved model instead of a fresh init")
    p.add_argument("--out", help="write results as JSON lines")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("metrics", help="SSIM/PSNR/checkerboard reports for image pairs")
    p.add_argument("first", help="image file or directory")
    p.add_argument("second", help="image file or directory")
    p.add_argument("--out", help="also write records to this JSONL file")
    p.add_argument("--no-figures", action="store_true", help="skip the summary figure")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("param-count", help="print per-component parameter counts")
    p.add_argument("--variant", default="all", help="variant name or 'all'")
    p.set_defaults(func=cmd_param_count)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        if getattr(args, "variant", None) and args.command != "param-count":
            args.variant = canonical_variant(args.variant)
        return args.func(args)
    except HierarchyFlowError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
