"""Command-line front end: data generation, pre-training, evaluation, verification, sweeps.

Every command writes a ``RunManifest`` next to its outputs. Exit codes:
0 success, 1 verification failure, 2 usage error, 3 I/O or file-format error.
"""
import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

from pydantic import ValidationError

from src import __version__
from src.config.run_config import (
    DataGenConfig,
    EvalConfig,
    ModelConfig,
    RunManifest,
    TrainConfig,
    load_run_config,
)
from src.config.settings import Settings
from src.data.bundle import BundleFormatError, load_bundle, serialize_bundle
from src.data.synth import generate_from_config
from src.enums import EvalMode, ExitCode, Variant
from src.evaluation.probe import ProbeError, evaluate
from src.evaluation.sweeps import ablate, label_sweep
from src.logging_config import get_logger, setup_logging
from src.model.archive import ArchiveFormatError
from src.training.checkpoint import CheckpointError, load_model_params
from src.training.trainer import fit_to_bundle, train_loop
from src.verification.suite import VERIFY_VOCAB, format_report, run_gradcheck, run_losscheck

logger = get_logger("cli")

MANIFEST_NAME = "manifest.yml"

# Flag (and config-file key) -> TrainConfig field
TRAIN_FLAGS = {
    "epochs": "epochs",
    "lr": "base_lr",
    "warmup_epochs": "warmup_epochs",
    "batch_paired": "batch_paired",
    "batch_unpaired": "batch_unpaired",
    "mask_ratio": "mask_ratio",
    "ema": "ema_decay",
    "lambda_clip": "lambda_lg_clip",
    "lambda_mfd": "lambda_mfd",
    "weight_decay": "weight_decay",
    "max_grad_norm": "max_grad_norm",
    "variant": "variant",
    "seed": "seed",
    "norm_pixel_targets": "norm_pixel_targets",
    "per_pixel_mse": "per_pixel_mse",
    "distill_masked_only": "distill_masked_only",
    "checkpoint_every": "checkpoint_every",
    "log_every": "log_every",
}
EVAL_FLAGS = {
    "mode": "mode",
    "label_fraction": "label_fraction",
    "seed": "seed",
    "use_bridge": "use_bridge",
    "test_fraction": "test_fraction",
}
MODEL_PRESETS = {"desk": ModelConfig.desk, "tiny": ModelConfig.tiny}


class UsageError(ValueError):
    """Raised for flag values argparse cannot reject on its own."""


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------

def parse_size(text: str) -> tuple[int, int]:
    """``"32x32"`` -> ``(32, 32)``."""
    try:
        h, w = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _csv_list(cast):
    def parse(text: str) -> list:
        try:
            return [cast(part.strip()) for part in text.split(",") if part.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None
    return parse


def merge_config(defaults: dict[str, Any], file_values: dict[str, Any],
                 flag_values: dict[str, Any], aliases: dict[str, str]) -> dict[str, Any]:
    """defaults < config file < flags; keys may be flag names or field names."""
    merged = dict(defaults)
    for source in (file_values, flag_values):
        for key, value in source.items():
            key = key.replace("-", "_")
            if value is None:
                continue
            merged[aliases.get(key, key)] = value
    return merged


def _given(args: argparse.Namespace, names: Sequence[str]) -> dict[str, Any]:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _file_values(args: argparse.Namespace, allowed: dict[str, str]) -> dict[str, Any]:
    if not getattr(args, "config", None):
        return {}
    values = load_run_config(args.config)
    known = set(allowed) | set(allowed.values())
    return {k: v for k, v in values.items() if k in known}


def train_config_from_args(args: argparse.Namespace) -> TrainConfig:
    merged = merge_config({}, _file_values(args, TRAIN_FLAGS),
                          _given(args, list(TRAIN_FLAGS)), TRAIN_FLAGS)
    return TrainConfig(**merged)


def eval_config_from_args(args: argparse.Namespace) -> EvalConfig:
    merged = merge_config({}, _file_values(args, EVAL_FLAGS),
                          _given(args, list(EVAL_FLAGS)), EVAL_FLAGS)
    return EvalConfig(**merged)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--log-level", type=str, default=None,
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                   help="Logging level (default: MASKEDCLIP_LOG_LEVEL or INFO)")
    p.add_argument("--log-format", type=str, default=None, choices=["json", "text"],
                   help="Log line format (default: json)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None,
                   help="YAML file whose keys mirror these flag names; flags win")
    p.add_argument("--model", type=str, default="desk", choices=sorted(MODEL_PRESETS),
                   help="Model size preset (default: desk)")
    p.add_argument("--epochs", type=int, default=None, help="Pre-training epochs (default: 200)")
    p.add_argument("--lr", type=float, default=None, help="Base learning rate (default: 1.5e-4)")
    p.add_argument("--warmup-epochs", type=int, default=None,
                   help="Linear warmup epochs (default: epochs / 5)")
    p.add_argument("--batch-paired", type=int, default=None,
                   help="Paired items per batch (default: 32)")
    p.add_argument("--batch-unpaired", type=int, default=None,
                   help="Unpaired items per batch (default: 32)")
    p.add_argument("--mask-ratio", type=float, default=None,
                   help="Fraction of patches masked (default: 0.75)")
    p.add_argument("--ema", type=float, default=None,
                   help="Momentum encoder decay (default: 0.999)")
    p.add_argument("--lambda-clip", type=float, default=None,
                   help="Weight of the label-guided contrastive loss (default: 0.01)")
    p.add_argument("--lambda-mfd", type=float, default=None,
                   help="Weight of the feature-distillation loss (default: 0.01)")
    p.add_argument("--weight-decay", type=float, default=None,
                   help="Decoupled weight decay (default: 0.05)")
    p.add_argument("--max-grad-norm", type=float, default=None,
                   help="Clip the global gradient norm to this value (default: off)")
    p.add_argument("--variant", type=str, default=None, choices=[v.value for v in Variant],
                   help="Objective variant (default: maskedclip)")
    p.add_argument("--seed", type=int, default=None, help="Root seed (default: 0)")
    p.add_argument("--norm-pixel-targets", action="store_true", default=None,
                   help="Normalise each target patch before the reconstruction loss")
    p.add_argument("--literal-mse", dest="per_pixel_mse", action="store_false", default=None,
                   help="Use the un-normalised squared L2 per patch")
    p.add_argument("--distill-masked-only", action="store_true", default=None,
                   help="Distil only at masked positions")
    p.add_argument("--checkpoint-every", type=int, default=None,
                   help="Epochs between checkpoints (default: 10)")
    p.add_argument("--log-every", type=int, default=None,
                   help="Steps between progress log records (default: 10)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskedclip",
        description="MaskedCLIP desk: masked image modelling + label-guided CLIP pre-training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Generate a synthetic paired/unpaired bundle")
    p.add_argument("--paired", type=int, required=True, help="Number of paired items")
    p.add_argument("--unpaired", type=int, default=0, help="Number of unpaired images")
    p.add_argument("--classes", type=int, default=4, help="Class count, 2 to 8 (default: 4)")
    p.add_argument("--size", type=parse_size, default=(32, 32), help="Image size HxW")
    p.add_argument("--channels", type=int, default=3, help="Image channels (default: 3)")
    p.add_argument("--patch", type=int, default=4, help="Patch side (default: 4)")
    p.add_argument("--seed", type=int, default=0, help="Root seed (default: 0)")
    p.add_argument("--identifier-fraction", type=float, default=0.0,
                   help="Share of pairs labelled by a unique identifier (default: 0)")
    p.add_argument("--max-text-len", type=int, default=16,
                   help="Token length stored with the vocabulary (default: 16)")
    p.add_argument("--out", type=str, required=True, help="Output bundle path")
    _add_common(p)

    p = sub.add_parser("pretrain", help="Pre-train on a bundle")
    p.add_argument("--bundle", type=str, required=True, help="Input bundle path")
    p.add_argument("--out", type=str, required=True, help="Output run directory")
    p.add_argument("--resume", type=str, default=None, help="Checkpoint to resume from")
    _add_train_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="Linear probe or fine-tune a checkpoint")
    p.add_argument("--checkpoint", type=str, required=True, help="Trainer checkpoint path")
    p.add_argument("--bundle", type=str, required=True, help="Evaluation bundle path")
    p.add_argument("--out", type=str, required=True, help="Result file (YAML)")
    p.add_argument("--config", type=str, default=None, help="YAML file of eval flag values")
    p.add_argument("--mode", type=str, default=None, choices=[m.value for m in EvalMode],
                   help="probe or finetune (default: probe)")
    p.add_argument("--label-fraction", type=float, default=None,
                   help="Share of training rows used, in (0, 1] (default: 1.0)")
    p.add_argument("--test-fraction", type=float, default=None,
                   help="Held-out share per class (default: 0.3)")
    p.add_argument("--seed", type=int, default=None, help="Split and sampling seed (default: 0)")
    p.add_argument("--use-bridge", action="store_true", default=None,
                   help="Probe bridge features instead of encoder features")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every loss")
    p.add_argument("--seed", type=int, default=0, help="Seed of the random model (default: 0)")
    p.add_argument("--coords", type=int, default=64,
                   help="Sampled coordinates per parameter (default: 64)")
    p.add_argument("--inject-fault", action="store_true",
                   help="Corrupt analytic gradients to confirm failures are caught")
    p.add_argument("--model", type=str, default="tiny", choices=sorted(MODEL_PRESETS),
                   help="Model scale: tiny is a fast scale-down, desk checks the full-size "
                        "networks (slow) (default: tiny)")
    _add_common(p)

    p = sub.add_parser("losscheck", help="Compare losses against oracles and closed forms")
    p.add_argument("--seed", type=int, default=0, help="Seed of the random inputs (default: 0)")
    _add_common(p)

    p = sub.add_parser("ablate", help="Pre-train variants per seed and probe each")
    p.add_argument("--bundle", type=str, required=True, help="Pre-training bundle path")
    p.add_argument("--eval-bundle", type=str, required=True, help="Probe bundle path")
    p.add_argument("--out", type=str, required=True, help="Output directory")
    p.add_argument("--variants", type=_csv_list(str),
                   default=[Variant.MASKEDCLIP.value, Variant.MAE_CLIP_BRIDGE.value,
                            Variant.MAE_CLIP_SHARED.value],
                   help="Comma-separated variants (default: maskedclip,mae_clip_bridge,"
                        "mae_clip_shared)")
    p.add_argument("--seeds", type=_csv_list(int), default=[0, 1, 2],
                   help="Comma-separated seeds (default: 0,1,2)")
    _add_train_flags(p)
    _add_common(p)

    p = sub.add_parser("label-sweep", help="Probe one checkpoint at several label fractions")
    p.add_argument("--checkpoint", type=str, required=True, help="Trainer checkpoint path")
    p.add_argument("--bundle", type=str, required=True, help="Evaluation bundle path")
    p.add_argument("--out", type=str, required=True, help="Output directory")
    p.add_argument("--fractions", type=_csv_list(float), default=[0.1, 0.5, 1.0],
                   help="Comma-separated label fractions (default: 0.1,0.5,1.0)")
    p.add_argument("--seeds", type=_csv_list(int), default=[0, 1, 2],
                   help="Comma-separated seeds (default: 0,1,2)")
    _add_common(p)
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _now() -> datetime:
    return datetime.now(timezone.utc)


def _manifest(command: str, config: dict[str, Any], seed: int) -> RunManifest:
    return RunManifest(command=command, config=config, seed=seed,
                       tool_version=__version__, started_at=_now())


def _finish(manifest: RunManifest, path: Path, **artifacts: Path) -> None:
    manifest.artifacts.update({k: str(v) for k, v in artifacts.items()})
    manifest.finished_at = _now()
    manifest.write(path)


def cmd_gen_data(args: argparse.Namespace) -> int:
    height, width = args.size
    config = DataGenConfig(paired=args.paired, unpaired=args.unpaired, classes=args.classes,
                           height=height, width=width, channels=args.channels,
                           patch=args.patch, seed=args.seed,
                           identifier_fraction=args.identifier_fraction)
    bundle = generate_from_config(config, max_text_len=args.max_text_len)
    out = Path(args.out)
    manifest = _manifest("gen-data", config.model_dump(mode="json"), config.seed)
    serialize_bundle(bundle, out)
    _finish(manifest, out.with_name(out.name + ".manifest.yml"), bundle=out)
    print(f"Wrote {bundle.n_paired} paired + {bundle.n_unpaired} unpaired items to {out}")
    return ExitCode.OK


def _model_preset(args: argparse.Namespace, bundle) -> ModelConfig:
    return fit_to_bundle(MODEL_PRESETS[args.model](), bundle)


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = train_config_from_args(args)
    bundle = load_bundle(args.bundle)
    model_config = _model_preset(args, bundle)
    out_dir = Path(args.out)
    manifest = _manifest("pretrain", {"train": config.model_dump(mode="json"),
                                      "model": model_config.model_dump(mode="json"),
                                      "bundle": args.bundle}, config.seed)
    manifest.write(out_dir / MANIFEST_NAME)
    result = train_loop(config, bundle, out_dir, model_config=model_config,
                        resume_from=args.resume)
    _finish(manifest, out_dir / MANIFEST_NAME, checkpoint=result.checkpoint_path,
            step_log=result.log_path)
    last = result.records[-1].losses["total"] if result.records else float("nan")
    print(f"Trained {len(result.records)} steps ({config.variant.value}); "
          f"final total loss {last:.5f}; checkpoint {result.checkpoint_path}")
    return ExitCode.OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = eval_config_from_args(args)
    params = load_model_params(args.checkpoint)
    bundle = load_bundle(args.bundle)
    out = Path(args.out)
    manifest = _manifest("eval", config.model_dump(mode="json"), config.seed)
    result = evaluate(params, bundle, config)
    result.write(out)
    _finish(manifest, out.with_name(out.name + ".manifest.yml"), results=out)
    print(f"{config.mode.value}: macro ROC-AUC {result.roc_auc_macro:.4f}, "
          f"PR-AUC {result.pr_auc_macro:.4f}, accuracy {result.accuracy:.4f}")
    return ExitCode.OK


def _report(rows) -> int:
    print(format_report(rows))
    return ExitCode.OK if all(r.passed for r in rows) else ExitCode.VERIFICATION_FAILED


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.coords < 1:
        raise UsageError(f"--coords must be >= 1, got {args.coords}")
    model_config = MODEL_PRESETS[args.model](vocab_size=VERIFY_VOCAB)
    return _report(run_gradcheck(seed=args.seed, n_coords=args.coords,
                                 inject_fault=args.inject_fault, model_config=model_config))


def cmd_losscheck(args: argparse.Namespace) -> int:
    return _report(run_losscheck(seed=args.seed))


def cmd_ablate(args: argparse.Namespace) -> int:
    config = train_config_from_args(args)
    variants = [Variant(v) for v in args.variants]
    train_bundle = load_bundle(args.bundle)
    eval_bundle = load_bundle(args.eval_bundle)
    out_dir = Path(args.out)
    manifest = _manifest("ablate", {"train": config.model_dump(mode="json"),
                                    "variants": [v.value for v in variants],
                                    "seeds": list(args.seeds)}, config.seed)
    manifest.write(out_dir / MANIFEST_NAME)
    tables = ablate(train_bundle, eval_bundle, variants, args.seeds, config, out_dir,
                    model_config=_model_preset(args, train_bundle))
    _finish(manifest, out_dir / MANIFEST_NAME, runs=tables.runs_path,
            summary=tables.summary_path)
    print(tables.summary.to_string(index=False))
    return ExitCode.OK


def cmd_label_sweep(args: argparse.Namespace) -> int:
    for fraction in args.fractions:
        if not 0.0 < fraction <= 1.0:
            raise UsageError(f"label fractions must lie in (0, 1], got {fraction}")
    params = load_model_params(args.checkpoint)
    bundle = load_bundle(args.bundle)
    out_dir = Path(args.out)
    manifest = _manifest("label-sweep", {"fractions": list(args.fractions),
                                         "seeds": list(args.seeds),
                                         "checkpoint": args.checkpoint}, args.seeds[0])
    tables = label_sweep(params, bundle, args.fractions, args.seeds, out_dir=out_dir)
    _finish(manifest, out_dir / MANIFEST_NAME, runs=tables.runs_path,
            summary=tables.summary_path)
    print(tables.summary.to_string(index=False))
    return ExitCode.OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "losscheck": cmd_losscheck,
    "ablate": cmd_ablate,
    "label-sweep": cmd_label_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else ExitCode.USAGE

    settings = Settings()
    setup_logging(level=args.log_level or settings.log_level,
                  fmt=args.log_format or settings.log_format)
    try:
        return int(COMMANDS[args.command](args))
    except (OSError, BundleFormatError, ArchiveFormatError, CheckpointError) as e:
        logger.error("%s", e, extra={"command": args.command})
        print(f"error: {e}", file=sys.stderr)
        return ExitCode.IO
    except (ValidationError, ValueError, ProbeError) as e:
        logger.error("%s", e, extra={"command": args.command})
        print(f"error: {e}", file=sys.stderr)
        return ExitCode.USAGE


if __name__ == "__main__":
    sys.exit(main())
