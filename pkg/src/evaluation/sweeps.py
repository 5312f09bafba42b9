"""Variant ablation and label-efficiency sweeps, tabulated with pandas."""
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import pandas as pd

from src.config.run_config import EvalConfig, ModelConfig, TrainConfig
from src.data.bundle import DatasetBundle
from src.enums import EvalMode, Variant
from src.evaluation.probe import ProbeResult, evaluate
from src.logging_config import get_logger
from src.model.params import ModelParams, init_params
from src.numeric.rng import Rng
from src.training.trainer import resolve_model_config, train_loop

logger = get_logger("evaluation.sweeps")

RANDOM_INIT = "random_init"
METRIC_COLUMNS = ["roc_auc_macro", "pr_auc_macro", "accuracy"]


class SweepTables(NamedTuple):
    runs: pd.DataFrame
    summary: pd.DataFrame
    runs_path: Optional[Path]
    summary_path: Optional[Path]


def _row(result: ProbeResult, **keys) -> dict:
    return {**keys, **{m: getattr(result, m) for m in METRIC_COLUMNS},
            "n_train": result.n_train, "n_test": result.n_test}


def _write(runs: pd.DataFrame, by: str, out_dir: Optional[Union[str, Path]],
           stem: str) -> SweepTables:
    summary = (runs.groupby(by, sort=False)[METRIC_COLUMNS].median().reset_index())
    if out_dir is None:
        return SweepTables(runs, summary, None, None)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs_path, summary_path = out / f"{stem}_runs.csv", out / f"{stem}_summary.csv"
    runs.to_csv(runs_path, index=False)
    summary.to_csv(summary_path, index=False)
    logger.info("Wrote %s tables", stem, extra={"path": str(summary_path)})
    return SweepTables(runs, summary, runs_path, summary_path)


def ablate(train_bundle: DatasetBundle, eval_bundle: DatasetBundle,
           variants: Sequence[Variant], seeds: Sequence[int], train_config: TrainConfig,
           out_dir: Union[str, Path], model_config: Optional[ModelConfig] = None,
           eval_config: Optional[EvalConfig] = None) -> SweepTables:
    """Pre-train each variant per seed, probe on ``eval_bundle``, tabulate medians.

    A ``random_init`` row per seed probes untrained weights as the floor.
    """
    eval_config = eval_config or EvalConfig(mode=EvalMode.PROBE)
    mcfg = resolve_model_config(train_bundle, model_config)
    rows = []
    for seed in seeds:
        probe_cfg = eval_config.model_copy(update={"seed": seed})
        untrained = init_params(mcfg, Rng.derive(seed, "init"))
        rows.append(_row(evaluate(untrained, eval_bundle, probe_cfg),
                         variant=RANDOM_INIT, seed=seed))
        for variant in variants:
            cfg = train_config.model_copy(update={"variant": Variant(variant), "seed": seed})
            run_dir = Path(out_dir) / f"{Variant(variant).value}_seed{seed}"
            result = train_loop(cfg, train_bundle, run_dir, model_config=mcfg)
            probe = evaluate(result.state.params, eval_bundle, probe_cfg)
            rows.append(_row(probe, variant=Variant(variant).value, seed=seed))
            logger.info("Ablation %s seed %d: macro ROC-AUC %.4f", Variant(variant).value, seed,
                        probe.roc_auc_macro, extra={"variant": Variant(variant).value})
    return _write(pd.DataFrame(rows), "variant", out_dir, "ablation")


def label_sweep(params: ModelParams, bundle: DatasetBundle, fractions: Sequence[float],
                seeds: Sequence[int], eval_config: Optional[EvalConfig] = None,
                out_dir: Optional[Union[str, Path]] = None) -> SweepTables:
    """Probe one set of weights at several label fractions and seeds."""
    eval_config = eval_config or EvalConfig(mode=EvalMode.PROBE)
    rows = []
    for fraction in fractions:
        for seed in seeds:
            cfg = eval_config.model_copy(update={"label_fraction": fraction, "seed": seed})
            rows.append(_row(evaluate(params, bundle, cfg), label_fraction=fraction, seed=seed))
    return _write(pd.DataFrame(rows), "label_fraction", out_dir, "label_sweep")
