"""
Command-line entry point: ``avrobust <command> [options]``.

Every command reads its prerequisites from sibling directories of the output
root, writes ``<out>/<command>/`` and records a manifest.
"""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from pyavrobust.attacks.config import AttackConfig
from pyavrobust.attacks.evaluation import (
    adversarial_dataset,
    asr_matrix,
    clean_cosine,
    cosine_vs_asr,
    craft_adversarial,
    ensemble_table,
    iteration_ablation,
    rank_correlation,
    summarize_transfer,
    transfer_matrix,
)
from pyavrobust.avmodels.checkpoint import (
    load_checkpoint,
    load_grid,
    save_checkpoint,
    save_grid,
)
from pyavrobust.avmodels.network import AVModel, model_grid, predict
from pyavrobust.avmodels.training import final_accuracy, train_grid
from pyavrobust.defense.ablations import (
    pass_comparison,
    sampling_ablation,
    scheduler_ablation,
)
from pyavrobust.defense.training import adversarial_train, evaluate_defense
from pyavrobust.exceptions import (
    ConfigError,
    MissingArtifactError,
    OutputExistsError,
)
from pyavrobust.harness.artifacts import (
    output_directory,
    require,
    write_csv,
    write_manifest,
)
from pyavrobust.harness.config import (
    ExperimentConfig,
    apply_overrides,
    config_hash,
    dump_config,
    dumps_config,
    from_dict,
    parse_override,
    read_toml,
)
from pyavrobust.harness.report import build_report, write_report
from pyavrobust.harness.studies import (
    corruption_study,
    corruption_summary,
    masked_copy_study,
    sync_gap,
)
from pyavrobust.synthav.generator import frame_energy_correlation, generate_dataset
from pyavrobust.synthav.sample import AVDataset, AVSample, DatasetSplits

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_CLOBBER = 4

# flag dest -> (comma-separated config keys, type, help)
FlagTable = Dict[str, Tuple[str, type, str]]

ATTACK_FLAGS: FlagTable = {
    "method": ("attack.method", str, "attack method of single-method commands"),
    "eps": (
        "attack.budget.eps_v,attack.budget.eps_a",
        float,
        "L-infinity radius of both modalities",
    ),
    "steps": ("attack.budget.steps", int, "attack iterations K"),
    "test_samples": ("studies.test_samples", int, "attack only the first N test clips"),
}
DEFENSE_FLAGS: FlagTable = {
    "segments": ("defense.n_segments", int, "segments per clip S"),
    "sampling_ratio": ("defense.sampling_ratio", float, "segment sampling ratio alpha"),
    "scheduler": ("defense.scheduler.kind", str, "curriculum scheduler"),
    "epochs": ("defense.training.epochs", int, "adversarial training epochs"),
    "eps": (
        "defense.attack.budget.eps_v,defense.attack.budget.eps_a",
        float,
        "training and evaluation attack radius",
    ),
    "defense_model": ("studies.defense_model", str, "grid architecture to defend"),
    "test_samples": ("studies.test_samples", int, "evaluate on the first N test clips"),
}
TRAIN_FLAGS: FlagTable = {
    "epochs": ("training.epochs", int, "clean training epochs"),
}


class Context:
    """Resolved config, parsed flags and the command output directory."""

    def __init__(
        self, cfg: ExperimentConfig, args: argparse.Namespace, directory: Path
    ) -> None:
        self.cfg = cfg
        self.args = args
        self.directory = directory
        self.out = Path(cfg.out)
        self.progress = not args.no_progress

    def splits(self) -> DatasetSplits:
        return DatasetSplits.load(require(self.out / "gen-data" / "test.avd").parent)

    def grid(self) -> Dict[str, AVModel]:
        return load_grid(self.out / "train" / "checkpoints")

    def test_set(self, splits: DatasetSplits) -> AVDataset:
        return splits.test.head(self.cfg.studies.test_samples)

    def partners(self, splits: DatasetSplits) -> List[AVSample]:
        if self.cfg.studies.n_partners == 0:
            return []
        return list(splits.train.head(self.cfg.studies.n_partners))

    def surrogate_ids(self) -> Optional[List[str]]:
        return list(self.cfg.attack.surrogates) or None

    def method_configs(
        self, methods: Sequence[str], base: Optional[AttackConfig] = None
    ) -> List[AttackConfig]:
        base = base or self.cfg.attack
        return [base.with_method(method) for method in methods]

    def clean_checkpoint(self, model_id: str) -> AVModel:
        path = self.out / "train" / "checkpoints" / f"{model_id}.ckpt"
        return load_checkpoint(require(path))

    def defense_start(self) -> AVModel:
        """Fresh grid architecture, or its clean checkpoint with ``--warm-start``."""
        model_id = self.cfg.studies.defense_model
        if self.args.warm_start:
            return self.clean_checkpoint(model_id)
        grid = model_grid(self.cfg.seed, **self.cfg.geometry)
        if model_id not in grid:
            raise ConfigError(
                "studies.defense_model",
                f"unknown model {model_id!r}, choose from {sorted(grid)}",
            )
        return grid[model_id]

    def csv(self, table: pd.DataFrame, name: str) -> Path:
        return write_csv(table, self.directory / name)

    def write_json(self, payload: dict, name: str) -> Path:
        path = self.directory / name
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        path.write_text(text, encoding="utf-8")
        return path


def cmd_gen_data(ctx: Context) -> List[Path]:
    splits = generate_dataset(ctx.cfg.generator)
    files = list(splits.save(ctx.directory, ctx.cfg.generator.to_meta()).values())
    correlation = frame_energy_correlation(splits.test)
    table = pd.DataFrame(
        {"clip": np.arange(len(correlation)), "correlation": correlation}
    )
    files.append(ctx.csv(table, "energy_correlation.csv"))
    return files


def cmd_train(ctx: Context) -> List[Path]:
    splits = ctx.splits()
    grid = model_grid(ctx.cfg.seed, **ctx.cfg.geometry)
    trained, history = train_grid(grid, splits.train, ctx.cfg.training, splits.val)
    files = list(save_grid(trained, ctx.directory / "checkpoints").values())
    files.append(ctx.csv(history, "history.csv"))
    files.append(ctx.csv(final_accuracy(trained, splits.test), "accuracy.csv"))
    return files


def cmd_attack(ctx: Context) -> List[Path]:
    splits, grid = ctx.splits(), ctx.grid()
    test, partners = ctx.test_set(splits), ctx.partners(splits)
    method = ctx.cfg.attack.method
    rows, summary = [], []
    for model_id in ctx.surrogate_ids() or list(grid):
        if model_id not in grid:
            raise ConfigError("attack.surrogates", f"unknown model {model_id!r}")
        model = grid[model_id]
        results = craft_adversarial([model], test, ctx.cfg.attack, partners)
        eligible = predict(model, test) == test.y
        fooled = predict(model, adversarial_dataset(test, results)) != test.y
        for index, result in enumerate(results):
            linf_v, linf_a = result.linf
            rows.append(
                {
                    "model": model_id,
                    "clip": index,
                    "label": int(test.y[index]),
                    "eligible": bool(eligible[index]),
                    "success": bool(fooled[index]),
                    "best_iteration": result.best_iteration,
                    "linf_v": linf_v,
                    "linf_a": linf_a,
                }
            )
        asr = float(fooled[eligible].mean()) if eligible.any() else float("nan")
        summary.append(
            {
                "model": model_id,
                "method": method,
                "asr": asr,
                "eligible": int(eligible.sum()),
            }
        )
        logging.info(f"White-box {method} on {model_id}: ASR {asr:.3f}")
    return [
        ctx.csv(pd.DataFrame(rows), "clips.csv"),
        ctx.csv(pd.DataFrame(summary), "asr.csv"),
    ]


def cmd_transfer_matrix(ctx: Context) -> List[Path]:
    splits, grid = ctx.splits(), ctx.grid()
    configs = ctx.method_configs(ctx.cfg.studies.methods)
    table = transfer_matrix(
        grid,
        ctx.test_set(splits),
        configs,
        ctx.partners(splits),
        ctx.surrogate_ids(),
        ctx.progress,
    )
    files = [
        ctx.csv(table, "transfer.csv"),
        ctx.csv(summarize_transfer(table), "summary.csv"),
    ]
    for cfg in configs:
        matrix = asr_matrix(table, cfg.method).reset_index()
        files.append(ctx.csv(matrix, f"asr_{cfg.method}.csv"))
    return files


def cmd_ensemble_attack(ctx: Context) -> List[Path]:
    splits, grid = ctx.splits(), ctx.grid()
    configs = ctx.method_configs(ctx.cfg.studies.methods)
    table = ensemble_table(
        grid, ctx.test_set(splits), configs, ctx.partners(splits), ctx.progress
    )
    return [ctx.csv(table, "ensemble.csv")]


def cmd_cosine_study(ctx: Context) -> List[Path]:
    splits, grid = ctx.splits(), ctx.grid()
    methods = ctx.cfg.studies.cosine_methods
    transfer = None
    stored = ctx.out / "transfer-matrix" / "transfer.csv"
    if stored.is_file():
        candidate = pd.read_csv(stored)
        if set(methods) <= set(candidate["method"]):
            logging.info(f"Reusing {stored}.")
            transfer = candidate
    test = ctx.test_set(splits)
    configs = ctx.method_configs(methods)
    table = cosine_vs_asr(
        grid, test, configs, ctx.partners(splits), transfer, ctx.progress
    )
    summary = {
        "spearman": rank_correlation(table),
        "clean_cosine": clean_cosine(grid, test),
    }
    return [ctx.csv(table, "cosine_asr.csv"), ctx.write_json(summary, "summary.json")]


def cmd_ablate_iterations(ctx: Context) -> List[Path]:
    splits, grid = ctx.splits(), ctx.grid()
    table = iteration_ablation(
        grid,
        ctx.test_set(splits),
        ctx.cfg.attack,
        steps=ctx.cfg.studies.iteration_steps,
        methods=ctx.cfg.studies.iteration_methods,
        partners=ctx.partners(splits),
        surrogate_ids=ctx.surrogate_ids(),
        progress=ctx.progress,
    )
    return [ctx.csv(table, "iterations.csv")]


def cmd_defend(ctx: Context) -> List[Path]:
    splits = ctx.splits()
    model = ctx.defense_start()
    result = adversarial_train(
        model, splits.train, ctx.cfg.defense, ctx.test_set(splits), ctx.progress
    )
    return [
        save_checkpoint(result.model, ctx.directory / f"{model.model_id}.ckpt"),
        ctx.csv(result.log, "log.csv"),
        ctx.csv(result.schedule_trace, "schedule.csv"),
    ]


def cmd_eval_defense(ctx: Context) -> List[Path]:
    splits = ctx.splits()
    model_id = ctx.cfg.studies.defense_model
    defended = load_checkpoint(require(ctx.out / "defend" / f"{model_id}.ckpt"))
    clean = ctx.clean_checkpoint(model_id)
    attacks = ctx.method_configs(
        ctx.cfg.studies.defense_methods, ctx.cfg.defense.attack
    )
    test, partners = ctx.test_set(splits), ctx.partners(splits)
    table = pd.concat(
        [
            evaluate_defense(defended, attacks, test, partners).assign(
                variant="defended"
            ),
            evaluate_defense(clean, attacks, test, partners).assign(variant="clean"),
        ],
        ignore_index=True,
    )
    return [ctx.csv(table, "robust.csv")]


def cmd_corruption_study(ctx: Context) -> List[Path]:
    splits, grid = ctx.splits(), ctx.grid()
    studies = ctx.cfg.studies
    table = corruption_study(
        grid,
        splits.test,
        studies.mask_ratios,
        studies.mask_targets,
        studies.mask_seeds,
        ctx.cfg.seed,
    )
    files = [
        ctx.csv(table, "corruption.csv"),
        ctx.csv(corruption_summary(table), "summary.csv"),
    ]
    ratio = max(studies.mask_ratios)
    if ratio > 0:
        gap = sync_gap(grid, splits.test, ratio, studies.mask_seeds, ctx.cfg.seed)
        files.append(ctx.csv(gap, "sync_gap.csv"))
    return files


def cmd_masked_copy_study(ctx: Context) -> List[Path]:
    splits, grid = ctx.splits(), ctx.grid()
    table = masked_copy_study(
        grid,
        ctx.test_set(splits),
        ctx.cfg.attack,
        ctx.cfg.studies.copy_mask_ratios,
        ctx.cfg.studies.mask_targets,
        ctx.partners(splits),
        ctx.surrogate_ids(),
    )
    return [ctx.csv(table, "masked_copies.csv")]


def cmd_ablate_sampling(ctx: Context) -> List[Path]:
    splits = ctx.splits()
    model = ctx.defense_start()
    table = sampling_ablation(
        model,
        splits.train,
        ctx.test_set(splits),
        ctx.cfg.defense,
        ratios=ctx.cfg.studies.sampling_ratios,
        partners=ctx.partners(splits),
    )
    passes = pass_comparison(model, splits.train, ctx.cfg.defense)
    return [ctx.csv(table, "sampling.csv"), ctx.csv(passes, "passes.csv")]


def cmd_ablate_scheduler(ctx: Context) -> List[Path]:
    splits = ctx.splits()
    table = scheduler_ablation(
        ctx.defense_start(),
        splits.train,
        ctx.test_set(splits),
        ctx.cfg.defense,
        kinds=ctx.cfg.studies.schedulers,
        partners=ctx.partners(splits),
    )
    return [ctx.csv(table, "scheduler.csv")]


def cmd_report(ctx: Context) -> List[Path]:
    report = build_report(ctx.out, dumps_config(ctx.cfg), config_hash(ctx.cfg)[:12])
    return list(write_report(report, ctx.directory, figures=ctx.args.figures).values())


Handler = Callable[[Context], List[Path]]

COMMANDS: Dict[str, Tuple[Handler, str, Tuple[FlagTable, ...]]] = {
    "gen-data": (cmd_gen_data, "generate the synthetic splits", ()),
    "train": (cmd_train, "train the eight-model grid on clean data", (TRAIN_FLAGS,)),
    "attack": (cmd_attack, "white-box attack of every grid model", (ATTACK_FLAGS,)),
    "transfer-matrix": (
        cmd_transfer_matrix,
        "surrogate x victim ASR per method",
        (ATTACK_FLAGS,),
    ),
    "ensemble-attack": (
        cmd_ensemble_attack,
        "leave-one-out ensemble attacks",
        (ATTACK_FLAGS,),
    ),
    "defend": (cmd_defend, "curriculum adversarial training", (DEFENSE_FLAGS,)),
    "eval-defense": (
        cmd_eval_defense,
        "robust accuracy of the defended and the clean model",
        (DEFENSE_FLAGS,),
    ),
    "corruption-study": (cmd_corruption_study, "accuracy under temporal masking", ()),
    "cosine-study": (
        cmd_cosine_study,
        "cross-modal cosine against transferability",
        (ATTACK_FLAGS,),
    ),
    "ablate-iterations": (
        cmd_ablate_iterations,
        "ASR against the number of iterations",
        (ATTACK_FLAGS,),
    ),
    "ablate-sampling": (
        cmd_ablate_sampling,
        "robustness and crafting cost against alpha",
        (DEFENSE_FLAGS,),
    ),
    "ablate-scheduler": (
        cmd_ablate_scheduler,
        "robustness per curriculum scheduler",
        (DEFENSE_FLAGS,),
    ),
    "masked-copy-study": (
        cmd_masked_copy_study,
        "transferability of masked-copy attacks",
        (ATTACK_FLAGS,),
    ),
    "report": (cmd_report, "trend verdicts, tables and plot series", ()),
}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML config file")
    common.add_argument(
        "--seed", type=int, default=None, help="global seed, overrides every block seed"
    )
    common.add_argument("--out", type=str, default=None, help="output root directory")
    common.add_argument(
        "--overwrite", action="store_true", help="replace existing results"
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging level",
    )
    common.add_argument("--no-progress", action="store_true", help="hide progress bars")
    common.add_argument("--figures", action="store_true", help="render PNG figures")
    common.add_argument(
        "--warm-start",
        action="store_true",
        help="start adversarial training from the clean checkpoint",
    )
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key, e.g. attack.budget.steps=5",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avrobust",
        description="Audio-visual adversarial attacks and curriculum adversarial training.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()
    for name, (_, help_text, flag_tables) in COMMANDS.items():
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        for flags in flag_tables:
            for dest, (_, kind, flag_help) in flags.items():
                sub.add_argument(
                    f"--{dest.replace('_', '-')}",
                    dest=dest,
                    type=kind,
                    default=None,
                    help=flag_help,
                )
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then ``--set`` overrides, then named flags, then ``--seed``."""
    data = read_toml(args.config) if args.config is not None else {}
    overrides = [parse_override(raw) for raw in args.overrides]
    for flags in COMMANDS[args.command][2]:
        for dest, (keys, _, _) in flags.items():
            value = getattr(args, dest, None)
            if value is not None:
                overrides.extend((key, value) for key in keys.split(","))
    if args.out is not None:
        overrides.append(("out", args.out))
    cfg = from_dict(apply_overrides(data, overrides))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def run(args: argparse.Namespace) -> Path:
    """Execute one parsed command; returns its output directory."""
    cfg = resolve_config(args)
    handler = COMMANDS[args.command][0]
    with output_directory(cfg.out, args.command, args.overwrite) as directory:
        files = handler(Context(cfg, args, directory))
        files.append(dump_config(cfg, directory / "config.toml"))
        write_manifest(directory, args.command, cfg, files)
    logging.info(f"{args.command}: wrote {len(files)} files to {directory}")
    return directory


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Returns
    -------
    status: int
        0 on success, 2 for an invalid config, 3 for a missing prerequisite,
        4 when results would be overwritten and 1 for any other error.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level, format="%(levelname)s:%(message)s", force=True
    )
    try:
        run(args)
    except ConfigError as error:
        logging.error(f"Invalid config field {error.field}: {error}")
        return EXIT_CONFIG
    except MissingArtifactError as error:
        logging.error(f"Missing prerequisite {error.path}")
        return EXIT_MISSING
    except OutputExistsError as error:
        logging.error(f"Refusing to overwrite {error.path}")
        return EXIT_CLOBBER
    except (ValueError, KeyError, RuntimeError, OSError) as error:
        logging.error(f"{args.command} failed: {error}")
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
