"""
Report assembly from stored command results.

A report only reads the CSV files the commands wrote, so regenerating it from
the same results directory is bit-identical.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
import pandas as pd
from matplotlib import pyplot as plt

from pyavrobust.attacks.evaluation import rank_correlation, summarize_transfer
from pyavrobust.exceptions import MissingArtifactError
from pyavrobust.harness.studies import corruption_summary

RESULT_FILES: Dict[str, str] = {
    "corruption": "corruption-study/corruption.csv",
    "sync_gap": "corruption-study/sync_gap.csv",
    "transfer": "transfer-matrix/transfer.csv",
    "ensemble": "ensemble-attack/ensemble.csv",
    "cosine": "cosine-study/cosine_asr.csv",
    "iterations": "ablate-iterations/iterations.csv",
    "sampling": "ablate-sampling/sampling.csv",
    "passes": "ablate-sampling/passes.csv",
    "scheduler": "ablate-scheduler/scheduler.csv",
    "robust": "eval-defense/robust.csv",
    "masked_copies": "masked-copy-study/masked_copies.csv",
}
NOISE = 0.02


@dataclass(frozen=True)
class Verdict:
    """One trend check; ``line`` starts with REPRODUCED or NOT-REPRODUCED."""

    name: str
    reproduced: bool
    detail: str

    @property
    def line(self) -> str:
        token = "REPRODUCED" if self.reproduced else "NOT-REPRODUCED"
        return f"{token} {self.name}: {self.detail}"


@dataclass
class Report:
    """
    Attributes
    -----------
    experiment_id: str
        Leading characters of the config hash.
    config: str
        TOML echo of the experiment config.
    tables: Dict[str, pd.DataFrame]
        Result tables keyed as in ``RESULT_FILES`` (plus derived summaries).
    verdicts: List[Verdict]
    series: Dict[str, pd.DataFrame]
        Plot-ready (x, y, series) frames keyed by figure name.
    """

    experiment_id: str
    config: str
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    verdicts: List[Verdict] = field(default_factory=list)
    series: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def to_markdown(self) -> str:
        lines = [f"# Report {self.experiment_id}", "", "## Verdicts", ""]
        lines += [v.line for v in self.verdicts] or ["no trend could be checked"]
        lines += ["", "## Config", "", "```toml", self.config.rstrip(), "```"]
        for name, table in self.tables.items():
            csv = table.to_csv(index=False).rstrip()
            lines += ["", f"## {name}", "", "```csv", csv, "```"]
        return "\n".join(lines) + "\n"


def _series(frame: pd.DataFrame, x: str, y: str, label: str) -> pd.DataFrame:
    out = pd.DataFrame({"x": frame[x], "y": frame[y], "series": frame[label]})
    return out.reset_index(drop=True)


def _single_series(frame: pd.DataFrame, x: str, y: str, label: str) -> pd.DataFrame:
    return _series(frame.assign(series=label), x, y, "series")


def _corruption(tables: Dict[str, pd.DataFrame]) -> List[Verdict]:
    summary = tables["corruption_summary"]
    verdicts = []
    worst = 0.0
    for _, group in summary.groupby("target", sort=False):
        accuracy = group.sort_values("rho")["accuracy"].to_numpy()
        worst = max(worst, float(np.max(np.diff(accuracy), initial=0.0)))
    verdicts.append(
        Verdict(
            "corruption.monotone",
            worst <= NOISE,
            f"largest accuracy increase with rho is {worst:.3f} (tolerance {NOISE})",
        )
    )
    masked = summary[summary["rho"] > 0]
    by_target = masked.groupby("target")["accuracy"].mean()
    if {"A_only", "V_only"} <= set(by_target.index):
        verdicts.append(
            Verdict(
                "corruption.visual_reliance",
                bool(by_target["V_only"] <= by_target["A_only"]),
                f"V_only {by_target['V_only']:.3f} vs A_only {by_target['A_only']:.3f}",
            )
        )
    if "sync_gap" in tables and len(tables["sync_gap"]) > 1:
        gap = tables["sync_gap"]["gap"]
        sem = float(gap.sem(ddof=1))
        verdicts.append(
            Verdict(
                "corruption.sync_vs_async",
                bool(gap.mean() >= -sem),
                f"mean accuracy loss of sync over async {gap.mean():.3f} (sem {sem:.3f})",
            )
        )
    return verdicts


def _transfer(tables: Dict[str, pd.DataFrame]) -> List[Verdict]:
    transfer = tables["transfer"]
    summary = tables["transfer_summary"].set_index("method")["blackbox_asr"]
    verdicts = []
    if {"TMA", "TIA", "MMA", "FGSM"} <= set(summary.index):
        ordered = (
            summary["TMA"] > summary["TIA"]
            and summary["TMA"] > summary["MMA"] > summary["FGSM"]
            and summary["TMA"] - summary["FGSM"] >= 0.10
        )
        verdicts.append(
            Verdict(
                "transfer.ordering",
                bool(ordered),
                "black-box ASR "
                + ", ".join(
                    f"{m} {summary[m]:.3f}" for m in ("TMA", "TIA", "MMA", "FGSM")
                ),
            )
        )
    whitebox = transfer[
        (transfer["surrogate"] == transfer["victim"]) & (transfer["method"] == "TMA")
    ]
    if len(whitebox):
        lowest = float(whitebox["asr"].min())
        verdicts.append(
            Verdict(
                "transfer.whitebox",
                lowest >= 0.95,
                f"lowest white-box TMA ASR {lowest:.3f}",
            )
        )
    return verdicts


def _ensemble(tables: Dict[str, pd.DataFrame]) -> List[Verdict]:
    transfer, ensemble = tables["transfer"], tables["ensemble"]
    blackbox = transfer[transfer["surrogate"] != transfer["victim"]]
    single = blackbox.groupby(["method", "victim"])["asr"].mean()
    failures = []
    for _, row in ensemble.iterrows():
        key = (row["method"], row["victim"])
        if key in single.index and row["asr"] < single[key]:
            failures.append(f"{key[0]}->{key[1]}")
    detail = "ensemble >= mean single-surrogate ASR for every victim"
    if failures:
        detail = "ensemble below single-surrogate ASR for " + ", ".join(failures)
    return [Verdict("ensemble.boost", not failures, detail)]


def _cosine(tables: Dict[str, pd.DataFrame]) -> List[Verdict]:
    # rank_correlation pairs ASR with -cosine
    rho = -rank_correlation(tables["cosine"])
    return [
        Verdict(
            "cosine.rank",
            rho < 0,
            f"Spearman correlation of cosine and ASR {rho:.3f}",
        )
    ]


def _defense(tables: Dict[str, pd.DataFrame]) -> List[Verdict]:
    robust = tables["robust"]
    tma = robust[robust["method"] == "TMA"].set_index("variant")["robust_acc"]
    if not {"defended", "clean"} <= set(tma.index):
        return []
    gain = float(tma["defended"] - tma["clean"])
    return [
        Verdict(
            "defense.efficacy",
            gain >= 0.20,
            f"robust accuracy gain under TMA {gain:.3f}",
        )
    ]


def _scheduler(tables: Dict[str, pd.DataFrame]) -> List[Verdict]:
    robust = tables["scheduler"].set_index("value")["robust_acc"]
    if "none" not in robust.index:
        return []
    others = [k for k in ("cyclic", "linear", "cosine") if k in robust.index]
    gains = {k: float(robust[k] - robust["none"]) for k in others}
    return [
        Verdict(
            "defense.scheduler",
            bool(gains) and all(g >= 0.01 for g in gains.values()),
            "gain over none " + ", ".join(f"{k} {g:.3f}" for k, g in gains.items()),
        )
    ]


def _sampling(tables: Dict[str, pd.DataFrame]) -> List[Verdict]:
    table = tables["sampling"].sort_values("value")
    drops = float(np.max(-np.diff(table["robust_acc"].to_numpy()), initial=0.0))
    growing = bool(np.all(np.diff(table["fwd_passes"].to_numpy()) > 0))
    return [
        Verdict(
            "defense.sampling",
            drops <= NOISE and growing,
            f"largest robust accuracy drop with alpha {drops:.3f}, passes increasing: {growing}",
        )
    ]


def _passes(tables: Dict[str, pd.DataFrame]) -> List[Verdict]:
    ratio = float(tables["passes"].set_index("mode").loc["universal", "ratio"])
    return [
        Verdict(
            "defense.passes",
            ratio <= 0.25,
            f"crafting frames relative to per-frame AT {ratio:.3f}",
        )
    ]


Check = Callable[[Dict[str, pd.DataFrame]], List[Verdict]]

_CHECKS: List[Tuple[Tuple[str, ...], Check]] = [
    (("corruption",), _corruption),
    (("transfer",), _transfer),
    (("transfer", "ensemble"), _ensemble),
    (("cosine",), _cosine),
    (("robust",), _defense),
    (("scheduler",), _scheduler),
    (("sampling",), _sampling),
    (("passes",), _passes),
]


def _plot_series(tables: Dict[str, pd.DataFrame]) -> Dict[str, pd.DataFrame]:
    series = {}
    if "corruption_summary" in tables:
        series["accuracy-vs-rho"] = _series(
            tables["corruption_summary"], "rho", "accuracy", "target"
        )
    if "iterations" in tables:
        series["asr-vs-k"] = _series(
            tables["iterations"], "K", "blackbox_asr", "method"
        )
    if "sampling" in tables:
        series["robust-acc-vs-alpha"] = _single_series(
            tables["sampling"], "value", "robust_acc", "robust_acc"
        )
    if "scheduler" in tables:
        series["scheduler-comparison"] = _single_series(
            tables["scheduler"], "value", "robust_acc", "robust_acc"
        )
    if "masked_copies" in tables:
        series["asr-vs-rho"] = _series(tables["masked_copies"], "rho", "asr", "target")
    if "cosine" in tables:
        series["cosine-vs-asr"] = _series(
            tables["cosine"], "mean_cosine", "blackbox_asr", "method"
        )
    return series


def build_report(out: str | Path, config: str, experiment_id: str) -> Report:
    """
    Collect the stored results under ``out`` into a report.

    Parameters
    ----------
    out:
        Output root holding one directory per command.
    config:
        TOML echo of the experiment config.
    experiment_id:
        Identifier printed in the report.

    Returns
    -------
    report: Report

    Raises
    -------
    MissingArtifactError:
        No known result file exists under ``out``.
    """
    out = Path(out)
    tables: Dict[str, pd.DataFrame] = {}
    for name, relative in RESULT_FILES.items():
        path = out / relative
        if path.is_file():
            tables[name] = pd.read_csv(path)
    if not tables:
        raise MissingArtifactError(str(out / "*" / "*.csv"))
    if "corruption" in tables:
        tables["corruption_summary"] = corruption_summary(tables["corruption"])
    if "transfer" in tables:
        tables["transfer_summary"] = summarize_transfer(tables["transfer"])

    verdicts = []
    for required, check in _CHECKS:
        if all(name in tables for name in required):
            verdicts.extend(check(tables))
    for verdict in verdicts:
        logging.info(verdict.line)
    return Report(experiment_id, config, tables, verdicts, _plot_series(tables))


def emit_plot_series(report: Report, directory: str | Path) -> Dict[str, Path]:
    """One ``<figure>.csv`` with columns x, y, series per plot series."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, frame in report.series.items():
        paths[name] = directory / f"{name}.csv"
        frame.to_csv(paths[name], index=False)
    return paths


def plot_series(
    series: pd.DataFrame,
    title: str = "",
    xlabel: str = "x",
    ylabel: str = "y",
    figsize: Tuple[float, float] = (6.0, 4.5),
    **kwargs: Any,
) -> plt.Figure:
    """
    Line plot of a plot series, one line per series label.

    Parameters
    ----------
    series:
        Frame with columns x, y, series.
    title:
        Axes title.
    xlabel, ylabel:
        Axis labels.
    figsize:
        Size of the figure, as the `plt.figure()` argument.
    **kwargs:
        All additional keyword arguments are passed to the `pyplot.subplots()` call.

    Returns
    -------
    Figure
    """
    kwargs_subplot = {
        "figsize": figsize,
        "tight_layout": True,
    }

    kwargs_subplot.update(kwargs)

    fig, axes = plt.subplots(**kwargs_subplot)
    for label, group in series.groupby("series", sort=False):
        axes.plot(group["x"], group["y"], marker="o", label=label)

    axes.set_title(title)
    axes.set_xlabel(xlabel)
    axes.set_ylabel(ylabel)
    axes.grid(alpha=0.3)
    axes.legend(loc="best")

    return fig


_AXIS_LABELS: Dict[str, Tuple[str, str]] = {
    "accuracy-vs-rho": ("mask ratio", "accuracy"),
    "asr-vs-k": ("attack iterations K", "black-box ASR"),
    "robust-acc-vs-alpha": ("sampling ratio", "robust accuracy"),
    "scheduler-comparison": ("scheduler", "robust accuracy"),
    "asr-vs-rho": ("masked-copy ratio", "black-box ASR"),
    "cosine-vs-asr": ("mean cross-modal cosine", "black-box ASR"),
}


def write_report(
    report: Report, directory: str | Path, figures: bool = False
) -> Dict[str, Path]:
    """
    Write ``report.md``, the plot series and optionally PNG figures.

    Returns
    -------
    files: Dict[str, Path]
        Written files keyed by a short name.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {"report": directory / "report.md"}
    files["report"].write_text(report.to_markdown(), encoding="utf-8")
    for name, path in emit_plot_series(report, directory / "series").items():
        files[f"series/{name}"] = path
    if figures:
        for name, frame in report.series.items():
            xlabel, ylabel = _AXIS_LABELS.get(name, ("x", "y"))
            fig = plot_series(frame, title=name, xlabel=xlabel, ylabel=ylabel)
            path = directory / "figures" / f"{name}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path)
            plt.close(fig)
            files[f"figures/{name}"] = path
    return files


def verdict_tokens(report: Report) -> Dict[str, bool]:
    """Verdict name -> reproduced flag."""
    return {v.name: v.reproduced for v in report.verdicts}
