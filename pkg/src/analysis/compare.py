"""Method comparison tables built from metrics reports."""

from pathlib import Path
from typing import Optional, Union

import pandas as pd

from .metrics import MetricsReport

METRIC_LABELS = {"mse": "MSE", "psnr_db": "PSNR", "ssim": "SSIM"}


def comparison_long(reports: list[MetricsReport]) -> pd.DataFrame:
    """One row per (method, dataset) with mean and std of every metric."""
    rows = []
    for report in reports:
        agg = report.aggregates()
        row = {"method": report.method, "dataset": report.dataset, "n_images": int(agg["count"].max())}
        for key, label in METRIC_LABELS.items():
            row[label] = agg.loc[key, "mean"]
            row[f"{label} std"] = agg.loc[key, "std"]
        rows.append(row)
    return pd.DataFrame(rows)


def compare_reports(reports: list[MetricsReport]) -> pd.DataFrame:
    """
    Comparison table: rows are methods, columns are (dataset, metric) pairs
    holding mean MSE, PSNR and SSIM.

    Methods and datasets keep the order in which they first appear.
    """
    if not reports:
        return pd.DataFrame()
    seen = {(r.method, r.dataset) for r in reports}
    if len(seen) != len(reports):
        raise ValueError("Each (method, dataset) pair may appear only once")

    long = comparison_long(reports)
    methods = list(dict.fromkeys(long["method"]))
    datasets = list(dict.fromkeys(long["dataset"]))
    table = long.pivot(index="method", columns="dataset", values=list(METRIC_LABELS.values()))
    table = table.swaplevel(axis=1)
    columns = pd.MultiIndex.from_product([datasets, list(METRIC_LABELS.values())])
    return table.reindex(index=methods, columns=columns)


def best_methods(table: pd.DataFrame) -> pd.Series:
    """Best method per (dataset, metric): lowest MSE, highest PSNR and SSIM."""
    best = {}
    for dataset, metric in table.columns:
        column = table[(dataset, metric)].dropna()
        if column.empty:
            continue
        best[(dataset, metric)] = column.idxmin() if metric == "MSE" else column.idxmax()
    return pd.Series(best, dtype=object)


def write_comparison(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    table.to_csv(path, float_format="%.6g")
    return path


def read_comparison(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, header=[0, 1], index_col=0)


def load_reports(directory: Union[str, Path], pattern: str = "*.json") -> list[MetricsReport]:
    """Every metrics report JSON under a directory tree, skipping other JSON files."""
    reports = []
    for path in sorted(Path(directory).rglob(pattern)):
        try:
            reports.append(MetricsReport.read_json(path))
        except ValueError:
            continue
    return reports


def filter_reports(
    reports: list[MetricsReport],
    methods: Optional[list[str]] = None,
    datasets: Optional[list[str]] = None,
) -> list[MetricsReport]:
    return [
        r for r in reports
        if (not methods or r.method in methods) and (not datasets or r.dataset in datasets)
    ]
