"""Styled HTML tables for evaluation and benchmark results."""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Mapping

import pandas as pd

HEADER_COLOR = "#1f3a5f"
BEST_COLOR = "#d4edda"
FAIL_COLOR = "#f8d7da"


class MetricsTableStyler:
    """Chainable styler for metric tables."""

    def __init__(self, df: pd.DataFrame):
        """Initialize with a DataFrame.

        Args:
            df: pandas DataFrame to style
        """
        self.df = df.copy()
        self.styler = self.df.style

    def with_precision(self, decimals: int = 3) -> MetricsTableStyler:
        """Format float columns to a fixed number of decimals; missing values print as '-'."""
        floats = self.df.select_dtypes("number").columns.tolist()
        if floats:
            self.styler = self.styler.format(precision=decimals, na_rep="-", subset=floats)
        return self

    def with_best(
        self, columns: str | list[str], lower_is_better: bool = True
    ) -> MetricsTableStyler:
        """Highlight the best value of each column.

        Args:
            columns: Column name(s) to highlight
            lower_is_better: Mark minima (errors) rather than maxima (accuracies)

        Returns:
            Self for method chaining
        """
        if isinstance(columns, str):
            columns = [columns]
        present = [c for c in columns if c in self.df.columns]
        for col in set(columns) - set(present):
            warnings.warn(f"Column '{col}' not found in DataFrame", stacklevel=2)
        if not present:
            return self
        props = f"background-color: {BEST_COLOR}; font-weight: bold"
        if lower_is_better:
            self.styler = self.styler.highlight_min(subset=present, props=props)
        else:
            self.styler = self.styler.highlight_max(subset=present, props=props)
        return self

    def with_failures(self, flag_column: str = "failed") -> MetricsTableStyler:
        """Shade rows whose boolean ``flag_column`` is set."""
        if flag_column not in self.df.columns:
            return self

        def shade(row):
            color = f"background-color: {FAIL_COLOR}" if bool(row[flag_column]) else ""
            return [color for _ in row.index]

        self.styler = self.styler.apply(shade, axis=1)
        return self

    def with_theme(self, alternating_rows: bool = True) -> MetricsTableStyler:
        """Apply the report table theme.

        Args:
            alternating_rows: Whether to alternate row colors

        Returns:
            Self for method chaining
        """
        styles = [
            {
                "selector": "th",
                "props": [
                    ("background-color", HEADER_COLOR),
                    ("color", "white"),
                    ("font-weight", "bold"),
                    ("text-align", "center"),
                    ("border", "1px solid #ddd"),
                    ("padding", "6px"),
                ],
            },
            {
                "selector": "td",
                "props": [
                    ("text-align", "right"),
                    ("border", "1px solid #ddd"),
                    ("padding", "6px"),
                    ("font-family", "monospace"),
                ],
            },
            {
                "selector": "caption",
                "props": [("font-weight", "bold"), ("text-align", "left"), ("padding", "4px")],
            },
        ]
        if alternating_rows:
            styles.append(
                {"selector": "tr:nth-of-type(even)", "props": [("background-color", "#f4f6f8")]}
            )
        self.styler = self.styler.set_table_styles(styles, overwrite=False)
        return self

    def with_caption(self, caption: str) -> MetricsTableStyler:
        self.styler = self.styler.set_caption(caption)
        return self

    def to_html(self, **kwargs) -> str:
        """Export to HTML string.

        Args:
            **kwargs: Arguments passed to pandas Styler.to_html()
        """
        return self.styler.to_html(**kwargs)

    def save_html(self, filename: str | Path, **kwargs) -> None:
        Path(filename).write_text(self.to_html(**kwargs), encoding="utf-8")


def create_metrics_table(
    df: pd.DataFrame,
    title: str | None = None,
    lower_is_better: list[str] | None = None,
    higher_is_better: list[str] | None = None,
    decimals: int = 3,
) -> MetricsTableStyler:
    """Create a themed metrics table.

    Example:
        >>> df = pd.DataFrame({'mode': ['full', 'no-dynamic'], 'rmse': [0.12, 0.91]})
        >>> create_metrics_table(df, 'ATE', lower_is_better=['rmse']).save_html('ate.html')
    """
    styler = MetricsTableStyler(df).with_theme().with_precision(decimals)
    if lower_is_better:
        styler = styler.with_best(lower_is_better, lower_is_better=True)
    if higher_is_better:
        styler = styler.with_best(higher_is_better, lower_is_better=False)
    styler = styler.with_failures()
    if title:
        styler = styler.with_caption(title)
    return styler


def write_html_report(
    tables: Mapping[str, MetricsTableStyler], path: str | Path, title: str = "dynlio report"
) -> Path:
    """Concatenate styled tables into one standalone HTML page."""
    body = "\n".join(
        f"<section><h2>{name}</h2>\n{table.to_html()}</section>" for name, table in tables.items()
    )
    html = (
        "<!DOCTYPE html>\n<html><head><meta charset='utf-8'>"
        f"<title>{title}</title></head>\n<body style='font-family: sans-serif'>\n"
        f"<h1>{title}</h1>\n{body}\n</body></html>\n"
    )
    out = Path(path)
    out.write_text(html, encoding="utf-8")
    return out
