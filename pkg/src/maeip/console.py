"""Shared rich console, style palette and logging setup."""

import logging
import os

from rich.console import Console
from rich.logging import RichHandler
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)
from rich.table import Table

COLORS: dict[str, str] = {
    # Core palette
    "deep_navy": "#463F9E",
    "hot_pink": "#F354A9",
    "cyan": "#84F5D5",
    "light_purple": "#9B62E5",
    "neon_yellow": "#F5FF00",
    # Result styles
    "pass_text": "#84F5D5",
    "fail_text": "#F354A9",
    "info_text": "#9B62E5",
    "metric_text": "#00FFF7",
    "warn_text": "#F5FF00",
    "error_text": "#F354A9",
    # Table styles
    "header": "#9B62E5",
    "border": "#463F9E",
}

console = Console()
err_console = Console(stderr=True)


def style(name: str, bold: bool = True) -> str:
    """Return a rich style string for a palette entry."""
    return f"bold {COLORS[name]}" if bold else COLORS[name]


def setup_logging(verbose: bool = False) -> logging.Logger:
    """Install a single RichHandler on the package logger.

    Args:
        verbose: Log at DEBUG level (also enables the NaN/Inf op checks)

    Returns:
        The configured ``maeip`` logger
    """
    logger = logging.getLogger("maeip")
    level = logging.DEBUG if verbose or os.environ.get("MAEIP_DEBUG") == "1" else logging.INFO
    logger.setLevel(level)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(console=err_console, show_path=False, markup=True)
        handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
        logger.addHandler(handler)
    logger.propagate = False
    return logger


def pass_fail(ok: bool) -> str:
    """Markup snippet for a pass/fail verdict."""
    return f"[{style('pass_text')}]PASS[/]" if ok else f"[{style('fail_text')}]FAIL[/]"


def make_progress(transient: bool = False, disable: bool = False) -> Progress:
    """Progress bar for training and sweep loops, drawn on stderr."""
    return Progress(
        SpinnerColumn(style=COLORS["cyan"]),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(complete_style=COLORS["hot_pink"], finished_style=COLORS["cyan"]),
        MofNCompleteColumn(),
        TextColumn("{task.fields[status]}", style=COLORS["metric_text"]),
        TimeElapsedColumn(),
        console=err_console,
        transient=transient,
        disable=disable,
    )


def results_table(title: str, columns: list[str]) -> Table:
    """Table in the project palette; add rows with ``table.add_row``."""
    table = Table(
        title=title,
        title_style=style("header"),
        header_style=style("header"),
        border_style=COLORS["border"],
    )
    for name in columns:
        table.add_column(name)
    return table
