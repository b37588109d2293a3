"""SVG line plots for the CSV tables a run leaves behind."""

from __future__ import annotations

import csv
from pathlib import Path


def _numeric(values: list[str]) -> list[float] | None:
    try:
        return [float(v) for v in values]
    except ValueError:
        return None


def plot_csv(path: str | Path, out: str | Path | None = None) -> Path | None:
    """Plot every numeric column of ``path`` against its first column.

    Tables whose first column is not numeric are drawn as bar groups. Solution
    dumps and files with fewer than two columns are skipped (``None``).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or len(rows[0]) < 2:
        return None
    header, body = rows[0], rows[1:]
    if header[:2] == ["variable", "index"]:
        return None  # long-format solution dumps have no natural axis
    cols = list(zip(*body))
    x = _numeric(list(cols[0]))
    fig, ax = plt.subplots(figsize=(6, 3.6))
    drawn = 0
    for name, col in zip(header[1:], cols[1:]):
        y = _numeric(list(col))
        if y is None:
            continue
        if x is not None:
            ax.plot(x, y, marker="o", label=name)
        else:
            offset = 0.8 * drawn / max(1, len(header) - 1)
            ax.bar([i + offset for i in range(len(y))], y, width=0.8 / max(1, len(header) - 1), label=name)
        drawn += 1
    if not drawn:
        plt.close(fig)
        return None
    if x is None:
        ax.set_xticks(range(len(cols[0])), cols[0])
    ax.set_xlabel(header[0])
    ax.set_title(path.stem)
    ax.legend(fontsize="small")
    fig.tight_layout()
    target = Path(out) if out is not None else path.with_suffix(".svg")
    # fixed hash salt keeps the SVG byte-identical between runs
    fig.savefig(target, format="svg", metadata={"Date": None})
    plt.close(fig)
    return target


def plot_run(rundir: str | Path) -> list[Path]:
    """Render each CSV in ``rundir`` next to it; returns the SVG paths written."""
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "coopt"
    written = []
    for csv_path in sorted(Path(rundir).glob("*.csv")):
        target = plot_csv(csv_path)
        if target is not None:
            written.append(target)
    return written
