"""Result aggregation into CSV and markdown tables.

Accuracies are reported in percent with two decimals.  The gap column is
computed from the rounded means so the printed identity
gap = dev_mean - test_mean holds exactly in the emitted files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = [
    "pipeline",
    "model",
    "loss",
    "freeze_steps",
    "dev_acc_mean",
    "dev_acc_std",
    "test_acc_mean",
    "test_acc_std",
    "gap",
]


@dataclass
class ReportRow:
    pipeline: str
    model: str
    loss: str
    freeze_steps: int
    dev_accuracies: list[float] = field(default_factory=list)
    test_accuracies: list[float] = field(default_factory=list)
    test_margins: list[float] = field(default_factory=list)

    def _stats(self, values):
        mean = round(float(np.mean(values)) * 100.0, 2)
        std = round(float(np.std(values, ddof=1)) * 100.0, 2) if len(values) >= 2 else None
        return mean, std

    def formatted(self) -> dict[str, str]:
        dev_mean, dev_std = self._stats(self.dev_accuracies)
        test_mean, test_std = self._stats(self.test_accuracies)
        gap = round(dev_mean - test_mean, 2)
        return {
            "pipeline": self.pipeline,
            "model": self.model,
            "loss": self.loss,
            "freeze_steps": str(self.freeze_steps),
            "dev_acc_mean": f"{dev_mean:.2f}",
            "dev_acc_std": "n/a" if dev_std is None else f"{dev_std:.2f}",
            "test_acc_mean": f"{test_mean:.2f}",
            "test_acc_std": "n/a" if test_std is None else f"{test_std:.2f}",
            "gap": f"{gap:.2f}",
        }


def emit_report(rows: list[ReportRow], out_dir, basename: str = "report"):
    """Write <basename>.csv and <basename>.md; returns both paths."""
    if not rows:
        raise ValueError("no report rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{basename}.csv"
    md_path = out_dir / f"{basename}.md"

    formatted = [r.formatted() for r in rows]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(formatted)

    widths = {c: max(len(c), *(len(f[c]) for f in formatted)) for c in CSV_COLUMNS}
    lines = [
        "| " + " | ".join(c.ljust(widths[c]) for c in CSV_COLUMNS) + " |",
        "| " + " | ".join("-" * widths[c] for c in CSV_COLUMNS) + " |",
    ]
    for f in formatted:
        lines.append("| " + " | ".join(f[c].ljust(widths[c]) for c in CSV_COLUMNS) + " |")
    md_path.write_text("\n".join(lines) + "\n")
    return csv_path, md_path


def emit_loss_comparison(rows: list[ReportRow], out_dir, basename: str = "loss_comparison"):
    """Side-by-side loss comparison: mean test probability margin and
    dev-test gap per loss, with an explicit statement of the difference."""
    by_loss: dict[str, list[ReportRow]] = {}
    for row in rows:
        by_loss.setdefault(row.loss, []).append(row)
    if len(by_loss) < 2:
        raise ValueError("loss comparison needs at least two losses in the rows")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["| model | loss | test_margin_mean | dev_test_gap | seeds |", "|---|---|---|---|---|"]
    summary: dict[tuple[str, str], dict[str, float]] = {}
    for loss_name, loss_rows in sorted(by_loss.items()):
        for row in loss_rows:
            margin = float(np.mean(row.test_margins))
            gap = float(np.mean(row.dev_accuracies)) - float(np.mean(row.test_accuracies))
            summary[(row.model, loss_name)] = {"margin": margin, "gap": gap}
            lines.append(
                f"| {row.model} | {loss_name} | {margin:.4f} | {gap * 100:.2f} | "
                f"{len(row.test_accuracies)} |"
            )

    lines.append("")
    models = sorted({m for m, _ in summary})
    for model in models:
        ce = summary.get((model, "CE"))
        swce = summary.get((model, "SWCE"))
        if ce is None or swce is None:
            continue
        margin_delta = swce["margin"] - ce["margin"]
        gap_delta = (swce["gap"] - ce["gap"]) * 100
        lines.append(
            f"{model}: SWCE test margin {swce['margin']:.4f} vs CE {ce['margin']:.4f} "
            f"({margin_delta:+.4f}); SWCE dev-test gap {swce['gap'] * 100:.2f} vs CE "
            f"{ce['gap'] * 100:.2f} ({gap_delta:+.2f} points)."
        )
    path = out_dir / f"{basename}.md"
    path.write_text("\n".join(lines) + "\n")
    return path
