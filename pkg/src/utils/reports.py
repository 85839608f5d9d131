"""
Report Utilities - Plain-text tables for command output.

Renders metric reports, parameter counts, gradient-check results and run
history as fixed-width text.
"""

import math
from typing import Any, Optional, Sequence

METRIC_COLUMNS = (
    ("ssim", "SSIM"),
    ("psnr", "PSNR(dB)"),
    ("mse_x1000", "MSE(x1e3)"),
    ("uiqm", "UIQM"),
    ("uciqe", "UCIQE"),
)


def format_value(value: Optional[float], digits: int = 6) -> str:
    """Fixed-point number; None renders as '-', infinities as 'inf'/'-inf'."""
    if value is None:
        return "-"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}f}"


def render_table(headers: Sequence[str], rows: Sequence[Sequence[Any]], title: Optional[str] = None) -> str:
    """
    Left-aligned first column, right-aligned others, with a rule under the header.

    Args:
        headers: Column titles
        rows: Cell values (converted with str)
        title: Optional line above the table

    Returns:
        Table text without a trailing newline
    """
    cells = [[str(c) for c in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in cells:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]

    def line(values: Sequence[str]) -> str:
        parts = [values[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(values[1:], widths[1:])]
        return "  ".join(parts).rstrip()

    out = [title] if title else []
    out.append(line(list(headers)))
    out.append("  ".join("-" * w for w in widths))
    out.extend(line(row) for row in cells)
    return "\n".join(out)


def render_metrics_table(report) -> str:
    """Per-image rows followed by the mean row of a MetricsReport."""
    headers = ["image"] + [label for _, label in METRIC_COLUMNS]
    rows = [
        [record.path] + [format_value(getattr(record, name), 4) for name, _ in METRIC_COLUMNS]
        for record in report.records
    ]
    means = report.aggregate()
    rows.append(["mean"] + [format_value(means[name], 4) for name, _ in METRIC_COLUMNS])
    return render_table(headers, rows, title=f"{report.title} ({len(report.records)} images)")


def render_param_breakdown(counts: dict[str, int]) -> str:
    total = sum(counts.values())
    rows = [[group, f"{count:,}"] for group, count in counts.items()]
    rows.append(["total", f"{total:,}"])
    return render_table(["group", "parameters"], rows)


def render_param_series(label: str, values: Sequence[int], counts: Sequence[int]) -> str:
    """Counts over one varied depth, with the difference to the previous entry."""
    rows = []
    for i, (value, count) in enumerate(zip(values, counts)):
        delta = "" if i == 0 else f"{count - counts[i - 1]:+,}"
        rows.append([f"{label}={value}", f"{count:,}", f"{count / 1e6:.3f}M", delta])
    return render_table([label, "parameters", "millions", "delta"], rows)


def render_param_grid(grid) -> str:
    """M rows × N columns of counts, then the constant per-step deltas."""
    headers = ["M \\ N"] + [str(n) for n in grid.n_values]
    rows = [[str(m)] + [f"{c:,}" for c in row] for m, row in zip(grid.m_values, grid.counts)]
    table = render_table(headers, rows, title="parameter count over cascade depth N and AST depth M")
    m0, n0 = grid.m_values[0], grid.n_values[0]
    notes = []
    if len(grid.n_values) > 1:
        notes.append(f"delta per N step (M={m0}): {', '.join(f'{d:+,}' for d in grid.n_deltas(m0))}")
    if len(grid.m_values) > 1:
        notes.append(f"delta per M step (N={n0}): {', '.join(f'{d:+,}' for d in grid.m_deltas(n0))}")
    return "\n".join([table] + notes)


def render_gradcheck(errors: dict[str, float], tolerance: float) -> str:
    rows = [[group, f"{error:.3e}", "ok" if error < tolerance else "FAIL"] for group, error in errors.items()]
    return render_table(["group", "max rel. error", f"< {tolerance:g}"], rows)


def render_history(runs: list[dict]) -> str:
    if not runs:
        return "No runs recorded."
    rows = [
        [
            f"#{run['id']}",
            run["command"],
            run["status"],
            run.get("epoch_count") or 0,
            format_value(run.get("last_loss"), 5),
            run.get("started_at") or "-",
        ]
        for run in runs
    ]
    return render_table(["run", "command", "status", "epochs", "last loss", "started"], rows, title="Recent runs")


def render_run(run: dict) -> str:
    """Detail view of one run: configuration, epoch losses and evaluations."""
    lines = [f"Run #{run['id']}: {run['command']} ({run['status']})"]
    if run.get("detail"):
        lines.append(f"  {run['detail']}")
    for key, value in sorted(run.get("config", {}).items()):
        lines.append(f"  {key} = {value}")
    if run.get("epochs"):
        rows = [[e["epoch"], format_value(e["loss"]), f"{e['lr']:.3e}"] for e in run["epochs"]]
        lines.append(render_table(["epoch", "loss", "lr"], rows))
    for evaluation in run.get("evaluations", []):
        aggregates = ", ".join(
            f"{name}={value if isinstance(value, str) else format_value(value, 4)}"
            for name, value in evaluation["aggregates"].items()
        )
        lines.append(f"{evaluation['title']} ({evaluation['image_count']} images): {aggregates}")
    return "\n".join(lines)
