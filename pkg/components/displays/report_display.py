import math

from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from models import CompactionReport


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.4f}"
    return str(value)


def display_report(report: CompactionReport, console: Console) -> None:
    """Print a compaction summary and its per-view breakdown"""
    lines = [
        f"[bold]K[/bold] = {report.total} ({report.strategy}, {report.mode}"
        + (", global top-K" if report.global_topk else "") + ")",
        f"Primitives: {report.input_count} -> {report.output_count}",
        f"Storage: {report.storage_bytes / 1e6:.3f} MB",
        f"Wall time: {report.wall_time_s:.2f} s",
    ]
    if report.render_fps is not None:
        lines.append(f"Render FPS: {report.render_fps:.2f}")
    if report.metrics is not None:
        lines.append(
            f"PSNR: {_fmt(report.metrics.psnr_mean)} dB, SSIM: {_fmt(report.metrics.ssim_mean)} "
            f"(vs. {report.metrics.target})"
        )
    console.print(Panel("\n".join(lines), title="Compaction"))

    table = Table()
    for name in ("View", "Budget", "Selected", "Merged", "Kept opacity"):
        table.add_column(name, justify="right")
    for v in report.per_view:
        table.add_row(str(v.view_id), str(v.budget), str(v.selected), str(v.merged_added), _fmt(v.kept_opacity_mean))
    console.print(table)
