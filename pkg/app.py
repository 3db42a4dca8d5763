"""Command-line entry point: allocate, compact, render, evaluate, mask, schedule, synth, report."""

from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

import typer
from pydantic import ValidationError
from rich.console import Console

from components.charts.budget_chart import create_budget_chart
from components.charts.opacity_chart import create_opacity_distribution_chart
from components.charts.quality_chart import create_quality_chart
from components.displays.allocation_display import display_allocation
from components.displays.report_display import display_report
from components.displays.scene_overview import display_scene_overview
from engine.importance import build_importance_selection
from engine.quality import mean_metric, psnr, ssim
from engine.renderer import rasterize
from engine.schedule import schedule_table
from errors import CompactorError, ConfigError, SceneLoadError
from models import (
    CompactionMode,
    EvaluationTarget,
    ImportanceConfig,
    Layout,
    QualityMetrics,
    QuantileMode,
    ScheduleConfig,
    Strategy,
    SyntheticSceneSpec,
    ViewMetrics,
)
from pipeline.compaction_processor import SceneCompactionProcessor
from utils.config import CompactorSettings, load_settings, parse_color
from utils.helpers import configure_logging, dump_json, get_logger
from utils.image_io import read_image, write_image, write_mask
from utils.ply_io import read_gaussian_ply, write_gaussian_ply
from utils.scene_io import read_camera, read_plan, read_report, read_scene, report_payload, write_report
from utils.synthetic import generate_synthetic_scene

logger = get_logger(__name__)

app = typer.Typer(help="Budget-controlled compaction of pixel-aligned Gaussian splat scenes.", no_args_is_help=True)
stderr = Console(stderr=True)

ConfigOption = typer.Option(None, "--config", help="key=value settings file (flags take precedence).")
SceneOption = typer.Option(..., "--scene", help="Path to the scene manifest.json.")
BudgetOption = typer.Option(None, "--budget", "-k", help="Absolute primitive budget K.")
RatioOption = typer.Option(None, "--ratio", help="Budget as a fraction of the pool; K = floor(ratio * NHW).")
SummaryOption = typer.Option(False, "--summary", help="Print rich summary tables to stderr.")


@contextmanager
def cli_errors() -> Iterator[None]:
    """Map failures to exit codes: 2 for invalid input, 1 for anything else."""
    try:
        yield
    except typer.Exit:
        raise
    except (CompactorError, ValidationError) as e:
        typer.echo(f"error: {type(e).__name__}: {' '.join(str(e).split())}", err=True)
        raise typer.Exit(code=2)
    except Exception as e:
        logger.error(f"Command failed: {str(e)}", exc_info=True)
        typer.echo(f"error: {type(e).__name__}: {' '.join(str(e).split())}", err=True)
        raise typer.Exit(code=1)


def _settings(config: Optional[Path], **overrides) -> CompactorSettings:
    settings = load_settings(config)
    given = {key: value for key, value in overrides.items() if value is not None}
    if given:
        # revalidate so flag values get the same checks as env/config values
        settings = CompactorSettings(**{**settings.model_dump(), **given})
    configure_logging(settings.log_level)
    return settings


def _color(value: str):
    try:
        return parse_color(value)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _emit(payload, out: Optional[Path]) -> None:
    text = dump_json(payload, out)
    if out is None:
        typer.echo(text)


@app.command("allocate")
def cmd_allocate(
    scene: Path = SceneOption,
    budget: Optional[int] = BudgetOption,
    ratio: Optional[float] = RatioOption,
    temperature: Optional[float] = typer.Option(None, "--temperature", "-t", help="Softmax temperature T."),
    lowfreq_side: Optional[int] = typer.Option(None, "--lowfreq-side", help="Side s of the low-frequency square."),
    uniform_rho: bool = typer.Option(False, "--uniform-rho", help="kappa = 1 for every view."),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the plan JSON here instead of stdout."),
    config: Optional[Path] = ConfigOption,
    summary: bool = SummaryOption,
) -> None:
    """Split a global budget K across views by spectral view importance."""
    with cli_errors():
        settings = _settings(config, temperature=temperature, lowfreq_side=lowfreq_side)
        loaded = read_scene(scene)
        plan = SceneCompactionProcessor(settings).allocate(loaded, budget=budget, ratio=ratio, uniform=uniform_rho)
        _emit(plan.model_dump(mode="json", by_alias=True), out)
        if summary:
            display_allocation(plan, stderr)


@app.command("compact")
def cmd_compact(
    scene: Path = SceneOption,
    budget: Optional[int] = BudgetOption,
    ratio: Optional[float] = RatioOption,
    plan: Optional[Path] = typer.Option(None, "--plan", help="Allocation JSON from allocate; replaces --budget/--ratio."),
    strategy: Optional[Strategy] = typer.Option(None, "--strategy", help="Importance scoring rule."),
    quantile_mode: Optional[QuantileMode] = typer.Option(None, "--quantile-mode", help="literal or complement."),
    patch_size: Optional[int] = typer.Option(None, "--patch-size", help="Key Gaussian patch side."),
    temperature: Optional[float] = typer.Option(None, "--temperature", "-t", help="Softmax temperature T."),
    lowfreq_side: Optional[int] = typer.Option(None, "--lowfreq-side", help="Side s of the low-frequency square."),
    merge: bool = typer.Option(False, "--merge", help="Merge unselected low-variation primitives into the output."),
    global_topk: bool = typer.Option(False, "--global-topk", help="Rank pooled scores instead of per-view budgets."),
    uniform_rho: bool = typer.Option(False, "--uniform-rho", help="kappa = 1 for every view."),
    evaluate: bool = typer.Option(True, "--eval/--no-eval", help="Render the result and attach quality metrics."),
    target: EvaluationTarget = typer.Option(EvaluationTarget.FULL_RENDER, "--target", help="Metric reference."),
    background: Optional[str] = typer.Option(None, "--background", help="Background color r,g,b in [0, 1]."),
    out_ply: Path = typer.Option(Path("compacted.ply"), "--out-ply", help="Compacted 3DGS PLY."),
    report: Path = typer.Option(Path("report.json"), "--report", help="Report JSON."),
    config: Optional[Path] = ConfigOption,
    summary: bool = SummaryOption,
) -> None:
    """Compact a scene to exactly K primitives and write the PLY plus a report."""
    with cli_errors():
        if background is not None:
            _color(background)
        settings = _settings(
            config,
            strategy=strategy,
            quantile_mode=quantile_mode,
            patch_size=patch_size,
            temperature=temperature,
            lowfreq_side=lowfreq_side,
            background=background,
            mode=CompactionMode.SELECT_MERGE if merge else None,
        )
        loaded = read_scene(scene)
        if summary:
            display_scene_overview(loaded, stderr)
        compacted, result = SceneCompactionProcessor(settings).compact(
            loaded,
            budget=budget,
            ratio=ratio,
            global_topk=global_topk,
            uniform=uniform_rho,
            evaluate=evaluate,
            target=target,
            plan=read_plan(plan) if plan is not None else None,
        )
        out_ply.parent.mkdir(parents=True, exist_ok=True)
        write_gaussian_ply(compacted, out_ply)
        write_report(result, report)
        if summary:
            display_report(result, stderr)


@app.command("render")
def cmd_render(
    ply: Path = typer.Option(..., "--ply", help="3DGS PLY to render."),
    camera: Path = typer.Option(..., "--camera", help="Camera JSON."),
    out: Path = typer.Option(..., "--out", help="Output PNG."),
    background: Optional[str] = typer.Option(None, "--background", help="Background color r,g,b in [0, 1]."),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Rasterize a PLY from one camera."""
    with cli_errors():
        if background is not None:
            _color(background)
        settings = _settings(config, background=background)
        image = rasterize(read_gaussian_ply(ply), read_camera(camera), settings.background_color)
        write_image(image, out)


@app.command("eval")
def cmd_eval(
    rendered_dir: Path = typer.Argument(..., help="Directory of rendered PNGs."),
    gt_dir: Path = typer.Argument(..., help="Directory of ground-truth PNGs with the same names."),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the metrics JSON here instead of stdout."),
    config: Optional[Path] = ConfigOption,
) -> None:
    """PSNR and SSIM between same-named PNGs of two directories."""
    with cli_errors():
        _settings(config)
        names = sorted(p.name for p in rendered_dir.glob("*.png"))
        if not names:
            raise SceneLoadError(f"no PNG files in {rendered_dir}")
        missing = [name for name in names if not (gt_dir / name).is_file()]
        if missing:
            raise SceneLoadError(f"ground truth missing for {', '.join(missing)}")
        per_view = []
        for i, name in enumerate(names):
            rendered, reference = read_image(rendered_dir / name), read_image(gt_dir / name)
            per_view.append(ViewMetrics(view_id=i, psnr_db=psnr(rendered, reference), ssim=ssim(rendered, reference)))
            logger.debug(f"{name}: psnr {per_view[-1].psnr_db}, ssim {per_view[-1].ssim}")
        metrics = QualityMetrics(
            psnr_mean=mean_metric(m.psnr_db for m in per_view),
            ssim_mean=mean_metric(m.ssim for m in per_view),
            target=EvaluationTarget.IMAGES,
            per_view=per_view,
        )
        payload = metrics.model_dump(mode="json")
        payload["files"] = names
        _emit(payload, out)


@app.command("mask")
def cmd_mask(
    scene: Path = SceneOption,
    ratio: float = typer.Option(..., "--ratio", help="Retention ratio rho in (0, 1]."),
    quantile_mode: Optional[QuantileMode] = typer.Option(None, "--quantile-mode", help="literal or complement."),
    patch_size: Optional[int] = typer.Option(None, "--patch-size", help="Key Gaussian patch side."),
    out_dir: Path = typer.Option(Path("masks"), "--out-dir", help="Directory for mask_XXX.png files."),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Write the binary importance mask of every view as a 0/255 PNG."""
    with cli_errors():
        settings = _settings(config, quantile_mode=quantile_mode, patch_size=patch_size)
        loaded = read_scene(scene)
        importance = ImportanceConfig(patch_size=settings.patch_size, quantile_mode=settings.quantile_mode)
        for view in loaded.views:
            selection = build_importance_selection(view, ratio, importance)
            write_mask(selection.mask, out_dir / f"mask_{view.view_id:03d}.png")
            logger.info(f"View {view.view_id}: {int(selection.mask.sum())} mask pixels")


@app.command("schedule")
def cmd_schedule(
    pool: Optional[int] = typer.Option(None, "--pool", help="Total pool NHW."),
    scene: Optional[Path] = typer.Option(None, "--scene", help="Take NHW from a scene manifest instead."),
    t_max: int = typer.Option(16000, "--t-max", help="Last iteration to tabulate."),
    step: Optional[int] = typer.Option(None, "--step", help="Row spacing; defaults to the decay interval."),
    seed: Optional[int] = typer.Option(None, "--seed"),
    decay: Optional[float] = typer.Option(None, "--decay"),
    interval: Optional[int] = typer.Option(None, "--interval"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the CSV here instead of stdout."),
    config: Optional[Path] = ConfigOption,
) -> None:
    """Tabulate K_min, K_max and the sampled K over training iterations as CSV."""
    with cli_errors():
        settings = _settings(config, seed=seed, decay=decay, interval=interval)
        if (pool is None) == (scene is None):
            raise ConfigError("give exactly one of --pool or --scene")
        total_pool = pool if pool is not None else read_scene(scene).total_pool
        cfg = ScheduleConfig(
            total_pool=total_pool,
            k_max_frac=settings.k_max_frac,
            k_start_frac=settings.k_start_frac,
            k_floor_frac=settings.k_floor_frac,
            decay=settings.decay,
            interval=settings.interval,
            seed=settings.seed,
        )
        table = schedule_table(cfg, t_max, step)
        if out is None:
            typer.echo(table.to_csv(index=False), nl=False)
        else:
            out.parent.mkdir(parents=True, exist_ok=True)
            table.to_csv(out, index=False)


@app.command("synth")
def cmd_synth(
    out_dir: Path = typer.Option(..., "--out-dir", help="Directory for the generated scene."),
    views: int = typer.Option(2, "--views", "-n", help="Number of views N."),
    height: int = typer.Option(8, "--height"),
    width: int = typer.Option(8, "--width"),
    seed: int = typer.Option(0, "--seed"),
    layout: Layout = typer.Option(Layout.PLANE, "--layout"),
    config: Optional[Path] = ConfigOption,
    summary: bool = SummaryOption,
) -> None:
    """Generate a deterministic synthetic scene with manifest."""
    with cli_errors():
        _settings(config)
        spec = SyntheticSceneSpec(n_views=views, height=height, width=width, seed=seed, layout=layout)
        scene = generate_synthetic_scene(spec, out_dir)
        if summary:
            display_scene_overview(scene, stderr)


def _parse_ratios(value: str) -> List[float]:
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"invalid ratio list '{value}'") from e


@app.command("report")
def cmd_report(
    report: Path = typer.Argument(..., help="Report JSON written by compact."),
    out_dir: Path = typer.Option(Path("charts"), "--out-dir", help="Directory for the HTML charts."),
    scene: Optional[Path] = typer.Option(None, "--scene", help="Scene manifest; enables the kappa overlay and --sweep."),
    sweep: Optional[str] = typer.Option(None, "--sweep", help="Comma-separated ratios to compact and chart."),
    config: Optional[Path] = ConfigOption,
    summary: bool = SummaryOption,
) -> None:
    """Chart a report as standalone HTML; with --sweep also chart quality and opacities across budgets."""
    with cli_errors():
        settings = _settings(config)
        loaded_report = read_report(report)
        report_payload(loaded_report)
        out_dir.mkdir(parents=True, exist_ok=True)
        processor = SceneCompactionProcessor(settings)
        loaded = read_scene(scene) if scene is not None else None
        if sweep is not None and loaded is None:
            raise ConfigError("--sweep needs --scene")

        budget_source = processor.allocate(loaded, budget=loaded_report.total) if loaded is not None else loaded_report
        create_budget_chart(budget_source).write_html(out_dir / "budgets.html", include_plotlyjs="cdn")

        reports = [loaded_report]
        if sweep is not None:
            sets = {}
            for ratio, response in processor.sweep(loaded, _parse_ratios(sweep), strategy=loaded_report.strategy, mode=loaded_report.mode):
                if response.status != "success":
                    logger.warning(f"Sweep ratio {ratio} failed: {response.error}")
                    continue
                reports.append(response.report)
                sets[f"{ratio:g}"] = response.gaussians
            create_opacity_distribution_chart(sets).write_html(out_dir / "opacity.html", include_plotlyjs="cdn")
            dump_json([report_payload(r) for r in reports[1:]], out_dir / "sweep.json")
        create_quality_chart(reports).write_html(out_dir / "quality.html", include_plotlyjs="cdn")
        if summary:
            display_report(loaded_report, stderr)


if __name__ == "__main__":
    app()
