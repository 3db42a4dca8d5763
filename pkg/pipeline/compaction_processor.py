from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from engine.allocator import make_allocation_plan
from engine.compactor import compact_scene
from engine.quality import SSIM_WINDOW, mean_metric, psnr, ssim
from engine.renderer import measure_render_fps, render_views
from models import (
    AllocationPlan,
    CompactionMode,
    CompactionReport,
    CompactionResponse,
    EvaluationTarget,
    GaussianSet,
    ImportanceConfig,
    QualityMetrics,
    Scene,
    Strategy,
    ViewMetrics,
)
from utils.config import CompactorSettings
from utils.helpers import get_logger
from utils.ply_io import write_gaussian_ply
from utils.scene_io import read_scene, write_report

logger = get_logger(__name__)


class SceneCompactionProcessor:
    """Runs load -> allocate -> compact -> serialize -> evaluate for one scene."""

    def __init__(self, settings: Optional[CompactorSettings] = None):
        self.settings = settings or CompactorSettings()

    @property
    def importance_config(self) -> ImportanceConfig:
        return ImportanceConfig(patch_size=self.settings.patch_size, quantile_mode=self.settings.quantile_mode)

    def allocate(
        self,
        scene: Scene,
        budget: Optional[int] = None,
        ratio: Optional[float] = None,
        uniform: bool = False,
    ) -> AllocationPlan:
        return make_allocation_plan(
            scene,
            budget=budget,
            ratio=ratio,
            temperature=self.settings.temperature,
            lowfreq_side=self.settings.lowfreq_side,
            uniform=uniform,
            threads=self.settings.threads,
        )

    def evaluate(
        self,
        scene: Scene,
        compacted: GaussianSet,
        target: EvaluationTarget = EvaluationTarget.FULL_RENDER,
    ) -> Tuple[Optional[QualityMetrics], float]:
        """Compare renders of the compacted set at every input camera against the chosen target.

        Returns:
            Tuple[Optional[QualityMetrics], float]: Metrics (None when views are smaller than
            the SSIM window) and the render rate of the compacted set in frames per second.
        """
        cameras = [view.camera for view in scene.views]
        background = self.settings.background_color
        rendered, fps = measure_render_fps(compacted, cameras, background)
        if min(min(c.height, c.width) for c in cameras) < SSIM_WINDOW:
            logger.warning(f"Views smaller than {SSIM_WINDOW}x{SSIM_WINDOW}; skipping quality metrics")
            return None, fps

        if EvaluationTarget(target) is EvaluationTarget.IMAGES:
            targets = [view.image for view in scene.views]
        else:
            targets = render_views(scene.pooled_gaussians(), cameras, background)
        per_view = [
            ViewMetrics(view_id=view.view_id, psnr_db=psnr(image, reference), ssim=ssim(image, reference))
            for view, image, reference in zip(scene.views, rendered, targets)
        ]
        metrics = QualityMetrics(
            psnr_mean=mean_metric(m.psnr_db for m in per_view),
            ssim_mean=mean_metric(m.ssim for m in per_view),
            target=target,
            per_view=per_view,
        )
        return metrics, fps

    def compact(
        self,
        scene: Scene,
        budget: Optional[int] = None,
        ratio: Optional[float] = None,
        strategy: Optional[Strategy] = None,
        mode: Optional[CompactionMode] = None,
        global_topk: bool = False,
        uniform: bool = False,
        evaluate: bool = True,
        target: EvaluationTarget = EvaluationTarget.FULL_RENDER,
        plan: Optional[AllocationPlan] = None,
    ) -> Tuple[GaussianSet, CompactionReport]:
        """Compact a loaded scene; raises on invalid input.

        Args:
            scene (Scene): Pixel-aligned scene.
            budget (Optional[int]): Absolute K; exclusive with ``ratio``.
            ratio (Optional[float]): Fraction of the pool.
            strategy (Optional[Strategy]): Scoring rule, defaults to the settings.
            mode (Optional[CompactionMode]): ``select`` or ``select+merge``, defaults to the settings.
            global_topk (bool): Rank the pooled scores instead of per-view budgets.
            uniform (bool): Allocate with kappa = 1 for every view.
            evaluate (bool): Render the result and attach quality metrics.
            target (EvaluationTarget): What the renders are compared against.
            plan (Optional[AllocationPlan]): A precomputed plan, used instead of allocating.

        Returns:
            Tuple[GaussianSet, CompactionReport]: The compacted set and its report.
        """
        strategy = Strategy(strategy or self.settings.strategy)
        mode = CompactionMode(mode or self.settings.mode)

        logger.info("Step 1: Allocating per-view budgets")
        if plan is None:
            plan = self.allocate(scene, budget=budget, ratio=ratio, uniform=uniform)
        logger.debug(f"Budgets: {plan.budgets}")

        logger.info(f"Step 2: Scoring and selecting primitives ({strategy}, {mode})")
        compacted, report = compact_scene(
            scene,
            plan,
            strategy=strategy,
            mode=mode,
            global_topk=global_topk,
            config=self.importance_config,
            threads=self.settings.threads,
        )

        if evaluate:
            logger.info(f"Step 3: Evaluating against {EvaluationTarget(target)}")
            metrics, fps = self.evaluate(scene, compacted, target)
            report = report.model_copy(update={"metrics": metrics, "render_fps": fps})
        return compacted, report

    def process_scene(self, scene: Scene, output_dir: Optional[Path] = None, **kwargs) -> CompactionResponse:
        """Compact a scene and optionally write ``compacted.ply`` and ``report.json``."""
        try:
            compacted, report = self.compact(scene, **kwargs)
            if output_dir is not None:
                output_dir = Path(output_dir)
                logger.info(f"Step 4: Writing results to {output_dir}")
                output_dir.mkdir(parents=True, exist_ok=True)
                write_gaussian_ply(compacted, output_dir / "compacted.ply")
                write_report(report, output_dir / "report.json")
            return CompactionResponse(status="success", report=report, gaussians=compacted)
        except Exception as e:
            logger.error(f"Scene compaction failed: {str(e)}", exc_info=True)
            return CompactionResponse(status="error", error=f"Scene compaction failed: {str(e)}")

    def process_manifest(self, manifest_path: str | Path, output_dir: Optional[Path] = None, **kwargs) -> CompactionResponse:
        try:
            logger.info(f"Loading scene from {manifest_path}")
            scene = read_scene(manifest_path)
        except Exception as e:
            logger.error(f"Scene loading failed: {str(e)}", exc_info=True)
            return CompactionResponse(status="error", error=f"Scene loading failed: {str(e)}")
        return self.process_scene(scene, output_dir, **kwargs)

    def sweep(self, scene: Scene, ratios: Sequence[float], **kwargs) -> List[Tuple[float, CompactionResponse]]:
        """Compact the same scene at several budget ratios."""
        results = []
        for ratio in ratios:
            logger.info(f"Sweep: ratio {ratio}")
            results.append((ratio, self.process_scene(scene, ratio=ratio, **kwargs)))
        return results
