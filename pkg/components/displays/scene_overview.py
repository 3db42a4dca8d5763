from rich.console import Console
from rich.table import Table

from models import Scene


def display_scene_overview(scene: Scene, console: Console) -> None:
    """Print the views of a scene with their resolution and primitive counts"""
    table = Table(title=f"Scene: {scene.n_views} views, {scene.total_pool} primitives")
    table.add_column("View", justify="right")
    table.add_column("Resolution")
    table.add_column("Primitives", justify="right")
    table.add_column("SH degree", justify="right")
    table.add_column("Mean opacity", justify="right")

    for view in scene.views:
        g = view.gaussians
        table.add_row(
            str(view.view_id),
            f"{view.camera.height}x{view.camera.width}",
            str(len(g)),
            str(g.sh_degree),
            f"{g.opacities.mean():.3f}" if len(g) else "-",
        )
    console.print(table)
