from rich.console import Console
from rich.table import Table

from models import AllocationPlan


def display_allocation(plan: AllocationPlan, console: Console) -> None:
    """Print the per-view spectral scores and budgets of a plan"""
    mode = "uniform" if plan.uniform else f"T={plan.temperature}, s={plan.lowfreq_side}"
    table = Table(title=f"Allocation: K = {plan.total} (rho = {plan.rho_global:.4f}, {mode})")
    for name in ("View", "eta", "psi", "kappa", "rho_i", "Budget", "Capacity"):
        table.add_column(name, justify="right")

    for v in plan.views:
        table.add_row(
            str(v.view_id),
            f"{v.eta:.4f}",
            f"{v.psi:.4f}",
            f"{v.kappa:.4f}",
            f"{v.rho:.4f}",
            str(v.budget),
            str(v.capacity),
        )
    console.print(table)
