from contextlib import contextmanager

from . import config
from . import utils
from .utils import Color, RICH_AVAILABLE
from .sweeps import collect_paraproduct_results, paraproduct_verdict, sweep_stage_count

try:
    from rich.table import Table
    from rich.panel import Panel
    from rich.text import Text
    from rich.progress import Progress, SpinnerColumn, TextColumn, BarColumn, TimeRemainingColumn
    from rich import box
except ImportError:
    pass


def _rich():
    return RICH_AVAILABLE and utils.console


def banner(subtitle=""):
    if _rich():
        banner_text = Text()
        banner_text.append("MHDLAB\n", style="bold cyan")
        banner_text.append(f"v{config.VERSION} ", style="bold white")
        banner_text.append(subtitle or "2D incompressible MHD near a uniform field", style="dim")
        utils.console.print(Panel(banner_text, border_style="bright_cyan", box=box.DOUBLE_EDGE, padding=(0, 2)))
    else:
        print(f"{Color.HEADER}{Color.BOLD}")
        print("=" * 60)
        print(f"   MHDLAB v{config.VERSION}")
        print(f"   {subtitle or '2D incompressible MHD near a uniform field'}")
        print("=" * 60)
        print(f"{Color.ENDC}")


def print_table(title, columns, rows):
    """Rows are sequences of already formatted strings."""
    if _rich():
        table = Table(title=title, box=box.ROUNDED, border_style="cyan")
        for index, name in enumerate(columns):
            table.add_column(name, style="bold white" if index == 0 else None,
                             justify="left" if index == 0 else "right")
        for row in rows:
            table.add_row(*[str(cell) for cell in row])
        utils.console.print(table)
        return
    widths = [max([len(str(name))] + [len(str(row[i])) for row in rows]) for i, name in enumerate(columns)]
    print(f"\n{Color.BOLD}{title}{Color.ENDC}")
    print("  ".join(str(name).ljust(w) for name, w in zip(columns, widths)))
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)))


def _mark(passed):
    if _rich():
        return "[green]PASS[/green]" if passed else "[red]FAIL[/red]"
    return f"{Color.GREEN}PASS{Color.ENDC}" if passed else f"{Color.FAIL}FAIL{Color.ENDC}"


def print_verify_table(checks):
    """checks: (name, measured, bound, passed) tuples."""
    rows = [(name, f"{measured:.3e}", f"{bound:.1e}", _mark(passed)) for name, measured, bound, passed in checks]
    print_table("Run verification", ("Check", "Measured", "Bound", "Status"), rows)


def print_norm_table(results):
    """results: (field, norm label, value) tuples."""
    print_table("Besov norms", ("Field", "Norm", "Value"), [(f, label, f"{v:.10e}") for f, label, v in results])


@contextmanager
def simulation_progress(total):
    """Yields a progress_callback(step, total) for solver.run."""
    if _rich():
        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), BarColumn(),
                      TextColumn("{task.completed}/{task.total}"), TimeRemainingColumn(),
                      transient=True, console=utils.console) as progress:
            task = progress.add_task("Integrating...", total=max(total, 1))

            def progress_callback(n, steps):
                progress.update(task, completed=n)

            yield progress_callback
        return
    stride = max(total // 10, 1)

    def plain_callback(n, steps):
        if n % stride == 0 or n == steps:
            print(f"  step {n}/{steps}", flush=True)

    yield plain_callback


def run_paraproduct_rich(grids=config.DEFAULT_SWEEP_GRIDS, pairs=config.DEFAULT_SWEEP_PAIRS, seed=0):
    if not _rich():
        return None
    utils.console.print(f"\n[bold yellow][*] Paraproduct and product-law sweeps ({pairs} samples per grid)...[/bold yellow]")
    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                  BarColumn(), transient=True, console=utils.console) as progress:
        task = progress.add_task("Sweeping...", total=sweep_stage_count(grids))

        def progress_callback(name):
            progress.update(task, description=f"Running {name}...")
            progress.advance(task)

        results = collect_paraproduct_results(grids, pairs, seed=seed, progress_callback=progress_callback)

    table = Table(title="Sweep results", box=box.ROUNDED, border_style="cyan")
    table.add_column("Sweep", style="bold white", min_width=16)
    table.add_column("Grid", justify="right")
    table.add_column("Samples", justify="right")
    table.add_column("Value", justify="right", min_width=14)
    for r in results:
        table.add_row(r.name, f"{r.n}x{r.n}", str(r.samples), f"{r.value:.6e}")
    utils.console.print(table)

    verdict = paraproduct_verdict(results)
    low, high = config.NORM_EQUIV_BRACKET
    utils.console.print(f"\n[bold cyan][i] Bony identity:[/bold cyan] {_mark(verdict.bony_ok)}")
    utils.console.print(f"[bold cyan][i] Norm equivalence inside [{low:.4f}, {high:.4f}]:[/bold cyan] {_mark(verdict.bracket_ok)}")
    for label, change in verdict.changes.items():
        colour = "green" if change < config.PRODUCT_LAW_STABILITY else "red"
        utils.console.print(f"[bold cyan][i] {label} maximum change across grids:[/bold cyan] [{colour}]{100 * change:.2f}%[/{colour}]")
    return verdict.passed
