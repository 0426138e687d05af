import math

from rich import box
from rich.table import Table

from dilatin.Modules.Verification import LedgerEntry, ResidualLedger


def format_residual(residual: float, tol: float, color: bool = True) -> str:
    text = f"{residual:.3e}"
    if not color or not math.isfinite(tol):
        return text

    if residual > tol:
        return f"[red]{text}[/red]"
    if residual > tol / 10:
        return f"[yellow]{text}[/yellow]"
    return f"[green]{text}[/green]"


def format_tolerance(tol: float) -> str:
    return f"{tol:.1e}" if math.isfinite(tol) else "info"


def format_bool(value: bool, color: bool = True, labels: tuple[str, str] = ("yes", "no")) -> str:
    text = labels[0] if value else labels[1]
    if not color:
        return text
    return f"[green]{text}[/green]" if value else f"[red]{text}[/red]"


def format_index(k: tuple[int, ...]) -> str:
    return "(" + ",".join(str(ki) for ki in k) + ")"


def escape_markup(text: str) -> str:
    """Escape Rich markup characters in the given text.

    Args:
        text (str): The text to escape.

    Returns:
        str: The escaped text.
    """
    return text.replace("[", r"\[")


def group_name(entry: LedgerEntry) -> str:
    """Ledger names look like ``family:detail[index]``; the group is the part before the bracket."""
    return entry.name.split("[", 1)[0].split("(", 1)[0]


def summary_table(ledger: ResidualLedger, title: str) -> Table:
    """One row per entry group with its count, failures and worst residual."""
    table = Table(title=title, box=box.SIMPLE_HEAVY, header_style="b", style="#333f62")
    table.add_column("Check", style="#91abec")
    table.add_column("Entries", justify="right")
    table.add_column("Failed", justify="right")
    table.add_column("Worst residual", justify="right")
    table.add_column("Tolerance", justify="right")

    groups: dict[str, list[LedgerEntry]] = {}
    for entry in ledger.entries:
        groups.setdefault(group_name(entry), []).append(entry)

    for name, entries in groups.items():
        failed = sum(not entry.passed for entry in entries)
        finite = [entry for entry in entries if math.isfinite(entry.tol)]
        if finite:
            worst = max(finite, key=lambda e: e.residual / e.tol if e.tol > 0 else math.inf)
        else:
            worst = max(entries, key=lambda e: e.residual)
        table.add_row(
            escape_markup(name),
            str(len(entries)),
            f"[red]{failed}[/red]" if failed else "0",
            format_residual(worst.residual, worst.tol),
            format_tolerance(worst.tol),
        )

    return table


def failures_table(ledger: ResidualLedger, limit: int = 20) -> Table:
    table = Table(title="Failed checks", box=box.SIMPLE_HEAVY, header_style="b", style="#ec8888")
    table.add_column("Name", style="#91abec")
    table.add_column("Residual", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Context")

    for entry in ledger.failures()[:limit]:
        table.add_row(
            escape_markup(entry.name),
            format_residual(entry.residual, entry.tol),
            format_tolerance(entry.tol),
            escape_markup(entry.context),
        )

    return table


def key_value_table(rows: list[tuple[str, str]], title: str) -> Table:
    table = Table(title=title, box=box.SIMPLE_HEAVY, show_header=False, style="#333f62")
    table.add_column("Property", style="#91abec")
    table.add_column("Value", style="#bbc8e8")

    for key, value in rows:
        table.add_row(key, value)

    return table
