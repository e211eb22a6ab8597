"""Terminal rendering of run summaries, evaluation reports and ablation tables."""

from typing import Any, Dict, List, Sequence

try:
    from rich.console import Console
    from rich.panel import Panel
    from rich.table import Table
    HAS_RICH = True
except ImportError:
    HAS_RICH = False

console = Console() if HAS_RICH else None

ABLATION_COLUMNS = [
    ("setting", "Setting"),
    ("extracted", "Extracted"),
    ("filtered", "Filtered"),
    ("selected", "Selected"),
    ("composite_calls", "Composites"),
    ("labels", "Labels"),
    ("ratio", "Ratio"),
    ("time_s", "Time (s)"),
    ("bleu", "BLEU"),
    ("rouge_l", "ROUGE-L"),
]


def format_value(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def show_run_summary(run_dir: str, row: Dict[str, Any]) -> None:
    """Display frame accounting for a finished run."""
    lines = [
        ("Run directory", run_dir),
        ("Frames extracted", row.get("extracted")),
        ("Stage-1 retained", row.get("filtered")),
        ("Stage-2 anchored", row.get("selected")),
        ("Composite calls", row.get("composite_calls")),
        ("Labels", row.get("labels")),
        ("Reduction ratio", row.get("ratio")),
        ("Modality", row.get("modality")),
        ("Wall time (s)", row.get("time_s")),
    ]
    if HAS_RICH and console:
        table = Table.grid(padding=(0, 2))
        table.add_column(style="cyan", justify="left")
        table.add_column(style="white", justify="left")
        for label, value in lines:
            table.add_row(label, format_value(value))
        console.print(Panel(table, title="[bold]anchorsum run[/bold]", border_style="cyan", padding=(1, 2)))
    else:
        for label, value in lines:
            print(f"{label}: {format_value(value)}")


def show_ablation_table(rows: Sequence[Dict[str, Any]]) -> None:
    columns = [(key, title) for key, title in ABLATION_COLUMNS if any(key in row for row in rows)]
    if HAS_RICH and console:
        table = Table(title="Ablation report", header_style="bold cyan")
        for key, title in columns:
            table.add_column(title, justify="left" if key == "setting" else "right")
        for row in rows:
            table.add_row(*(format_value(row.get(key)) for key, _ in columns))
        console.print(table)
    else:
        print("\t".join(title for _, title in columns))
        for row in rows:
            print("\t".join(format_value(row.get(key)) for key, _ in columns))


def show_eval_report(report: Dict[str, Any]) -> None:
    lines: List[tuple] = []
    ranking = report.get("ranking")
    if ranking:
        lines += [
            ("Kendall tau (mean)", ranking.get("mean_tau")),
            ("Spearman rho (mean)", ranking.get("mean_rho")),
            ("Annotators", ranking.get("n_users")),
        ]
    text = report.get("text")
    if text:
        lines += [("BLEU", text.get("bleu")), ("ROUGE-L F1", text.get("rouge_l", {}).get("f1"))]
    judge = report.get("judge")
    if judge:
        lines.append(("LLM judge", judge.get("score")))
    if not lines:
        lines.append(("Metrics", "none configured (set eval.annotations or eval.references)"))

    if HAS_RICH and console:
        table = Table.grid(padding=(0, 2))
        table.add_column(style="cyan")
        table.add_column(style="white")
        for label, value in lines:
            table.add_row(label, format_value(value))
        console.print(Panel(table, title="[bold]Evaluation[/bold]", border_style="green", padding=(1, 2)))
    else:
        for label, value in lines:
            print(f"{label}: {format_value(value)}")
