"""Rich terminal output formatting for vulnscore results."""

import html
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from rich import box
from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from .cvss import METRIC_NAMES, METRIC_ORDER, CvssVector, Severity, format_vector
from .models import ClassAssociationTable, EvalReport, PredictionResult, SaliencyReport


RATING_STYLES = {
    "None": "dim",
    "Low": "green",
    "Medium": "yellow",
    "High": "red",
    "Critical": "bold red",
}


def _console(console: Optional[Console]) -> Console:
    return console if console is not None else Console()


def _rating(rating: str) -> str:
    style = RATING_STYLES.get(rating, "white")
    return f"[{style}]{rating}[/{style}]"


def display_severity(vector: CvssVector, severity: Severity, console: Optional[Console] = None) -> None:
    """Score breakdown of one vector."""
    console = _console(console)
    table = Table(title=format_vector(vector, with_prefix=True), box=box.ROUNDED)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="magenta")
    for key, value in zip(METRIC_ORDER, vector):
        table.add_row(f"{METRIC_NAMES[key]} ({key})", f"{value.label} ({value.code})")
    table.add_section()
    breakdown = severity.to_dict()
    table.add_row("Impact subscore", f"{breakdown['impact_subscore']:.1f}")
    table.add_row("Exploitability subscore", f"{breakdown['exploitability_subscore']:.1f}")
    table.add_row("[bold]Base score[/bold]", f"[bold]{severity.score:.1f}[/bold] {_rating(severity.rating.value)}")
    console.print(table)


def display_prediction(result: PredictionResult, console: Optional[Console] = None) -> None:
    """Per-metric predictions, assembled vector and score."""
    console = _console(console)
    title = f"Prediction for {result.cve_id}" if result.cve_id else "Prediction"
    table = Table(title=title, box=box.ROUNDED)
    table.add_column("Metric", style="cyan")
    table.add_column("Predicted", style="magenta")
    table.add_column("Confidence", justify="right")
    for metric in METRIC_ORDER:
        prediction = result.predictions[metric]
        table.add_row(
            f"{METRIC_NAMES[metric]} ({metric})",
            f"{prediction.label.upper()} ({prediction.code})",
            f"{prediction.confidence:.3f}",
        )
    console.print(table)
    console.print(f"[blue]Vector:[/blue] {result.vector}")
    console.print(
        f"[blue]Score:[/blue] [bold]{result.score:.1f}[/bold] {_rating(result.rating)} "
        f"(impact {result.impact_subscore:.1f}, exploitability {result.exploitability_subscore:.1f})"
    )
    if result.low_information:
        console.print("[yellow]Warning:[/yellow] description has no content tokens")
    for report in result.saliency.values():
        display_saliency(report, console)


def display_eval_report(report: EvalReport, console: Optional[Console] = None) -> None:
    """One row per metric plus the score-level block."""
    console = _console(console)
    table = Table(title=f"Evaluation on {report.test_size} records", box=box.ROUNDED)
    table.add_column("Metric", style="cyan")
    for column in ("Accuracy", "Precision", "Recall", "F1", "Macro F1", "Baseline", "Baseline F1"):
        table.add_column(column, justify="right")
    for metric in METRIC_ORDER:
        block = report.metrics[metric]
        accuracy = f"{block['accuracy']:.4f}"
        if block["accuracy"] > block["majority_baseline"]:
            accuracy = f"[green]{accuracy}[/green]"
        table.add_row(
            f"{METRIC_NAMES[metric]} ({metric})",
            accuracy,
            f"{block['precision']:.4f}",
            f"{block['recall']:.4f}",
            f"{block['f1']:.4f}",
            f"{block['macro_f1']:.4f}",
            f"{block['majority_baseline']:.4f}",
            f"{block['baseline']['macro_f1']:.4f}",
        )
    console.print(table)

    score = report.score
    info_text = (
        f"[bold]MSE:[/bold] {score['mse']:.4f}\n"
        f"[bold]MAE:[/bold] {score['mae']:.4f}\n"
        f"[bold]Exact score match:[/bold] {score['exact_match_fraction']:.1%}\n"
        f"[bold]Absolute error < 1:[/bold] {score['mae_lt1_fraction']:.1%}\n"
        f"[bold]Rating match:[/bold] {score['rating_match_fraction']:.1%}"
    )
    console.print(Panel(info_text, title="Severity score", box=box.ROUNDED))


def display_associations(table_data: ClassAssociationTable, console: Optional[Console] = None) -> None:
    """Most associated words and bigrams per class, one column pair per class."""
    console = _console(console)
    table = Table(
        title=f"{METRIC_NAMES[table_data.metric]} associations (confidence > {table_data.threshold})",
        box=box.ROUNDED,
    )
    table.add_column("Class", style="cyan")
    table.add_column("Kept", justify="right")
    table.add_column("Top words", style="white")
    table.add_column("Top bigrams", style="magenta")
    for code, block in table_data.classes.items():
        label = f"{block['label'].upper()} ({code})"
        if block.get("error"):
            table.add_row(label, "0", f"[yellow]{block['error']}[/yellow]", "")
            continue
        words = ", ".join(f"'{escape(token)}' ({count})" for token, count in block["unigrams"])
        pairs = ", ".join(f"'{escape(token)}' ({count})" for token, count in block["bigrams"])
        table.add_row(label, str(block["filtered_count"]), words, pairs)
    console.print(table)


def _word_char_ranges(report: SaliencyReport) -> List[Tuple[int, int]]:
    """Character ranges of the words holding the top-k tokens."""
    seq = report.seq
    ranges = []
    for entry in report.top_k:
        start, end = entry["word_span"]
        first, last = seq.char_spans[start], seq.char_spans[end - 1]
        if first is not None and last is not None:
            ranges.append((first[0], last[1]))
    return sorted(set(ranges))


def annotate_text(report: SaliencyReport) -> Text:
    """The description with the top-k words in bold and underlined."""
    text = Text(report.seq.text)
    for start, end in _word_char_ranges(report):
        text.stylize("bold underline", start, end)
    return text


def display_saliency(report: SaliencyReport, console: Optional[Console] = None) -> None:
    console = _console(console)
    prediction = report.prediction
    title = (
        f"{METRIC_NAMES[report.metric]}: {prediction.label.upper()} ({prediction.code}), "
        f"confidence {prediction.confidence:.3f}"
    )
    console.print(Panel(annotate_text(report), title=title, box=box.ROUNDED))
    if not report.top_k:
        return
    table = Table(box=box.SIMPLE)
    table.add_column("Rank", justify="right")
    table.add_column("Word", style="bold")
    table.add_column("Token", style="cyan")
    table.add_column("Position", justify="right")
    table.add_column("Importance", justify="right")
    for entry in report.top_k:
        table.add_row(
            str(entry["rank"]), escape(entry["word"]), escape(entry["token"]),
            str(entry["position"]), f"{entry['score']:.4g}",
        )
    console.print(table)


def render_saliency_html(report: SaliencyReport) -> str:
    """Standalone HTML page shading each token by importance.

    Hovering a token shows its score; top-k words are bold and underlined.
    """
    seq = report.seq
    text = seq.text
    peak = max(report.scores) if report.scores else 0.0
    highlighted = _word_char_ranges(report)

    pieces = []
    cursor = 0
    for position, score in zip(report.positions, report.scores):
        span = seq.char_spans[position]
        if span is None or span[0] < cursor:
            continue
        start, end = span
        pieces.append(html.escape(text[cursor:start]))
        alpha = score / peak if peak > 0 else 0.0
        inner = html.escape(text[start:end])
        if any(a <= start and end <= b for a, b in highlighted):
            inner = f"<b><u>{inner}</u></b>"
        pieces.append(
            f'<span title="{html.escape(seq.surfaces[position])}: {score:.4g}" '
            f'style="background-color: rgba(220, 40, 40, {alpha:.3f})">{inner}</span>'
        )
        cursor = end
    pieces.append(html.escape(text[cursor:]))

    prediction = report.prediction
    heading = html.escape(
        f"{METRIC_NAMES[report.metric]}: {prediction.label.upper()} ({prediction.code}), "
        f"confidence {prediction.confidence:.3f}"
    )
    caption = html.escape(report.cve_id) if report.cve_id else ""
    items = "".join(
        f"<li>{html.escape(entry['word'])} <small>({entry['score']:.4g})</small></li>"
        for entry in report.top_k
    )
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{heading}</title></head>\n<body>\n"
        f"<h2>{heading}</h2>\n<p><em>{caption}</em></p>\n"
        f"<p style=\"font-family: monospace; line-height: 1.8\">{''.join(pieces)}</p>\n"
        f"<ol>{items}</ol>\n</body></html>\n"
    )


def display_training(log: Sequence[Dict[str, Any]], console: Optional[Console] = None) -> None:
    console = _console(console)
    header, epochs = log[0], log[1:]
    table = Table(title=f"Training {header['metric']} ({header['preset']})", box=box.ROUNDED)
    table.add_column("Epoch", justify="right")
    table.add_column("Phase", style="cyan")
    table.add_column("Loss", justify="right")
    table.add_column("Train accuracy", justify="right")
    table.add_column("Encoder digest", style="dim")
    for entry in epochs:
        table.add_row(
            str(entry["epoch"]), entry["phase"], f"{entry['loss']:.4f}",
            f"{entry['accuracy']:.4f}", entry["encoder_digest"][:12],
        )
    console.print(table)


def display_reports(paths: Sequence[Path], console: Optional[Console] = None) -> None:
    """List written report files."""
    console = _console(console)
    if not paths:
        console.print("[yellow]No reports found.[/yellow]")
        return
    table = Table(title="Reports", box=box.ROUNDED)
    table.add_column("Kind", style="cyan")
    table.add_column("File", style="green")
    for path in paths:
        table.add_row(path.stem.rsplit("-", 1)[0], str(path))
    console.print(table)
