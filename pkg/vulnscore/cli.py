"""Main CLI interface for vulnscore."""

import functools
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import click
import yaml
from rich.console import Console
from rich.markup import escape

from .config import PipelineConfig, load_pipeline_config, resolve_config_path, starter_config
from .cvss import METRIC_ORDER, base_score, parse_vector
from .display import (
    display_associations,
    display_eval_report,
    display_prediction,
    display_reports,
    display_saliency,
    display_severity,
    display_training,
    render_saliency_html,
)
from .errors import DataError, StorageError, VulnscoreError
from .ingest import (
    DatasetSplit,
    VulnRecord,
    load_dataset,
    load_feed,
    load_split,
    normalize,
    save_dataset,
    save_manifest,
    split as split_records,
)
from .storage import ReportStore, atomic_write_text
from .tokenizer import Vocabulary, build_vocab
from .utils import canonical_json, setup_logging
from .validation import validate_config_file


console = Console()
err_console = Console(stderr=True)

FORMATS = click.Choice(["text", "structured"])
METRIC_CHOICE = click.Choice(METRIC_ORDER)


def handle_errors(func: Callable[..., Any]) -> Callable[..., Any]:
    """Report failures on stderr and exit with their category code."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except click.ClickException:
            raise
        except VulnscoreError as e:
            err_console.print(f"[red]Error:[/red] {escape(str(e))}", highlight=False)
            sys.exit(e.exit_code)
        except (ValueError, yaml.YAMLError) as e:
            err_console.print(f"[red]Error:[/red] {escape(str(e))}", highlight=False)
            sys.exit(DataError.exit_code)
        except OSError as e:
            err_console.print(f"[red]Error:[/red] {escape(str(e))}", highlight=False)
            sys.exit(StorageError.exit_code)
        except Exception as e:
            err_console.print(f"[red]Unexpected error:[/red] {escape(str(e))}", highlight=False)
            sys.exit(1)

    return wrapper


def _config(ctx: click.Context) -> PipelineConfig:
    obj = ctx.ensure_object(dict)
    if "config" not in obj:
        obj["config"] = load_pipeline_config(resolve_config_path(obj.get("config_path")))
    return obj["config"]


def _emit(output_format: str, payload: Dict[str, Any], render: Callable[[], None]) -> None:
    if output_format == "structured":
        click.echo(canonical_json(payload))
    else:
        render()


def _note(output_format: str, message: str) -> None:
    if output_format == "text":
        console.print(message)


def _load_split(dataset: Path, manifest: Path) -> Tuple[List[VulnRecord], DatasetSplit]:
    records = load_dataset(dataset)
    return records, load_split(records, manifest)


def _description(text: Optional[str], cve: Optional[str], dataset: Path) -> Tuple[str, Optional[str]]:
    if (text is None) == (cve is None):
        raise click.UsageError("Give exactly one of --text or --cve")
    if text is not None:
        return text, None
    for record in load_dataset(dataset):
        if record.cve_id == cve:
            return record.description, cve
    raise DataError(f"{cve} is not in the dataset {dataset}")


@click.group()
@click.version_option(version=__import__("vulnscore").__version__, prog_name="vulnscore")
@click.option("--config", "config_path", type=click.Path(path_type=Path), help="Pipeline config YAML (default: $VULNSCORE_CONFIG or ./vulnscore.yaml)")
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output")
@click.pass_context
def main(ctx: click.Context, config_path: Optional[Path], verbose: int) -> None:
    """vulnscore: predict CVSS v3.1 vectors and scores from vulnerability descriptions."""
    ctx.ensure_object(dict)["config_path"] = config_path
    setup_logging(verbose, err_console)


@main.command()
@click.argument("sources", nargs=-1)
@click.option("--feeds", "-f", multiple=True, help="Feed path or URL (repeatable; extra arguments are feeds too)")
@click.option("--out", type=click.Path(path_type=Path), help="Dataset JSONL (default: paths.dataset)")
@click.option("--years", "-y", type=int, multiple=True, help="Keep only these CVE years (default: config years)")
@click.option("--all-years", is_flag=True, help="Keep every year")
@click.pass_context
@handle_errors
def ingest(ctx: click.Context, sources: Tuple[str, ...], feeds: Tuple[str, ...], out: Optional[Path], years: Tuple[int, ...], all_years: bool) -> None:
    """Normalize NVD 1.1 feeds (paths or URLs, gzipped or not) into a dataset."""
    sources = feeds + sources
    if not sources:
        raise click.UsageError("Give at least one feed with --feeds or as an argument")
    cfg = _config(ctx)
    out = out or cfg.paths.dataset
    entries = []
    for source in sources:
        entries.extend(load_feed(source))
    keep_years = None if all_years else (list(years) or cfg.years)
    records = normalize(entries, keep_years)
    save_dataset(out, records)
    flagged = sum(1 for r in records if r.score_mismatch)
    console.print(f"[green]✓[/green] Wrote {len(records)} records to {out}")
    if flagged:
        console.print(f"[yellow]{flagged} records carry a score mismatch flag[/yellow]")


@main.command()
@click.option("--years", "-y", type=int, multiple=True, help="Feed years (default: config years)")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("feeds"), show_default=True)
@click.option("--url-template", default=None, help="Feed URL with a {year} placeholder")
@click.option("--max-concurrent", "-c", default=3, show_default=True, help="Maximum concurrent downloads")
@click.option("--timeout", "-t", default=60, show_default=True, help="Timeout per download in seconds")
@click.pass_context
@handle_errors
def fetch(ctx: click.Context, years: Tuple[int, ...], out: Path, url_template: Optional[str], max_concurrent: int, timeout: int) -> None:
    """Download yearly NVD JSON 1.1 feeds."""
    import asyncio

    from .fetch import DEFAULT_FEED_URL, FeedFetcher

    cfg = _config(ctx)
    fetcher = FeedFetcher(max_concurrent=max_concurrent, timeout=timeout)
    with console.status("[bold green]Downloading feeds..."):
        paths = asyncio.run(fetcher.fetch_years(list(years) or cfg.years, out, url_template or DEFAULT_FEED_URL))
    for path in paths.values():
        console.print(f"[green]✓[/green] {path}")


@main.command()
@click.option("--dataset", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "--manifest", "manifest", type=click.Path(path_type=Path), help="Manifest JSON to write (default: paths.manifest)")
@click.option("--seed", type=int, help="Shuffle seed (default: config seed)")
@click.option("--fraction", type=float, help="Train share (default: config split_fraction)")
@click.pass_context
@handle_errors
def split(ctx: click.Context, dataset: Optional[Path], manifest: Optional[Path], seed: Optional[int], fraction: Optional[float]) -> None:
    """Write a seeded train/test split manifest."""
    cfg = _config(ctx)
    records = load_dataset(dataset or cfg.paths.dataset)
    result = split_records(
        records,
        cfg.seed if seed is None else seed,
        cfg.split_fraction if fraction is None else fraction,
    )
    manifest = manifest or cfg.paths.manifest
    save_manifest(manifest, result)
    console.print(f"[green]✓[/green] {len(result.train)} train / {len(result.test)} test records -> {manifest}")


@main.command("build-vocab")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path))
@click.option("--manifest", type=click.Path(exists=True, path_type=Path))
@click.option("--out", type=click.Path(path_type=Path))
@click.option("--size", type=int, help="Vocabulary size (default: config vocab_size)")
@click.pass_context
@handle_errors
def build_vocab_command(ctx: click.Context, dataset: Optional[Path], manifest: Optional[Path], out: Optional[Path], size: Optional[int]) -> None:
    """Build the shared vocabulary from the training descriptions."""
    cfg = _config(ctx)
    _, data_split = _load_split(dataset or cfg.paths.dataset, manifest or cfg.paths.manifest)
    vocab = build_vocab((r.description for r in data_split.train), size or cfg.vocab_size)
    out = out or cfg.paths.vocab
    vocab.save(out)
    console.print(f"[green]✓[/green] {len(vocab)} tokens -> {out} (digest {vocab.digest[:12]})")


@main.command()
@click.option("--metric", "-m", "metrics", type=click.Choice(METRIC_ORDER + ["all"]), multiple=True, required=True, help="Metric to train, or 'all'")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path))
@click.option("--manifest", type=click.Path(exists=True, path_type=Path))
@click.option("--vocab", type=click.Path(exists=True, path_type=Path))
@click.option("--checkpoints-dir", "--checkpoints", "checkpoints", type=click.Path(file_okay=False, path_type=Path), help="Checkpoint directory (default: paths.checkpoints)")
@click.option("--preset", type=click.Choice(["tiny", "desk", "paper-small"]))
@click.option("--seed", type=int)
@click.option("--epochs-frozen", type=int)
@click.option("--epochs-joint", type=int)
@click.option("--format", "output_format", type=FORMATS, default="text", show_default=True)
@click.pass_context
@handle_errors
def train(
    ctx: click.Context,
    metrics: Tuple[str, ...],
    dataset: Optional[Path],
    manifest: Optional[Path],
    vocab: Optional[Path],
    checkpoints: Optional[Path],
    preset: Optional[str],
    seed: Optional[int],
    epochs_frozen: Optional[int],
    epochs_joint: Optional[int],
    output_format: str,
) -> None:
    """Train per-metric classifiers and write <METRIC>.ckpt checkpoints."""
    from .model import save_checkpoint
    from .pipeline import checkpoint_path
    from .training import train_metric

    cfg = _config(ctx)
    if preset:
        cfg.preset = preset
    if epochs_frozen is not None:
        cfg.train.epochs_frozen = epochs_frozen
    if epochs_joint is not None:
        cfg.train.epochs_joint = epochs_joint
    _, data_split = _load_split(dataset or cfg.paths.dataset, manifest or cfg.paths.manifest)
    vocabulary = Vocabulary.load(vocab or cfg.paths.vocab)
    out_dir = checkpoints or cfg.paths.checkpoints

    selected = METRIC_ORDER if "all" in metrics else list(dict.fromkeys(metrics))
    logs = {}
    for metric in selected:
        train_config = cfg.train_config(metric, seed=seed, manifest_digest=data_split.manifest_digest)
        result = train_metric(train_config, data_split, vocabulary)
        save_checkpoint(checkpoint_path(out_dir, metric), result.checkpoint)
        result.save_log(out_dir / f"{metric}.log.jsonl")
        logs[metric] = result.log
        if output_format == "text":
            display_training(result.log, console)
        _note(output_format, f"[green]✓[/green] Saved {checkpoint_path(out_dir, metric)}")
    if output_format == "structured":
        click.echo(canonical_json(logs))


@main.command()
@click.option("--checkpoints-dir", "--checkpoints", "checkpoints", type=click.Path(file_okay=False, path_type=Path), help="Checkpoint directory (default: paths.checkpoints)")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path))
@click.option("--manifest", type=click.Path(exists=True, path_type=Path))
@click.option("--vocab", type=click.Path(exists=True, path_type=Path))
@click.option("--format", "output_format", type=FORMATS, default="text", show_default=True)
@click.pass_context
@handle_errors
def evaluate(ctx: click.Context, checkpoints: Optional[Path], dataset: Optional[Path], manifest: Optional[Path], vocab: Optional[Path], output_format: str) -> None:
    """Evaluate all eight classifiers on the test split."""
    from .metrics import evaluate as run_evaluation
    from .pipeline import load_classifiers

    cfg = _config(ctx)
    classifiers = load_classifiers(checkpoints or cfg.paths.checkpoints)
    _, data_split = _load_split(dataset or cfg.paths.dataset, manifest or cfg.paths.manifest)
    vocabulary = Vocabulary.load(vocab or cfg.paths.vocab)
    report = run_evaluation(classifiers, data_split.test, vocabulary, manifest_digest=data_split.manifest_digest)
    payload = report.to_dict()
    path = ReportStore(cfg.paths.reports).save("eval", payload)
    _emit(output_format, payload, lambda: display_eval_report(report, console))
    _note(output_format, f"[blue]Report:[/blue] {path}")


@main.command()
@click.option("--text", help="Description to score")
@click.option("--cve", help="CVE id to look up in the local dataset")
@click.option("--checkpoints-dir", "--checkpoints", "checkpoints", type=click.Path(file_okay=False, path_type=Path), help="Checkpoint directory (default: paths.checkpoints)")
@click.option("--vocab", type=click.Path(exists=True, path_type=Path))
@click.option("--dataset", type=click.Path(path_type=Path))
@click.option("--explain", "explain_metrics", type=METRIC_CHOICE, multiple=True, help="Attach token importances for this metric")
@click.option("--k", type=int, help="Top tokens per explanation (default: thresholds.top_k)")
@click.option("--format", "output_format", type=FORMATS, default="structured", show_default=True)
@click.pass_context
@handle_errors
def predict(
    ctx: click.Context,
    text: Optional[str],
    cve: Optional[str],
    checkpoints: Optional[Path],
    vocab: Optional[Path],
    dataset: Optional[Path],
    explain_metrics: Tuple[str, ...],
    k: Optional[int],
    output_format: str,
) -> None:
    """Predict the CVSS vector, score and rating of a description."""
    from .pipeline import load_classifiers, predict_full

    cfg = _config(ctx)
    description, cve_id = _description(text, cve, dataset or cfg.paths.dataset)
    classifiers = load_classifiers(checkpoints or cfg.paths.checkpoints)
    vocabulary = Vocabulary.load(vocab or cfg.paths.vocab)
    result = predict_full(
        description, classifiers, vocabulary, cve_id=cve_id,
        explain_metrics=explain_metrics, k=k or cfg.thresholds.top_k,
    )
    payload = result.to_dict()
    ReportStore(cfg.paths.reports).save("prediction", payload)
    _emit(output_format, payload, lambda: display_prediction(result, console))


@main.command()
@click.option("--text", help="Description to explain")
@click.option("--cve", help="CVE id to look up in the local dataset")
@click.option("--metric", "-m", type=METRIC_CHOICE, required=True)
@click.option("--k", type=int, help="Number of top tokens (default: thresholds.top_k)")
@click.option("--checkpoints-dir", "--checkpoints", "checkpoints", type=click.Path(file_okay=False, path_type=Path), help="Checkpoint directory (default: paths.checkpoints)")
@click.option("--vocab", type=click.Path(exists=True, path_type=Path))
@click.option("--dataset", type=click.Path(path_type=Path))
@click.option("--html", "html_path", type=click.Path(dir_okay=False, path_type=Path), help="Also write an HTML rendering")
@click.option("--format", "output_format", type=FORMATS, default="text", show_default=True)
@click.pass_context
@handle_errors
def explain(
    ctx: click.Context,
    text: Optional[str],
    cve: Optional[str],
    metric: str,
    k: Optional[int],
    checkpoints: Optional[Path],
    vocab: Optional[Path],
    dataset: Optional[Path],
    html_path: Optional[Path],
    output_format: str,
) -> None:
    """Rank the tokens that drove one metric's prediction."""
    from .pipeline import check_classifiers, load_classifiers
    from .saliency import explain as explain_text

    cfg = _config(ctx)
    description, cve_id = _description(text, cve, dataset or cfg.paths.dataset)
    model = load_classifiers(checkpoints or cfg.paths.checkpoints, [metric])[metric]
    vocabulary = Vocabulary.load(vocab or cfg.paths.vocab)
    check_classifiers({metric: model}, vocabulary, [metric])
    report, _ = explain_text(description, model, vocabulary, k=k or cfg.thresholds.top_k, cve_id=cve_id)
    payload = report.to_dict()
    ReportStore(cfg.paths.reports).save("explain", payload)
    if html_path is not None:
        atomic_write_text(html_path, render_saliency_html(report))
        _note(output_format, f"[blue]HTML:[/blue] {html_path}")
    _emit(output_format, payload, lambda: display_saliency(report, console))


@main.command()
@click.option("--metric", "-m", type=METRIC_CHOICE, required=True)
@click.option("--threshold", type=float, help="Minimum predicted-class probability (default: thresholds.confidence)")
@click.option("--k", type=int, help="Top tokens per record (default: thresholds.top_k)")
@click.option("--checkpoints-dir", "--checkpoints", "checkpoints", type=click.Path(file_okay=False, path_type=Path), help="Checkpoint directory (default: paths.checkpoints)")
@click.option("--dataset", type=click.Path(exists=True, path_type=Path))
@click.option("--manifest", type=click.Path(exists=True, path_type=Path))
@click.option("--vocab", type=click.Path(exists=True, path_type=Path))
@click.option("--format", "output_format", type=FORMATS, default="text", show_default=True)
@click.pass_context
@handle_errors
def aggregate(
    ctx: click.Context,
    metric: str,
    threshold: Optional[float],
    k: Optional[int],
    checkpoints: Optional[Path],
    dataset: Optional[Path],
    manifest: Optional[Path],
    vocab: Optional[Path],
    output_format: str,
) -> None:
    """Count the words most associated with each predicted class on the test split."""
    from .pipeline import check_classifiers, load_classifiers
    from .saliency import aggregate_associations

    cfg = _config(ctx)
    model = load_classifiers(checkpoints or cfg.paths.checkpoints, [metric])[metric]
    _, data_split = _load_split(dataset or cfg.paths.dataset, manifest or cfg.paths.manifest)
    vocabulary = Vocabulary.load(vocab or cfg.paths.vocab)
    check_classifiers({metric: model}, vocabulary, [metric])
    table = aggregate_associations(
        model, data_split.test, vocabulary,
        threshold=cfg.thresholds.confidence if threshold is None else threshold,
        k=k or cfg.thresholds.top_k,
        manifest_digest=data_split.manifest_digest,
    )
    payload = table.to_dict()
    path = ReportStore(cfg.paths.reports).save("associations", payload)
    _emit(output_format, payload, lambda: display_associations(table, console))
    _note(output_format, f"[blue]Report:[/blue] {path}")


@main.command()
@click.argument("vector")
@click.option("--format", "output_format", type=FORMATS, default="text", show_default=True)
@handle_errors
def score(vector: str, output_format: str) -> None:
    """Compute the CVSS v3.1 base score of a vector string."""
    parsed = parse_vector(vector)
    severity = base_score(parsed)
    payload = dict(severity.to_dict(), vector=vector)
    _emit(output_format, payload, lambda: display_severity(parsed, severity, console))


@main.command()
@click.option("--kind", help="Only reports of this kind (eval, prediction, explain, associations)")
@click.pass_context
@handle_errors
def reports(ctx: click.Context, kind: Optional[str]) -> None:
    """List written reports."""
    cfg = _config(ctx)
    display_reports(ReportStore(cfg.paths.reports).list_reports(kind), console)


@main.command()
@click.argument("name")
@click.option("--preset", type=click.Choice(["tiny", "desk", "paper-small"]), default="desk", show_default=True)
def init(name: str, preset: str) -> None:
    """Create a starter config YAML file with sensible defaults."""
    filename = f"{name}.yaml"

    if Path(filename).exists():
        console.print(f"[red]Error:[/red] File {filename} already exists")
        sys.exit(1)

    try:
        with open(filename, "w", encoding="utf-8") as f:
            f.write(starter_config(name, preset))
        console.print(f"[green]✓[/green] Created {filename}")
        console.print("[blue]Next steps:[/blue]")
        console.print(f"  1. vulnscore --config {filename} fetch")
        console.print(f"  2. vulnscore --config {filename} ingest feeds/*.json.gz")
        console.print(f"  3. vulnscore --config {filename} split && vulnscore --config {filename} build-vocab")
        console.print(f"  4. vulnscore --config {filename} train --metric all")
    except Exception as e:
        console.print(f"[red]Error:[/red] {str(e)}")
        sys.exit(1)


@main.command()
@click.argument("config_file", type=click.Path(exists=True, path_type=Path))
def validate(config_file: Path) -> None:
    """Validate a pipeline config YAML file."""
    issues = validate_config_file(config_file)

    if issues:
        console.print(f"[red]Validation failed for {config_file}:[/red]")
        for issue in issues:
            console.print(f"  [red]✗[/red] {issue}")
        sys.exit(DataError.exit_code)
    else:
        console.print(f"[green]✓[/green] {config_file} is valid")


if __name__ == "__main__":
    main()
