"""
falconc command line: flow labeling for EV-charging networks.

    python src/main.py ingest --manifest m.json --out flows.csv
    python src/main.py train --flows flows.csv --benign-only --seed 7 --out model.json
    python src/main.py calibrate --mode refined --tau 0.6 --model model.json --train flows.csv --out refined.json
    python src/main.py label --model model.json --boundary refined.json --flows new.csv --out labels.csv
"""
import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime
from typing import Dict, List, Optional

import pandas as pd
from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from config import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_DROP_COLUMNS,
    DEFAULT_GAP,
    DEFAULT_HIDDEN_DIM,
    DEFAULT_IDLE_TIMEOUT,
    DEFAULT_LATENT_DIM,
    DEFAULT_LATENT_RANGE,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MARGIN,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_MAX_WIDTH,
    DEFAULT_MIN_DELTA,
    DEFAULT_PATIENCE,
    DEFAULT_ROLLING_WINDOW,
    DEFAULT_SEED,
    DEFAULT_TAU,
    DEFAULT_TEST_FRACTION,
    DEFAULT_TRIALS_PER_DIM,
    FALCONC_CONFIG,
    LOG_LEVEL,
)
from core.autoencoder import TrainConfig
from core.boundary import (
    Verdict,
    load_boundary,
    metrics_from_outcomes,
    parse_truth,
    read_labels_csv,
    save_boundary,
    write_labels_csv,
)
from core.errors import DataError, NumericError
from core.flow_ingest import read_flow_table, write_flow_table
from core.model_io import (
    load_model,
    read_history_csv,
    read_profile_csv,
    save_model,
    write_history_csv,
    write_profile_csv,
)
from services import labeling_service
from services.audit import audit, load_ids_log, write_audit_json
from services.sweep import SweepConfig, load_summary_csv, write_summary_csv, write_sweep_csv
from utils.format_utils import (
    format_audit_text,
    format_intervals,
    format_metrics_text,
    format_percent,
    format_sweep_text,
)
from utils.report_generator import ReportGenerator, sweep_overview

console = Console()
err_console = Console(stderr=True)
logger = logging.getLogger("falconc")

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# Built-in values of every option that a config file may supply
DEFAULTS: Dict[str, Dict] = {
    "ingest": {"idle_timeout": DEFAULT_IDLE_TIMEOUT, "drop": list(DEFAULT_DROP_COLUMNS), "workers": 1,
               "aggregate": False},
    "train": {"hidden": DEFAULT_HIDDEN_DIM, "latent": DEFAULT_LATENT_DIM, "epochs": DEFAULT_MAX_EPOCHS,
              "lr": DEFAULT_LEARNING_RATE, "batch_size": DEFAULT_BATCH_SIZE, "patience": DEFAULT_PATIENCE,
              "min_delta": DEFAULT_MIN_DELTA, "test_fraction": DEFAULT_TEST_FRACTION,
              "benign_only": False, "linear_output": False},
    "profile": {},
    "calibrate": {"mode": "naive", "tau": DEFAULT_TAU, "gap": DEFAULT_GAP, "margin": DEFAULT_MARGIN,
                  "max_width": DEFAULT_MAX_WIDTH, "safety_check": False},
    "label": {},
    "sweep": {"hidden": DEFAULT_HIDDEN_DIM, "latent_min": DEFAULT_LATENT_RANGE[0],
              "latent_max": DEFAULT_LATENT_RANGE[1], "trials": DEFAULT_TRIALS_PER_DIM,
              "window": DEFAULT_ROLLING_WINDOW, "epochs": DEFAULT_MAX_EPOCHS, "lr": DEFAULT_LEARNING_RATE,
              "batch_size": DEFAULT_BATCH_SIZE, "patience": DEFAULT_PATIENCE, "min_delta": DEFAULT_MIN_DELTA,
              "holdout_fraction": DEFAULT_TEST_FRACTION, "workers": 1, "linear_output": False},
    "audit": {},
    "report": {"title": "falconc run report"},
}
COMMON_DEFAULTS = {"seed": DEFAULT_SEED}


class UsageError(Exception):
    """Bad command-line usage; exit code 1."""


class FalconArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = FalconArgumentParser(prog="falconc", description="Flow labeling for EV-charging networks")
    parser.add_argument("--config", help="JSON config file (default: $FALCONC_CONFIG)")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=FalconArgumentParser)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="Primary output file")
        return p

    p = add("ingest", "Load labeled flow CSVs or aggregate packet CSVs into a flow table")
    p.add_argument("--manifest", help="Dataset manifest JSON")
    p.add_argument("--packets", nargs="+", help="Packet CSV files")
    p.add_argument("--aggregate", action="store_true", default=None, help="Aggregate packets into flows")
    p.add_argument("--idle-timeout", type=float)
    p.add_argument("--label", help="class/attack/state label for aggregated packet flows")
    p.add_argument("--drop", nargs="*", help="Columns to drop (empty keeps every column)")
    p.add_argument("--workers", type=int)

    for name in ("train", "sweep"):
        p = add(name, "Train the autoencoder on benign flows" if name == "train"
                else "Sweep the latent dimension over the benign flows")
        p.add_argument("--flows", required=True, help="Flow table CSV")
        p.add_argument("--hidden", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--min-delta", type=float)
        p.add_argument("--linear-output", action="store_true", default=None)
        if name == "train":
            p.add_argument("--benign-only", action="store_true", default=None,
                           help="Train on the benign rows only (other rows are an error without it)")
            p.add_argument("--latent", type=int)
            p.add_argument("--test-fraction", type=float)
            p.add_argument("--history", help="Training curve CSV (default: <out>.history.csv)")
        else:
            p.add_argument("--latent-min", type=int)
            p.add_argument("--latent-max", type=int)
            p.add_argument("--trials", type=int)
            p.add_argument("--window", type=int)
            p.add_argument("--holdout-fraction", type=float)
            p.add_argument("--workers", type=int)
            p.add_argument("--summary", help="Per-dimension summary CSV (default: <out>.summary.csv)")

    p = add("profile", "Reconstruction error profile of flows under a model")
    p.add_argument("--model", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--summary", help="Per-tag summary CSV (default: <out>.summary.csv)")

    p = add("calibrate", "Build a naive or refined decision boundary")
    p.add_argument("--mode", choices=["naive", "refined"])
    p.add_argument("--tau", type=float)
    p.add_argument("--gap", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--max-width", type=float)
    p.add_argument("--model")
    p.add_argument("--train", help="Flow table holding the model's benign training flows")
    p.add_argument("--safety-check", action="store_true", default=None,
                   help="Drop carved intervals that admit a known malicious flow")

    p = add("label", "Label flows as benign or malicious")
    p.add_argument("--model", required=True)
    p.add_argument("--boundary", required=True)
    p.add_argument("--flows", required=True)
    p.add_argument("--metrics", help="Metrics JSON (written when every flow has a truth label)")

    p = add("audit", "Compare IDS decisions with flow labels")
    p.add_argument("--ids-log", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--text", help="Text summary (default: <out>.txt)")

    p = add("report", "Render an HTML report from run artifacts")
    p.add_argument("--history")
    p.add_argument("--profile")
    p.add_argument("--boundary")
    p.add_argument("--sweep-summary")
    p.add_argument("--labels")
    p.add_argument("--title")
    return parser


def load_config(path: Optional[str]) -> Dict:
    if not path:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file '{path}' not found.")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"Config file '{path}' is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise DataError(f"Config file '{path}' must hold a JSON object")
    return data


def _normalize(section: Dict) -> Dict:
    return {str(k).replace("-", "_"): v for k, v in section.items() if not isinstance(v, dict)}


def resolve_options(command: str, args: argparse.Namespace, config: Dict) -> Dict:
    """Built-in defaults, then the config file (top level, then its section), then explicit flags."""
    options = {**COMMON_DEFAULTS, **DEFAULTS[command]}
    options.update({k: v for k, v in _normalize(config).items() if k in options or k in vars(args)})
    options.update(_normalize(config.get(command, {})))
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose"):
            continue
        if value is not None or key not in options:
            options[key] = value
    return options


def _sibling(path: str, suffix: str) -> str:
    return os.path.splitext(path)[0] + suffix


def write_run_manifest(command: str, options: Dict, config_path: Optional[str],
                       derived_seeds: Dict[str, int]) -> str:
    resolved = {k: v for k, v in sorted(options.items())}
    run_id = hashlib.sha256(json.dumps({"command": command, "options": resolved},
                                       sort_keys=True, default=str).encode("utf-8")).hexdigest()
    out = options["out"]
    manifest = {
        "run_id": run_id,
        "subcommand": command,
        "config": config_path or "",
        "seed": options.get("seed"),
        "derived_seeds": derived_seeds,
        "options": resolved,
        "output_dir": os.path.dirname(os.path.abspath(out)),
        "created": datetime.now().isoformat(timespec="seconds"),
    }
    path = out + ".run.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, default=str)
    return path


def _train_config(options: Dict) -> TrainConfig:
    return TrainConfig(
        max_epochs=options["epochs"],
        learning_rate=options["lr"],
        batch_size=options["batch_size"],
        early_stop_patience=options["patience"],
        early_stop_min_delta=options["min_delta"],
    )


def _count_table(title: str, rows: List[List[str]], columns: List[str]) -> Table:
    table = Table(title=title, box=box.ROUNDED, show_header=True, header_style="bold cyan")
    for i, column in enumerate(columns):
        table.add_column(column, style="cyan" if i == 0 else None, justify="left" if i == 0 else "right")
    for row in rows:
        table.add_row(*row)
    return table


def cmd_ingest(options: Dict) -> Dict[str, int]:
    if bool(options.get("manifest")) == bool(options.get("packets")):
        raise UsageError("ingest needs exactly one of --manifest or --packets")
    drop = options["drop"] or []
    if options.get("packets"):
        if not options["aggregate"]:
            raise UsageError("packet input needs --aggregate")
        label = parse_truth(options["label"]) if options.get("label") else None
        result = labeling_service.ingest_packets(options["packets"], options["idle_timeout"], drop, label)
    else:
        result = labeling_service.ingest_manifest(options["manifest"], drop, options["workers"])

    write_flow_table(options["out"], result.flows)
    rows = [[c.path, str(c.accepted), str(c.rejected)] for c in result.counts]
    console.print(_count_table("Ingested files", rows, ["File", "Rows", "Rejected"]))
    console.print(f"[green]{len(result.flows)} flows written to {options['out']}[/green]")
    return {}


def cmd_train(options: Dict) -> Dict[str, int]:
    flows = read_flow_table(options["flows"])
    run = labeling_service.train_model(
        flows,
        architecture={"hidden_dim": options["hidden"], "latent_dim": options["latent"],
                      "linear_output": bool(options["linear_output"])},
        train_config=_train_config(options),
        benign_only=bool(options["benign_only"]),
        test_fraction=options["test_fraction"],
        seed=options["seed"],
    )
    save_model(options["out"], run.bundle)
    history_file = options.get("history") or _sibling(options["out"], ".history.csv")
    write_history_csv(history_file, run.bundle.history)

    history = run.bundle.history
    arch = run.bundle.params.architecture
    console.print(Panel.fit(
        f"d={arch.input_dim}  H={arch.hidden_dim}  L={arch.latent_dim}\n"
        f"Trained on {len(run.train_ids)} benign flows, {len(run.test_ids)} held out\n"
        f"Stopped at epoch {history.stopped_epoch} ({history.stop_reason.value}); "
        f"best epoch {history.best_epoch}, loss {min(history.losses):.6g}",
        title="Model", border_style="cyan",
    ))
    return {"split": labeling_service.derive_seed(options["seed"], "split"),
            "train": run.bundle.train_config.seed}


def cmd_profile(options: Dict) -> Dict[str, int]:
    bundle = load_model(options["model"])
    flows = read_flow_table(options["flows"])
    profile = labeling_service.profile_model(bundle, flows)
    write_profile_csv(options["out"], profile)
    summary_file = options.get("summary") or _sibling(options["out"], ".summary.csv")
    pd.DataFrame([{"tag": tag, **summary.__dict__} for tag, summary in profile.summaries.items()]).to_csv(
        summary_file, index=False)

    rows = [[tag, str(s.count), f"{s.min:.4g}", f"{s.mean:.4g}", f"{s.p95:.4g}", f"{s.max:.4g}"]
            for tag, s in profile.summaries.items()]
    console.print(_count_table("Reconstruction error", rows, ["Tag", "Flows", "Min", "Mean", "P95", "Max"]))
    return {}


def cmd_calibrate(options: Dict) -> Dict[str, int]:
    bundle = flows = None
    if options["mode"] == "refined":
        if not options.get("model") or not options.get("train"):
            raise UsageError("refined calibration needs --model and --train")
        bundle = load_model(options["model"])
        flows = read_flow_table(options["train"])
    boundary = labeling_service.calibrate(
        options["mode"], options["tau"], options["gap"], options["margin"], options["max_width"],
        bundle=bundle, flows=flows, safety_check=bool(options["safety_check"]),
    )
    save_boundary(options["out"], boundary)
    console.print(f"[green]{boundary.kind.value} boundary:[/green] {format_intervals(boundary.intervals)}")
    return {}


def cmd_label(options: Dict) -> Dict[str, int]:
    bundle = load_model(options["model"])
    boundary = load_boundary(options["boundary"])
    flows = read_flow_table(options["flows"])
    outcomes, metrics = labeling_service.label_flows(bundle, boundary, flows)
    write_labels_csv(options["out"], outcomes)

    malicious = sum(1 for o in outcomes if o.predicted == Verdict.MALICIOUS)
    console.print(f"[green]{len(outcomes)} flows labeled, {malicious} malicious[/green]")
    if metrics is not None:
        rows = [
            ["Accuracy", format_percent(metrics.accuracy)],
            ["Precision", format_percent(metrics.precision)],
            ["Recall", format_percent(metrics.recall)],
            ["False positive rate", format_percent(metrics.false_positive_rate)],
            ["Benign accuracy", format_percent(metrics.benign_accuracy)],
            ["TP / FP / TN / FN", f"{metrics.tp} / {metrics.fp} / {metrics.tn} / {metrics.fn}"],
        ]
        rows.extend([f"Benign accuracy ({tag})", format_percent(v)]
                    for tag, v in sorted(metrics.benign_accuracy_by_tag.items()))
        console.print(_count_table("Labeling metrics", rows, ["Metric", "Value"]))
        with open(_sibling(options["out"], ".metrics.txt"), "w", encoding="utf-8") as f:
            f.write(format_metrics_text(metrics) + "\n")
        if options.get("metrics"):
            with open(options["metrics"], "w", encoding="utf-8") as f:
                json.dump(metrics.to_dict(), f, indent=2)
    return {}


def cmd_sweep(options: Dict) -> Dict[str, int]:
    flows = read_flow_table(options["flows"])
    base_seed = labeling_service.derive_seed(options["seed"], "sweep")
    config = SweepConfig(
        latent_range=(options["latent_min"], options["latent_max"]),
        trials_per_dim=options["trials"],
        rolling_window=options["window"],
        train_config=_train_config(options),
        hidden_dim=options["hidden"],
        linear_output=bool(options["linear_output"]),
        holdout_fraction=options["holdout_fraction"],
        seed=base_seed,
        workers=options["workers"],
    )
    report = labeling_service.sweep_latent(flows, config)
    write_sweep_csv(options["out"], report)
    write_summary_csv(options.get("summary") or _sibling(options["out"], ".summary.csv"), report)
    with open(_sibling(options["out"], ".txt"), "w", encoding="utf-8") as f:
        f.write(format_sweep_text(report) + "\n")

    rows = [[str(s.latent_dim), f"{s.mean:.5g}", f"{s.std:.3g}", f"{s.rolling_mean:.5g}"]
            for s in report.summaries]
    console.print(_count_table("Latent sweep", rows, ["Latent", "Mean", "Std", "Rolling"]))
    console.print(f"Grand mean over all dims: {report.grand_mean:.6g}")
    console.print(f"[green]Recommended latent dim: {report.recommended_dim}[/green]")
    for warning in report.warnings:
        console.print(f"[yellow]Warning: {warning}[/yellow]")
    return {"sweep": base_seed}


def cmd_audit(options: Dict) -> Dict[str, int]:
    report = audit(load_ids_log(options["ids_log"]), read_labels_csv(options["labels"]))
    write_audit_json(options["out"], report)
    text = format_audit_text(report)
    with open(options.get("text") or _sibling(options["out"], ".txt"), "w", encoding="utf-8") as f:
        f.write(text)
    console.print(text)
    return {}


def cmd_report(options: Dict) -> Dict[str, int]:
    history = read_history_csv(options["history"]) if options.get("history") else None
    profile = read_profile_csv(options["profile"]) if options.get("profile") else None
    boundary = load_boundary(options["boundary"]) if options.get("boundary") else None
    sweep = load_summary_csv(options["sweep_summary"]) if options.get("sweep_summary") else None
    metrics = None
    if options.get("labels"):
        outcomes = read_labels_csv(options["labels"])
        if outcomes and all(o.truth is not None for o in outcomes):
            metrics = metrics_from_outcomes(outcomes)
    ReportGenerator(options["title"]).generate_html_report(
        options["out"], history=history, profile=profile, boundary=boundary, sweep=sweep, metrics=metrics,
    )
    if sweep:
        overview = sweep_overview(sweep)
        console.print(f"Sweep: recommended latent dim {overview['recommended_dim']}, "
                      f"grand mean {overview['grand_mean']:.6g}")
    console.print(f"[green]Report written to {options['out']}[/green]")
    return {}


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "profile": cmd_profile,
    "calibrate": cmd_calibrate,
    "label": cmd_label,
    "sweep": cmd_sweep,
    "audit": cmd_audit,
    "report": cmd_report,
}


def setup_logging(verbose: bool) -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    root.addHandler(RichHandler(console=err_console, show_path=False))
    root.setLevel(logging.DEBUG if verbose else LOG_LEVEL.upper())


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        setup_logging(args.verbose)
        config_path = args.config or FALCONC_CONFIG or None
        options = resolve_options(args.command, args, load_config(config_path))
        derived = COMMANDS[args.command](options)
        write_run_manifest(args.command, options, config_path, derived)
        return 0
    except UsageError as e:
        err_console.print(f"[bold red]Usage error:[/bold red] {e}")
        return EXIT_USAGE
    except NumericError as e:
        err_console.print(f"[bold red]Numeric failure:[/bold red] {e}")
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, ValueError) as e:
        err_console.print(f"[bold red]Data error:[/bold red] {e}")
        return EXIT_DATA


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        console.print("\n\n[yellow]Interrupted by user.[/yellow]")
        sys.exit(130)
