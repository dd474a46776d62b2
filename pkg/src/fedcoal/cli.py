"""Command-line front end: run experiments, fetch datasets, plot curves.

Configs are flat INI-style key=value files, with sections mirroring the
experiment config (see configs/iid_blobs.cfg for a commented example).
All randomness flows from the config's master seed; the CLI adds none.

Exit codes: 0 success, 2 config/usage error, 3 runtime abort (training
divergence), 4 fetch checksum mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import sys
import urllib.request
from pathlib import Path

from .data import PartitionPlan
from .models import ModelSpec, TrainConfig
from .simulator import (
    ExperimentAborted,
    ExperimentConfig,
    IdxSource,
    StrategyConfig,
    SynthSource,
    compare_strategies,
    records_to_csv,
    results_to_json,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECKSUM = 4


class ConfigError(ValueError):
    """Invalid or missing config content; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field


def _load_config(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh, source=path)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
    return parser


def _apply_overrides(parser: configparser.ConfigParser, overrides: list[str]) -> None:
    """Apply repeatable --set entries; bare keys land in [experiment]."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "--set expects key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        section, _, option = key.rpartition(".")
        section = section or "experiment"
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option.strip(), value.strip())


def _get(parser, section, option, conv, default):
    if not parser.has_option(section, option):
        return default
    raw = parser.get(section, option).strip()
    if raw == "":
        return default
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{option}", f"bad value {raw!r}: {exc}") from exc


def _get_bool(parser, section, option, default):
    if not parser.has_option(section, option):
        return default
    raw = parser.get(section, option).strip()
    if raw == "":
        return default
    try:
        return parser.getboolean(section, option)
    except ValueError as exc:
        raise ConfigError(f"{section}.{option}", f"bad boolean {raw!r}") from exc


def _parse_strategies(parser) -> list[StrategyConfig]:
    names = _get(parser, "experiment", "strategy", str, "coalition")
    coalitions = _get(parser, "experiment", "coalitions", int, 3)
    weighting = _get(parser, "experiment", "weighting", str, "uniform")
    strategies = []
    for name in [n.strip() for n in names.split(",") if n.strip()]:
        try:
            if name == "coalition":
                strategies.append(StrategyConfig("coalition", coalitions=coalitions))
            elif name == "fedavg":
                strategies.append(StrategyConfig("fedavg", weighting=weighting))
            else:
                raise ValueError(f"unknown strategy {name!r}")
        except ValueError as exc:
            raise ConfigError("experiment.strategy", str(exc)) from exc
    if not strategies:
        raise ConfigError("experiment.strategy", "no strategy given")
    return strategies


def _build_experiment(
    parser: configparser.ConfigParser, seed_override: int | None
) -> tuple[ExperimentConfig, list[StrategyConfig]]:
    master_seed = _get(parser, "experiment", "master_seed", int, None)
    if seed_override is not None:
        master_seed = seed_override
    if master_seed is None:
        raise ConfigError("experiment.master_seed", "required (or pass --seed)")
    client_count = _get(parser, "experiment", "client_count", int, 10)

    kind = _get(parser, "model", "kind", str, "logistic")
    hidden_raw = _get(parser, "model", "hidden_dims", str, "")
    hidden = tuple(int(h) for h in hidden_raw.split(",") if h.strip()) if hidden_raw else ()
    try:
        model = ModelSpec(
            kind=kind,
            input_dim=_get(parser, "model", "input_dim", int, None) or 0,
            class_count=_get(parser, "model", "class_count", int, None) or 0,
            hidden_dims=hidden,
            init_seed=_get(parser, "model", "init_seed", int, None),
        )
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc

    try:
        train = TrainConfig(
            local_epochs=_get(parser, "train", "local_epochs", int, 5),
            batch_size=_get(parser, "train", "batch_size", int, 10),
            learning_rate=_get(parser, "train", "learning_rate", float, 0.01),
            shuffle_seed=_get(parser, "train", "shuffle_seed", int, None),
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from exc

    try:
        plan = PartitionPlan(
            scheme=_get(parser, "partition", "scheme", str, "iid-equal"),
            client_count=client_count,
            seed=_get(parser, "partition", "seed", int, None),
            alpha=_get(parser, "partition", "alpha", float, None),
        )
    except ValueError as exc:
        raise ConfigError("partition", str(exc)) from exc

    source_kind = _get(parser, "dataset", "source", str, "synth")
    if source_kind == "synth":
        source: SynthSource | IdxSource = SynthSource(
            class_count=_get(parser, "dataset", "class_count", int, 3),
            per_class=_get(parser, "dataset", "per_class", int, 200),
            test_per_class=_get(parser, "dataset", "test_per_class", int, 100),
            input_dim=_get(parser, "dataset", "input_dim", int, 4),
            separation=_get(parser, "dataset", "separation", float, 5.0),
            train_seed=_get(parser, "dataset", "train_seed", int, None),
            test_seed=_get(parser, "dataset", "test_seed", int, None),
        )
        if source.input_dim != model.input_dim:
            raise ConfigError(
                "dataset.input_dim", f"{source.input_dim} does not match model.input_dim"
            )
    elif source_kind == "idx":
        paths = {}
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            value = _get(parser, "dataset", key, str, None)
            if not value:
                raise ConfigError(f"dataset.{key}", "required for idx source")
            paths[key] = value
        source = IdxSource(**paths)
    else:
        raise ConfigError("dataset.source", f"unknown source {source_kind!r}")

    strategies = _parse_strategies(parser)
    try:
        cfg = ExperimentConfig(
            master_seed=master_seed,
            rounds=_get(parser, "experiment", "rounds", int, 50),
            model=model,
            source=source,
            plan=plan,
            train=train,
            strategy=strategies[0],
            client_count=client_count,
            eval_every=_get(parser, "experiment", "eval_every", int, 1),
            workers=_get(parser, "experiment", "workers", int, 1),
            snapshot_weights=_get_bool(parser, "experiment", "snapshot_weights", False),
        )
    except ValueError as exc:
        raise ConfigError("experiment", str(exc)) from exc
    return cfg, strategies


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("FEDCOAL_OUT") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run(args) -> int:
    try:
        parser = _load_config(args.config)
        _apply_overrides(parser, args.set or [])
        cfg, strategies = _build_experiment(parser, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = _out_dir(args)
    stem = Path(args.config).stem
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"

    try:
        runs = compare_strategies(cfg, strategies)
    except ExperimentAborted as exc:
        # Persist whatever completed before the divergence.
        records = exc.records
        csv_path.write_text(records_to_csv(records), encoding="utf-8")
        json_path.write_text(results_to_json(cfg, records), encoding="utf-8")
        print(f"error: {exc}", file=sys.stderr)
        print(f"partial records written to {csv_path}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    records = [rec for _, recs in runs for rec in recs]
    csv_path.write_text(records_to_csv(records), encoding="utf-8")
    json_path.write_text(results_to_json(cfg, records), encoding="utf-8")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def _parse_fetch_lines(parser) -> list[tuple[str, str, int, str]]:
    raw = _get(parser, "fetch", "files", str, "")
    entries = []
    for line in raw.splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ConfigError("fetch.files", f"expected 'url dest bytes sha256', got {line!r}")
        url, dest, size, digest = parts
        try:
            entries.append((url, dest, int(size), digest.lower()))
        except ValueError as exc:
            raise ConfigError("fetch.files", f"bad byte count in {line!r}") from exc
    return entries


def _verify_file(path: Path, size: int, digest: str) -> bool:
    if not path.is_file() or path.stat().st_size != size:
        return False
    return hashlib.sha256(path.read_bytes()).hexdigest() == digest


def cmd_fetch(args) -> int:
    try:
        parser = _load_config(args.config)
        _apply_overrides(parser, args.set or [])
        entries = _parse_fetch_lines(parser)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    dest_dir = _out_dir(args)
    for url, dest, size, digest in entries:
        path = dest_dir / dest
        if _verify_file(path, size, digest):
            print(f"{path}: already present, checksum ok")
            continue
        try:
            with urllib.request.urlopen(url) as response:
                path.write_bytes(response.read())
        except OSError as exc:
            print(f"error: fetching {url}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        if not _verify_file(path, size, digest):
            path.unlink(missing_ok=True)
            print(f"error: checksum mismatch for {url}, file removed", file=sys.stderr)
            return EXIT_CHECKSUM
        print(f"{path}: fetched, checksum ok")
    return EXIT_OK


def _read_series(csv_path: str) -> tuple[list[int], dict[str, list[float]]]:
    """Rounds plus accuracy series per strategy from one records CSV."""
    with open(csv_path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if len(lines) < 2:
        raise ConfigError(csv_path, "empty CSV (no data rows)")
    header = lines[0].split(",")
    try:
        round_col = header.index("round")
        acc_col = header.index("test_accuracy")
        strat_col = header.index("strategy")
    except ValueError as exc:
        raise ConfigError(csv_path, f"missing column: {exc}") from exc
    rounds: list[int] = []
    series: dict[str, list[float]] = {}
    seen_rounds: dict[str, list[int]] = {}
    for line in lines[1:]:
        cells = line.split(",")
        strategy = cells[strat_col]
        series.setdefault(strategy, []).append(float(cells[acc_col]))
        seen_rounds.setdefault(strategy, []).append(int(cells[round_col]))
    rounds = next(iter(seen_rounds.values()))
    for strategy, current in seen_rounds.items():
        if current != rounds:
            raise ConfigError(csv_path, f"round column mismatch for strategy {strategy!r}")
    return rounds, series


def cmd_plot(args) -> int:
    out = Path(args.out) if args.out else _out_dir(args) / "accuracy.svg"
    if out.suffix != ".svg":
        out = out / "accuracy.svg"
    out.parent.mkdir(parents=True, exist_ok=True)

    all_series: list[tuple[str, list[int], list[float]]] = []
    shared_rounds: list[int] | None = None
    try:
        for csv_path in args.csvs:
            rounds, series = _read_series(csv_path)
            if shared_rounds is None:
                shared_rounds = rounds
            elif rounds != shared_rounds:
                raise ConfigError(csv_path, "round column does not match the other inputs")
            stem = Path(csv_path).stem
            for strategy, accs in series.items():
                label = f"{stem}:{strategy}" if len(series) > 1 else stem
                all_series.append((label, rounds, accs))
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, rounds, accs in all_series:
        ax.plot(rounds, accs, marker="o", markersize=3, label=label)
    ax.set_xlabel("communication round")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)

    merged = out.with_suffix(".csv")
    header = ["round"] + [label for label, _, _ in all_series]
    rows = [",".join(header)]
    for i, rnd in enumerate(shared_rounds):
        rows.append(",".join([str(rnd)] + [repr(accs[i]) for _, _, accs in all_series]))
    merged.write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {out} and {merged}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcoal",
        description="Deterministic federated-learning simulator: coalition formation vs FedAvg.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("--config", required=True, help="path to the experiment config")
    run.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config value (section.key=value; bare keys hit [experiment])",
    )
    run.add_argument("--out", help="output directory (default $FEDCOAL_OUT or ./out)")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.set_defaults(func=cmd_run)

    fetch = sub.add_parser("fetch", help="download dataset files listed in the config")
    fetch.add_argument("--config", required=True)
    fetch.add_argument("--set", action="append", metavar="KEY=VALUE")
    fetch.add_argument("--out", help="destination directory (default $FEDCOAL_OUT or ./out)")
    fetch.set_defaults(func=cmd_fetch)

    plot = sub.add_parser("plot", help="plot accuracy-vs-round curves from records CSVs")
    plot.add_argument("csvs", nargs="+", help="records CSV files sharing the round column")
    plot.add_argument("--out", help="output SVG path (default $FEDCOAL_OUT/accuracy.svg)")
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entrypoint() -> None:  # console_scripts hook
    raise SystemExit(main())
