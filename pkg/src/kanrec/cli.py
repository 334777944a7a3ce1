"""Command-line entry point: preprocess, build-kg, train-kge, train, evaluate, ablate, sweep, plot.

Configuration comes from four layers, later ones winning: dataclass defaults,
a JSON config file (``--config``), environment variables prefixed ``KANREC_``
(upper-cased field names, e.g. ``KANREC_BATCH_SIZE``), and explicit flags.
Unknown config keys are rejected, and each subcommand verifies its input
paths before doing any work.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import data_pipeline, training_eval
from .errors import ConfigurationError, DataError, KanrecError
from .kge import EmbeddingTable, KgeConfig, train_kge
from .kg_store import load_triples
from .news_encoder import WordVocabulary
from .training_eval import MetricReport, ModelCheckpoint, TrainConfig

ENV_PREFIX = "KANREC_"

DEFAULT_EPOCH_GRID = [5, 8, 10, 12, 15]
DEFAULT_NEIGHBOR_GRID = [5, 10, 15, 20, 25]  # one size past 20 to expose the decline
DEFAULT_ABLATE_DUAL = ["with-DO", "without-DO"]
DEFAULT_ABLATE_WORD_MODELS = ["word2vec", "glove", "bert"]
DEFAULT_ABLATE_EMBEDDING_MODELS = ["TransE", "TransH", "TransR"]


@dataclass
class RunConfig:
    """Flat run configuration: training knobs plus file locations and grids."""

    # file locations
    news_path: str | None = None
    behaviors_path: str | None = None
    triples_path: str | None = None
    word_vectors_path: str | None = None
    word_vector_paths: dict = field(default_factory=dict)  # word-model tag -> vector file
    dataset_cache: str | None = None
    embeddings_path: str | None = None
    checkpoint_path: str | None = None
    report_path: str | None = None
    output_dir: str = "runs"
    # preprocessing
    min_readers: int = 10
    min_history: int = 50
    split_ratio: float = 0.8
    # embedding pretraining
    kge_epochs: int = 10
    kge_batch_size: int = 128
    kge_learning_rate: float = 0.01
    kge_margin: float = 1.0
    # end-to-end training (mirrors TrainConfig)
    batch_size: int = 128
    learning_rate: float = 0.0001
    epochs: int = 8
    word_dim: int = 300
    context_dim: int = 300
    neighbor_size: int = 20
    eom_batch: int = 110
    seed: int = 0
    embedding_model: str = "TransR"
    word_model: str = "glove"
    history_len: int = 50
    heads: int = 2
    entity_slots: int = 10
    eom_pretrain_epochs: int = 0
    use_dual_observation: bool = True
    fine_tune_embeddings: bool = False
    deterministic: bool = True
    # sweep and ablation grids
    sweep_epochs: list = field(default_factory=lambda: list(DEFAULT_EPOCH_GRID))
    sweep_neighbors: list = field(default_factory=lambda: list(DEFAULT_NEIGHBOR_GRID))
    ablate_dual: list = field(default_factory=lambda: list(DEFAULT_ABLATE_DUAL))
    ablate_word_models: list = field(default_factory=lambda: list(DEFAULT_ABLATE_WORD_MODELS))
    ablate_embedding_models: list = field(default_factory=lambda: list(DEFAULT_ABLATE_EMBEDDING_MODELS))

    def train_config(self, **overrides) -> TrainConfig:
        kwargs = {f.name: getattr(self, f.name) for f in fields(TrainConfig)}
        kwargs.update(overrides)
        return TrainConfig(**kwargs)

    def kge_config(self, model_kind: str | None = None) -> KgeConfig:
        return KgeConfig(
            model_kind=model_kind or self.embedding_model,
            entity_dim=self.context_dim,
            epochs=self.kge_epochs,
            batch_size=self.kge_batch_size,
            learning_rate=self.kge_learning_rate,
            margin=self.kge_margin,
            seed=self.seed,
        )

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_LIST_ITEM_TYPES = {
    "sweep_epochs": int,
    "sweep_neighbors": int,
    "ablate_dual": str,
    "ablate_word_models": str,
    "ablate_embedding_models": str,
}


def _coerce(name: str, value, from_text: bool):
    """Coerce one config value to its field type; text inputs come from env vars."""
    kind = _FIELD_TYPES[name]
    if kind in ("str | None", "str"):
        return None if value is None else str(value)
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "bool":
        if from_text:
            lowered = str(value).strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ConfigurationError(f"cannot read boolean {name}={value!r}")
        return bool(value)
    if kind == "list":
        if from_text:
            value = [v for v in str(value).replace(",", " ").split() if v]
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{name} must be a list")
        return [_LIST_ITEM_TYPES[name](v) for v in value]
    if kind == "dict":
        if from_text:
            value = json.loads(value)
        if not isinstance(value, dict):
            raise ConfigurationError(f"{name} must be an object of tag -> path")
        return {str(k): str(v) for k, v in value.items()}
    raise ConfigurationError(f"unhandled config field type for {name}")


def load_config(config_path: str | None, flag_values: dict, environ=None) -> RunConfig:
    """Layer defaults, config file, environment, and flags into one RunConfig."""
    environ = os.environ if environ is None else environ
    values = {f.name: f.default if f.default is not dataclasses.MISSING else f.default_factory() for f in fields(RunConfig)}

    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {config_path}")
        try:
            blob = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {config_path} is not valid JSON: {exc}")
        if not isinstance(blob, dict):
            raise ConfigurationError(f"config file {config_path} must hold a JSON object")
        unknown = sorted(set(blob) - set(values))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in blob.items():
            values[key] = _coerce(key, value, from_text=False)

    for name in values:
        env_key = ENV_PREFIX + name.upper()
        if env_key in environ:
            values[name] = _coerce(name, environ[env_key], from_text=True)

    for name, value in flag_values.items():
        if value is not None:
            values[name] = _coerce(name, value, from_text=False)

    return RunConfig(**values)


def _require_paths(config: RunConfig, names: list[str]) -> None:
    problems = []
    for name in names:
        value = getattr(config, name)
        if value is None:
            problems.append(f"{name} is not set")
        elif not Path(value).exists():
            problems.append(f"{name} does not exist: {value}")
    if problems:
        raise ConfigurationError("; ".join(problems))


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_statistics(statistics: dict) -> None:
    print("statistic            value")
    for key in ("users", "behaviours", "words", "entities", "max_title_words", "max_abstract_words"):
        print(f"{key:<20} {statistics[key]}")


def cmd_preprocess(config: RunConfig) -> int:
    _require_paths(config, ["news_path", "behaviors_path"])
    split = data_pipeline.build_dataset(
        config.news_path,
        config.behaviors_path,
        min_readers=config.min_readers,
        min_history=config.min_history,
        ratio=config.split_ratio,
        seed=config.seed,
    )
    cache = Path(config.dataset_cache) if config.dataset_cache else _out_dir(config) / "dataset.json"
    cache.parent.mkdir(parents=True, exist_ok=True)
    data_pipeline.save_dataset(split, cache)
    _print_statistics(split.statistics)
    print(f"train impressions    {len(split.train)}")
    print(f"test impressions     {len(split.test)}")
    print(f"cache written to {cache}")
    return 0


def cmd_build_kg(config: RunConfig) -> int:
    _require_paths(config, ["triples_path"])
    graph = load_triples(config.triples_path)
    out = _out_dir(config)
    graph.save_entity_vocab(out / "entity_vocab.tsv")
    graph.save_relation_vocab(out / "relation_vocab.tsv")
    stats = {
        "entities": graph.entity_count,
        "relations": graph.relation_count,
        "triples": len(graph.triples),
    }
    (out / "kg_stats.json").write_text(json.dumps(stats, sort_keys=True) + "\n", encoding="utf-8")
    print(f"entities={stats['entities']} relations={stats['relations']} triples={stats['triples']}")
    return 0


def cmd_train_kge(config: RunConfig) -> int:
    _require_paths(config, ["triples_path"])
    graph = load_triples(config.triples_path)
    table = train_kge(graph, config.kge_config())
    target = Path(config.embeddings_path) if config.embeddings_path else _out_dir(config) / "embeddings.pkl"
    target.parent.mkdir(parents=True, exist_ok=True)
    table.save(target)
    last = table.epoch_losses[-1] if table.epoch_losses else float("nan")
    print(f"{table.model_kind} embeddings for {table.entity_count} entities written to {target} (final loss {last:.4f})")
    return 0


def _load_inputs(config: RunConfig, word_model: str | None = None):
    split = data_pipeline.load_dataset(config.dataset_cache)
    graph = load_triples(config.triples_path)
    tag = word_model or config.word_model
    vector_path = config.word_vector_paths.get(tag, config.word_vectors_path)
    if vector_path is None:
        raise ConfigurationError(f"no word vector file configured for word model {tag!r}")
    if not Path(vector_path).exists():
        raise ConfigurationError(f"word vector file does not exist: {vector_path}")
    vocab = WordVocabulary.load(vector_path)
    return split, graph, vocab


def _tables_for(config: RunConfig, graph, model_kind: str) -> EmbeddingTable:
    if config.embeddings_path:
        table = EmbeddingTable.load(config.embeddings_path)
        if table.model_kind != model_kind:
            raise ConfigurationError(
                f"embeddings file holds {table.model_kind}, run wants {model_kind}; retrain or drop embeddings_path"
            )
        return table
    return train_kge(graph, config.kge_config(model_kind))


def cmd_train(config: RunConfig) -> int:
    _require_paths(config, ["dataset_cache", "triples_path"])
    if config.embeddings_path and not Path(config.embeddings_path).exists():
        raise ConfigurationError(f"embeddings_path does not exist: {config.embeddings_path}")
    split, graph, vocab = _load_inputs(config)
    tables = _tables_for(config, graph, config.embedding_model)
    checkpoint = training_eval.train(split, config.train_config(), graph, tables, vocab)
    out = _out_dir(config)
    target = Path(config.checkpoint_path) if config.checkpoint_path else out / "checkpoint.pkl"
    target.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(target)
    run_log = {"config": config.to_json(), "training_loss": checkpoint.training_log}
    (out / "run_log.json").write_text(json.dumps(run_log, sort_keys=True) + "\n", encoding="utf-8")
    final = checkpoint.training_log[-1] if checkpoint.training_log else float("nan")
    print(f"checkpoint written to {target} (final loss {final:.4f})")
    return 0


def _report_rows_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["impression_id", "reader_id", "candidates", "clicks", "auc", "mrr", "ndcg5", "ndcg10"],
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})


def _write_report(report: MetricReport, out: Path, tag: str) -> None:
    with open(out / f"{tag}.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tag", "auc", "mrr", "ndcg5", "ndcg10", "auc_impressions", "rank_impressions"])
        writer.writerow(
            [tag, report.auc, report.mrr, report.ndcg5, report.ndcg10, report.auc_impressions, report.rank_impressions]
        )
    _report_rows_csv(out / f"{tag}_details.csv", report.rows)


def cmd_evaluate(config: RunConfig) -> int:
    _require_paths(config, ["checkpoint_path", "dataset_cache"])
    split = data_pipeline.load_dataset(config.dataset_cache)
    checkpoint = ModelCheckpoint.load(config.checkpoint_path)
    report = training_eval.evaluate(checkpoint, split)
    out = _out_dir(config)
    _write_report(report, out, "report")
    print(report.summary_line())
    print(f"report written to {out / 'report.csv'}")
    return 0


def _run_cell(config: RunConfig, split, graph, vocab, tables, train_overrides: dict) -> MetricReport:
    cfg = config.train_config(**train_overrides)
    checkpoint = training_eval.train(split, cfg, graph, tables, vocab)
    return training_eval.evaluate(checkpoint, split)


def cmd_ablate(config: RunConfig) -> int:
    """Grid over dual-observation on/off, word models, and embedding models."""
    _require_paths(config, ["dataset_cache", "triples_path"])
    split = data_pipeline.load_dataset(config.dataset_cache)
    graph = load_triples(config.triples_path)
    out = _out_dir(config)
    unknown_dual = set(config.ablate_dual) - set(DEFAULT_ABLATE_DUAL)
    if unknown_dual:
        raise ConfigurationError(f"ablate_dual entries must be with-DO/without-DO, got {sorted(unknown_dual)}")
    tables_cache: dict[str, EmbeddingTable] = {}
    rows = []
    for dual_tag in config.ablate_dual:
        use_do = dual_tag == "with-DO"
        for word_tag in config.ablate_word_models:
            for kind in config.ablate_embedding_models:
                cell = {
                    "dual_observation": dual_tag,
                    "word_model": word_tag,
                    "embedding_model": kind,
                }
                try:
                    _, _, vocab = _load_inputs(config, word_model=word_tag)
                    if kind not in tables_cache:
                        tables_cache[kind] = _tables_for_ablation(config, graph, kind)
                    report = _run_cell(
                        config, split, graph, vocab, tables_cache[kind],
                        {"use_dual_observation": use_do, "word_model": word_tag, "embedding_model": kind},
                    )
                    cell.update(report.values())
                    cell["status"] = "ok"
                    cell["error"] = ""
                except Exception as exc:  # record the failure, keep the grid going
                    cell.update({"auc": "", "mrr": "", "ndcg5": "", "ndcg10": ""})
                    cell["status"] = "failed"
                    cell["error"] = str(exc)
                rows.append(cell)
                print(
                    f"[{cell['status']}] {cell['dual_observation']} {word_tag} {kind}"
                    + (f": AUC {cell['auc']}" if cell["status"] == "ok" else f": {cell['error']}")
                )
    _write_grid_csv(out / "ablation.csv", rows)
    print(f"ablation grid written to {out / 'ablation.csv'} ({len(rows)} rows)")
    return 0


def _tables_for_ablation(config: RunConfig, graph, kind: str) -> EmbeddingTable:
    # the single-file embeddings_path only fits one model kind; ablation always retrains
    return train_kge(graph, config.kge_config(kind))


def _write_grid_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        raise DataError("no grid rows to write")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def cmd_sweep(config: RunConfig) -> int:
    """Epoch and neighbor-size sweeps, each with a CSV and a line chart."""
    _require_paths(config, ["dataset_cache", "triples_path"])
    split = data_pipeline.load_dataset(config.dataset_cache)
    graph = load_triples(config.triples_path)
    _, _, vocab = _load_inputs(config)
    tables = _tables_for(config, graph, config.embedding_model)
    out = _out_dir(config)

    for name, grid, override in (
        ("epochs", sorted(config.sweep_epochs), "epochs"),
        ("neighbors", sorted(config.sweep_neighbors), "neighbor_size"),
    ):
        rows = []
        for value in grid:
            cell = {override: value}
            try:
                report = _run_cell(config, split, graph, vocab, tables, {override: value})
                cell.update(report.values())
                cell["status"] = "ok"
                cell["error"] = ""
            except Exception as exc:
                cell.update({"auc": "", "mrr": "", "ndcg5": "", "ndcg10": ""})
                cell["status"] = "failed"
                cell["error"] = str(exc)
            rows.append(cell)
            print(f"[{cell['status']}] {name} sweep {override}={value}")
        _write_grid_csv(out / f"sweep_{name}.csv", rows)
        done = [(r[override], r["auc"]) for r in rows if r["status"] == "ok"]
        if done:
            _line_chart(
                out / f"sweep_{name}.svg",
                [x for x, _ in done],
                [y for _, y in done],
                xlabel=override,
                ylabel="AUC",
            )
        print(f"{name} sweep written to {out / f'sweep_{name}.csv'}")
    return 0


def _pyplot():
    """Agg-backed pyplot with salted (deterministic) SVG ids."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "kanrec"
    import matplotlib.pyplot as plt

    return plt


def _line_chart(path: Path, xs, ys, xlabel: str, ylabel: str) -> None:
    plt = _pyplot()

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, marker="o", gid="sweep-line")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_plot(config: RunConfig) -> int:
    """Render a grouped metric bar chart from a report or grid CSV."""
    _require_paths(config, ["report_path"])
    with open(config.report_path, "r", encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.DictReader(fh)]
    rows = [r for r in rows if r.get("auc") not in (None, "")]
    if not rows:
        raise DataError(f"{config.report_path}: no plottable rows")
    metric_names = ["auc", "mrr", "ndcg5", "ndcg10"]
    labels = [
        r.get("tag") or " ".join(str(r[k]) for k in r if k not in metric_names + ["status", "error"])
        for r in rows
    ]

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(rows)), 4))
    width = 0.2
    for m, metric in enumerate(metric_names):
        for i, row in enumerate(rows):
            bar = ax.bar(i + (m - 1.5) * width, float(row[metric]), width, color=f"C{m}")
            bar[0].set_gid(f"bar-{metric}-{i}")
        ax.bar(0, 0, 0, color=f"C{m}", label=metric.upper())
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("percent")
    ax.legend()
    fig.tight_layout()
    target = _out_dir(config) / (Path(config.report_path).stem + ".svg")
    fig.savefig(target, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(f"chart written to {target}")
    return 0


_COMMANDS = {
    "preprocess": (cmd_preprocess, "Parse, filter, and split the raw MIND-style inputs into a cache"),
    "build-kg": (cmd_build_kg, "Load the triples file and export vocabularies and counts"),
    "train-kge": (cmd_train_kge, "Pretrain translation-based embeddings and save the table"),
    "train": (cmd_train, "Train the full recommender on a preprocessed cache"),
    "evaluate": (cmd_evaluate, "Evaluate a checkpoint on the cached test split"),
    "ablate": (cmd_ablate, "Run the dual-observation / word-model / embedding-model grid"),
    "sweep": (cmd_sweep, "Run the epoch and neighbor-size sweeps with charts"),
    "plot": (cmd_plot, "Render bar charts from a metric report CSV"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kanrec",
        description="Knowledge-aware news recommendation experiments",
        epilog=f"Every flag can also come from a JSON config (--config) or from "
        f"environment variables prefixed {ENV_PREFIX} (e.g. {ENV_PREFIX}BATCH_SIZE).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_handler, help_text) in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="JSON config file; flags override it")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            if f.type == "bool":
                cmd.add_argument(flag, default=None, action=argparse.BooleanOptionalAction)
            elif f.type == "list":
                cmd.add_argument(flag, default=None, nargs="+", type=_LIST_ITEM_TYPES[f.name])
            elif f.type == "dict":
                cmd.add_argument(flag, default=None, type=json.loads, help="JSON object")
            elif f.type == "int":
                cmd.add_argument(flag, default=None, type=int)
            elif f.type == "float":
                cmd.add_argument(flag, default=None, type=float)
            else:
                cmd.add_argument(flag, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flag_values = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    handler = _COMMANDS[args.command][0]
    try:
        config = load_config(args.config, flag_values)
        return handler(config)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except KanrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # anything unexpected is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
