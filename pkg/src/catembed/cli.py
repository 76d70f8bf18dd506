"""``catembed`` command line: build-hierarchy, train, eval-concept, eval-dataless, export.

Settings resolve as flags > ``--config`` key=value file > defaults.  Every
successful command writes a run manifest whose ``config.*`` lines can be fed
back through ``--config`` to replay the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields
from importlib import resources

from . import dataless
from .corpus import read_corpus
from .errors import CatEmbedError, ConfigError, MissingInputError
from .eval_concept import evaluate_concepts, read_dataset
from .hierarchy import CategoryDag, read_hierarchy
from .textio import file_digest, read_key_values, write_key_values
from .trainer import (
    TrainConfig,
    export_embeddings,
    import_embeddings,
    save_checkpoint,
    train,
)

log = logging.getLogger("catembed")

DATA_ENV = "CATEMBED_DATA_DIR"


def data_dir() -> str:
    env = os.environ.get(DATA_ENV)
    if env:
        return env
    return str(resources.files("catembed") / "data")


def resolve_input(path: str) -> str:
    """Return ``path`` if it exists, else the same name under the data directory."""
    if os.path.exists(path):
        return path
    if not os.path.isabs(path):
        alt = os.path.join(data_dir(), path)
        if os.path.exists(alt):
            return alt
    raise MissingInputError(f"no such file: {path}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}

# per command: (dest, argparse kwargs, default, role); role is input | output | param
COMMANDS = {
    "build-hierarchy": {
        "help": "load, prune and repair a category hierarchy",
        "options": [
            ("edges", dict(help="child<TAB>parent file"), None, "input"),
            ("labels", dict(help="entity<TAB>category file"), None, "input"),
            ("prune", dict(help="category ids to prune, one per line"), None, "input"),
            ("output", dict(help="hierarchy artifact (JSON)"), "hierarchy.json", "output"),
        ],
    },
    "train": {
        "help": "train CE / HCE embeddings",
        "options": [
            ("corpus", dict(help="article corpus file"), None, "input"),
            ("dag", dict(help="hierarchy artifact from build-hierarchy"), None, "input"),
            ("output", dict(help="embedding file"), "embeddings.vec", "output"),
            ("vocab_out", dict(help="write the vocabulary dump here"), None, "output"),
            ("checkpoint", dict(action="store_const", const=True,
                                help="also write output vectors and a .meta sidecar"), False, "param"),
            ("model", dict(choices=["ce", "hce"]), "hce", "param"),
            ("dim", dict(type=int), 100, "param"),
            ("negatives", dict(type=int, help="negative samples per pair"), 10, "param"),
            ("batch_size", dict(type=int, help="pairs per learning-rate / report step"), 500, "param"),
            ("epochs", dict(type=int), 5, "param"),
            ("lr_initial", dict(type=float), 0.025, "param"),
            ("lr_final", dict(type=float, help="default lr_initial / 100"), None, "param"),
            ("seed", dict(type=int), 1, "param"),
            ("workers", dict(type=int), 1, "param"),
            ("exponent", dict(type=float, help="negative sampling smoothing"), 0.75, "param"),
            ("shuffle_buffer", dict(type=int), None, "param"),
            ("subsample", dict(type=float, help="frequent-context threshold, 0 = off"), 0.0, "param"),
            ("max_ancestor_depth", dict(type=int), None, "param"),
        ],
    },
    "eval-concept": {
        "help": "concept categorization purity (nn or cluster protocol)",
        "options": [
            ("embeddings", dict(nargs="+", help="one or more embedding files (e.g. per dimension)"),
             None, "input"),
            ("dataset", dict(help="category<TAB>concept[<TAB>subset] file"), "dota.tsv", "input"),
            ("protocol", dict(choices=["nn", "cluster"]), "nn", "param"),
            ("split_seed", dict(type=int), 0, "param"),
            ("cluster_seed", dict(type=int), 0, "param"),
            ("metric", dict(nargs="+", choices=["euclidean", "cosine"],
                            help="nn distance(s) to include in the grid"), ["euclidean"], "param"),
            ("subset", dict(help="restrict to concepts with this subset tag"), None, "param"),
            ("output", dict(help="report file (also printed)"), None, "output"),
        ],
    },
    "eval-dataless": {
        "help": "dataless hierarchical classification F1",
        "options": [
            ("docs", dict(help="doc_id<TAB>entity:weight ... file"), None, "input"),
            ("labels", dict(help="label<TAB>parent|-<TAB>entity:weight ... file"), None, "input"),
            ("gold", dict(help="doc_id<TAB>label label ... file"), None, "input"),
            ("embeddings", dict(help="embedding file"), None, "input"),
            ("delta", dict(type=float), dataless.DEFAULT_DELTA, "param"),
            ("cutoff", dict(type=float), dataless.DEFAULT_CUTOFF, "param"),
            ("max_entries", dict(type=int), dataless.DEFAULT_MAX_ENTRIES, "param"),
            ("weighted", dict(action="store_const", const=True), False, "param"),
            ("output", dict(help="report file (also printed)"), None, "output"),
        ],
    },
    "export": {
        "help": "rewrite an embedding file restricted to entities, categories or both",
        "options": [
            ("input", dict(help="embedding file"), None, "input"),
            ("which", dict(choices=["entities", "categories", "both"]), "both", "param"),
            ("output", dict(help="destination embedding file"), None, "output"),
        ],
    },
}

_REQUIRED = {
    "build-hierarchy": ("edges", "labels"),
    "train": ("corpus", "dag"),
    "eval-concept": ("embeddings",),
    "eval-dataless": ("docs", "labels", "gold", "embeddings"),
    "export": ("input", "output"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="catembed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, spec in COMMANDS.items():
        p = sub.add_parser(name, help=spec["help"], description=spec["help"])
        p.add_argument("--config", help="key=value settings file (a run manifest works too)")
        p.add_argument("--manifest", help="run manifest path (default: derived from the output)")
        for dest, kwargs, default, _ in spec["options"]:
            kw = dict(kwargs)
            helptext = kw.pop("help", "")
            if default is not None and kw.get("action") != "store_const":
                helptext = f"{helptext} (default: {default})".strip()
            p.add_argument("--" + dest.replace("_", "-"), dest=dest, default=None,
                           help=helptext or None, **kw)
    return parser


def _convert(kwargs: dict, raw: str):
    if raw in ("None", ""):
        return None
    if kwargs.get("action") == "store_const":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kwargs.get("nargs"):
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw.split(",")
        return list(value) if isinstance(value, list) else [value]
    typ = kwargs.get("type", str)
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"bad config value {raw!r}: {exc}") from None


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    spec = COMMANDS[command]["options"]
    settings = {dest: default for dest, _, default, _ in spec}
    if args.config:
        items = read_key_values(resolve_input(args.config))
        known = {dest: kw for dest, kw, _, _ in spec}
        for key, raw in items.items():
            if key.startswith("manifest."):
                continue
            key = key.removeprefix("config.")
            if key not in known:
                raise ConfigError(f"unknown setting {key!r} for {command}")
            settings[key] = _convert(known[key], raw)
    for dest, _, _, _ in spec:
        value = getattr(args, dest)
        if value is not None:
            settings[dest] = value
    missing = [d for d in _REQUIRED[command] if settings.get(d) in (None, [])]
    if missing:
        flags = ", ".join("--" + m.replace("_", "-") for m in missing)
        raise ConfigError(f"{command}: missing required setting(s) {flags}")
    return settings


def _inputs(command: str, settings: dict) -> dict[str, list[str]]:
    out = {}
    for dest, _, _, role in COMMANDS[command]["options"]:
        value = settings.get(dest)
        if role == "input" and value:
            paths = value if isinstance(value, list) else [value]
            out[dest] = [resolve_input(p) for p in paths]
    return out


def write_manifest(path: str, command: str, settings: dict, inputs: dict[str, list[str]],
                   outputs: dict[str, str], seed, duration: float) -> None:
    items: dict[str, object] = {"manifest.command": command}
    for key, value in settings.items():
        items[f"config.{key}"] = json.dumps(value) if isinstance(value, list) else value
    for key, paths in inputs.items():
        for i, p in enumerate(paths):
            suffix = f".{i}" if len(paths) > 1 else ""
            items[f"manifest.digest.{key}{suffix}"] = "sha256:" + file_digest(p)
    items["manifest.seed"] = seed
    for key, p in outputs.items():
        items[f"manifest.output.{key}"] = p
    items["manifest.duration_seconds"] = f"{duration:.3f}"
    write_key_values(path, items)


def _emit(lines: list[str], output: str | None) -> None:
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)


def run_build_hierarchy(s: dict, inputs: dict) -> tuple[dict, object]:
    dag = read_hierarchy(inputs["edges"][0], inputs["labels"][0],
                         inputs["prune"][0] if "prune" in inputs else None)
    dag.save(s["output"])
    lines = [
        f"categories={len(dag.category_ids)}",
        f"entities={len(dag.entity_ids)}",
        f"edges={dag.edge_count}",
        f"roots={len(dag.root_ids)}",
        f"pruned_categories={len(dag.pruned)}",
        f"removed_edges={len(dag.removed_edges)}",
        f"rejected_entities={len(dag.rejected_entities)}",
    ]
    lines += [f"pruned\t{c}" for c in dag.pruned]
    lines += [f"removed\t{c}\t{p}" for c, p in dag.removed_edges]
    lines += [f"rejected\t{e}" for e in dag.rejected_entities]
    _emit(lines, None)
    return {"dag": s["output"]}, None


def run_train(s: dict, inputs: dict) -> tuple[dict, object]:
    cfg = TrainConfig(**{k: s[k] for k in _TRAIN_FIELDS if k in s}).validate()
    s["lr_final"] = cfg.lr_final
    corpus = read_corpus(inputs["corpus"][0])
    dag = CategoryDag.load(inputs["dag"][0])
    result = train(corpus, dag, cfg)
    for i, loss in enumerate(result.epoch_losses, start=1):
        print(f"{i}\t{loss:.9g}")
    outputs = {"embeddings": s["output"]}
    if s["checkpoint"]:
        save_checkpoint(result, s["output"])
        outputs["checkpoint_out"] = f"{s['output']}.out"
        outputs["checkpoint_meta"] = f"{s['output']}.meta"
    else:
        export_embeddings(result.store, s["output"], "both")
    if s["vocab_out"]:
        corpus.write_vocab(s["vocab_out"])
        outputs["vocab"] = s["vocab_out"]
    return outputs, cfg.seed


def run_eval_concept(s: dict, inputs: dict) -> tuple[dict, object]:
    gold = read_dataset(inputs["dataset"][0])
    if s["subset"]:
        gold = gold.subset(s["subset"])
        if gold.n == 0:
            raise ConfigError(f"no concepts tagged {s['subset']!r}")
    embeddings = {}
    for path in inputs["embeddings"]:
        store = import_embeddings(path)
        name = f"{os.path.basename(path)}(d={store.dim})"
        embeddings[name] = (
            {e: store.entity_in[i] for e, i in store.entity_index.items()},
            {c: store.category_in[i] for c, i in store.category_index.items()},
        )
    report = evaluate_concepts(embeddings, gold, s["protocol"], s["split_seed"],
                               s["metric"], s["cluster_seed"])
    _emit(report.lines(), s["output"])
    return ({"report": s["output"]} if s["output"] else {}), s["split_seed"]


def run_eval_dataless(s: dict, inputs: dict) -> tuple[dict, object]:
    n = s["max_entries"]
    docs = dataless.read_sparse_vectors(inputs["docs"][0], n)
    tree = dataless.read_label_tree(inputs["labels"][0], n)
    gold = dataless.read_gold_labels(inputs["gold"][0])
    store = import_embeddings(inputs["embeddings"][0])
    if not 0.0 <= s["delta"] <= 1.0:
        raise ConfigError("delta must lie in [0, 1]")
    report = dataless.evaluate_dataless(docs, tree, gold, store, s["delta"], s["cutoff"],
                                        s["weighted"])
    _emit(report.lines(), s["output"])
    return ({"report": s["output"]} if s["output"] else {}), None


def run_export(s: dict, inputs: dict) -> tuple[dict, object]:
    store = import_embeddings(inputs["input"][0])
    export_embeddings(store, s["output"], s["which"])
    return {"embeddings": s["output"]}, None


RUNNERS = {
    "build-hierarchy": run_build_hierarchy,
    "train": run_train,
    "eval-concept": run_eval_concept,
    "eval-dataless": run_eval_dataless,
    "export": run_export,
}


def _manifest_path(args, command: str, settings: dict) -> str:
    if args.manifest:
        return args.manifest
    out = settings.get("output")
    return f"{out}.manifest" if out else f"catembed-{command}.manifest"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    start = time.perf_counter()
    try:
        settings = resolve_settings(args.command, args)
        inputs = _inputs(args.command, settings)
        outputs, seed = RUNNERS[args.command](settings, inputs)
        write_manifest(_manifest_path(args, args.command, settings), args.command, settings,
                       inputs, outputs, seed, time.perf_counter() - start)
    except CatEmbedError as exc:
        print(f"catembed {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"catembed {args.command}: error: {exc}", file=sys.stderr)
        return MissingInputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
