"""Command-line pipeline: prep -> embed -> train -> index -> eval, plus tune.

Each stage reads serialized intermediates from the output directory and
writes its own artifacts there, so stages can run separately or end to end
via ``run``.  Every command echoes its effective configuration and the
content hashes of its inputs into a manifest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import corpus as corpus_mod
from . import embedding as embedding_mod
from . import index as index_mod
from . import serialize
from . import training
from .evaluate import cumulative_difference
from .evaluate import evaluate as evaluate_series
from .errors import MissingStageInput, NumericalError, OtindexError
from .transport import SinkhornConfig

STAGE_FILES = {
    "tokens": "tokens.txt",
    "vocab": "vocab.txt",
    "docs": "docs.bin",
    "dropped": "dropped.csv",
    "embeddings": "embeddings.bin",
    "cost": "cost.bin",
    "model": "model.ckpt",
    "loss_trace": "loss_trace.csv",
    "index": "index.csv",
    "topics": "topics.csv",
    "report": "report.csv",
    "cumdiff": "cumdiff.csv",
    "manifest": "manifest.txt",
}


def _path(outdir, name) -> Path:
    return Path(outdir) / STAGE_FILES[name]


def _require(outdir, name, stage) -> Path:
    path = _path(outdir, name)
    if not path.exists():
        raise MissingStageInput(
            f"stage '{stage}' needs {path}; run the producing stage first"
        )
    return path


def _sinkhorn_config(cfg) -> SinkhornConfig:
    return SinkhornConfig(epsilon=cfg.epsilon, max_iter=cfg.sinkhorn_max_iter,
                          tol=cfg.sinkhorn_tol, unroll_iters=cfg.unroll_iters)


def _train_config(cfg, seed_offset=1) -> training.TrainConfig:
    return training.TrainConfig(
        batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
        epochs=cfg.train_epochs, seed=cfg.seed + seed_offset,
        loss_kind=cfg.loss, holdout_fraction=cfg.holdout_fraction,
    )


class _Lock:
    """Exclusive ownership of an output directory for the duration of a command."""

    def __init__(self, outdir):
        self.path = Path(outdir) / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OtindexError(
                f"output directory is locked by another run ({self.path}); "
                "remove the lock file if that run is gone"
            ) from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_prep(cfg, outdir) -> dict:
    if not cfg.corpus_path:
        raise MissingStageInput("stage 'prep' needs --corpus")
    if not Path(cfg.corpus_path).exists():
        raise MissingStageInput(f"corpus file not found: {cfg.corpus_path}")
    raw = corpus_mod.load_jsonl(cfg.corpus_path)
    rules = corpus_mod.default_rules(cfg.stopwords_path, cfg.lemmas_path,
                                     cfg.phrases_path)
    token_docs = [corpus_mod.tokenize(doc.text, rules) for doc in raw]
    vocab = corpus_mod.build_vocabulary(token_docs, cfg.min_count)
    matrix, dropped = corpus_mod.vectorize(token_docs, [d.date for d in raw], vocab)
    serialize.write_tokens(_path(outdir, "tokens"), token_docs)
    serialize.write_vocab(_path(outdir, "vocab"), vocab)
    serialize.write_document_matrix(_path(outdir, "docs"), matrix, vocab)
    serialize.write_dropped_csv(_path(outdir, "dropped"), dropped)
    print(f"[prep] {len(raw)} documents in, {matrix.n_documents} kept, "
          f"{len(dropped)} dropped, vocabulary {len(vocab)}")
    return {"input.corpus.sha256": serialize.sha256_file(cfg.corpus_path)}


def stage_embed(cfg, outdir) -> dict:
    tokens_path = _require(outdir, "tokens", "embed")
    vocab_path = _require(outdir, "vocab", "embed")
    token_docs = serialize.read_tokens(tokens_path)
    vocab = serialize.read_vocab(vocab_path)
    ecfg = embedding_mod.EmbedConfig(
        depth=cfg.embed_depth, window=cfg.embed_window,
        negatives=cfg.embed_negatives, epochs=cfg.embed_epochs,
        learning_rate=cfg.embed_learning_rate, seed=cfg.seed,
    )
    emb = embedding_mod.train_embeddings(token_docs, vocab, ecfg)
    cost = embedding_mod.cost_matrix(emb, normalize=cfg.normalize_cost)
    serialize.write_matrix(_path(outdir, "embeddings"), emb.vectors)
    serialize.write_matrix(_path(outdir, "cost"), cost.entries)
    if cfg.export_csv:
        serialize.matrix_to_csv(Path(outdir) / "embeddings.csv", emb.vectors)
        serialize.matrix_to_csv(Path(outdir) / "cost.csv", cost.entries)
    print(f"[embed] {len(vocab)} tokens embedded at depth {emb.depth}; "
          f"cost scale {cost.scale:.6g}")
    return {
        "input.tokens.sha256": serialize.sha256_file(tokens_path),
        "cost.median_scale": f"{cost.scale!r}",
    }


def stage_train(cfg, outdir) -> dict:
    docs_path = _require(outdir, "docs", "train")
    cost_path = _require(outdir, "cost", "train")
    matrix, _ = serialize.read_document_matrix(docs_path)
    cost = serialize.read_matrix(cost_path)
    scfg = _sinkhorn_config(cfg)
    tcfg = _train_config(cfg)
    result = training.train(matrix, cost, tcfg, scfg, n_topics=cfg.topics)
    meta = {
        "epsilon": cfg.epsilon, "unroll_iters": cfg.unroll_iters,
        "loss": cfg.loss, "topics": cfg.topics, "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate, "seed": tcfg.seed,
        "epochs_run": result.epochs_run,
    }
    serialize.write_checkpoint(_path(outdir, "model"),
                               result.model.topic_logits,
                               result.model.weight_logits, meta)
    serialize.write_loss_trace_csv(_path(outdir, "loss_trace"), result.trace)
    if cfg.plot:
        from . import plots
        plots.plot_loss_trace(result.trace, Path(outdir) / "loss_trace.svg")
    final = result.trace[-1]
    held = "" if final.heldout_loss is None else f", heldout {final.heldout_loss:.6f}"
    print(f"[train] {result.epochs_run} epochs, final train loss "
          f"{final.train_loss:.6f}{held}")
    return {
        "input.docs.sha256": serialize.sha256_file(docs_path),
        "input.cost.sha256": serialize.sha256_file(cost_path),
        "train.epochs_run": str(result.epochs_run),
    }


def stage_index(cfg, outdir) -> dict:
    model_path = _require(outdir, "model", "index")
    docs_path = _require(outdir, "docs", "index")
    topic_logits, weight_logits, _ = serialize.read_checkpoint(model_path)
    matrix, vocab = serialize.read_document_matrix(docs_path)
    if weight_logits.shape[1] != matrix.n_documents:
        raise OtindexError("checkpoint and document matrix disagree on "
                           "document count")
    topics = training.softmax_columns(topic_logits)
    weights = training.softmax_columns(weight_logits)
    topic_scores = index_mod.svd_project(topics, flip=cfg.flip_index)
    scores = index_mod.document_scores(topic_scores, weights)
    raw = index_mod.aggregate_monthly(scores, matrix.dates, mean=cfg.monthly_mean)
    scaled = index_mod.scale_index(raw)
    serialize.write_index_csv(_path(outdir, "index"), scaled)
    serialize.write_topics_csv(_path(outdir, "topics"),
                               index_mod.top_tokens(topics, vocab))
    if cfg.plot:
        from . import plots
        plots.plot_index_series(scaled, Path(outdir) / "index.svg")
    print(f"[index] {len(scaled)} months from {matrix.n_documents} documents")
    return {"input.model.sha256": serialize.sha256_file(model_path)}


def stage_eval(cfg, outdir) -> dict:
    if not cfg.reference_path:
        raise MissingStageInput("stage 'eval' needs --reference")
    if not Path(cfg.reference_path).exists():
        raise MissingStageInput(f"reference file not found: {cfg.reference_path}")
    index_path = _require(outdir, "index", "eval")
    series = serialize.read_index_csv(index_path)
    reference = serialize.read_index_csv(cfg.reference_path)
    report = evaluate_series(series, reference, cfg.hp_lambda)
    serialize.write_report_csv(_path(outdir, "report"), report)
    serialize.write_index_csv(_path(outdir, "cumdiff"), report.cumdiff)
    if cfg.signed_cumdiff:
        signed = cumulative_difference(series, reference, signed=True)
        serialize.write_index_csv(Path(outdir) / "cumdiff_signed.csv", signed)
    if cfg.plot:
        from . import plots
        plots.plot_evaluation(series, reference, report.cumdiff,
                              Path(outdir) / "eval.svg")
    print("[eval] " + ", ".join(f"{k}={v:.4f}"
                                for k, v in report.correlations().items()))
    return {
        "input.reference.sha256": serialize.sha256_file(cfg.reference_path),
        "input.index.sha256": serialize.sha256_file(index_path),
    }


_RUN_STAGES = (
    ("prep", stage_prep),
    ("embed", stage_embed),
    ("train", stage_train),
    ("index", stage_index),
    ("eval", stage_eval),
)


def run_pipeline(cfg, outdir) -> dict:
    """All stages in order; on failure, outputs move to a quarantine subdirectory."""
    manifest = dict(config_mod.manifest_values(cfg))
    produced_before = set(Path(outdir).iterdir())
    for stage_name, stage_fn in _RUN_STAGES:
        if stage_name == "eval" and not cfg.reference_path:
            continue
        try:
            manifest.update(stage_fn(cfg, outdir))
        except Exception as exc:
            _quarantine(outdir, produced_before, stage_name, exc)
            raise
    for name in ("index", "topics", "model"):
        manifest[f"output.{STAGE_FILES[name]}.sha256"] = \
            serialize.sha256_file(_path(outdir, name))
    serialize.write_manifest(_path(outdir, "manifest"), manifest)
    return manifest


def _quarantine(outdir, preexisting, stage_name, exc):
    quarantine = Path(outdir) / "quarantine"
    quarantine.mkdir(exist_ok=True)
    for item in Path(outdir).iterdir():
        if item in preexisting or item.name in ("quarantine", ".lock"):
            continue
        shutil.move(str(item), str(quarantine / item.name))
    (quarantine / "error.txt").write_text(
        f"stage: {stage_name}\nerror: {type(exc).__name__}: {exc}\n",
        encoding="utf-8",
    )
    print(f"error in stage '{stage_name}': {exc}", file=sys.stderr)
    print(f"partial outputs moved to {quarantine}", file=sys.stderr)


def stage_tune(cfg, outdir) -> dict:
    """Grid search with a one-third holdout; records every point, marks the best."""
    if not _path(outdir, "docs").exists():
        stage_prep(cfg, outdir)
    matrix, _ = serialize.read_document_matrix(_path(outdir, "docs"))
    token_docs = serialize.read_tokens(_path(outdir, "tokens"))
    vocab = serialize.read_vocab(_path(outdir, "vocab"))

    grid_eps = cfg.tune_epsilon or (cfg.epsilon,)
    grid_s = cfg.tune_batch_size or (cfg.batch_size,)
    grid_k = cfg.tune_topics or (cfg.topics,)
    grid_rho = cfg.tune_learning_rate or (cfg.learning_rate,)
    grid_d = cfg.tune_embed_depth or (cfg.embed_depth,)

    m = matrix.n_documents
    rng = np.random.default_rng(cfg.seed + 2)
    perm = rng.permutation(m)
    n_test = max(1, m // 3)
    test_cols = np.sort(perm[:n_test])
    train_cols = np.sort(perm[n_test:])
    y_train = matrix.distributions[:, train_cols]
    y_test = matrix.distributions[:, test_cols]

    cost_by_depth = {}
    for depth in grid_d:
        ecfg = embedding_mod.EmbedConfig(
            depth=depth, window=cfg.embed_window, negatives=cfg.embed_negatives,
            epochs=cfg.embed_epochs, learning_rate=cfg.embed_learning_rate,
            seed=cfg.seed,
        )
        emb = embedding_mod.train_embeddings(token_docs, vocab, ecfg)
        cost_by_depth[depth] = embedding_mod.cost_matrix(
            emb, normalize=cfg.normalize_cost).entries

    manifest = dict(config_mod.manifest_values(cfg))
    results = []
    points = list(itertools.product(grid_eps, grid_s, grid_k, grid_rho, grid_d))
    for i, (eps, s, k, rho, depth) in enumerate(points):
        scfg = SinkhornConfig(epsilon=eps, max_iter=cfg.sinkhorn_max_iter,
                              tol=cfg.sinkhorn_tol, unroll_iters=cfg.unroll_iters)
        tcfg = training.TrainConfig(
            batch_size=s, learning_rate=rho, epochs=cfg.train_epochs,
            seed=cfg.seed + 1, loss_kind=cfg.loss,
        )
        result = training.train(y_train, cost_by_depth[depth], tcfg, scfg,
                                n_topics=k)
        fit_cfg = training.TrainConfig(
            batch_size=s, learning_rate=rho, epochs=cfg.train_epochs,
            seed=cfg.seed + 3, loss_kind=cfg.loss,
        )
        _, heldout = training.heldout_weights(y_test, result.model,
                                              cost_by_depth[depth], fit_cfg, scfg)
        results.append(heldout)
        prefix = f"tune.point.{i}"
        manifest[f"{prefix}.epsilon"] = str(eps)
        manifest[f"{prefix}.batch_size"] = str(s)
        manifest[f"{prefix}.topics"] = str(k)
        manifest[f"{prefix}.learning_rate"] = str(rho)
        manifest[f"{prefix}.embed_depth"] = str(depth)
        manifest[f"{prefix}.heldout_loss"] = f"{heldout:.12f}"
        print(f"[tune] point {i}: eps={eps} s={s} K={k} rho={rho} D={depth} "
              f"heldout={heldout:.6f}")

    best = int(np.argmin(results))
    eps, s, k, rho, depth = points[best]
    manifest["tune.best.point"] = str(best)
    manifest["tune.best.epsilon"] = str(eps)
    manifest["tune.best.batch_size"] = str(s)
    manifest["tune.best.topics"] = str(k)
    manifest["tune.best.learning_rate"] = str(rho)
    manifest["tune.best.embed_depth"] = str(depth)
    manifest["tune.best.heldout_loss"] = f"{results[best]:.12f}"
    print(f"[tune] best point {best}: eps={eps} s={s} K={k} rho={rho} D={depth}")
    return manifest


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: _Parser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--epsilon", type=float, dest="epsilon",
                   help="entropic regularization strength")
    p.add_argument("--topics", type=int, dest="topics")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--embed-depth", type=int, dest="embed_depth")
    p.add_argument("--epochs", type=int, dest="train_epochs")
    p.add_argument("--unroll-iters", type=int, dest="unroll_iters")
    p.add_argument("--loss", choices=("kl", "l2"), dest="loss")
    p.add_argument("--holdout-fraction", type=float, dest="holdout_fraction")
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--stopwords", dest="stopwords_path")
    p.add_argument("--lemmas", dest="lemmas_path")
    p.add_argument("--phrases", dest="phrases_path")
    p.add_argument("--flip-index", action="store_const", const=True,
                   dest="flip_index", help="negate document scores before scaling")
    p.add_argument("--monthly-mean", action="store_const", const=True,
                   dest="monthly_mean", help="average per month instead of summing")
    p.add_argument("--hp-lambda", type=float, dest="hp_lambda")
    p.add_argument("--signed-cumdiff", action="store_const", const=True,
                   dest="signed_cumdiff")
    p.add_argument("--no-cost-normalize", action="store_const", const=False,
                   dest="normalize_cost")
    p.add_argument("--plot", action="store_const", const=True, dest="plot",
                   help="render figures next to the CSV outputs")
    p.add_argument("--export-csv", action="store_const", const=True,
                   dest="export_csv", help="also export binary matrices as CSV")
    p.add_argument("--corpus", dest="corpus_path", help="JSON-lines corpus file")
    p.add_argument("--reference", dest="reference_path",
                   help="reference series CSV (month,value)")


_CONFIG_ATTRS = (
    "output_dir", "seed", "epsilon", "topics", "batch_size", "learning_rate",
    "embed_depth", "train_epochs", "unroll_iters", "loss", "holdout_fraction",
    "min_count", "stopwords_path", "lemmas_path", "phrases_path", "flip_index",
    "monthly_mean", "hp_lambda", "signed_cumdiff", "normalize_cost", "plot",
    "export_csv", "corpus_path", "reference_path", "grid_epsilon",
    "grid_batch_size", "grid_topics", "grid_learning_rate", "grid_embed_depth",
)

_GRID_ATTRS = {
    "grid_epsilon": ("tune_epsilon", float),
    "grid_batch_size": ("tune_batch_size", int),
    "grid_topics": ("tune_topics", int),
    "grid_learning_rate": ("tune_learning_rate", float),
    "grid_embed_depth": ("tune_embed_depth", int),
}


def _config_from_args(args) -> config_mod.RunConfig:
    file_values = None
    if getattr(args, "config", None):
        if not Path(args.config).exists():
            raise MissingStageInput(f"config file not found: {args.config}")
        file_values = config_mod.parse_config_file(args.config)
    overrides = {}
    for attr in _CONFIG_ATTRS:
        value = getattr(args, attr, None)
        if value is None:
            continue
        if attr in _GRID_ATTRS:
            target, cast = _GRID_ATTRS[attr]
            overrides[target] = tuple(cast(v) for v in value.split(","))
        else:
            overrides[attr] = value
    return config_mod.build_config(file_values, overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="otindex",
                     description="Monthly sentiment index from dated text via "
                                 "optimal-transport topic learning")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "run": "full pipeline: prep, embed, train, index, and eval when a "
               "reference is given",
        "prep": "tokenize the corpus, build the vocabulary, vectorize",
        "embed": "train word embeddings and build the cost matrix",
        "train": "fit topics and weights",
        "index": "project topics, score documents, aggregate and scale",
        "eval": "compare the index against a reference series",
        "tune": "hyperparameter grid search with a one-third holdout",
    }
    for name, desc in descriptions.items():
        p = sub.add_parser(name, help=desc, description=desc)
        _add_common(p)
        if name == "tune":
            p.add_argument("--grid-epsilon", dest="grid_epsilon",
                           help="comma-separated values")
            p.add_argument("--grid-batch-size", dest="grid_batch_size")
            p.add_argument("--grid-topics", dest="grid_topics")
            p.add_argument("--grid-learning-rate", dest="grid_learning_rate")
            p.add_argument("--grid-embed-depth", dest="grid_embed_depth")
        p.set_defaults(command=name)
    return parser


_COMMANDS = {
    "prep": stage_prep,
    "embed": stage_embed,
    "train": stage_train,
    "index": stage_index,
    "eval": stage_eval,
    "tune": stage_tune,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config_from_args(args)
        outdir = Path(cfg.output_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        with _Lock(outdir):
            if args.command == "run":
                run_pipeline(cfg, outdir)
            else:
                command = _COMMANDS[args.command]
                manifest = dict(config_mod.manifest_values(cfg))
                manifest.update(command(cfg, outdir))
                serialize.write_manifest(
                    Path(outdir) / f"manifest-{args.command}.txt", manifest)
    except NumericalError as exc:
        print(f"otindex: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OtindexError as exc:
        print(f"otindex: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
