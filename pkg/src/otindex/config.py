"""Run configuration: defaults, key=value config files, CLI overrides.

Config files are plain text, one ``section.key=value`` per line (``#``
comments allowed).  CLI flags override file values, and every effective
value is echoed into the run manifest so a manifest alone reproduces the
run bit-exactly given the same input files.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import DataError

DEFAULT_TOPICS = 4
DEFAULT_EPSILON = 0.1
DEFAULT_BATCH_SIZE = 64
DEFAULT_LEARNING_RATE = 0.005
DEFAULT_EMBED_DEPTH = 10


@dataclass
class RunConfig:
    # paths
    corpus_path: str = ""
    stopwords_path: str | None = None
    lemmas_path: str | None = None
    phrases_path: str | None = None
    reference_path: str | None = None
    output_dir: str = "out"
    # corpus
    min_count: int = 1
    # embedding
    embed_depth: int = DEFAULT_EMBED_DEPTH
    embed_window: int = 5
    embed_negatives: int = 5
    embed_epochs: int = 5
    embed_learning_rate: float = 0.025
    normalize_cost: bool = True
    # sinkhorn
    epsilon: float = DEFAULT_EPSILON
    sinkhorn_max_iter: int = 1000
    sinkhorn_tol: float = 1e-9
    unroll_iters: int = 50
    # training
    topics: int = DEFAULT_TOPICS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    train_epochs: int = 100
    loss: str = "kl"
    holdout_fraction: float = 0.0
    # index
    flip_index: bool = False
    monthly_mean: bool = False
    # evaluation
    hp_lambda: float = 129600.0
    signed_cumdiff: bool = False
    # run
    seed: int = 0
    plot: bool = False
    export_csv: bool = False
    # tuning grids (comma-separated in config files)
    tune_epsilon: tuple[float, ...] = ()
    tune_batch_size: tuple[int, ...] = ()
    tune_topics: tuple[int, ...] = ()
    tune_learning_rate: tuple[float, ...] = ()
    tune_embed_depth: tuple[int, ...] = ()


# config-file key -> (attribute, parser)
def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str):
    return tuple(int(part) for part in text.split(",") if part.strip())


def _float_list(text: str):
    return tuple(float(part) for part in text.split(",") if part.strip())


_KEYS = {
    "corpus.path": ("corpus_path", str),
    "corpus.stopwords": ("stopwords_path", str),
    "corpus.lemmas": ("lemmas_path", str),
    "corpus.phrases": ("phrases_path", str),
    "corpus.min_count": ("min_count", int),
    "embed.depth": ("embed_depth", int),
    "embed.window": ("embed_window", int),
    "embed.negatives": ("embed_negatives", int),
    "embed.epochs": ("embed_epochs", int),
    "embed.learning_rate": ("embed_learning_rate", float),
    "cost.normalize": ("normalize_cost", _bool),
    "sinkhorn.epsilon": ("epsilon", float),
    "sinkhorn.max_iter": ("sinkhorn_max_iter", int),
    "sinkhorn.tol": ("sinkhorn_tol", float),
    "sinkhorn.unroll_iters": ("unroll_iters", int),
    "train.topics": ("topics", int),
    "train.batch_size": ("batch_size", int),
    "train.learning_rate": ("learning_rate", float),
    "train.epochs": ("train_epochs", int),
    "train.loss": ("loss", str),
    "train.holdout_fraction": ("holdout_fraction", float),
    "index.flip": ("flip_index", _bool),
    "index.monthly_mean": ("monthly_mean", _bool),
    "eval.reference": ("reference_path", str),
    "eval.hp_lambda": ("hp_lambda", float),
    "eval.signed_cumdiff": ("signed_cumdiff", _bool),
    "run.seed": ("seed", int),
    "run.output_dir": ("output_dir", str),
    "run.plot": ("plot", _bool),
    "run.export_csv": ("export_csv", _bool),
    "tune.epsilon": ("tune_epsilon", _float_list),
    "tune.batch_size": ("tune_batch_size", _int_list),
    "tune.topics": ("tune_topics", _int_list),
    "tune.learning_rate": ("tune_learning_rate", _float_list),
    "tune.embed_depth": ("tune_embed_depth", _int_list),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in _KEYS.items()}


def parse_config_file(path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.partition("=")
            if not sep:
                raise DataError(f"{path}:{lineno}: expected key=value")
            values[key.strip()] = value.strip()
    return values


def build_config(file_values: dict[str, str] | None = None,
                 overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults, then config-file values, then CLI overrides."""
    cfg = RunConfig()
    for key, raw in (file_values or {}).items():
        if key not in _KEYS:
            raise DataError(f"unknown config key {key!r}")
        attr, parse = _KEYS[key]
        try:
            setattr(cfg, attr, parse(raw))
        except ValueError as exc:
            raise DataError(f"config key {key}: {exc}") from exc
    for attr, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, attr, value)
    if cfg.loss not in ("kl", "l2"):
        raise DataError(f"train.loss must be 'kl' or 'l2', got {cfg.loss!r}")
    return cfg


def manifest_values(cfg: RunConfig) -> dict[str, str]:
    """Every effective config value under its config-file key."""
    out = {}
    for f in fields(cfg):
        key = _ATTR_TO_KEY.get(f.name)
        if key is None:
            continue
        value = getattr(cfg, f.name)
        if value is None:
            value = ""
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        out[key] = str(value)
    return out
