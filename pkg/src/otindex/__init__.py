"""otindex: monthly sentiment indices from dated text corpora.

Documents become word distributions on the simplex, topics and per-document
weights are learned under an entropic optimal-transport reconstruction loss,
and a one-component SVD projection turns the fit into a scaled monthly index.
"""

from .corpus import (DocumentMatrix, RawDocument, TokenRules, Vocabulary,
                     build_vocabulary, default_rules, load_jsonl, tokenize,
                     vectorize)
from .embedding import (CostMatrix, EmbedConfig, EmbeddingMatrix, cost_matrix,
                        train_embeddings)
from .evaluate import (EvalReport, cumulative_difference, evaluate, hp_filter,
                       pearson, spearman)
from .index import (IndexSeries, aggregate_monthly, document_scores,
                    scale_index, svd_project, top_tokens)
from .training import (AdamState, DictionaryModel, TrainConfig, TrainResult,
                       adam_step, batch_loss_and_grads, heldout_weights,
                       reconstruction_loss, softmax_columns, train)
from .transport import (SinkhornConfig, TransportPlan, sinkhorn_barycenter,
                        sinkhorn_distance)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "CostMatrix", "DictionaryModel", "DocumentMatrix",
    "EmbedConfig", "EmbeddingMatrix", "EvalReport", "IndexSeries",
    "RawDocument", "SinkhornConfig", "TokenRules", "TrainConfig",
    "TrainResult", "TransportPlan", "Vocabulary", "adam_step",
    "aggregate_monthly", "batch_loss_and_grads", "build_vocabulary",
    "cost_matrix", "cumulative_difference", "default_rules",
    "document_scores", "evaluate", "heldout_weights", "hp_filter",
    "load_jsonl", "pearson", "reconstruction_loss", "scale_index",
    "sinkhorn_barycenter", "sinkhorn_distance", "softmax_columns",
    "spearman", "svd_project", "tokenize", "top_tokens", "train",
    "train_embeddings", "vectorize", "__version__",
]
