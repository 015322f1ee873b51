"""Dictionary learning on the simplex under entropic-transport reconstruction.

Topic columns ``T`` and per-document weight columns ``W`` are parametrized as
column-wise softmax of unconstrained matrices (``topic_logits``,
``weight_logits``), each document is reconstructed as the weighted barycenter
of the topics run for a fixed number of scaling iterations, and both logit
matrices are fit by minibatch Adam.

Gradients are exact reverse-mode derivatives of the unrolled computation:
the forward pass stashes the per-iteration scaling quantities and the
backward pass walks them in reverse, applying the vector-Jacobian products
of the stabilized log-sum-exp reductions by hand.  Keeping the unrolling
depth fixed makes the loss a smooth finite composition, so the adjoint is
well-defined and matches finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateReconstruction, NonFiniteLoss, NumericalCollapse
from .transport import SinkhornConfig

LOSS_KINDS = ("kl", "l2")

# the differentiable core precomputes exp(-C/epsilon); beyond this ratio the
# factor underflows to exact zeros and the unrolled iterations lose mass
_MAX_COST_RATIO = 700.0


def _gibbs_factor(C, epsilon: float) -> np.ndarray:
    entries = np.asarray(getattr(C, "entries", C), dtype=np.float64)
    ratio = float(entries.max()) / epsilon
    if ratio > _MAX_COST_RATIO:
        raise NumericalCollapse(
            f"max(cost)/epsilon = {ratio:.1f} exceeds {_MAX_COST_RATIO:.0f}; "
            "the Gibbs factor would underflow. Normalize the cost matrix or "
            "raise epsilon."
        )
    return np.exp(-entries / epsilon)


def softmax_columns(P: np.ndarray) -> np.ndarray:
    """Column-wise softmax; shift-invariant and overflow-safe."""
    P = np.asarray(P, dtype=np.float64)
    z = np.exp(P - P.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


def log_softmax_columns(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    shifted = P - P.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


@dataclass
class DictionaryModel:
    """Unconstrained parameters and their simplex-valued images.

    ``topic_logits`` is N x K, ``weight_logits`` is K x M; ``topics`` and
    ``weights`` are the corresponding column-stochastic matrices.
    """

    topic_logits: np.ndarray
    weight_logits: np.ndarray

    @property
    def topics(self) -> np.ndarray:
        return softmax_columns(self.topic_logits)

    @property
    def weights(self) -> np.ndarray:
        return softmax_columns(self.weight_logits)

    @property
    def n_topics(self) -> int:
        return self.topic_logits.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.005
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_kind: str = "kl"
    holdout_fraction: float = 0.0
    early_stop_rel: float = 1e-4
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1, beta2 must lie in [0, 1)")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if not (0 <= self.holdout_fraction < 1):
            raise ValueError("holdout_fraction must lie in [0, 1)")


@dataclass
class AdamState:
    """First/second moment estimates and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(param, grad, state: AdamState, lr, beta1=0.9, beta2=0.999,
              eps=1e-8):
    """One bias-corrected Adam update; returns the new parameter and state."""
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * np.square(grad)
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_param, AdamState(m, v, t)


def _adam_update_columns(param, grad, m, v, t, cols, lr, beta1, beta2, eps):
    """Adam on selected columns only, with per-column step counters.

    Mutates ``param``, ``m``, ``v``, ``t`` in place; equivalent to running
    :func:`adam_step` independently on each selected column.
    """
    g = grad
    m[:, cols] = beta1 * m[:, cols] + (1 - beta1) * g
    v[:, cols] = beta2 * v[:, cols] + (1 - beta2) * np.square(g)
    t[cols] += 1
    tc = t[cols].astype(np.float64)
    m_hat = m[:, cols] / (1 - beta1 ** tc)
    v_hat = v[:, cols] / (1 - beta2 ** tc)
    param[:, cols] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def reconstruction_loss(y, y_hat, kind: str = "kl") -> float:
    """Divergence of a reconstruction from a target histogram.

    ``kl``: sum over the support of ``y`` of ``y * log(y / y_hat)``;
    ``l2``: squared Euclidean distance.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if kind == "l2":
        return float(np.sum(np.square(y - y_hat)))
    if kind != "kl":
        raise ValueError(f"unknown loss kind {kind!r}")
    support = y > 0
    if np.any(y_hat[support] == 0):
        raise DegenerateReconstruction(
            "reconstruction has zero mass on the target's support"
        )
    ys = y[support]
    return float(np.sum(ys * (np.log(ys) - np.log(y_hat[support]))))


# ---------------------------------------------------------------------------
# Unrolled barycenter with hand-written adjoint
# ---------------------------------------------------------------------------

class _Tape:
    """Preallocated per-iteration stash for the reverse sweep.

    One training step stores five (N, K, s) arrays per unrolled iteration;
    allocating them as contiguous (L, N, K, s) blocks once and reusing them
    across batches keeps the hot loop free of large allocations.
    """

    FIELDS = ("e_phi", "s_phi", "e_psi", "s_psi", "log_ktu")

    def __init__(self, n_steps, n, k, s):
        self.shape = (n_steps, n, k, s)
        for name in self.FIELDS:
            setattr(self, name, np.empty(self.shape))

    def fits(self, n_steps, n, k, s):
        return self.shape == (n_steps, n, k, s)


def _unrolled_forward(log_topics, lam, gibbs, n_steps, keep_tape, tape=None):
    """Batched fixed-point iterations in log space.

    Shapes: ``log_topics`` (N, K), ``lam`` (K, s), state arrays (N, K, s).
    Returns the final unnormalized log barycenters ``beta`` (N, s) and, when
    ``keep_tape``, the per-step quantities the backward pass consumes.
    """
    n, k = log_topics.shape
    s = lam.shape[1]
    ks = k * s
    lt = log_topics[:, :, None]
    phi = np.zeros((n, k, s))
    if keep_tape and tape is None:
        tape = _Tape(n_steps, n, k, s)
    beta = None
    if not keep_tape:
        buffers = tuple(np.empty((n, k, s)) for _ in range(5))
    for step in range(n_steps):
        if keep_tape:
            e_phi, s_phi = tape.e_phi[step], tape.s_phi[step]
            e_psi, s_psi = tape.e_psi[step], tape.s_psi[step]
            log_ktu = tape.log_ktu[step]
        else:
            e_phi, s_phi, e_psi, s_psi, log_ktu = buffers
        m_phi = phi.max(axis=0)
        np.subtract(phi, m_phi, out=e_phi)
        np.exp(e_phi, out=e_phi)
        np.matmul(gibbs, e_phi.reshape(n, ks), out=s_phi.reshape(n, ks))
        # psi = lt - (log(s_phi) + m_phi)
        psi = phi  # phi's value is consumed; reuse its buffer
        np.log(s_phi, out=psi)
        np.add(psi, m_phi, out=psi)
        np.subtract(lt, psi, out=psi)
        m_psi = psi.max(axis=0)
        np.subtract(psi, m_psi, out=e_psi)
        np.exp(e_psi, out=e_psi)
        np.matmul(gibbs.T, e_psi.reshape(n, ks), out=s_psi.reshape(n, ks))
        np.log(s_psi, out=log_ktu)
        np.add(log_ktu, m_psi, out=log_ktu)
        beta = np.einsum("nks,ks->ns", log_ktu, lam)
        np.subtract(beta[:, None, :], log_ktu, out=phi)
    return beta, tape


def _unrolled_backward(d_beta_last, tape, lam, gibbs):
    """Reverse sweep through the stashed iterations.

    The shift terms of the stabilized log-sum-exps cancel analytically, so
    each reduction's vector-Jacobian product is a single kernel multiply:
    for ``out = log(K @ exp(x))``, ``dx = exp(x - m) * (K^T (dout / S))``
    with ``S = exp(out - m)``.  Returns gradients w.r.t. the log topics
    (N, K) and the weight columns (K, s).
    """
    n_steps, n, k, s = tape.shape
    ks = k * s
    d_lt = np.zeros((n, k))
    d_lam = np.zeros((k, s))
    d_phi = np.zeros((n, k, s))
    work = np.empty((n, k, s))
    d_beta_direct = d_beta_last
    for step in range(n_steps - 1, -1, -1):
        e_phi, s_phi = tape.e_phi[step], tape.s_phi[step]
        e_psi, s_psi = tape.e_psi[step], tape.s_psi[step]
        log_ktu = tape.log_ktu[step]
        d_beta = d_phi.sum(axis=1)
        if d_beta_direct is not None:
            d_beta = d_beta + d_beta_direct
            d_beta_direct = None
        d_lam += np.einsum("ns,nks->ks", d_beta, log_ktu)
        # d_log_ktu = lam * d_beta - d_phi, then VJP through the reduction
        np.multiply(lam[None, :, :], d_beta[:, None, :], out=work)
        np.subtract(work, d_phi, out=work)
        np.divide(work, s_psi, out=work)
        np.matmul(gibbs, work.reshape(n, ks), out=d_phi.reshape(n, ks))
        d_psi = d_phi  # rename: buffer now holds the psi adjoint
        np.multiply(e_psi, d_psi, out=d_psi)
        d_lt += d_psi.sum(axis=2)
        np.divide(d_psi, s_phi, out=work)
        np.negative(work, out=work)
        np.matmul(gibbs.T, work.reshape(n, ks), out=d_phi.reshape(n, ks))
        np.multiply(e_phi, d_phi, out=d_phi)
    return d_lt, d_lam


def _loss_and_dbeta(y_batch, beta, kind):
    """Batch loss (summed over columns) and its gradient w.r.t. beta.

    The reconstruction is ``p = softmax(beta)`` columnwise; for the KL loss
    the gradient collapses to ``p - y``.
    """
    log_z = beta.max(axis=0)
    log_z = log_z + np.log(np.exp(beta - log_z).sum(axis=0))
    p = np.exp(beta - log_z)
    if kind == "kl":
        ylogy = np.where(y_batch > 0, y_batch * np.log(np.where(y_batch > 0, y_batch, 1.0)), 0.0)
        per_doc = ylogy.sum(axis=0) - (y_batch * beta).sum(axis=0) + log_z
        d_beta = p - y_batch
    else:
        diff = p - y_batch
        per_doc = np.square(diff).sum(axis=0)
        g = 2.0 * diff
        d_beta = p * (g - (g * p).sum(axis=0, keepdims=True))
    return float(per_doc.sum()), d_beta, p


def batch_loss_and_grads(y_batch, topic_logits, weight_logits_batch, C,
                         cfg: SinkhornConfig, loss_kind: str = "kl",
                         gibbs: np.ndarray | None = None,
                         tape: "_Tape | None" = None):
    """Loss of one minibatch and its exact gradients.

    ``y_batch`` has one document per column; ``weight_logits_batch`` holds
    only the batch's columns.  Returns ``(loss, grad_topic_logits,
    grad_weight_logits_batch)`` where the loss is summed over the batch and
    the gradients chain through the column softmaxes and the unrolled
    barycenter iterations.
    """
    y_batch = np.asarray(y_batch, dtype=np.float64)
    if y_batch.ndim == 1:
        y_batch = y_batch[:, None]
    if gibbs is None:
        gibbs = _gibbs_factor(C, cfg.epsilon)
    lt = log_softmax_columns(topic_logits)
    lam = softmax_columns(weight_logits_batch)
    if lam.ndim == 1:
        lam = lam[:, None]

    beta, tape = _unrolled_forward(lt, lam, gibbs, cfg.unroll_iters, keep_tape=True)
    loss, d_beta, _ = _loss_and_dbeta(y_batch, beta, loss_kind)
    d_lt, d_lam = _unrolled_backward(d_beta, tape, lam, gibbs)

    # chain through lt = R - LSE(R) columnwise
    topics = np.exp(lt)
    grad_r = d_lt - topics * d_lt.sum(axis=0, keepdims=True)
    # chain through lam = softmax(A) columnwise
    grad_a = lam * (d_lam - (d_lam * lam).sum(axis=0, keepdims=True))
    return loss, grad_r, grad_a


def batch_loss(y_batch, topic_logits, weight_logits_batch, cfg, loss_kind,
               gibbs) -> float:
    """Forward-only batch loss (no tape); used for traces and holdout."""
    lt = log_softmax_columns(topic_logits)
    lam = softmax_columns(weight_logits_batch)
    if lam.ndim == 1:
        lam = lam[:, None]
    y_batch = np.asarray(y_batch, dtype=np.float64)
    if y_batch.ndim == 1:
        y_batch = y_batch[:, None]
    beta, _ = _unrolled_forward(lt, lam, gibbs, cfg.unroll_iters, keep_tape=False)
    loss, _, _ = _loss_and_dbeta(y_batch, beta, loss_kind)
    return loss


def reconstruct(model: DictionaryModel, cols, C, cfg: SinkhornConfig) -> np.ndarray:
    """Barycentric reconstructions for the given weight columns (N x len(cols))."""
    gibbs = _gibbs_factor(C, cfg.epsilon)
    lt = log_softmax_columns(model.topic_logits)
    lam = softmax_columns(model.weight_logits[:, cols])
    beta, _ = _unrolled_forward(lt, lam, gibbs, cfg.unroll_iters, keep_tape=False)
    z = np.exp(beta - beta.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TraceRow:
    epoch: int
    train_loss: float
    heldout_loss: float | None = None


@dataclass
class TrainResult:
    model: DictionaryModel
    trace: list[TraceRow] = field(default_factory=list)
    holdout_columns: np.ndarray | None = None
    epochs_run: int = 0


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def train(Y, C, cfg: TrainConfig, scfg: SinkhornConfig,
          n_topics: int = 4) -> TrainResult:
    """Fit topics and weights by minibatch Adam on the reconstruction loss.

    Logits initialize i.i.d. standard normal from the seeded generator.  Each
    epoch shuffles the training documents, walks batches of
    ``cfg.batch_size`` (last one smaller), and after every batch updates the
    topic logits and the batch's weight-logit columns; weight columns carry
    per-column Adam moments so unseen columns are untouched.  When
    ``cfg.holdout_fraction > 0`` a document subset is excluded from topic
    updates; its weight columns get one frozen-topic refinement pass per
    epoch and their loss is reported alongside the training loss.

    Stops early once the relative improvement of the epoch-mean loss stays
    below ``cfg.early_stop_rel`` for ``cfg.early_stop_patience`` consecutive
    epochs.
    """
    distributions = getattr(Y, "distributions", Y)
    Y = np.asarray(distributions, dtype=np.float64)
    n, m = Y.shape
    if n < 1 or m < 1 or n_topics < 1:
        raise ValueError("need at least one word, one document, one topic")
    gibbs = _gibbs_factor(C, scfg.epsilon)

    rng = np.random.default_rng(cfg.seed)
    R = rng.standard_normal((n, n_topics))
    A = rng.standard_normal((n_topics, m))

    if cfg.holdout_fraction > 0:
        n_test = max(1, int(round(cfg.holdout_fraction * m)))
        perm = rng.permutation(m)
        test_cols = np.sort(perm[:n_test])
        train_cols = np.sort(perm[n_test:])
        if train_cols.size == 0:
            raise ValueError("holdout_fraction leaves no training documents")
    else:
        test_cols = None
        train_cols = np.arange(m)

    r_state = AdamState.zeros(R.shape)
    a_m = np.zeros_like(A)
    a_v = np.zeros_like(A)
    a_t = np.zeros(m, dtype=np.int64)

    trace: list[TraceRow] = []
    stall = 0
    prev_loss = None
    epochs_run = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_cols)
        loss_sum = 0.0
        for batch in _batches(order, cfg.batch_size):
            loss, grad_r, grad_a = batch_loss_and_grads(
                Y[:, batch], R, A[:, batch], None, scfg, cfg.loss_kind,
                gibbs=gibbs,
            )
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch starting with "
                    f"document {batch[0]}: loss={loss!r}, "
                    f"|R|_max={np.abs(R).max():.3e}, |A|_max={np.abs(A).max():.3e}"
                )
            loss_sum += loss
            R, r_state = adam_step(R, grad_r, r_state, cfg.learning_rate,
                                   cfg.beta1, cfg.beta2, cfg.adam_eps)
            _adam_update_columns(A, grad_a, a_m, a_v, a_t, batch,
                                 cfg.learning_rate, cfg.beta1, cfg.beta2,
                                 cfg.adam_eps)
        train_loss = loss_sum / len(train_cols)

        heldout_loss = None
        if test_cols is not None:
            heldout_loss = _refine_holdout(Y, R, A, a_m, a_v, a_t, test_cols,
                                           gibbs, cfg, scfg)
        trace.append(TraceRow(epoch, train_loss, heldout_loss))
        epochs_run = epoch

        if prev_loss is not None:
            rel = (prev_loss - train_loss) / max(abs(prev_loss), 1e-300)
            stall = stall + 1 if rel < cfg.early_stop_rel else 0
            if stall >= cfg.early_stop_patience:
                break
        prev_loss = train_loss

    model = DictionaryModel(R, A)
    return TrainResult(model, trace, test_cols, epochs_run)


def _refine_holdout(Y, R, A, a_m, a_v, a_t, test_cols, gibbs, cfg, scfg):
    """One frozen-topic pass over the holdout columns; returns their mean loss."""
    loss_sum = 0.0
    for batch in _batches(test_cols, cfg.batch_size):
        loss, _, grad_a = batch_loss_and_grads(
            Y[:, batch], R, A[:, batch], None, scfg, cfg.loss_kind, gibbs=gibbs
        )
        loss_sum += loss
        _adam_update_columns(A, grad_a, a_m, a_v, a_t, batch,
                             cfg.learning_rate, cfg.beta1, cfg.beta2,
                             cfg.adam_eps)
    return loss_sum / len(test_cols)


def heldout_weights(Y_test, model: DictionaryModel, C, cfg: TrainConfig,
                    scfg: SinkhornConfig):
    """Fit weight columns for unseen documents with the topics frozen.

    Runs the same Adam loop on fresh weight logits only.  Logits start at
    zero (uniform weights): with the topics frozen every column's trajectory
    is independent, so identical documents always fit identical columns.
    Returns the fitted column-stochastic weights and the final mean
    per-document loss; used for hyperparameter selection.
    """
    distributions = getattr(Y_test, "distributions", Y_test)
    Y_test = np.asarray(distributions, dtype=np.float64)
    if Y_test.ndim == 1:
        Y_test = Y_test[:, None]
    n, m = Y_test.shape
    k = model.n_topics
    gibbs = _gibbs_factor(C, scfg.epsilon)

    rng = np.random.default_rng(cfg.seed)
    A = np.zeros((k, m))
    a_m = np.zeros_like(A)
    a_v = np.zeros_like(A)
    a_t = np.zeros(m, dtype=np.int64)
    R = model.topic_logits

    prev = None
    stall = 0
    mean_loss = np.inf
    for _ in range(1, cfg.epochs + 1):
        order = rng.permutation(m)
        loss_sum = 0.0
        for batch in _batches(order, cfg.batch_size):
            loss, _, grad_a = batch_loss_and_grads(
                Y_test[:, batch], R, A[:, batch], None, scfg, cfg.loss_kind,
                gibbs=gibbs,
            )
            if not np.isfinite(loss):
                raise NonFiniteLoss("non-finite loss while fitting holdout weights")
            loss_sum += loss
            _adam_update_columns(A, grad_a, a_m, a_v, a_t, batch,
                                 cfg.learning_rate, cfg.beta1, cfg.beta2,
                                 cfg.adam_eps)
        mean_loss = loss_sum / m
        if prev is not None:
            rel = (prev - mean_loss) / max(abs(prev), 1e-300)
            stall = stall + 1 if rel < cfg.early_stop_rel else 0
            if stall >= cfg.early_stop_patience:
                break
        prev = mean_loss
    return softmax_columns(A), mean_loss
