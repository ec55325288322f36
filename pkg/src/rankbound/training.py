"""Deterministic desk-scale training on hierarchical embedding data.

A small encoder (linear map or one-hidden-layer MLP) is trained with
cosine-similarity batch losses: every batch element queries the rest of
the batch, the chosen rank surrogate is combined with a decomposability
objective, and parameters follow an in-repo Adam (or plain SGD) so runs
are bit-reproducible for a fixed config and seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import LabelPath, LevelPartition, RankingProblem, build_hierarchy
from .decomposability import DecompConfig, EmptyBatchError, l_dg, l_dg_star
from .metrics import MetricReport, evaluate_all, shared_level_matrix
from .relevance import RelevanceSpec, binary_relevance, ndcg_relevance
from .surrogates import (SurrogateConfig, sigmoid_rank_baseline, sup_ap_loss,
                         sup_hap_loss, sup_ndcg_loss, sup_rk_loss)

SURROGATES = {
    "sup-ap": sup_ap_loss,
    "sup-rk": sup_rk_loss,
    "sup-hap": sup_hap_loss,
    "sup-ndcg": sup_ndcg_loss,
    "smooth-ap": sigmoid_rank_baseline,
}
_BINARY_SURROGATES = {"sup-ap", "sup-rk", "smooth-ap"}
_TARGET_METRIC = {
    "sup-ap": "ap",
    "smooth-ap": "ap",
    "sup-rk": "ap",
    "sup-hap": "h_ap",
    "sup-ndcg": "ndcg",
}

NORM_FLOOR = 1e-12
CHECKPOINT_MAGIC = b"RLCK1"


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries the partial log."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class TrainConfig:
    encoder: str = "linear"
    hidden: int = 32
    embed_dim: int = 8
    batch_size: int = 32
    samples_per_class: int = 4
    epochs: int = 10
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer: str = "adam"
    surrogate: str = "sup-ap"
    relevance: RelevanceSpec = RelevanceSpec()
    surrogate_cfg: SurrogateConfig = SurrogateConfig()
    decomp: DecompConfig = DecompConfig(kind="none")
    seed: int = 0
    eval_k: tuple[int, ...] = (1, 2, 4, 8)

    def __post_init__(self):
        if self.encoder not in ("linear", "mlp"):
            raise ValueError("encoder must be linear or mlp")
        if self.surrogate not in SURROGATES:
            raise ValueError(f"unknown surrogate {self.surrogate!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be adam or sgd")
        if self.batch_size % self.samples_per_class:
            raise ValueError("batch size must be divisible by samples per class")
        if self.samples_per_class < 2:
            raise ValueError("need at least two samples per class so every "
                             "query has an in-batch positive")
        if self.batch_size // self.samples_per_class < 2:
            raise ValueError("need at least two classes per batch so every "
                             "query has an in-batch negative")
        if self.embed_dim < 2:
            raise ValueError("embedding dimension must be >= 2")
        if self.epochs < 0 or self.hidden < 1:
            raise ValueError("epochs must be >= 0 and hidden >= 1")

    @property
    def classes_per_batch(self) -> int:
        return self.batch_size // self.samples_per_class


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_metric: float
    test_report: MetricReport


@dataclass
class TrainLog:
    config: TrainConfig
    target_metric: str
    initial: EpochLog
    epochs: list[EpochLog] = field(default_factory=list)
    checkpoint: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def final(self) -> EpochLog:
        return self.epochs[-1] if self.epochs else self.initial

    def csv_rows(self) -> list[list[str]]:
        keys = sorted(self.initial.test_report.per_query)
        header = ["epoch", "train_loss", "train_metric"] + [f"test_{k}" for k in keys]
        rows = [header]
        for entry in [self.initial] + self.epochs:
            rows.append([str(entry.epoch), repr(entry.train_loss),
                         repr(entry.train_metric)]
                        + [repr(entry.test_report.mean(k)) for k in keys])
        return rows


# -- encoders ---------------------------------------------------------------

def init_params(cfg: TrainConfig, input_dim: int,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    if cfg.encoder == "linear":
        return {"w1": rng.normal(0.0, 1.0, (input_dim, cfg.embed_dim))
                / np.sqrt(input_dim)}
    return {
        "w1": rng.normal(0.0, 1.0, (input_dim, cfg.hidden)) / np.sqrt(input_dim),
        "b1": np.zeros(cfg.hidden),
        "w2": rng.normal(0.0, 1.0, (cfg.hidden, cfg.embed_dim))
        / np.sqrt(cfg.hidden),
    }


def encode(params: dict[str, np.ndarray], x: np.ndarray):
    """Forward pass; returns (embeddings, cache for the backward pass)."""
    if "w2" not in params:
        return x @ params["w1"], (x,)
    hidden = np.tanh(x @ params["w1"] + params["b1"])
    return hidden @ params["w2"], (x, hidden)


def encode_backward(params: dict[str, np.ndarray], cache, grad_out: np.ndarray):
    if "w2" not in params:
        (x,) = cache
        return {"w1": x.T @ grad_out}
    x, hidden = cache
    grad_hidden = (grad_out @ params["w2"].T) * (1.0 - hidden * hidden)
    return {"w1": x.T @ grad_hidden,
            "b1": grad_hidden.sum(axis=0),
            "w2": hidden.T @ grad_out}


def normalize_rows(v: np.ndarray):
    """Unit-normalize rows with an epsilon floor; returns (u, norms)."""
    norms = np.maximum(np.linalg.norm(v, axis=1), NORM_FLOOR)
    return v / norms[:, None], norms


def normalize_rows_backward(u: np.ndarray, norms: np.ndarray,
                            grad_u: np.ndarray) -> np.ndarray:
    inner = np.sum(grad_u * u, axis=1, keepdims=True)
    return (grad_u - inner * u) / norms[:, None]


# -- optimizers -------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, lr, beta1, beta2, eps) -> None:
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k in sorted(params):
        g = grads[k]
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        params[k] -= lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + eps)


def sgd_step(params, grads, lr) -> None:
    for k in sorted(params):
        params[k] -= lr * grads[k]


# -- batch sampling ---------------------------------------------------------

def class_index(label_paths: Sequence[LabelPath]) -> np.ndarray:
    """Fine-grained class id per instance, in first-appearance order."""
    seen: dict[LabelPath, int] = {}
    out = np.empty(len(label_paths), dtype=np.int64)
    for i, p in enumerate(label_paths):
        out[i] = seen.setdefault(tuple(p), len(seen))
    return out


def _as_class_ids(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim == 1 and np.issubdtype(arr.dtype, np.integer):
        return arr
    return class_index(list(labels))


def sample_batch(labels, batch_size: int, per_class: int,
                 rng: np.random.Generator) -> np.ndarray:
    """One class-balanced batch: batch_size/per_class distinct classes,
    per_class instances each; short classes are topped up with
    replacement.  Labels may be fine-grained class ids or label paths."""
    class_ids = _as_class_ids(labels)
    if batch_size % per_class:
        raise ValueError("batch size must be divisible by per_class")
    need = batch_size // per_class
    classes = np.unique(class_ids)
    if classes.size < need:
        raise ValueError(f"need {need} distinct classes, have {classes.size}")
    chosen = rng.choice(classes, size=need, replace=False)
    out = []
    for c in chosen:
        members = np.flatnonzero(class_ids == c)
        if members.size >= per_class:
            out.append(rng.choice(members, size=per_class, replace=False))
        else:
            out.append(rng.choice(members, size=per_class, replace=True))
    return np.concatenate(out)


def epoch_batches(labels, batch_size: int, per_class: int,
                  rng: np.random.Generator) -> list[np.ndarray]:
    """Class-balanced batches covering one epoch without replacement.

    Per-class index queues are shuffled once; each batch takes the classes
    with the most remaining samples (ties broken by class id), popping
    per_class indices from each and topping up exhausted queues with
    replacement so every batch keeps its shape.
    """
    class_ids = _as_class_ids(labels)
    if batch_size % per_class:
        raise ValueError("batch size must be divisible by per_class")
    need = batch_size // per_class
    classes = np.unique(class_ids)
    if classes.size < need:
        raise ValueError(f"need {need} distinct classes, have {classes.size}")
    queues = {}
    members = {}
    for c in classes:
        idx = np.flatnonzero(class_ids == c)
        members[int(c)] = idx
        queues[int(c)] = list(rng.permutation(idx))
    batches = []
    while sum(1 for q in queues.values() if q) >= need:
        order = sorted(queues, key=lambda c: (-len(queues[c]), c))[:need]
        batch = []
        for c in order:
            take = queues[c][:per_class]
            del queues[c][:per_class]
            if len(take) < per_class:
                extra = rng.choice(members[c], size=per_class - len(take),
                                   replace=True)
                take = list(take) + list(extra)
            batch.extend(take)
        batches.append(np.asarray(batch, dtype=np.int64))
    return batches


# -- batch loss -------------------------------------------------------------

def _batch_problems(scores: np.ndarray, levels: np.ndarray, depth: int,
                    cfg: TrainConfig):
    """Build one RankingProblem per usable query of the batch."""
    b = scores.shape[0]
    keep = ~np.eye(b, dtype=bool)
    problems, queries = [], []
    for i in range(b):
        lv = levels[i][keep[i]]
        part = LevelPartition(levels=lv, depth=depth)
        if part.num_positives == 0:
            continue
        if cfg.surrogate in _BINARY_SURROGATES:
            rel = binary_relevance(part)
        elif cfg.surrogate == "sup-ndcg":
            rel = ndcg_relevance(part)
        else:
            rel = cfg.relevance.build(part)
        if not np.any(rel.values > 0):
            continue
        problems.append(RankingProblem(scores[i][keep[i]], rel))
        queries.append(i)
    if not problems:
        raise ValueError("batch has no valid query")
    return problems, queries


def batch_loss(params: dict[str, np.ndarray], x: np.ndarray,
               levels: np.ndarray, class_ids: np.ndarray, depth: int,
               cfg: TrainConfig, proxies: np.ndarray | None = None):
    """Loss and gradients for one batch.

    Every batch element queries the rest of the batch; the surrogate's
    score gradients chain through the cosine-similarity jacobian and the
    encoder.  Returns (value, parameter grads, proxy grads or None,
    component values).
    """
    b = x.shape[0]
    v, cache = encode(params, x)
    u, norms = normalize_rows(v)
    s = u @ u.T

    problems, queries = _batch_problems(s, levels, depth, cfg)
    sur = SURROGATES[cfg.surrogate](problems, cfg.surrogate_cfg)

    lam = cfg.decomp.lam if cfg.decomp.kind != "none" else 0.0
    grad_s = np.zeros((b, b))
    keep = ~np.eye(b, dtype=bool)
    for qi, g in zip(queries, sur.grad_scores):
        grad_s[qi][keep[qi]] += (1.0 - lam) * g

    dg_value = 0.0
    grad_u_extra = np.zeros_like(u)
    grad_proxies = None
    if cfg.decomp.kind == "pair":
        # the hinge's positive set follows the surrogate's relevance;
        # queries with one side empty (possible under graded relevance
        # when everything in the batch shares an ancestor) contribute no
        # hinge term
        vals, grads_q = [], []
        for qi, problem in zip(queries, problems):
            try:
                res = l_dg(problem.scores, problem.rel > 0,
                           cfg.decomp.pos_margin, cfg.decomp.neg_margin)
            except EmptyBatchError:
                continue
            vals.append(res.value)
            grads_q.append((qi, res.grad_scores[0]))
        if vals:
            dg_value = float(np.mean(vals))
            for qi, g in grads_q:
                grad_s[qi][keep[qi]] += lam * g / len(vals)
    elif cfg.decomp.kind == "proxy":
        if proxies is None:
            raise ValueError("proxy objective needs a proxy matrix")
        res = l_dg_star(u, proxies, class_ids, cfg.decomp.proxy_temperature)
        dg_value = res.value
        grad_u_extra = lam * res.grad_embeddings
        grad_proxies = lam * res.grad_proxies

    value = (1.0 - lam) * sur.value + lam * dg_value
    grad_u = (grad_s + grad_s.T) @ u + grad_u_extra
    grad_v = normalize_rows_backward(u, norms, grad_u)
    grads = encode_backward(params, cache, grad_v)
    components = {"total": value, "surrogate": sur.value, "dg": dg_value}
    return value, grads, grad_proxies, components


# -- the training loop ------------------------------------------------------

def dataset_target_metric(embeddings: np.ndarray, levels: np.ndarray,
                          depth: int, cfg: TrainConfig) -> float:
    """The surrogate's target metric over the full set (mean over queries)."""
    from . import metrics as M

    s = M.cosine_scores(embeddings)
    n = s.shape[0]
    keep = ~np.eye(n, dtype=bool)
    vals = []
    name = _TARGET_METRIC[cfg.surrogate]
    for i in range(n):
        lv = levels[i][keep[i]]
        part = LevelPartition(levels=lv, depth=depth)
        if name == "ap":
            rel = binary_relevance(part)
        elif name == "ndcg":
            rel = ndcg_relevance(part)
        else:
            rel = cfg.relevance.build(part) if np.any(lv > 0) else None
        if rel is None or not np.any(rel.values > 0):
            continue
        prob = RankingProblem(s[i][keep[i]], rel)
        fn = {"ap": M.average_precision, "ndcg": M.ndcg, "h_ap": M.h_ap}[name]
        vals.append(fn(prob))
    return float(np.mean(vals)) if vals else float("nan")


def train(train_set: tuple[np.ndarray, Sequence[LabelPath]],
          test_set: tuple[np.ndarray, Sequence[LabelPath]],
          cfg: TrainConfig) -> TrainLog:
    """Run the full training loop; deterministic given config and seed.

    Metrics are logged each epoch: the target metric on the full train
    set and a complete metric report on the test set.  A non-finite loss
    aborts with the partial log attached.
    """
    x_train = np.asarray(train_set[0], dtype=np.float64)
    labels_train = [tuple(p) for p in train_set[1]]
    x_test = np.asarray(test_set[0], dtype=np.float64)
    labels_test = [tuple(p) for p in test_set[1]]

    tree = build_hierarchy(labels_train + labels_test)
    levels_train = shared_level_matrix(tree, labels_train)
    class_ids = class_index(labels_train)
    rng = np.random.default_rng(cfg.seed)

    params = init_params(cfg, x_train.shape[1], rng)
    proxies = None
    if cfg.decomp.kind == "proxy":
        raw = rng.normal(0.0, 1.0, (int(class_ids.max()) + 1, cfg.embed_dim))
        proxies = raw / np.linalg.norm(raw, axis=1, keepdims=True)

    adam = AdamState.like(params)
    adam_prox = None
    if proxies is not None:
        adam_prox = AdamState.like({"p": proxies})

    def evaluate(epoch: int, train_loss: float) -> EpochLog:
        emb_train, _ = encode(params, x_train)
        emb_test, _ = encode(params, x_test)
        metric = dataset_target_metric(emb_train, levels_train, tree.depth, cfg)
        report = evaluate_all(emb_test, labels_test, cfg.relevance,
                              cfg.eval_k, tree=tree)
        return EpochLog(epoch=epoch, train_loss=train_loss,
                        train_metric=metric, test_report=report)

    log = TrainLog(config=cfg, target_metric=_TARGET_METRIC[cfg.surrogate],
                   initial=evaluate(0, float("nan")))
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for batch in epoch_batches(class_ids, cfg.batch_size,
                                   cfg.samples_per_class, rng):
            lv = levels_train[np.ix_(batch, batch)]
            value, grads, gprox, _ = batch_loss(
                params, x_train[batch], lv, class_ids[batch], tree.depth,
                cfg, proxies)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", log=log)
            losses.append(value)
            if cfg.optimizer == "adam":
                adam_step(params, grads, adam, cfg.lr, cfg.beta1, cfg.beta2,
                          cfg.adam_eps)
            else:
                sgd_step(params, grads, cfg.lr)
            if gprox is not None:
                if cfg.optimizer == "adam":
                    adam_step({"p": proxies}, {"p": gprox}, adam_prox,
                              cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
                else:
                    sgd_step({"p": proxies}, {"p": gprox}, cfg.lr)
                proxies /= np.maximum(np.linalg.norm(proxies, axis=1,
                                                     keepdims=True), NORM_FLOOR)
        log.epochs.append(evaluate(epoch, float(np.mean(losses))))

    log.checkpoint = {k: p.copy() for k, p in params.items()}
    if proxies is not None:
        log.checkpoint["proxies"] = proxies.copy()
    return log


# -- checkpoint file --------------------------------------------------------
#
# Same binary layout family as the feature file: magic, little-endian u64
# sizes, raw IEEE-754 payloads (float64 here).

def write_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(arrays)))
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<Q", len(nb)))
            f.write(nb)
            f.write(struct.pack("<Q", a.ndim))
            f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            f.write(a.tobytes(order="C"))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError("malformed header: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise ValueError("truncated payload")
        out = blob[off:off + n]
        off += n
        return out

    (count,) = struct.unpack("<Q", take(8))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<Q", take(8))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(size * 8), dtype="<f8")
        arrays[name] = data.reshape(shape).copy()
    if off != len(blob):
        raise ValueError("trailing bytes after checkpoint payload")
    return arrays
