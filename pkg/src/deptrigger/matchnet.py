"""Trigger matching network.

A BiLSTM encoder plus one self-attentive pooling layer shared between the
whole sentence (giving ``g_s``) and the rows of its trigger tokens (giving
``g_t``).  Matched pairs are pulled together by their squared distance and
in-batch mismatched pairs are pushed out to a margin.  After training, the
``g_t`` of every training instance is kept in a :class:`PrototypeTable` and
queried by nearest neighbour at inference time.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .corpus import EmbeddingTable, TrainingInstance
from .numerics import (
    Adam,
    ParamStore,
    add_bilstm_params,
    bilstm_backward,
    bilstm_encode,
    dropout_mask,
    softmax,
    softmax_backward,
)

log = logging.getLogger(__name__)


@dataclass
class MatchConfig:
    margin: float = 1.0
    negatives_per_positive: int = 1
    hidden: int = 100
    attn: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    dropout: float = 0.5
    clip: Optional[float] = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.negatives_per_positive < 0:
            raise ValueError("negatives_per_positive must be >= 0")


def attend_pool(W1: np.ndarray, W2: np.ndarray, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """score_i = W2 . tanh(W1 h_i); weights = softmax(score); pooled = sum_i w_i h_i."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("attend_pool needs at least one row")
    if rows.shape[1] != W1.shape[1]:
        raise ValueError(f"rows have width {rows.shape[1]}, W1 expects {W1.shape[1]}")
    scores = np.tanh(rows @ W1.T) @ W2[0]
    weights = softmax(scores)
    # centring on the first row equals weights @ rows (the weights sum to 1)
    # and reproduces a set of identical rows bit for bit
    return weights, rows[0] + weights @ (rows - rows[0])


def attend_pool_backward(W1, W2, rows, weights, dpooled):
    """Returns (drows, dW1, dW2)."""
    Z = np.tanh(rows @ W1.T)
    drows = np.outer(weights, dpooled)
    dscores = softmax_backward(weights, rows @ dpooled)
    dZ = np.outer(dscores, W2[0])
    dW2 = (dscores @ Z)[None, :]
    dA = dZ * (1.0 - Z * Z)
    dW1 = dA.T @ rows
    drows += dA @ W1
    return drows, dW1, dW2


def trigger_rows(H: np.ndarray, trig: Sequence[int]) -> np.ndarray:
    idx = sorted(set(int(i) for i in trig))
    if not idx:
        raise ValueError("empty trigger set")
    if idx[0] < 0 or idx[-1] >= H.shape[0]:
        raise IndexError("trigger index outside the sentence")
    return H[idx]


def match_loss(g_s: np.ndarray, g_t: np.ndarray, matched: bool, margin: float = 1.0) -> float:
    if g_s.shape != g_t.shape:
        raise ValueError("representations differ in width")
    d2 = float(np.sum((g_s - g_t) ** 2))
    return d2 if matched else max(0.0, margin - d2)


def make_negatives(n: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Random cyclic permutation (Sattolo), so no index maps to itself.

    Returns None, with a warning, when the batch has fewer than two items.
    """
    if n < 2:
        warnings.warn("batch of size 1: no in-batch negatives")
        return None
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


class TriggerMatcher:
    """Encoder parameters live under ``enc.*``, attention under ``attn.*``."""

    def __init__(self, emb_dim: int, hidden: int = 100, attn: int = 100, seed: int = 0):
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.attn = attn
        self.store = ParamStore(seed)
        add_bilstm_params(self.store, "enc", emb_dim, hidden)
        self.store.add("attn.W1", (attn, 2 * hidden), fan_in=2 * hidden)
        self.store.add("attn.W2", (1, attn), fan_in=attn)

    @property
    def width(self) -> int:
        return 2 * self.hidden

    def encode(self, X: np.ndarray) -> np.ndarray:
        return bilstm_encode(self.store, "enc", X)[0]

    def sentence_repr(self, X: np.ndarray) -> np.ndarray:
        W1, W2 = self.store["attn.W1"], self.store["attn.W2"]
        return attend_pool(W1, W2, self.encode(X))[1]

    def trigger_repr(self, X: np.ndarray, trig: Sequence[int]) -> np.ndarray:
        W1, W2 = self.store["attn.W1"], self.store["attn.W2"]
        return attend_pool(W1, W2, trigger_rows(self.encode(X), trig))[1]

    def represent(self, X: np.ndarray, trig: Optional[Sequence[int]] = None):
        """(g_s, g_t) from a single encoder pass; g_t is None without triggers."""
        W1, W2 = self.store["attn.W1"], self.store["attn.W2"]
        H = self.encode(X)
        g_s = attend_pool(W1, W2, H)[1]
        g_t = attend_pool(W1, W2, trigger_rows(H, trig))[1] if trig else None
        return g_s, g_t

    def _forward(self, X, trig, rng, dropout):
        mask_x = dropout_mask(rng, X.shape, dropout)
        X_in = X * mask_x if mask_x is not None else X
        H_raw, enc_cache = bilstm_encode(self.store, "enc", X_in)
        mask_h = dropout_mask(rng, H_raw.shape, dropout)
        H = H_raw * mask_h if mask_h is not None else H_raw
        W1, W2 = self.store["attn.W1"], self.store["attn.W2"]
        idx = sorted(set(int(i) for i in trig))
        w_s, g_s = attend_pool(W1, W2, H)
        M = trigger_rows(H, idx)
        w_t, g_t = attend_pool(W1, W2, M)
        return dict(H=H, M=M, idx=idx, w_s=w_s, w_t=w_t, g_s=g_s, g_t=g_t,
                    enc_cache=enc_cache, mask_h=mask_h)

    def _backward(self, fw, dg_s, dg_t):
        W1, W2 = self.store["attn.W1"], self.store["attn.W2"]
        grads = self.store.grads
        dH, dW1, dW2 = attend_pool_backward(W1, W2, fw["H"], fw["w_s"], dg_s)
        dM, dW1t, dW2t = attend_pool_backward(W1, W2, fw["M"], fw["w_t"], dg_t)
        dH[fw["idx"]] += dM
        grads["attn.W1"] += dW1 + dW1t
        grads["attn.W2"] += dW2 + dW2t
        if fw["mask_h"] is not None:
            dH = dH * fw["mask_h"]
        bilstm_backward(self.store, "enc", fw["enc_cache"], dH)

    def batch_loss(self, batch: Sequence[Tuple[np.ndarray, Sequence[int]]], margin: float = 1.0,
                   rng: Optional[np.random.Generator] = None, negatives_per_positive: int = 1,
                   dropout: float = 0.0, backward: bool = True) -> float:
        """Mean matching loss over positives and in-batch negatives.

        ``rng`` drives negative sampling and dropout; without it no negatives
        are drawn (used by gradient checks together with a fixed ``perms``).
        """
        drop_rng = rng if dropout > 0 else None
        fws = [self._forward(np.asarray(X, dtype=np.float64), trig, drop_rng, dropout)
               for X, trig in batch]
        perms = []
        if rng is not None and len(batch) >= 2:
            perms = [make_negatives(len(batch), rng) for _ in range(negatives_per_positive)]
        elif len(batch) < 2 and negatives_per_positive > 0:
            warnings.warn("batch of size 1: training on positive pairs only")
        return self._loss_from_forward(fws, perms, margin, backward)

    def batch_loss_fixed(self, batch, perms, margin=1.0, backward=True) -> float:
        """Deterministic variant with explicit negative permutations, no dropout."""
        fws = [self._forward(np.asarray(X, dtype=np.float64), trig, None, 0.0) for X, trig in batch]
        return self._loss_from_forward(fws, perms, margin, backward)

    def _loss_from_forward(self, fws, perms, margin, backward):
        n = len(fws)
        n_terms = n * (1 + len(perms))
        total = 0.0
        dgs = [np.zeros(self.width) for _ in range(n)]
        dgt = [np.zeros(self.width) for _ in range(n)]
        for i, fw in enumerate(fws):
            diff = fw["g_s"] - fw["g_t"]
            total += float(diff @ diff)
            dgs[i] += 2.0 * diff / n_terms
            dgt[i] -= 2.0 * diff / n_terms
        for perm in perms:
            for i, j in enumerate(perm):
                diff = fws[i]["g_s"] - fws[j]["g_t"]
                d2 = float(diff @ diff)
                if margin - d2 > 0.0:
                    total += margin - d2
                    dgs[i] -= 2.0 * diff / n_terms
                    dgt[j] += 2.0 * diff / n_terms
        if backward:
            for i, fw in enumerate(fws):
                self._backward(fw, dgs[i], dgt[i])
        return total / n_terms

    def save(self, path, meta: Optional[dict] = None) -> None:
        header = {"emb_dim": self.emb_dim, "hidden": self.hidden, "attn": self.attn}
        header.update(meta or {})
        self.store.save(path, meta=header)

    @classmethod
    def load(cls, path) -> "Tuple[TriggerMatcher, dict]":
        store, meta = ParamStore.load(path)
        obj = cls.__new__(cls)
        obj.emb_dim, obj.hidden, obj.attn = meta["emb_dim"], meta["hidden"], meta["attn"]
        obj.store = store
        return obj, meta


def matcher_eligible(inst: TrainingInstance) -> bool:
    return inst.kept_mention is not None and bool(inst.triggers)


@dataclass
class MatcherHistory:
    loss: List[float] = field(default_factory=list)
    positive_distance: List[float] = field(default_factory=list)
    negative_distance: List[float] = field(default_factory=list)
    skipped: int = 0


def distance_summary(matcher: TriggerMatcher, data) -> Tuple[float, float]:
    """Mean squared distance over matched pairs and over all mismatched pairs."""
    reps = [matcher.represent(X, trig) for X, trig in data]
    gs = np.array([r[0] for r in reps])
    gt = np.array([r[1] for r in reps])
    D = np.sum((gs[:, None, :] - gt[None, :, :]) ** 2, axis=-1)
    n = len(reps)
    pos = float(np.trace(D)) / n
    neg = float(D.sum() - np.trace(D)) / (n * n - n) if n > 1 else float("nan")
    return pos, neg


def train_matcher(instances: Sequence[TrainingInstance], embeddings: EmbeddingTable,
                  config: MatchConfig = MatchConfig(), track_distance: bool = False
                  ) -> Tuple[TriggerMatcher, MatcherHistory]:
    """Fit the matcher; instances without an entity or triggers are skipped."""
    history = MatcherHistory()
    usable = [inst for inst in instances if matcher_eligible(inst)]
    history.skipped = len(instances) - len(usable)
    if history.skipped:
        log.info("matcher: skipping %d instances without entity or triggers", history.skipped)
    if not usable:
        raise ValueError("no instances with triggers to train the matcher on")
    data = [(embeddings.embed(inst.tokens), inst.trigger_indices) for inst in usable]
    matcher = TriggerMatcher(embeddings.dim, config.hidden, config.attn, seed=config.seed)
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(matcher.store, lr=config.lr, clip=config.clip)
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        n_batches = 0
        for b in range(0, len(order), config.batch_size):
            batch = [data[k] for k in order[b:b + config.batch_size]]
            matcher.store.zero_grad()
            with warnings.catch_warnings():
                if len(data) > 1:
                    warnings.simplefilter("ignore")
                loss = matcher.batch_loss(batch, config.margin, rng, config.negatives_per_positive,
                                          config.dropout)
            opt.step()
            epoch_loss += loss
            n_batches += 1
        history.loss.append(epoch_loss / n_batches)
        if track_distance:
            pos, neg = distance_summary(matcher, data)
            history.positive_distance.append(pos)
            history.negative_distance.append(neg)
        log.info("matcher epoch %d loss %.6f", epoch + 1, history.loss[-1])
    matcher.store.zero_grad()
    return matcher, history


@dataclass
class PrototypeTable:
    vectors: np.ndarray
    sent_ids: List[int]
    labels: List[str]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def save(self, path, meta: Optional[dict] = None) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, vectors=self.vectors, sent_ids=np.array(self.sent_ids, dtype=np.int64),
                     labels=np.array(self.labels, dtype=str),
                     meta=np.array(json.dumps(meta or {}, sort_keys=True)))

    @classmethod
    def load(cls, path) -> "Tuple[PrototypeTable, dict]":
        with np.load(path, allow_pickle=False) as data:
            table = cls(np.array(data["vectors"]), [int(x) for x in data["sent_ids"]],
                        [str(x) for x in data["labels"]])
            meta = json.loads(str(data["meta"]))
        return table, meta


def build_prototype(matcher: TriggerMatcher, instances: Sequence[TrainingInstance],
                    embeddings: EmbeddingTable) -> PrototypeTable:
    """One g_t per eligible training instance, in corpus order."""
    if "attn.W1" not in matcher.store or "enc.fwd.W" not in matcher.store:
        raise ValueError("matcher is missing trained parameters")
    vecs, ids, labels = [], [], []
    for inst in instances:
        if not matcher_eligible(inst):
            continue
        vecs.append(matcher.trigger_repr(embeddings.embed(inst.tokens), inst.trigger_indices))
        ids.append(inst.sent_id)
        labels.append(inst.kept_mention.label)
    if not vecs:
        raise ValueError("no instances with triggers; prototype table would be empty")
    return PrototypeTable(np.vstack(vecs), ids, labels)


def nearest(table: PrototypeTable, g_s: np.ndarray) -> int:
    """Index of the closest entry in L2; ties go to the lowest index."""
    if len(table) == 0:
        raise ValueError("empty prototype table")
    d2 = np.sum((table.vectors - g_s[None, :]) ** 2, axis=1)
    return int(np.argmin(d2))


def retrieve(table: PrototypeTable, g_s: np.ndarray) -> np.ndarray:
    return table.vectors[nearest(table, g_s)]


def config_dict(config: MatchConfig) -> dict:
    return asdict(config)
