"""Entity recognition network with trigger attention and a linear-chain CRF.

The encoder output ``H`` is re-weighted by attention queried with a trigger
pattern vector ``g_t`` (H'_i = a_i h_i), concatenated to ``[H; H']`` and
projected to per-tag emissions for the CRF.  During training ``g_t`` comes
from the gold triggers through the frozen matcher; at inference it is the
nearest prototype to the sentence vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import EmbeddingTable, EntityMention, TrainingInstance, spans_from_tags
from .matchnet import PrototypeTable, TriggerMatcher, retrieve
from .numerics import (
    Adam,
    ParamStore,
    add_bilstm_params,
    bilstm_backward,
    bilstm_encode,
    check_finite,
    dropout_mask,
    softmax,
    softmax_backward,
)
from .numerics import kernels

log = logging.getLogger(__name__)


class FrozenMatcherError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# trigger attention

def trigger_attention(U1: np.ndarray, U2: np.ndarray, v: np.ndarray, H: np.ndarray,
                      g_t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """alpha = softmax(v . tanh(U1 h_i + U2 g_t)); row i of H' is alpha_i h_i."""
    if H.shape[1] != U1.shape[1] or g_t.shape[0] != U2.shape[1]:
        raise ValueError("trigger attention width mismatch")
    Z = np.tanh(H @ U1.T + U2 @ g_t)
    alpha = softmax(Z @ v)
    return alpha, alpha[:, None] * H


def trigger_attention_backward(U1, U2, v, H, g_t, alpha, dHp):
    """Returns (dH, dU1, dU2, dv); g_t is treated as a constant."""
    Z = np.tanh(H @ U1.T + U2 @ g_t)
    dH = alpha[:, None] * dHp
    dscores = softmax_backward(alpha, np.sum(dHp * H, axis=1))
    dv = dscores @ Z
    dA = np.outer(dscores, v) * (1.0 - Z * Z)
    dU1 = dA.T @ H
    dU2 = np.outer(dA.sum(axis=0), g_t)
    dH += dA @ U1
    return dH, dU1, dU2, dv


def concat_features(H: np.ndarray, Hp: np.ndarray) -> np.ndarray:
    if H.shape != Hp.shape:
        raise ValueError(f"cannot concatenate {H.shape} with {Hp.shape}")
    return np.hstack([H, Hp])


# ---------------------------------------------------------------------------
# linear-chain CRF; T is (K+2, K+2) with START = K and STOP = K+1

def _check(E: np.ndarray, T: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    E = np.ascontiguousarray(E, dtype=np.float64)
    T = np.ascontiguousarray(T, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1:
        raise ValueError("emissions must be a non-empty L x K matrix")
    if T.shape != (E.shape[1] + 2, E.shape[1] + 2):
        raise ValueError(f"transitions {T.shape} do not match {E.shape[1]} tags")
    check_finite("emissions", E)
    return E, T


def crf_path_score(E: np.ndarray, T: np.ndarray, path: Sequence[int]) -> float:
    L, K = E.shape
    path = [int(y) for y in path]
    if len(path) != L or any(not 0 <= y < K for y in path):
        raise ValueError("invalid tag path")
    s = T[K, path[0]] + T[path[-1], K + 1]
    for t, y in enumerate(path):
        s += E[t, y]
        if t:
            s += T[path[t - 1], y]
    return float(s)


def crf_log_partition(E: np.ndarray, T: np.ndarray) -> float:
    E, T = _check(E, T)
    return float(kernels.forward(E, T)[1])


def crf_marginals(E: np.ndarray, T: np.ndarray):
    """(log Z, node marginals L x K, expected transition counts (K+2) x (K+2))."""
    E, T = _check(E, T)
    L, K = E.shape
    alpha, logz = kernels.forward(E, T)
    beta = kernels.backward(E, T)
    node = np.exp(alpha + beta - logz)
    counts = np.zeros_like(T)
    counts[K, :K] = node[0]
    counts[:K, K + 1] = node[L - 1]
    if L > 1:
        pair = (alpha[:-1, :, None] + T[None, :K, :K]
                + (E[1:] + beta[1:])[:, None, :] - logz)
        counts[:K, :K] = np.exp(pair).sum(axis=0)
    return float(logz), node, counts


def crf_nll(E: np.ndarray, T: np.ndarray, gold: Sequence[int]) -> float:
    return crf_log_partition(E, T) - crf_path_score(E, T, gold)


def crf_nll_grad(E: np.ndarray, T: np.ndarray, gold: Sequence[int]):
    """(nll, dE, dT)."""
    logz, node, counts = crf_marginals(E, T)
    L, K = E.shape
    nll = logz - crf_path_score(E, T, gold)
    dE = node.copy()
    dT = counts
    dE[np.arange(L), gold] -= 1.0
    dT[K, gold[0]] -= 1.0
    dT[gold[-1], K + 1] -= 1.0
    for t in range(1, L):
        dT[gold[t - 1], gold[t]] -= 1.0
    return nll, dE, dT


def crf_viterbi(E: np.ndarray, T: np.ndarray, allowed: Optional[np.ndarray] = None):
    """Best path and its score; ties resolve toward the lower tag id."""
    E, T = _check(E, T)
    if allowed is not None:
        T = np.where(allowed, T, -np.inf)
    path, score = kernels.viterbi(E, T)
    return [int(y) for y in path], float(score)


# ---------------------------------------------------------------------------
# tags

class TagSet:
    def __init__(self, classes: Sequence[str]):
        self.classes = sorted(set(classes))
        self.tags = ["O"] + [f"{p}-{c}" for c in self.classes for p in "BIES"]
        self.index = {t: i for i, t in enumerate(self.tags)}

    def __len__(self) -> int:
        return len(self.tags)

    def encode(self, tags: Sequence[str]) -> List[int]:
        try:
            return [self.index[t] for t in tags]
        except KeyError as exc:
            raise ValueError(f"unknown tag {exc.args[0]!r}") from None

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tags[i] for i in ids]

    def allowed_transitions(self) -> np.ndarray:
        """Boolean (K+2, K+2) mask of BIOES-legal moves, START/STOP included."""
        names = self.tags + ["<start>", "<stop>"]
        ok = np.zeros((len(names), len(names)), dtype=bool)
        for i, a in enumerate(names):
            for j, b in enumerate(names):
                if a == "<stop>" or b == "<start>" or (a == "<start>" and b == "<stop>"):
                    continue
                ok[i, j] = _legal(a, b)
        return ok


def _legal(a: str, b: str) -> bool:
    open_a = a[0] in "BI" and a != "<start>"
    if b == "<stop>":
        return not open_a
    if open_a:
        return b[0] in "IE" and b[2:] == a[2:]
    return b == "O" or b[0] in "BS"


# ---------------------------------------------------------------------------
# network

@dataclass
class NERConfig:
    hidden: int = 100
    attn: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    dropout: float = 0.5
    clip: Optional[float] = 5.0
    seed: int = 0
    mode: str = "separate"
    trigger_attention: bool = True
    constrained_decode: bool = False

    def __post_init__(self):
        if self.mode not in ("separate", "merge"):
            raise ValueError(f"mode must be 'separate' or 'merge', not {self.mode!r}")


class EntityRecognizer:
    """In ``separate`` mode the encoder is owned here (``enc.*``); in ``merge``
    mode the frozen matcher encoder is reused and only the attention, emission
    and CRF parameters are trained."""

    def __init__(self, tagset: TagSet, emb_dim: int, hidden: int, attn: int, width: int,
                 mode: str = "separate", seed: int = 0, use_trigger_attention: bool = True):
        if mode == "separate" and 2 * hidden != width:
            raise ValueError(
                f"recognizer encoder width {2 * hidden} must equal matcher width {width}")
        self.tagset = tagset
        self.emb_dim, self.hidden, self.attn, self.width = emb_dim, hidden, attn, width
        self.mode = mode
        self.use_trigger_attention = use_trigger_attention
        self.shared_encoder: Optional[TriggerMatcher] = None
        K = len(tagset)
        d = width
        self.store = ParamStore(seed)
        if mode == "separate":
            add_bilstm_params(self.store, "enc", emb_dim, hidden)
        self.store.add("tatt.U1", (attn, d), fan_in=d)
        self.store.add("tatt.U2", (attn, d), fan_in=d)
        self.store.add("tatt.v", (attn,), fan_in=attn)
        self.store.add("emit.W", (K, 2 * d), fan_in=2 * d)
        self.store.add("emit.b", (K,), zeros=True)
        self.store.add("crf.T", (K + 2, K + 2), zeros=True)

    def attach_matcher(self, matcher: TriggerMatcher) -> None:
        if self.mode == "merge":
            if matcher.width != self.width:
                raise ValueError("matcher width differs from recognizer width")
            self.shared_encoder = matcher

    def _encode(self, X):
        if self.mode == "separate":
            return bilstm_encode(self.store, "enc", X)
        if self.shared_encoder is None:
            raise RuntimeError("merge mode needs attach_matcher() before use")
        return self.shared_encoder.encode(X), None

    def emissions(self, X: np.ndarray, g_t: np.ndarray, rng=None, dropout: float = 0.0):
        p = self.store.params
        mask_x = dropout_mask(rng, X.shape, dropout)
        X_in = X * mask_x if mask_x is not None else X
        H_raw, enc_cache = self._encode(X_in)
        mask_h = dropout_mask(rng, H_raw.shape, dropout)
        H = H_raw * mask_h if mask_h is not None else H_raw
        if self.use_trigger_attention:
            alpha, Hp = trigger_attention(p["tatt.U1"], p["tatt.U2"], p["tatt.v"], H, g_t)
        else:
            alpha, Hp = None, np.zeros_like(H)
        F = concat_features(H, Hp)
        E = F @ p["emit.W"].T + p["emit.b"]
        cache = (H, alpha, F, enc_cache, mask_h, g_t)
        return E, cache

    def loss(self, X, g_t, gold: Sequence[int], rng=None, dropout: float = 0.0,
             backward: bool = True) -> float:
        p, g = self.store.params, self.store.grads
        E, (H, alpha, F, enc_cache, mask_h, g_t) = self.emissions(X, g_t, rng, dropout)
        nll, dE, dT = crf_nll_grad(E, p["crf.T"], gold)
        if not backward:
            return nll
        g["crf.T"] += dT
        g["emit.W"] += dE.T @ F
        g["emit.b"] += dE.sum(axis=0)
        dF = dE @ p["emit.W"]
        d = H.shape[1]
        dH = dF[:, :d].copy()
        if self.use_trigger_attention:
            dH2, dU1, dU2, dv = trigger_attention_backward(
                p["tatt.U1"], p["tatt.U2"], p["tatt.v"], H, g_t, alpha, dF[:, d:])
            dH += dH2
            g["tatt.U1"] += dU1
            g["tatt.U2"] += dU2
            g["tatt.v"] += dv
        if self.mode == "separate":
            if mask_h is not None:
                dH = dH * mask_h
            bilstm_backward(self.store, "enc", enc_cache, dH)
        return nll

    def decode(self, X: np.ndarray, g_t: np.ndarray, constrained: bool = False) -> List[int]:
        E, _ = self.emissions(X, g_t)
        allowed = self.tagset.allowed_transitions() if constrained else None
        return crf_viterbi(E, self.store["crf.T"], allowed)[0]

    def save(self, path, meta: Optional[dict] = None) -> None:
        header = {
            "classes": self.tagset.classes, "emb_dim": self.emb_dim, "hidden": self.hidden,
            "attn": self.attn, "width": self.width, "mode": self.mode,
            "use_trigger_attention": self.use_trigger_attention,
        }
        header.update(meta or {})
        self.store.save(path, meta=header)

    @classmethod
    def load(cls, path, matcher: Optional[TriggerMatcher] = None):
        store, meta = ParamStore.load(path)
        obj = cls.__new__(cls)
        obj.tagset = TagSet(meta["classes"])
        obj.emb_dim, obj.hidden, obj.attn = meta["emb_dim"], meta["hidden"], meta["attn"]
        obj.width, obj.mode = meta["width"], meta["mode"]
        obj.use_trigger_attention = meta["use_trigger_attention"]
        obj.shared_encoder = None
        obj.store = store
        if matcher is not None:
            obj.attach_matcher(matcher)
        return obj, meta


def gold_trigger_query(matcher: TriggerMatcher, X: np.ndarray, inst: TrainingInstance) -> np.ndarray:
    """g_t from the gold triggers; the zero vector when there are none."""
    if inst.kept_mention is None or not inst.triggers:
        return np.zeros(matcher.width)
    return matcher.trigger_repr(X, inst.trigger_indices)


@dataclass
class NERHistory:
    loss: List[float] = field(default_factory=list)


def train_ner(instances: Sequence[TrainingInstance], matcher: TriggerMatcher,
              embeddings: EmbeddingTable, config: NERConfig = NERConfig(),
              classes: Optional[Sequence[str]] = None) -> Tuple[EntityRecognizer, NERHistory]:
    """Minimise mean CRF NLL with the matcher frozen.

    Raises FrozenMatcherError if the matcher's parameters change or receive
    gradient during training.
    """
    if not instances:
        raise ValueError("no training instances")
    before = matcher.store.digest()
    grads_before = {k: g.copy() for k, g in matcher.store.grads.items()}
    if classes is None:
        classes = sorted({i.kept_mention.label for i in instances if i.kept_mention is not None})
    tagset = TagSet(classes)
    rec = EntityRecognizer(tagset, embeddings.dim, config.hidden, config.attn, matcher.width,
                           config.mode, config.seed, config.trigger_attention)
    rec.attach_matcher(matcher)
    data = []
    for inst in instances:
        X = embeddings.embed(inst.tokens)
        data.append((X, gold_trigger_query(matcher, X, inst), tagset.encode(inst.entity_tags)))
    rng = np.random.default_rng(config.seed + 2)
    opt = Adam(rec.store, lr=config.lr, clip=config.clip)
    history = NERHistory()
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for b in range(0, len(order), config.batch_size):
            idx = order[b:b + config.batch_size]
            rec.store.zero_grad()
            for k in idx:
                X, g_t, gold = data[k]
                total += rec.loss(X, g_t, gold, rng if config.dropout > 0 else None, config.dropout)
            rec.store.scale_grads(1.0 / len(idx))
            opt.step()
        history.loss.append(total / len(data))
        log.info("ner epoch %d loss %.6f", epoch + 1, history.loss[-1])
    if any(not np.array_equal(gr, grads_before[k]) for k, gr in matcher.store.grads.items()):
        raise FrozenMatcherError("matcher received gradient while training the recognizer")
    if matcher.store.digest() != before:
        raise FrozenMatcherError("matcher parameters changed while training the recognizer")
    return rec, history


def predict(words: Sequence[str], matcher: TriggerMatcher, prototype: PrototypeTable,
            recognizer: EntityRecognizer, embeddings: EmbeddingTable,
            constrained: bool = False) -> List[EntityMention]:
    tags = predict_tags(words, matcher, prototype, recognizer, embeddings, constrained)
    return spans_from_tags(tags, "bioes")


def predict_tags(words: Sequence[str], matcher: TriggerMatcher, prototype: PrototypeTable,
                 recognizer: EntityRecognizer, embeddings: EmbeddingTable,
                 constrained: bool = False) -> List[str]:
    X = embeddings.embed(words)
    g_t = retrieve(prototype, matcher.sentence_repr(X))
    return recognizer.tagset.decode(recognizer.decode(X, g_t, constrained))
