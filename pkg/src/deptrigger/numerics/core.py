"""Parameter storage, elementwise ops, the Adam update and a gradient checker."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np


class NonFiniteError(ValueError):
    pass


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name}")


def softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = np.exp(v - np.max(v))
    return z / z.sum()


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the logits given the softmax output ``p``."""
    return p * (dp - np.dot(p, dp))


def logsumexp(v: np.ndarray, axis=None):
    v = np.asarray(v, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dropout_mask(rng: Optional[np.random.Generator], shape, rate: float) -> Optional[np.ndarray]:
    """Inverted-dropout mask, or None when dropout is inactive."""
    if rng is None or rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


class ParamStore:
    """Named float64 parameters, each paired with a gradient buffer.

    Weights are drawn from U(-sqrt(1/fan_in), sqrt(1/fan_in)); biases start at zero.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, shape, fan_in: Optional[int] = None, zeros: bool = False) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(shape)
        if zeros:
            value = np.zeros(shape)
        else:
            fan_in = fan_in if fan_in is not None else shape[-1]
            bound = math.sqrt(1.0 / fan_in)
            value = self.rng.uniform(-bound, bound, size=shape)
        self.params[name] = value
        self.grads[name] = np.zeros(shape)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: str = "") -> List[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def scale_grads(self, factor: float) -> None:
        for g in self.grads.values():
            g *= factor

    def n_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            p = np.ascontiguousarray(self.params[name], dtype=np.float64)
            h.update(name.encode())
            h.update(str(p.shape).encode())
            h.update(p.tobytes())
        return h.hexdigest()

    def copy(self) -> "ParamStore":
        other = ParamStore(self.seed)
        for name, p in self.params.items():
            other.params[name] = p.copy()
            other.grads[name] = np.zeros_like(p)
        return other

    def save(self, path, meta: Optional[dict] = None) -> None:
        """Write an npz checkpoint; ``meta`` is stored as a JSON string."""
        arrays = {f"param:{k}": v for k, v in self.params.items()}
        header = {"seed": self.seed, "order": list(self.params), "meta": meta or {}}
        arrays["__meta__"] = np.array(json.dumps(header, sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "tuple[ParamStore, dict]":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["__meta__"]))
            store = cls(header["seed"])
            for name in header["order"]:
                value = np.array(data[f"param:{name}"], dtype=np.float64)
                store.params[name] = value
                store.grads[name] = np.zeros_like(value)
        return store, header["meta"]


class Adam:
    """Bias-corrected first/second moment update applied in place."""

    def __init__(self, store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip: Optional[float] = None,
                 names: Optional[Iterable[str]] = None):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip = clip
        self.names = list(names) if names is not None else list(store.params)
        self.m = {n: np.zeros_like(store.params[n]) for n in self.names}
        self.v = {n: np.zeros_like(store.params[n]) for n in self.names}
        self.t = 0

    def step(self) -> None:
        grads = self.store.grads
        for n in self.names:
            if not np.all(np.isfinite(grads[n])):
                raise NonFiniteError(f"non-finite gradient for parameter {n!r}")
        scale = 1.0
        if self.clip is not None:
            norm = math.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in self.names))
            if norm > self.clip:
                scale = self.clip / norm
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for n in self.names:
            g = grads[n] * scale
            m, v = self.m[n], self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.store.params[n] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class GradCheckEntry:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    tol: float
    entries: List[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.rel_error <= self.tol for e in self.entries)

    def failures(self) -> List[GradCheckEntry]:
        return [e for e in self.entries if e.rel_error > self.tol]


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    # the floor keeps near-zero gradients from turning round-off into huge ratios
    return abs(a - b) / max(abs(a) + abs(b), floor)


def grad_check(f: Callable[[ParamStore], float], store: ParamStore,
               analytic: Dict[str, np.ndarray], eps: float = 1e-5, tol: float = 1e-4,
               coords_per_tensor: Optional[int] = None, seed: int = 0,
               names: Optional[Iterable[str]] = None) -> GradCheckReport:
    """Compare ``analytic`` gradients with central differences of ``f``.

    ``coords_per_tensor=None`` checks every entry; otherwise that many entries
    are sampled (without replacement) from each tensor.
    """
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name in (names if names is not None else analytic):
        p = store.params[name]
        flat = p.reshape(-1)
        if coords_per_tensor is None or coords_per_tensor >= flat.size:
            picks = np.arange(flat.size)
        else:
            picks = np.sort(rng.choice(flat.size, size=coords_per_tensor, replace=False))
        for k in picks:
            k = int(k)
            orig = flat[k]
            flat[k] = orig + eps
            up = f(store)
            flat[k] = orig - eps
            down = f(store)
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NonFiniteError(f"objective not finite while perturbing {name}")
            num = (up - down) / (2.0 * eps)
            ana = float(analytic[name].reshape(-1)[k])
            report.entries.append(GradCheckEntry(
                name, np.unravel_index(k, p.shape), ana, num, relative_error(ana, num)))
    return report
