"""Unsupervised anomaly detection over session telemetry.

Two detectors share one interface: an isolation forest and a principal
component reconstruction-error model.  Both map a FeatureVector to a score
in [0, 1] where higher means more anomalous.  :func:`evade` is the matching
black-box attack that nudges an attack vector toward lower scores.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Any, Sequence, Union

import numpy as np

from .bb84.session import Telemetry

FEATURES = (
    "qber", "sift_ratio", "gain_signal", "gain_decoy", "gain_vacuum",
    "basis_click_asymmetry", "dark_rate", "timing_variance",
)
DIM = len(FEATURES)
MIN_BASELINE = 64
BLOB_MAGIC = b"QRTD"
BLOB_VERSION = 1
EULER_GAMMA = 0.5772156649015329


class InsufficientBaseline(ValueError):
    pass


class DetectorKind(str, Enum):
    FOREST = "forest"
    PCA = "pca"


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if arr.size != DIM:
            raise ValueError(f"feature vector must have {DIM} entries, got {arr.size}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_telemetry(cls, t: Telemetry) -> FeatureVector:
        rect, diag = t.per_basis_click_rate
        return cls(np.array([
            0.0 if t.qber_estimate is None else t.qber_estimate,
            t.sift_ratio,
            t.gain_per_intensity.get("signal", 0.0),
            t.gain_per_intensity.get("decoy", 0.0),
            t.gain_per_intensity.get("vacuum", 0.0),
            abs(rect - diag),
            t.dark_rate_estimate,
            t.timing_variance,
        ]))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURES, self.values.tolist()))


def _matrix(vectors: Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors).astype(np.float64)
    return np.stack([v.values for v in vectors]) if len(vectors) else np.zeros((0, DIM))


def _frozen(a) -> np.ndarray:
    arr = np.array(a)
    arr.flags.writeable = False
    return arr


def harmonic(i: int) -> float:
    if i <= 0:
        return 0.0
    if i <= 4096:
        return float(np.sum(1.0 / np.arange(1, i + 1)))
    return math.log(i) + EULER_GAMMA + 1.0 / (2 * i)


def c_factor(n: int) -> float:
    """Average unsuccessful-search path length in a BST of ``n`` points."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


# -- isolation forest --------------------------------------------------------


@dataclass(frozen=True)
class IsolationTree:
    """Flat node arrays.  Leaves have ``feature == -1`` and carry ``size``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        depth = np.zeros(len(X))
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] < self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            depth[idx] += 1
            active = self.feature[node] >= 0
        return depth + np.array([c_factor(int(s)) for s in self.size[node]])


def _grow_tree(X: np.ndarray, max_depth: int, rng: np.random.Generator) -> IsolationTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    size: list[int] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(X)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        size[node] = len(rows)
        if depth >= max_depth or len(rows) <= 1:
            continue
        sub = X[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        q = int(splittable[rng.integers(0, splittable.size)])
        p = float(rng.uniform(lo[q], hi[q]))
        if p <= lo[q]:
            p = float(np.nextafter(lo[q], hi[q]))
        mask = sub[:, q] < p
        feature[node], threshold[node] = q, p
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], rows[~mask], depth + 1))
        stack.append((left[node], rows[mask], depth + 1))
    return IsolationTree(
        _frozen(np.array(feature, dtype=np.int32)), _frozen(np.array(threshold)),
        _frozen(np.array(left, dtype=np.int32)), _frozen(np.array(right, dtype=np.int32)),
        _frozen(np.array(size, dtype=np.int32)),
    )


@dataclass(frozen=True)
class ForestModel:
    n_trees: int
    subsample_size: int
    trees: tuple[IsolationTree, ...]
    center: np.ndarray
    scale: np.ndarray

    @property
    def c_n(self) -> float:
        return c_factor(self.subsample_size)

    @cached_property
    def _packed(self) -> tuple[np.ndarray, ...]:
        """All trees padded into (n_trees, max_nodes) arrays for joint traversal."""
        width = max(len(t.feature) for t in self.trees)

        def stack(get, fill, dtype) -> np.ndarray:
            out = np.full((len(self.trees), width), fill, dtype=dtype)
            for i, t in enumerate(self.trees):
                v = get(t)
                out[i, : len(v)] = v
            return out

        leaf_c = stack(lambda t: [c_factor(int(s)) for s in t.size], 0.0, np.float64)
        return (
            stack(lambda t: t.feature, -1, np.int64), stack(lambda t: t.threshold, 0.0, np.float64),
            stack(lambda t: t.left, 0, np.int64), stack(lambda t: t.right, 0, np.int64), leaf_c,
        )

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        feature, threshold, left, right, leaf_c = self._packed
        trees = np.arange(len(self.trees))[:, None]
        cols = np.arange(len(X))[None, :]
        node = np.zeros((len(self.trees), len(X)), dtype=np.int64)
        depth = np.zeros(node.shape)
        feat = feature[trees, node]
        active = feat >= 0
        while active.any():
            go_left = X[cols, np.where(active, feat, 0)] < threshold[trees, node]
            step = np.where(go_left, left[trees, node], right[trees, node])
            node = np.where(active, step, node)
            depth += active
            feat = feature[trees, node]
            active = feat >= 0
        mean_path = np.mean(depth + leaf_c[trees, node], axis=0)
        return np.power(2.0, -mean_path / self.c_n)


# -- principal components ----------------------------------------------------


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    std: np.ndarray
    components: np.ndarray
    threshold: float

    @property
    def center(self) -> np.ndarray:
        return self.mean

    @property
    def scale(self) -> np.ndarray:
        return self.std

    def reconstruction_error(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.mean) / self.std
        proj = Z @ self.components.T @ self.components if len(self.components) else np.zeros_like(Z)
        return np.sum((Z - proj) ** 2, axis=1)

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        err = self.reconstruction_error(X)
        with np.errstate(invalid="ignore"):
            s = err / (err + self.threshold)
        return np.where(np.isfinite(s), s, 1.0)


DetectorModel = Union[ForestModel, PcaModel]


def fit(
    benign: Sequence[FeatureVector] | np.ndarray,
    kind: DetectorKind | str,
    rng: np.random.Generator,
    params: dict[str, Any] | None = None,
) -> DetectorModel:
    params = dict(params or {})
    X = _matrix(benign)
    if len(X) < MIN_BASELINE:
        raise InsufficientBaseline(f"need at least {MIN_BASELINE} benign vectors, got {len(X)}")
    if not np.isfinite(X).all():
        raise ValueError("benign vectors must be finite")
    center = _frozen(X.mean(axis=0))
    std = X.std(axis=0)
    scale = _frozen(np.where(std > 0, std, 1.0))
    kind = DetectorKind(kind)
    if kind is DetectorKind.FOREST:
        n_trees = int(params.pop("n_trees", 100))
        sub = int(min(params.pop("subsample_size", 256), len(X)))
        _reject_extra(params)
        depth = math.ceil(math.log2(sub)) if sub > 1 else 0
        trees = []
        for _ in range(n_trees):
            rows = rng.choice(len(X), size=sub, replace=False)
            trees.append(_grow_tree(X[rows], depth, rng))
        return ForestModel(n_trees, sub, tuple(trees), center, scale)
    retained = float(params.pop("variance_retained", 0.95))
    sigmas = float(params.pop("threshold_sigma", 3.0))
    _reject_extra(params)
    Z = (X - center) / scale
    _, sv, vt = np.linalg.svd(Z, full_matrices=False)
    var = sv**2
    total = var.sum()
    if total > 0:
        k = int(np.searchsorted(np.cumsum(var) / total, retained - 1e-12) + 1)
    else:
        k = 0
    comps = _frozen(vt[:k])
    proto = PcaModel(center, scale, comps, 1.0)
    err = proto.reconstruction_error(X)
    thr = float(err.mean() + sigmas * err.std())
    return PcaModel(center, scale, comps, thr if thr > 0 else np.finfo(float).tiny)


def _reject_extra(params: dict[str, Any]) -> None:
    if params:
        raise ValueError(f"unknown detector params: {sorted(params)}")


def score(model: DetectorModel, v: FeatureVector | np.ndarray) -> float:
    x = v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64)
    return float(model.score_matrix(x.reshape(1, -1))[0])


def score_many(model: DetectorModel, vectors) -> np.ndarray:
    return model.score_matrix(_matrix(vectors))


@dataclass(frozen=True)
class Benign:
    score: float


@dataclass(frozen=True)
class Anomalous:
    score: float


def detect(model: DetectorModel, v: FeatureVector, alert_threshold: float) -> Benign | Anomalous:
    if not 0 < alert_threshold <= 1:
        raise ValueError("alert_threshold must be in (0, 1]")
    s = score(model, v)
    return Anomalous(s) if s >= alert_threshold else Benign(s)


def calibrate_threshold(model: DetectorModel, held_out, fpr: float = 0.05) -> float:
    """Smallest threshold leaving at most ``floor(fpr * n)`` held-out alerts."""
    scores = np.sort(score_many(model, held_out))[::-1]
    if scores.size == 0:
        raise InsufficientBaseline("no held-out vectors")
    allowed = int(math.floor(fpr * scores.size))
    if allowed >= scores.size:
        return float(np.nextafter(0.0, 1.0))
    return float(min(np.nextafter(scores[allowed], np.inf), 1.0))


# -- evasion -----------------------------------------------------------------


@dataclass(frozen=True)
class EvasionResult:
    vector: FeatureVector
    score: float
    initial_score: float
    evaluations: int


def evade(
    model: DetectorModel,
    v_attack: FeatureVector,
    budget: Sequence[float] | float,
    iters: int = 50,
    rng: np.random.Generator | None = None,
) -> EvasionResult:
    """Black-box coordinate descent inside an L-infinity box around the input.

    Each sweep visits the features in a seeded order and tries steps of
    ``scale * 2**k`` in both directions plus a jump to the baseline centre,
    each clipped to the budget box, keeping the best strict improvement.
    """
    rng = rng or np.random.default_rng(0)
    x0 = v_attack.values.copy()
    b = np.broadcast_to(np.asarray(budget, dtype=np.float64), (DIM,))
    if (b < 0).any():
        raise ValueError("budget must be non-negative")
    lo, hi = x0 - b, x0 + b
    x = x0.copy()
    best = initial = score(model, x)
    evals = 1
    steps = np.array([2.0**k for k in range(3, -8, -1)])
    for _ in range(iters):
        improved = False
        for j in rng.permutation(DIM):
            if b[j] == 0:
                continue
            cands = np.concatenate([x[j] + model.scale[j] * steps, x[j] - model.scale[j] * steps, [model.center[j]]])
            cands = np.unique(np.clip(cands, lo[j], hi[j]))
            cands = cands[cands != x[j]]
            if cands.size == 0:
                continue
            trial = np.repeat(x[None, :], cands.size, axis=0)
            trial[:, j] = cands
            s = model.score_matrix(trial)
            evals += cands.size
            k = int(np.argmin(s))
            if s[k] < best:
                best, x = float(s[k]), trial[k]
                improved = True
        if not improved:
            break
    return EvasionResult(FeatureVector(x), best, initial, evals)


def attack_success_rate(model: DetectorModel, vectors, budget, threshold: float, iters: int = 50, seed: int = 0) -> float:
    if not len(vectors):
        return 0.0
    hits = sum(
        evade(model, v, budget, iters, np.random.default_rng([seed, i])).score < threshold
        for i, v in enumerate(vectors)
    )
    return hits / len(vectors)


# -- serialization -----------------------------------------------------------


def _f8(a) -> bytes:
    return np.asarray(a, dtype=">f8").tobytes()


def _i4(a) -> bytes:
    return np.asarray(a, dtype=">i4").tobytes()


def to_blob(model: DetectorModel) -> bytes:
    """Versioned big-endian encoding; the digest is taken over these bytes."""
    out = bytearray(BLOB_MAGIC) + struct.pack(">B", BLOB_VERSION)
    if isinstance(model, ForestModel):
        out += struct.pack(">BIII", 0, model.n_trees, model.subsample_size, DIM)
        out += _f8(model.center) + _f8(model.scale)
        for t in model.trees:
            out += struct.pack(">I", len(t.feature))
            out += _i4(t.feature) + _f8(t.threshold) + _i4(t.left) + _i4(t.right) + _i4(t.size)
    else:
        out += struct.pack(">BII", 1, len(model.components), DIM)
        out += _f8(model.mean) + _f8(model.std) + _f8(model.components) + _f8([model.threshold])
    return bytes(out)


def from_blob(data: bytes) -> DetectorModel:
    if data[:4] != BLOB_MAGIC:
        raise ValueError("not a detector blob")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        s = struct.Struct(fmt)
        vals = s.unpack_from(data, pos)
        pos += s.size
        return vals

    def arr(dtype: str, count: int) -> np.ndarray:
        nonlocal pos
        width = np.dtype(dtype).itemsize * count
        if pos + width > len(data):
            raise ValueError("truncated detector blob")
        a = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(dtype[1:])
        pos += width
        return _frozen(a)

    (version,) = take(">B")
    if version != BLOB_VERSION:
        raise ValueError(f"unsupported blob version {version}")
    (kind,) = take(">B")
    if kind == 0:
        n_trees, sub, dim = take(">III")
        center, scale = arr(">f8", dim), arr(">f8", dim)
        trees = []
        for _ in range(n_trees):
            (n,) = take(">I")
            trees.append(IsolationTree(arr(">i4", n), arr(">f8", n), arr(">i4", n), arr(">i4", n), arr(">i4", n)))
        model: DetectorModel = ForestModel(n_trees, sub, tuple(trees), center, scale)
    elif kind == 1:
        k, dim = take(">II")
        mean, std = arr(">f8", dim), arr(">f8", dim)
        comps = _frozen(arr(">f8", k * dim).reshape(k, dim))
        (thr,) = arr(">f8", 1).tolist()
        model = PcaModel(mean, std, comps, thr)
    else:
        raise ValueError(f"unknown detector kind {kind}")
    if pos != len(data):
        raise ValueError("trailing bytes in detector blob")
    return model


def model_digest(model: DetectorModel) -> str:
    return hashlib.sha256(to_blob(model)).hexdigest()
