"""Factorized predicate recognition with an object-conditioned hard mask.

Three independent one-hidden-layer classifiers score every predicate from the
behavior, motion and semantic features. Their sigmoid outputs are multiplied by
a binary mask row selected by the object category, then averaged. Training
minimises the summed binary cross entropy by plain mini-batch gradient descent
with hand-written gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .features import FeatureBundle
from .geometry import Trajectory, TrajectorySpan
from .pairing import CandidateSegment

EPS = 1e-7
FEATURE_TYPES = ("A", "M", "S")


@dataclass(frozen=True)
class LabelSpace:
    objects: tuple[str, ...]
    predicates: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "predicates", tuple(self.predicates))
        for name, seq in (("objects", self.objects), ("predicates", self.predicates)):
            if not seq:
                raise ValueError(f"label space needs at least one entry in {name}")
            if len(set(seq)) != len(seq):
                raise ValueError(f"duplicate entries in {name}")

    def object_index(self, name: str) -> int:
        try:
            return self.objects.index(name)
        except ValueError:
            raise KeyError(f"object category {name!r} not in label space") from None

    def predicate_index(self, name: str) -> int:
        try:
            return self.predicates.index(name)
        except ValueError:
            raise KeyError(f"predicate {name!r} not in label space") from None


@dataclass
class HoiInstance:
    video: str
    predicate: str
    object_category: str
    subject: Trajectory
    object: Trajectory
    score: float

    def __post_init__(self):
        if self.subject.span != self.object.span:
            raise ValueError("subject and object trajectories must share the instance span")

    @property
    def span(self) -> TrajectorySpan:
        return self.subject.span

    @property
    def label(self) -> tuple[str, str]:
        return self.predicate, self.object_category


def instance_sort_key(inst: HoiInstance):
    return -inst.score, inst.predicate, inst.object_category, inst.span.begin


def build_mask(annotations: Iterable[tuple[str, str]], labels: LabelSpace) -> np.ndarray:
    """``mask[ω, φ] = 1`` iff predicate ``φ`` co-occurs with object ``ω`` in the annotations."""
    mask = np.zeros((len(labels.objects), len(labels.predicates)), dtype=np.uint8)
    for predicate, obj in annotations:
        mask[labels.object_index(obj), labels.predicate_index(predicate)] = 1
    return mask


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def bce_loss(logits, gamma, mask, eps: float = EPS) -> float:
    """Summed binary cross entropy over feature types and unmasked predicates.

    ``logits`` maps feature type to an array whose trailing axis is the
    predicate axis; ``gamma`` and ``mask`` broadcast against it.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if np.any((gamma > 0) & (mask == 0)):
        raise ValueError("positive target at a masked predicate")
    total = 0.0
    for z in logits.values():
        p = np.clip(sigmoid(z), eps, 1 - eps)
        total -= float(np.sum(mask * (gamma * np.log(p) + (1 - gamma) * np.log(1 - p))))
    return total


def bce_grad(z, gamma, mask, eps: float = EPS) -> np.ndarray:
    """Gradient of one feature type's loss term with respect to its logits."""
    p = sigmoid(z)
    live = (p > eps) & (p < 1 - eps)
    return np.where(live, p - gamma, 0.0) * mask


def fuse_scores(*scores) -> np.ndarray:
    """Late fusion: element-wise mean of the per-feature probabilities."""
    return np.mean(np.stack([np.asarray(s, dtype=np.float64) for s in scores]), axis=0)


class Head:
    """One hidden ReLU layer followed by a linear logit layer."""

    def __init__(self, W1, b1, W2, b2, mean=None, scale=None):
        self.W1, self.b1, self.W2, self.b2 = W1, b1, W2, b2
        d_in = W1.shape[0]
        self.mean = np.zeros(d_in) if mean is None else mean
        self.scale = np.ones(d_in) if scale is None else scale

    @classmethod
    def init(cls, d_in: int, hidden: int, d_out: int, rng: np.random.Generator) -> "Head":
        lim1, lim2 = 1 / np.sqrt(d_in), 1 / np.sqrt(hidden)
        return cls(rng.uniform(-lim1, lim1, (d_in, hidden)), rng.uniform(-lim1, lim1, hidden),
                   rng.uniform(-lim2, lim2, (hidden, d_out)), rng.uniform(-lim2, lim2, d_out))

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def normalize(self, X):
        return (X - self.mean) / self.scale

    def forward(self, X):
        Xn = self.normalize(X)
        pre = Xn @ self.W1 + self.b1
        act = np.maximum(pre, 0.0)
        return act @ self.W2 + self.b2, (Xn, pre, act)

    def backward(self, cache, dz) -> dict[str, np.ndarray]:
        Xn, pre, act = cache
        dact = (dz @ self.W2.T) * (pre > 0)
        return {"W1": Xn.T @ dact, "b1": dact.sum(axis=0), "W2": act.T @ dz, "b2": dz.sum(axis=0)}


class FactorizedPredicateClassifier(ClassifierMixin, BaseEstimator):
    """Multi-label predicate classifier over concatenated ``[f_A | f_M | f_S]`` rows.

    ``block_dims`` gives the widths of the three feature blocks. The ablation
    switches drop the behavior block (``use_behavior``), replace the mask by
    ones (``use_mask``), train a single classifier on the concatenated features
    (``late_fusion=False``), or classify joint ⟨predicate, object⟩ labels
    without object conditioning (``factorized=False``).
    """

    def __init__(self, predicates=(), objects=(), block_dims=(0, 15, 0), hidden=64, learning_rate=0.2,
                 epochs=200, batch_size=32, seed=0, use_behavior=True, use_mask=True, late_fusion=True,
                 factorized=True):
        self.predicates = predicates
        self.objects = objects
        self.block_dims = block_dims
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.use_behavior = use_behavior
        self.use_mask = use_mask
        self.late_fusion = late_fusion
        self.factorized = factorized

    # layout helpers

    @property
    def labels(self) -> LabelSpace:
        return LabelSpace(tuple(self.objects), tuple(self.predicates))

    def _groups(self) -> dict[str, np.ndarray]:
        dA, dM, dS = (int(d) for d in self.block_dims)
        blocks = {"A": np.arange(0, dA), "M": np.arange(dA, dA + dM), "S": np.arange(dA + dM, dA + dM + dS)}
        used = [t for t in FEATURE_TYPES if len(blocks[t]) and (t != "A" or self.use_behavior)]
        if not used:
            raise ValueError("no feature block left to classify")
        if self.late_fusion:
            return {t: blocks[t] for t in used}
        return {"".join(used): np.concatenate([blocks[t] for t in used])}

    def _n_outputs(self) -> int:
        n = len(self.predicates)
        return n if self.factorized else n * len(self.objects)

    def _object_idx(self, objects, n) -> np.ndarray:
        labels = self.labels
        idx = np.array([labels.object_index(o) for o in objects], dtype=np.int64)
        if idx.shape != (n,):
            raise ValueError("need one object category per row")
        return idx

    def _mask_rows(self, obj_idx) -> np.ndarray:
        if self.factorized:
            return self.mask_[obj_idx].astype(np.float64)
        return np.ones((len(obj_idx), self._n_outputs()))

    def _targets(self, Y, obj_idx) -> np.ndarray:
        if self.factorized:
            return Y
        n_pred = len(self.predicates)
        T = np.zeros((len(Y), self._n_outputs()))
        for r, o in enumerate(obj_idx):
            T[r, o * n_pred:(o + 1) * n_pred] = Y[r]
        return T

    def _check_X(self, X):
        X = check_array(X, dtype=np.float64)
        width = sum(int(d) for d in self.block_dims)
        if X.shape[1] != width:
            raise ValueError(f"expected {width} feature columns, got {X.shape[1]}")
        return X

    # training

    def loss(self, X, T, M) -> float:
        """Mean per-sample training loss on already-encoded targets and mask rows."""
        logits = {t: self.heads_[t].forward(X[:, cols])[0] for t, cols in self.groups_.items()}
        return bce_loss(logits, T, M) / len(X)

    def gradients(self, X, T, M) -> dict[str, dict[str, np.ndarray]]:
        """Analytic gradient of the summed (not averaged) loss for every head parameter."""
        grads = {}
        for t, cols in self.groups_.items():
            z, cache = self.heads_[t].forward(X[:, cols])
            grads[t] = self.heads_[t].backward(cache, bce_grad(z, T, M))
        return grads

    def _init_state(self, X, Y, objects):
        labels = self.labels
        obj_idx = self._object_idx(objects, len(X))
        if self.use_mask and self.factorized:
            positives = [(labels.predicates[p], labels.objects[o]) for o, row in zip(obj_idx, Y)
                         for p in np.flatnonzero(row)]
            self.mask_ = build_mask(positives, labels)
        else:
            self.mask_ = np.ones((len(labels.objects), len(labels.predicates)), dtype=np.uint8)
        self.groups_ = self._groups()
        rng = np.random.default_rng(self.seed)
        self.heads_ = {}
        for t, cols in self.groups_.items():
            head = Head.init(len(cols), self.hidden, self._n_outputs(), rng)
            head.mean = X[:, cols].mean(axis=0)
            scale = X[:, cols].std(axis=0)
            head.scale = np.where(scale > 1e-8, scale, 1.0)
            self.heads_[t] = head
        return obj_idx, rng

    def fit(self, X, Y, objects):
        X = self._check_X(X)
        Y = check_array(Y, dtype=np.float64)
        if len(X) == 0:
            raise ValueError("training needs at least one sample")
        if Y.shape != (len(X), len(self.predicates)):
            raise ValueError(f"targets must have shape ({len(X)}, {len(self.predicates)})")
        if not np.all((Y == 0) | (Y == 1)):
            raise ValueError("targets must be binary")
        obj_idx, rng = self._init_state(X, Y, objects)
        T, M = self._targets(Y, obj_idx), self._mask_rows(obj_idx)
        self.loss_curve_ = []
        for _ in range(int(self.epochs)):
            order = rng.permutation(len(X))
            for start in range(0, len(X), int(self.batch_size)):
                batch = order[start:start + int(self.batch_size)]
                grads = self.gradients(X[batch], T[batch], M[batch])
                step = self.learning_rate / len(batch)
                for t, g in grads.items():
                    for name, value in self.heads_[t].params.items():
                        value -= step * g[name]
            self.loss_curve_.append(self.loss(X, T, M))
        self.classes_ = np.array(self.predicates)
        return self

    # inference

    def predict_heads(self, X, objects) -> dict[str, np.ndarray]:
        """Masked per-feature-type probabilities, ``(n, outputs)`` each."""
        check_is_fitted(self, "heads_")
        X = self._check_X(X)
        M = self._mask_rows(self._object_idx(objects, len(X)))
        return {t: M * sigmoid(self.heads_[t].forward(X[:, cols])[0]) for t, cols in self.groups_.items()}

    def predict_proba(self, X, objects) -> np.ndarray:
        return fuse_scores(*self.predict_heads(X, objects).values())

    def predict(self, X, objects, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X, objects) >= threshold).astype(np.int64)

    def hoi_scores(self, X, objects) -> np.ndarray:
        """Scores laid out as ``(n, |objects|, |predicates|)``.

        With factorization only the row of each sample's own object category is
        non-zero; the joint classifier fills every row.
        """
        proba = self.predict_proba(X, objects)
        n, n_obj, n_pred = len(proba), len(self.objects), len(self.predicates)
        if not self.factorized:
            return proba.reshape(n, n_obj, n_pred)
        out = np.zeros((n, n_obj, n_pred))
        out[np.arange(n), self._object_idx(objects, n)] = proba
        return out


@dataclass(frozen=True)
class TrainingSample:
    bundle: FeatureBundle
    object_category: str
    gamma: np.ndarray


def train(samples: Sequence[TrainingSample], labels: LabelSpace, **params) -> FactorizedPredicateClassifier:
    """Fit a classifier on feature bundles; the loss curve is on ``loss_curve_``."""
    if not samples:
        raise ValueError("training needs at least one sample")
    b = samples[0].bundle
    clf = FactorizedPredicateClassifier(predicates=labels.predicates, objects=labels.objects,
                                        block_dims=(len(b.f_A), len(b.f_M), len(b.f_S)), **params)
    X = np.stack([s.bundle.concat() for s in samples])
    Y = np.stack([np.asarray(s.gamma, dtype=np.float64) for s in samples])
    return clf.fit(X, Y, [s.object_category for s in samples])


def predict_segment(bundle: FeatureBundle, object_category: str, model: FactorizedPredicateClassifier):
    """Masked per-feature probabilities for one segment, keyed by feature type."""
    heads = model.predict_heads(bundle.concat()[None], [object_category])
    return {t: p[0] for t, p in heads.items()}


def associate_instances(video: str, scored: Sequence[tuple[CandidateSegment, np.ndarray]], labels: LabelSpace,
                        threshold: float = 0.2, top_k: int = 10, use_confidence: bool = False) -> list[HoiInstance]:
    """Join runs of consecutive segments of one pair recognised with the same label.

    ``scored`` holds the temporally ordered segments of a single pair, each with
    its ``(|objects|, |predicates|)`` score array. Zero scores (masked entries)
    never qualify, whatever the threshold.
    """
    runs: dict[tuple[int, int], list[list]] = {}
    last_seen: dict[tuple[int, int], int] = {}
    for pos, (seg, scores) in enumerate(scored):
        scores = np.asarray(scores)
        hits = [(float(scores[o, p]), labels.predicates[p], labels.objects[o], o, p)
                for o, p in zip(*np.nonzero((scores >= threshold) & (scores > 0)))]
        hits.sort(key=lambda h: (-h[0], h[1], h[2]))
        for score, _, _, o, p in hits[:top_k]:
            key = (o, p)
            if last_seen.get(key) == pos - 1:
                runs[key][-1].append((seg, score))
            else:
                runs.setdefault(key, []).append([(seg, score)])
            last_seen[key] = pos
    instances = []
    for (o, p), groups in runs.items():
        for group in groups:
            first, last = group[0][0], group[-1][0]
            pair = first.pair
            begin, end = first.span.begin, last.span.end
            score = float(np.mean([s for _, s in group]))
            if use_confidence:
                score *= pair.human.score * pair.object.score
            instances.append(HoiInstance(video, labels.predicates[p], labels.objects[o],
                                         pair.human.sliced(begin, end), pair.object.sliced(begin, end), score))
    instances.sort(key=instance_sort_key)
    return instances
