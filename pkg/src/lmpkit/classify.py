"""RBF support-vector classification and the two evaluation protocols.

Binary machines are trained with SMO (working set of two, second-order
selection, no shrinking) on min-max scaled features and combined one-vs-one.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .errors import InvalidInputError, ValidationError

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
DEFAULT_C = 100.0
C_GRID = tuple(10.0**e for e in range(0, 4))
GAMMA_GRID = tuple(2.0**e for e in range(-6, 3))
_TAU = 1e-12
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: Hashable
    subject: str = ""
    sequence: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SmoResult:
    alpha: np.ndarray
    rho: float
    gradient: np.ndarray
    iterations: int


def kkt_gap(alpha: np.ndarray, grad: np.ndarray, y: np.ndarray, C: float) -> float:
    """Maximal violating-pair gap ``m(alpha) - M(alpha)``; <= tol at optimum."""
    yg = -y * grad
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    if not up.any() or not low.any():
        return 0.0
    return float(yg[up].max() - yg[low].min())


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 1_000_000) -> SmoResult:
    """Solve ``min 1/2 a'Qa - e'a`` s.t. ``0 <= a <= C``, ``y'a = 0``, with
    ``Q = (y y') * K``."""
    n = y.size
    Q = (y[:, None] * y[None, :]) * K
    qd = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    while it < max_iter:
        yg = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            break
        up_idx = np.flatnonzero(up)
        i = int(up_idx[np.argmax(yg[up_idx])])
        g_max = yg[i]
        if g_max - yg[low].min() < tol:
            break
        cand = np.flatnonzero(low & (yg < g_max))
        quad = qd[i] + qd[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        quad = np.where(quad > 0, quad, _TAU)
        gain = (g_max - yg[cand]) ** 2 / quad
        j = int(cand[np.argmax(gain)])

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            q = qd[i] + qd[j] + 2.0 * Q[i, j]
            q = q if q > 0 else _TAU
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            q = qd[i] + qd[j] - 2.0 * Q[i, j]
            q = q if q > 0 else _TAU
            delta = (G[i] - G[j]) / q
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        G += Q[:, i] * (ni - ai) + Q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj
        it += 1
    else:
        log.warning("SMO stopped at max_iter=%d before reaching tol=%g", max_iter, tol)

    yg = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(yg[free].mean())
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2.0)
    return SmoResult(alpha, rho, G, it)


@dataclass
class BinaryMachine:
    positive: Hashable
    negative: Hashable
    support: np.ndarray  # scaled support vectors
    coef: np.ndarray  # alpha_i * y_i
    rho: float

    def decision(self, X: np.ndarray, gamma: float) -> np.ndarray:
        if self.coef.size == 0:
            return np.full(len(X), -self.rho)
        return rbf_kernel(X, self.support, gamma) @ self.coef - self.rho


@dataclass
class SvmModel:
    classes: list
    gamma: float
    C: float
    scale_min: np.ndarray
    scale_span: np.ndarray
    machines: list[BinaryMachine] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return int(self.scale_min.size)

    def scale(self, X: np.ndarray) -> np.ndarray:
        return (X - self.scale_min) / self.scale_span

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "classes": list(self.classes),
            "gamma": self.gamma,
            "C": self.C,
            "scale_min": self.scale_min.tolist(),
            "scale_span": self.scale_span.tolist(),
            "machines": [
                {
                    "positive": m.positive,
                    "negative": m.negative,
                    "support": m.support.tolist(),
                    "coef": m.coef.tolist(),
                    "rho": m.rho,
                }
                for m in self.machines
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ValidationError(f"unsupported model version {d.get('version')!r}")
        dim = len(d["scale_min"])
        machines = [
            BinaryMachine(
                m["positive"], m["negative"],
                np.asarray(m["support"], dtype=np.float64).reshape(-1, dim),
                np.asarray(m["coef"], dtype=np.float64), float(m["rho"]),
            )
            for m in d["machines"]
        ]
        return cls(
            list(d["classes"]), float(d["gamma"]), float(d["C"]),
            np.asarray(d["scale_min"], dtype=np.float64),
            np.asarray(d["scale_span"], dtype=np.float64), machines,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "SvmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_arrays(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, list]:
    if not samples:
        raise InvalidInputError("no samples")
    dim = samples[0].features.size
    if any(s.features.shape != (dim,) for s in samples):
        raise ValidationError("feature vectors differ in length")
    X = np.stack([s.features for s in samples])
    if not np.all(np.isfinite(X)):
        raise ValidationError("features contain non-finite values")
    return X, [s.label for s in samples]


def train(samples: Sequence[LabeledSample], C: float = DEFAULT_C, gamma: float | None = None,
          tol: float = 1e-3) -> SvmModel:
    X, labels = _as_arrays(samples)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise InvalidInputError("training needs at least two classes")
    if not C > 0 or (gamma is not None and not gamma > 0):
        raise InvalidInputError("C and gamma must be positive")
    gamma = 1.0 / X.shape[1] if gamma is None else float(gamma)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span[span <= 0] = 1.0
    Xs = (X - lo) / span
    model = SvmModel(classes, gamma, float(C), lo, span)
    lab = np.array([classes.index(v) for v in labels])
    for a, b in itertools.combinations(range(len(classes)), 2):
        idx = np.flatnonzero((lab == a) | (lab == b))
        y = np.where(lab[idx] == a, 1.0, -1.0)
        K = rbf_kernel(Xs[idx], Xs[idx], gamma)
        res = smo(K, y, float(C), tol)
        sv = res.alpha > 0
        model.machines.append(
            BinaryMachine(classes[a], classes[b], Xs[idx][sv], res.alpha[sv] * y[sv], res.rho)
        )
    return model


def predict_many(model: SvmModel, X: np.ndarray) -> list:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise ValidationError(f"expected {model.dim} features, got {X.shape[1]}")
    Xs = model.scale(X)
    pos = {c: i for i, c in enumerate(model.classes)}
    votes = np.zeros((len(X), len(model.classes)), dtype=np.int64)
    for m in model.machines:
        d = m.decision(Xs, model.gamma)
        first = d >= -_TIE_EPS  # an exact tie goes to the smaller class
        votes[first, pos[m.positive]] += 1
        votes[~first, pos[m.negative]] += 1
    # argmax returns the first maximum: smallest class id among tied votes
    return [model.classes[i] for i in votes.argmax(axis=1)]


def predict(model: SvmModel, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("predict expects a single feature vector")
    return predict_many(model, x[None, :])[0]


# --- protocols ---------------------------------------------------------------------


def kfold(samples: Sequence[LabeledSample], k: int = 10, seed: int = 0) -> list[np.ndarray]:
    """Stratified folds: each label's shuffled indices are dealt round-robin,
    continuing the deal across labels so fold sizes differ by at most one."""
    n = len(samples)
    if k < 2 or k > n:
        raise InvalidInputError(f"need 2 <= k <= {n}, got k={k}")
    rng = np.random.default_rng(seed)
    labels = [s.label for s in samples]
    order = []
    for lab in sorted(set(labels)):
        idx = np.array([i for i, v in enumerate(labels) if v == lab])
        order.extend(rng.permutation(idx).tolist())
    folds = [[] for _ in range(k)]
    for pos, i in enumerate(order):
        folds[pos % k].append(i)
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def loso(samples: Sequence[LabeledSample]) -> list[np.ndarray]:
    subjects = sorted({s.subject for s in samples})
    if len(subjects) < 2:
        raise InvalidInputError("leave-one-subject-out needs at least two subjects")
    return [np.array([i for i, s in enumerate(samples) if s.subject == subj]) for subj in subjects]


def grid_search(samples: Sequence[LabeledSample], seed: int = 0, folds: int = 3) -> tuple[float, float]:
    """Pick ``(C, gamma)`` maximizing inner stratified-fold accuracy;
    ties keep the earliest grid point."""
    best, best_acc = (DEFAULT_C, None), -1.0
    splits = kfold(samples, min(folds, len(samples)), seed)
    for C in C_GRID:
        for gamma in GAMMA_GRID:
            correct = total = 0
            for test_idx in splits:
                test_set = set(test_idx.tolist())
                tr = [s for i, s in enumerate(samples) if i not in test_set]
                if len({s.label for s in tr}) < 2:
                    continue
                model = train(tr, C, gamma)
                pred = predict_many(model, np.stack([samples[i].features for i in test_idx]))
                correct += sum(p == samples[i].label for p, i in zip(pred, test_idx))
                total += len(test_idx)
            acc = correct / total if total else 0.0
            if acc > best_acc:
                best, best_acc = (C, gamma), acc
    return best


@dataclass
class EvalReport:
    protocol: str
    accuracy: float
    labels: list
    confusion: np.ndarray  # rows: true label, columns: predicted
    folds: list[dict]

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "accuracy": self.accuracy,
            "labels": [str(v) for v in self.labels],
            "confusion": self.confusion.tolist(),
            "folds": self.folds,
        }


def evaluate(
    samples: Sequence[LabeledSample],
    protocol: str = "kfold10",
    C: float = DEFAULT_C,
    gamma: float | None = None,
    seed: int = 0,
    tune: bool = False,
) -> EvalReport:
    """Held-out accuracy and confusion matrix under ``kfold10`` or ``loso``.

    Scaling (and tuning, when requested) are fit on each training split only.
    A fold is skipped with a warning when its training split holds fewer than
    two classes or lacks a class present in its test split.
    """
    _as_arrays(samples)
    if protocol == "kfold10":
        splits = kfold(samples, 10, seed)
    elif protocol == "loso":
        splits = loso(samples)
    else:
        raise InvalidInputError(f"unknown protocol {protocol!r}")
    labels = sorted({s.label for s in samples})
    li = {v: i for i, v in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    fold_info = []
    for f, test_idx in enumerate(splits):
        test_set = set(test_idx.tolist())
        tr = [s for i, s in enumerate(samples) if i not in test_set]
        te = [samples[i] for i in test_idx]
        tr_labels = {s.label for s in tr}
        missing = {s.label for s in te} - tr_labels
        if len(tr_labels) < 2 or missing:
            log.warning("fold %d skipped: training split lacks classes %s", f, sorted(map(str, missing)) or "(<2 classes)")
            fold_info.append({"fold": f, "n_test": len(te), "correct": 0, "skipped": True})
            continue
        c, g = grid_search(tr, seed) if tune else (C, gamma)
        model = train(tr, c, g)
        pred = predict_many(model, np.stack([s.features for s in te]))
        correct = 0
        for s, p in zip(te, pred):
            confusion[li[s.label], li[p]] += 1
            correct += p == s.label
        fold_info.append({"fold": f, "n_test": len(te), "correct": int(correct), "skipped": False,
                          "C": c, "gamma": model.gamma})
    total = int(confusion.sum())
    acc = float(np.trace(confusion) / total) if total else 0.0
    return EvalReport(protocol, acc, labels, confusion, fold_info)
