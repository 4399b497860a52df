"""Multiclass gradient-boosted regression trees with a softmax objective.

Each round fits one tree per class to the softmax gradient and hessian,
using exact greedy splits over presorted feature columns, Newton leaf
weights ``-G / (H + lambda)`` and shrinkage ``eta`` at accumulation.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np
from numba import njit

HESS_FLOOR = 1e-16
LOSS_CLIP = 1e-15


@dataclass(frozen=True)
class BoostHyper:
    rounds: int = 100
    max_depth: int = 6
    eta: float = 0.3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0


@dataclass
class Tree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    default_left: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def to_json(self) -> list:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                nodes.append({"leaf": float(self.leaf[i])})
            else:
                nodes.append({
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "default_left": bool(self.default_left[i]),
                })
        return nodes

    @classmethod
    def from_json(cls, nodes: list) -> "Tree":
        n = len(nodes)
        t = cls(np.full(n, -1, np.int64), np.zeros(n), np.full(n, -1, np.int64),
                np.full(n, -1, np.int64), np.zeros(n), np.zeros(n, np.bool_))
        for i, node in enumerate(nodes):
            if "leaf" in node:
                t.leaf[i] = node["leaf"]
            else:
                t.feature[i] = node["feature"]
                t.threshold[i] = node["threshold"]
                t.left[i] = node["left"]
                t.right[i] = node["right"]
                t.default_left[i] = node.get("default_left", True)
        return t


@dataclass
class TreeEnsemble:
    n_classes: int
    n_features: int
    hyper: BoostHyper
    trees: List[Tree] = field(default_factory=list)  # round-major: trees[r * C + c]
    base_score: float = 0.0
    history: List[float] = field(default_factory=list)  # training mlogloss after each round

    @property
    def rounds(self) -> int:
        return len(self.trees) // self.n_classes

    def to_json(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "base_score": self.base_score,
            "hyper": asdict(self.hyper),
            "history": self.history,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TreeEnsemble":
        return cls(obj["n_classes"], obj["n_features"], BoostHyper(**obj["hyper"]),
                   [Tree.from_json(t) for t in obj["trees"]], obj["base_score"],
                   list(obj.get("history", [])))

    def save(self, path, meta=None) -> None:
        obj = self.to_json()
        if meta is not None:
            obj = {"meta": meta, **obj}
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(obj, fh, indent=None, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@njit(cache=True)
def _split_gain(GL, HL, GR, HR, lam, gamma):
    G = GL + GR
    H = HL + HR
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma


@njit(cache=True)
def _grow_tree(X, order, sorted_vals, grad, hess, max_depth, lam, gamma, mcw,
               feature, threshold, left, right, leaf, inst_value):
    """Level-wise exact greedy growth.  Returns the node count.

    ``inst_value`` receives each training row's leaf weight.
    """
    n, d = X.shape
    max_nodes = feature.shape[0]
    pos = np.zeros(n, dtype=np.int64)  # node of each row, -1 once it sits in a finished leaf
    G = np.zeros(max_nodes)
    H = np.zeros(max_nodes)
    GL = np.zeros(max_nodes)
    HL = np.zeros(max_nodes)
    last = np.zeros(max_nodes)
    seen = np.zeros(max_nodes, dtype=np.bool_)
    best_gain = np.zeros(max_nodes)
    best_feat = np.full(max_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(max_nodes)

    level_lo, level_hi = 0, 1
    n_nodes = 1
    for depth in range(max_depth + 1):
        for nd in range(level_lo, level_hi):
            G[nd] = 0.0
            H[nd] = 0.0
            best_gain[nd] = 0.0
            best_feat[nd] = -1
        for i in range(n):
            p = pos[i]
            if p >= 0:
                G[p] += grad[i]
                H[p] += hess[i]
        if depth < max_depth:
            for f in range(d):
                for nd in range(level_lo, level_hi):
                    GL[nd] = 0.0
                    HL[nd] = 0.0
                    seen[nd] = False
                col = order[f]
                vals = sorted_vals[f]
                for k in range(n):
                    i = col[k]
                    p = pos[i]
                    if p < 0:
                        continue
                    x = vals[k]
                    if seen[p] and x != last[p]:
                        hl = HL[p]
                        hr = H[p] - hl
                        if hl >= mcw and hr >= mcw:
                            gain = _split_gain(GL[p], hl, G[p] - GL[p], hr, lam, gamma)
                            if gain > best_gain[p]:
                                thr = last[p] + (x - last[p]) * 0.5
                                if not thr > last[p]:
                                    thr = x
                                best_gain[p] = gain
                                best_feat[p] = f
                                best_thr[p] = thr
                    GL[p] += grad[i]
                    HL[p] += hess[i]
                    last[p] = x
                    seen[p] = True
        next_lo = n_nodes
        for nd in range(level_lo, level_hi):
            if depth < max_depth and best_feat[nd] >= 0:
                feature[nd] = best_feat[nd]
                threshold[nd] = best_thr[nd]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                n_nodes += 2
            else:
                feature[nd] = -1
                leaf[nd] = -G[nd] / (H[nd] + lam)
        for i in range(n):
            p = pos[i]
            if p < 0:
                continue
            if feature[p] < 0:
                inst_value[i] = leaf[p]
                pos[i] = -1
            elif X[i, feature[p]] < threshold[p]:
                pos[i] = left[p]
            else:
                pos[i] = right[p]
        level_lo, level_hi = next_lo, n_nodes
        if level_lo == level_hi:
            break
    return n_nodes


@njit(cache=True)
def _predict_margins(X, features, thresholds, lefts, rights, leaves, offsets, n_classes, eta, base):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.full((n, n_classes), base)
    for t in range(n_trees):
        c = t % n_classes
        o = offsets[t]
        for i in range(n):
            node = 0
            while features[o + node] >= 0:
                if X[i, features[o + node]] < thresholds[o + node]:
                    node = lefts[o + node]
                else:
                    node = rights[o + node]
            out[i, c] += eta * leaves[o + node]
    return out


def softmax(margins: np.ndarray) -> np.ndarray:
    z = margins - margins.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def mlogloss(proba, y) -> float:
    proba = np.asarray(proba, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    p = np.maximum(proba[np.arange(y.shape[0]), y], LOSS_CLIP)
    return float(-np.mean(np.log(p)))


def _validate(X, n_features=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} columns, model expects {n_features}")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    return X


def fit(X, y, hyper: BoostHyper = BoostHyper(), n_classes: int = None) -> TreeEnsemble:
    X = _validate(X)
    y = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot fit on an empty training set")
    if y.shape != (n,):
        raise ValueError("y must have one label per row of X")
    C = int(n_classes if n_classes is not None else y.max() + 1)
    if C < 2:
        raise ValueError("need at least two classes")
    if y.min() < 0 or y.max() >= C:
        raise ValueError(f"labels must lie in [0, {C})")

    order = np.argsort(X, axis=0, kind="stable").T.copy()
    sorted_vals = np.take_along_axis(X.T, order, axis=1).copy()
    onehot = np.zeros((n, C))
    onehot[np.arange(n), y] = 1.0
    max_nodes = 2 ** (hyper.max_depth + 1) - 1
    model = TreeEnsemble(C, d, hyper)
    margins = np.full((n, C), model.base_score)
    inst_value = np.empty(n)
    for _ in range(hyper.rounds):
        p = softmax(margins)
        step = np.zeros((n, C))
        for c in range(C):
            grad = p[:, c] - onehot[:, c]
            hess = np.maximum(p[:, c] * (1.0 - p[:, c]), HESS_FLOOR)
            arrays = (np.full(max_nodes, -1, np.int64), np.zeros(max_nodes),
                      np.full(max_nodes, -1, np.int64), np.full(max_nodes, -1, np.int64),
                      np.zeros(max_nodes))
            used = _grow_tree(X, order, sorted_vals, grad, hess, hyper.max_depth, hyper.reg_lambda,
                              hyper.gamma, hyper.min_child_weight, *arrays, inst_value)
            feat, thr, lft, rgt, leaf = (a[:used].copy() for a in arrays)
            model.trees.append(Tree(feat, thr, lft, rgt, leaf, np.ones(used, np.bool_)))
            step[:, c] = inst_value
        margins += hyper.eta * step
        model.history.append(mlogloss(softmax(margins), y))
    return model


def predict_margins(model: TreeEnsemble, X) -> np.ndarray:
    X = _validate(X, model.n_features)
    if not model.trees:
        return np.full((X.shape[0], model.n_classes), model.base_score)
    offsets = np.zeros(len(model.trees) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([t.n_nodes for t in model.trees])
    cat = lambda name: np.concatenate([getattr(t, name) for t in model.trees])
    return _predict_margins(X, cat("feature"), cat("threshold"), cat("left"), cat("right"),
                            cat("leaf"), offsets, model.n_classes, model.hyper.eta,
                            model.base_score)


def predict_proba(model: TreeEnsemble, X) -> np.ndarray:
    return softmax(predict_margins(model, X))


def predict(model: TreeEnsemble, X) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(predict_proba(model, X), axis=1)
