"""Depth-limited second-order regression trees.

Trees are grown level by level. For every open node and every feature the
rows are scanned in presorted order and each boundary between two distinct
values is scored with the Newton gain

    G_L^2 / H_L + G_R^2 / H_R - G^2 / H

where G and H are sums of loss gradients and hessians. Leaves hold the
Newton step -G / H. With unit hessians this is ordinary least-squares
splitting on residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

_MIN_GAIN = 1e-12


@numba.njit(cache=True, nogil=True)
def _grow(X, order, sorted_x, grad, hess, active, max_depth, min_leaf, reg_lambda):
    m, d = X.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes)

    G = np.zeros(max_nodes)
    H = np.zeros(max_nodes)
    N = np.zeros(max_nodes, dtype=np.int64)

    node_of = np.full(m, -1, dtype=np.int64)
    for r in range(m):
        if active[r]:
            node_of[r] = 0
            G[0] += grad[r]
            H[0] += hess[r]
            N[0] += 1
    n_nodes = 1

    frontier = np.zeros(1, dtype=np.int64)
    local = np.full(max_nodes, -1, dtype=np.int64)

    for _depth in range(max_depth):
        nf = frontier.shape[0]
        if nf == 0:
            break
        for k in range(nf):
            local[frontier[k]] = k
        best_gain = np.full(nf, _MIN_GAIN)
        best_feat = np.full(nf, -1, dtype=np.int64)
        best_thr = np.zeros(nf)
        parent_score = np.zeros(nf)
        for k in range(nf):
            node = frontier[k]
            parent_score[k] = G[node] * G[node] / (H[node] + reg_lambda)

        cum_g = np.zeros(nf)
        cum_h = np.zeros(nf)
        cum_n = np.zeros(nf, dtype=np.int64)
        last_v = np.zeros(nf)
        for j in range(d):
            cum_g[:] = 0.0
            cum_h[:] = 0.0
            cum_n[:] = 0
            for t in range(m):
                r = order[j, t]
                node = node_of[r]
                if node < 0:
                    continue
                k = local[node]
                if k < 0:
                    continue
                v = sorted_x[j, t]
                nl = cum_n[k]
                if nl > 0 and v != last_v[k]:
                    nr = N[node] - nl
                    if nl >= min_leaf and nr >= min_leaf:
                        gl = cum_g[k]
                        hl = cum_h[k]
                        gr = G[node] - gl
                        hr = H[node] - hl
                        gain = (
                            gl * gl / (hl + reg_lambda)
                            + gr * gr / (hr + reg_lambda)
                            - parent_score[k]
                        )
                        if gain > best_gain[k]:
                            best_gain[k] = gain
                            best_feat[k] = j
                            thr = last_v[k] + 0.5 * (v - last_v[k])
                            if thr >= v:
                                thr = last_v[k]
                            best_thr[k] = thr
                cum_g[k] += grad[r]
                cum_h[k] += hess[r]
                cum_n[k] += 1
                last_v[k] = v

        n_split = 0
        for k in range(nf):
            if best_feat[k] >= 0:
                n_split += 1
        for k in range(nf):
            local[frontier[k]] = -1
        if n_split == 0:
            break

        new_frontier = np.zeros(2 * n_split, dtype=np.int64)
        s = 0
        for k in range(nf):
            if best_feat[k] < 0:
                continue
            node = frontier[k]
            feature[node] = best_feat[k]
            threshold[node] = best_thr[k]
            left[node] = n_nodes
            right[node] = n_nodes + 1
            new_frontier[2 * s] = n_nodes
            new_frontier[2 * s + 1] = n_nodes + 1
            n_nodes += 2
            s += 1
        for r in range(m):
            node = node_of[r]
            if node < 0 or feature[node] < 0:
                continue
            if X[r, feature[node]] <= threshold[node]:
                child = left[node]
            else:
                child = right[node]
            node_of[r] = child
            G[child] += grad[r]
            H[child] += hess[r]
            N[child] += 1
        frontier = new_frontier

    for node in range(n_nodes):
        if feature[node] < 0:
            value[node] = -G[node] / (H[node] + reg_lambda) if H[node] + reg_lambda > 0 else 0.0
    return feature, threshold, left, right, value, n_nodes, node_of


@numba.njit(cache=True, nogil=True)
def _predict_forest(X, feature, threshold, left, right, value, n_trees):
    m = X.shape[0]
    out = np.zeros(m)
    for r in range(m):
        acc = 0.0
        for t in range(n_trees):
            node = 0
            while feature[t, node] >= 0:
                if X[r, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += value[t, node]
        out[r] = acc
    return out


def presort(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature stable argsort and the sorted values, both shape (d, m)."""
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    sorted_x = np.ascontiguousarray(np.take_along_axis(X, order.T, axis=0).T)
    return order, sorted_x


@dataclass
class RegressionTree:
    """A fitted tree stored as flat node arrays; node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X: np.ndarray) -> np.ndarray:
        forest = Forest.from_trees([self], self.n_nodes)
        return forest.predict(X)

    def scaled(self, factor: float) -> "RegressionTree":
        return RegressionTree(
            self.feature, self.threshold, self.left, self.right, self.value * factor
        )


def grow_tree(
    X: np.ndarray,
    order: tuple[np.ndarray, np.ndarray],
    grad: np.ndarray,
    hess: np.ndarray,
    *,
    max_depth: int,
    min_leaf: int = 1,
    active: np.ndarray | None = None,
    reg_lambda: float = 0.0,
) -> RegressionTree:
    """Grow one tree on per-row gradients and hessians.

    Parameters
    ----------
    X : ndarray, shape (m, d)
    order : tuple
        Output of :func:`presort` for ``X``.
    grad, hess : ndarray, shape (m,)
        Loss derivatives with respect to the current raw score. Case
        weights, if any, must already be folded in.
    max_depth : int
        Depth 0 yields a single leaf.
    min_leaf : int
        Minimum number of active rows in each child.
    active : bool ndarray, optional
        Rows taking part in this tree (row subsampling).
    """
    tree, _ = grow_tree_with_leaves(
        X, order, grad, hess,
        max_depth=max_depth, min_leaf=min_leaf, active=active, reg_lambda=reg_lambda,
    )
    return tree


def grow_tree_with_leaves(X, order, grad, hess, *, max_depth, min_leaf=1, active=None,
                          reg_lambda=0.0):
    """As :func:`grow_tree`, also returning each row's leaf (-1 if inactive)."""
    m = X.shape[0]
    if active is None:
        active = np.ones(m, dtype=np.bool_)
    feature, threshold, left, right, value, n_nodes, leaf = _grow(
        np.ascontiguousarray(X, dtype=np.float64),
        order[0],
        order[1],
        np.ascontiguousarray(grad, dtype=np.float64),
        np.ascontiguousarray(hess, dtype=np.float64),
        active,
        int(max_depth),
        int(max(min_leaf, 1)),
        float(reg_lambda),
    )
    tree = RegressionTree(
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )
    return tree, leaf


@dataclass
class Forest:
    """Trees packed into padded 2-D arrays for fast additive prediction."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def from_trees(cls, trees: list[RegressionTree], width: int | None = None) -> "Forest":
        if width is None:
            width = max((t.n_nodes for t in trees), default=1)
        n = len(trees)
        feature = np.full((n, width), -1, dtype=np.int64)
        threshold = np.zeros((n, width))
        left = np.full((n, width), -1, dtype=np.int64)
        right = np.full((n, width), -1, dtype=np.int64)
        value = np.zeros((n, width))
        for i, t in enumerate(trees):
            k = t.n_nodes
            feature[i, :k] = t.feature
            threshold[i, :k] = t.threshold
            left[i, :k] = t.left
            right[i, :k] = t.right
            value[i, :k] = t.value
        return cls(feature, threshold, left, right, value)

    @property
    def n_trees(self) -> int:
        return int(self.feature.shape[0])

    def predict(self, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        n = self.n_trees if n_trees is None else min(n_trees, self.n_trees)
        X = np.ascontiguousarray(X, dtype=np.float64)
        if n == 0:
            return np.zeros(X.shape[0])
        return _predict_forest(
            X, self.feature, self.threshold, self.left, self.right, self.value, n
        )
