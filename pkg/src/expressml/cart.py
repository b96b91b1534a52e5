"""Decision-tree core shared by the forest and the boosting machine.

Split search is exact: every candidate feature is scanned in sorted order and
every midpoint between consecutive distinct values is scored. Sorting is done
once per training matrix (``Presorted``); a node scan then walks each
candidate feature's global order and skips rows that are not in the node.
Rows carry integer multiplicities, which is how bootstrap resamples are
represented without copying data.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import EmptyNode, FeatureOutOfRange, InvalidParams

CLASSIFICATION = "classification"
REGRESSION = "regression"

# smallest decrease that counts as an improvement; also the tie margin
_MIN_GAIN = 1e-13


class SplitCandidate(NamedTuple):
    feature: int
    threshold: float
    impurity_decrease: float


def gini_impurity(class_counts):
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyNode("gini impurity of an empty node")
    p = counts / total
    return float(1.0 - np.dot(p, p))


@njit(cache=True, nogil=True)
def _scan_gini(sorted_vals, order, node_of, nid, weight, y, feats,
               parent_counts, n_node, min_leaf):
    n = order.shape[1]
    n_classes = parent_counts.shape[0]
    parent_ss = 0.0
    for c in range(n_classes):
        parent_ss += parent_counts[c] * parent_counts[c]
    base = parent_ss / n_node
    left = np.zeros(n_classes)
    best_gain = _MIN_GAIN
    best_f = -1
    best_thr = 0.0
    for fi in range(feats.shape[0]):
        f = feats[fi]
        left[:] = 0.0
        nl = 0.0
        ssl = 0.0
        ssr = parent_ss
        prev = 0.0
        for k in range(n):
            i = order[f, k]
            if node_of[i] != nid:
                continue
            v = sorted_vals[f, k]
            if nl > 0.0 and v > prev:
                nr = n_node - nl
                if nl >= min_leaf and nr >= min_leaf:
                    gain = (ssl / nl + ssr / nr - base) / n_node
                    if gain > best_gain + _MIN_GAIN or (best_f < 0 and gain > best_gain):
                        best_gain = gain
                        best_f = f
                        best_thr = (np.float64(prev) + np.float64(v)) * 0.5
            w = weight[i]
            c = y[i]
            lc = left[c]
            rc = parent_counts[c] - lc
            ssl += (lc + w) * (lc + w) - lc * lc
            ssr += (rc - w) * (rc - w) - rc * rc
            left[c] = lc + w
            nl += w
            prev = v
    return best_f, best_thr, best_gain


@njit(cache=True, nogil=True)
def _scan_variance(sorted_vals, order, node_of, nid, weight, target, feats,
                   node_mean, n_node, min_leaf):
    n = order.shape[1]
    # centred targets keep the constant-target case at exactly zero gain
    total = 0.0
    for i in range(node_of.shape[0]):
        if node_of[i] == nid:
            total += weight[i] * (target[i] - node_mean)
    base = total * total / n_node
    best_gain = _MIN_GAIN
    best_f = -1
    best_thr = 0.0
    for fi in range(feats.shape[0]):
        f = feats[fi]
        nl = 0.0
        sl = 0.0
        prev = 0.0
        for k in range(n):
            i = order[f, k]
            if node_of[i] != nid:
                continue
            v = sorted_vals[f, k]
            if nl > 0.0 and v > prev:
                nr = n_node - nl
                if nl >= min_leaf and nr >= min_leaf:
                    sr = total - sl
                    gain = (sl * sl / nl + sr * sr / nr - base) / n_node
                    if gain > best_gain + _MIN_GAIN or (best_f < 0 and gain > best_gain):
                        best_gain = gain
                        best_f = f
                        best_thr = (np.float64(prev) + np.float64(v)) * 0.5
            w = weight[i]
            sl += w * (target[i] - node_mean)
            nl += w
            prev = v
    return best_f, best_thr, best_gain


@njit(cache=True, nogil=True)
def _scan_variance_level(sorted_vals, order, slot_of, weight, target, feats,
                         slot_mean, slot_n, min_leaf):
    """Best split for every node of one tree level in a single pass per feature.

    ``slot_of[i]`` is the level-local slot of row ``i`` (-1 = not splitting).
    """
    n = order.shape[1]
    k_slots = slot_mean.shape[0]
    total = np.zeros(k_slots)
    for i in range(slot_of.shape[0]):
        s = slot_of[i]
        if s >= 0:
            total[s] += weight[i] * (target[i] - slot_mean[s])
    base = np.empty(k_slots)
    for s in range(k_slots):
        base[s] = total[s] * total[s] / slot_n[s]
    best_gain = np.full(k_slots, _MIN_GAIN)
    best_f = np.full(k_slots, -1, dtype=np.int64)
    best_thr = np.zeros(k_slots)
    nl = np.zeros(k_slots)
    sl = np.zeros(k_slots)
    prev = np.zeros(k_slots)
    centred = np.empty(slot_of.shape[0])
    for i in range(slot_of.shape[0]):
        s = slot_of[i]
        centred[i] = weight[i] * (target[i] - slot_mean[s]) if s >= 0 else 0.0
    for fi in range(feats.shape[0]):
        f = feats[fi]
        nl[:] = 0.0
        sl[:] = 0.0
        for k in range(n):
            i = order[f, k]
            s = slot_of[i]
            if s < 0:
                continue
            v = sorted_vals[f, k]
            if nl[s] > 0.0 and v > prev[s]:
                nr = slot_n[s] - nl[s]
                if nl[s] >= min_leaf and nr >= min_leaf:
                    sr = total[s] - sl[s]
                    gain = (sl[s] * sl[s] / nl[s] + sr * sr / nr - base[s]) / slot_n[s]
                    if gain > best_gain[s] + _MIN_GAIN or (best_f[s] < 0 and gain > best_gain[s]):
                        best_gain[s] = gain
                        best_f[s] = f
                        best_thr[s] = (np.float64(prev[s]) + np.float64(v)) * 0.5
            sl[s] += centred[i]
            nl[s] += weight[i]
            prev[s] = v
    return best_f, best_thr, best_gain


@njit(cache=True, nogil=True)
def _apply(feature, threshold, left, right, x):
    out = np.empty(x.shape[0], dtype=np.int32)
    for r in range(x.shape[0]):
        node = 0
        while feature[node] >= 0:
            if x[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


class Presorted:
    """Per-feature sort order of a training matrix, reusable across trees."""

    def __init__(self, x):
        x = np.ascontiguousarray(x, dtype=np.float32)
        self.x = x
        self.order = np.ascontiguousarray(np.argsort(x, axis=0, kind="stable").T.astype(np.int32))
        self.sorted_vals = np.ascontiguousarray(np.take_along_axis(x, self.order.T, axis=0).T)

    @property
    def shape(self):
        return self.x.shape


@dataclass(eq=False)
class Tree:
    """Array-encoded binary tree. ``feature[i] == -1`` marks a leaf.

    ``value`` holds the leaf payload: a class-count histogram row for
    classification trees, a scalar prediction for regression trees.
    ``n_samples`` and ``decrease`` record the (weighted) node size and the
    impurity decrease of the split made at each internal node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    decrease: np.ndarray

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    @property
    def is_classifier(self):
        return self.value.ndim == 2

    def max_feature(self):
        internal = self.feature[self.feature >= 0]
        return int(internal.max()) if internal.size else -1

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, x):
        """Leaf index reached by every row of ``x``."""
        x = np.atleast_2d(np.asarray(x))
        if x.shape[1] <= self.max_feature():
            raise FeatureOutOfRange(
                f"sample has {x.shape[1]} features; tree splits on feature {self.max_feature()}")
        return _apply(self.feature, self.threshold, self.left, self.right, x)

    def importance(self, n_features):
        """Node-size-weighted impurity decrease summed per feature."""
        internal = self.feature >= 0
        return np.bincount(self.feature[internal],
                           weights=self.n_samples[internal] * self.decrease[internal],
                           minlength=n_features)

    def arrays(self):
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value, "n_samples": self.n_samples,
                "decrease": self.decrease}


def predict_tree(tree, sample):
    """Leaf payload (class histogram or real) for one sample."""
    leaf = tree.apply(np.asarray(sample).reshape(1, -1))[0]
    return tree.value[leaf]


def _check_params(max_depth, min_leaf, mtry, m):
    if max_depth is not None and max_depth < 0:
        raise InvalidParams("max_depth must be >= 0 or None")
    if min_leaf < 1:
        raise InvalidParams("min_leaf must be >= 1")
    if not 1 <= mtry <= m:
        raise InvalidParams(f"mtry must lie in [1, {m}], got {mtry}")


def grow_tree(data, targets, mode=CLASSIFICATION, *, n_classes=None, max_depth=None,
              min_leaf=1, mtry=None, rng=None, sample_weight=None):
    """Grow one tree.

    ``data`` is a matrix or a ``Presorted`` wrapper of one. ``sample_weight``
    gives each row's integer multiplicity (0 excludes the row). A fresh
    subset of ``mtry`` candidate features is drawn from ``rng`` at every node
    that is split; with ``mtry`` equal to the feature count no randomness is
    consumed. Growth stops on pure nodes, ``max_depth``, nodes too small to
    give two children of ``min_leaf`` rows, or when no split has a positive
    impurity decrease.
    """
    pre = data if isinstance(data, Presorted) else Presorted(data)
    x = pre.x
    n, m = x.shape
    mtry = m if mtry is None else int(mtry)
    _check_params(max_depth, min_leaf, mtry, m)
    if mtry < m and rng is None:
        raise InvalidParams("an rng is required when mtry < number of features")
    weight = (np.ones(n) if sample_weight is None
              else np.asarray(sample_weight, dtype=np.float64))
    classify = mode == CLASSIFICATION
    if classify:
        y = np.asarray(targets, dtype=np.int64)
        if n_classes is None:
            n_classes = int(y.max()) + 1
    elif mode == REGRESSION:
        t = np.asarray(targets, dtype=np.float64)
    else:
        raise InvalidParams(f"unknown tree mode {mode!r}")

    rows0 = np.flatnonzero(weight > 0)
    if rows0.size == 0:
        raise EmptyNode("cannot grow a tree on zero rows")
    node_of = np.full(n, -1, dtype=np.int64)
    node_of[rows0] = 0
    all_feats = np.arange(m, dtype=np.int64)
    level_scan = not classify and mtry == m

    feature, threshold, left, right, value, sizes, decrease = [], [], [], [], [], [], []

    def new_node():
        for col in (feature, left, right):
            col.append(-1)
        threshold.append(0.0)
        value.append(None)
        sizes.append(0.0)
        decrease.append(0.0)
        return len(feature) - 1

    level = [(new_node(), rows0)]
    depth = 0
    while level:
        # payloads and stopping rules for every node of this level
        splittable = []
        for nid, rows in level:
            w = weight[rows]
            n_node = float(w.sum())
            sizes[nid] = n_node
            if classify:
                counts = np.bincount(y[rows], weights=w, minlength=n_classes)
                value[nid] = counts
                stop = np.count_nonzero(counts) <= 1
                stat = counts
            else:
                stat = float(np.dot(w, t[rows]) / n_node)
                value[nid] = stat
                stop = False
            if stop or (max_depth is not None and depth >= max_depth) or n_node < 2 * min_leaf:
                continue
            splittable.append((nid, rows, stat, n_node))

        if level_scan and splittable:
            slot_of = np.full(n, -1, dtype=np.int64)
            for s, (nid, rows, _, _) in enumerate(splittable):
                slot_of[rows] = s
            bf, bt, bg = _scan_variance_level(
                pre.sorted_vals, pre.order, slot_of, weight, t, all_feats,
                np.array([sp[2] for sp in splittable]), np.array([sp[3] for sp in splittable]),
                float(min_leaf))
            found = [(int(bf[s]), float(bt[s]), float(bg[s])) for s in range(len(splittable))]
        else:
            found = []
            for nid, rows, stat, n_node in splittable:
                if mtry < m:
                    feats = np.sort(rng.choice(m, size=mtry, replace=False))
                else:
                    feats = all_feats
                if classify:
                    res = _scan_gini(pre.sorted_vals, pre.order, node_of, nid, weight, y,
                                     feats, stat, n_node, float(min_leaf))
                else:
                    res = _scan_variance(pre.sorted_vals, pre.order, node_of, nid, weight, t,
                                         feats, stat, n_node, float(min_leaf))
                found.append((int(res[0]), float(res[1]), float(res[2])))

        next_level = []
        for (nid, rows, _, _), (f, thr, gain) in zip(splittable, found):
            if f < 0:
                continue
            go_left = x[rows, f] <= thr
            lrows, rrows = rows[go_left], rows[~go_left]
            lid, rid = new_node(), new_node()
            node_of[lrows] = lid
            node_of[rrows] = rid
            feature[nid], threshold[nid], left[nid], right[nid] = f, thr, lid, rid
            decrease[nid] = gain
            next_level.append((lid, lrows))
            next_level.append((rid, rrows))
        level = next_level
        depth += 1

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        n_samples=np.asarray(sizes, dtype=np.float64),
        decrease=np.asarray(decrease, dtype=np.float64),
    )


def best_split(x, targets, rows=None, features=None, mode=CLASSIFICATION, *,
               n_classes=None, sample_weight=None, min_leaf=1):
    """Best (feature, threshold) for one node, or None without a positive decrease.

    Ties go to the lower feature index, then the lower threshold.
    """
    x = np.asarray(x, dtype=np.float32)
    n, m = x.shape
    weight = np.zeros(n)
    if rows is None:
        rows = np.arange(n)
    rows = np.asarray(rows, dtype=np.int64)
    base_w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    np.add.at(weight, rows, base_w[rows])
    member = np.flatnonzero(weight > 0)
    if member.size < 2 and weight.sum() < 2:
        raise EmptyNode("best_split needs at least 2 rows")
    feats = np.arange(m) if features is None else np.sort(np.asarray(features, dtype=np.int64))
    if feats.size == 0:
        raise InvalidParams("feature subset is empty")
    pre = Presorted(x)
    node_of = np.full(n, -1, dtype=np.int64)
    node_of[member] = 0
    n_node = float(weight.sum())
    if mode == CLASSIFICATION:
        y = np.asarray(targets, dtype=np.int64)
        n_classes = int(y.max()) + 1 if n_classes is None else n_classes
        counts = np.bincount(y[member], weights=weight[member], minlength=n_classes)
        f, thr, gain = _scan_gini(pre.sorted_vals, pre.order, node_of, 0, weight, y, feats,
                                  counts, n_node, float(min_leaf))
    elif mode == REGRESSION:
        t = np.asarray(targets, dtype=np.float64)
        mean = float(np.dot(weight[member], t[member]) / n_node)
        f, thr, gain = _scan_variance(pre.sorted_vals, pre.order, node_of, 0, weight, t, feats,
                                      mean, n_node, float(min_leaf))
    else:
        raise InvalidParams(f"unknown tree mode {mode!r}")
    if f < 0:
        return None
    return SplitCandidate(int(f), float(thr), float(gain))
