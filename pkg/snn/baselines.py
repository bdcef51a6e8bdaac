"""
Decision-tree baseline on the binary input-node signals.

Every simulation step is one example: 133 binary features and the proximity
label P(t). Features are the active input nodes of the step (`state`, the
default) or the rate-coded firings drawn for it (`spikes`); a single step of
spikes shows each active node with probability 0.3 only. Splits maximize
information gain (Shannon entropy over the N + 1 label classes); leaves
emit the mean label by default, or the modal class.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from snn.encoding import EncoderLayout, firing_matrix, state_matrix
from snn.pingpong import reward_times
from snn.prediction import UndefinedScoreError, ground_truth, r_squared_arrays

logger = logging.getLogger(__name__)

GAIN_EPS = 1e-12
FEATURE_KINDS = ('state', 'spikes')


@dataclass
class Dataset:
    features: np.ndarray    # steps x features, uint8 0/1
    labels: np.ndarray      # steps, int in [0, N]
    N: int
    train_steps: int

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")

    @property
    def train(self):
        return self.features[:self.train_steps], self.labels[:self.train_steps]

    @property
    def test(self):
        return self.features[self.train_steps:], self.labels[self.train_steps:]

    def header(self) -> Dict[str, int]:
        return {'steps': int(len(self.labels)), 'features': int(self.features.shape[1]),
                'N': int(self.N), 'train_steps': int(self.train_steps)}


def build_dataset(record: np.ndarray, layout: EncoderLayout, rng: np.random.Generator,
                  N: int, L: int, train_steps: int, steps: int = None,
                  features: str = 'state') -> Dataset:
    if features not in FEATURE_KINDS:
        raise ValueError(f"features must be one of {FEATURE_KINDS}, got {features!r}")
    steps = len(record) if steps is None else min(steps, len(record))
    if features == 'state':
        X = state_matrix(record, layout, steps)
    else:
        X = firing_matrix(record, layout, rng, steps)
    labels = ground_truth(reward_times(record), steps, N, L).astype(np.uint8)
    logger.info(f"Built {features} dataset: {steps} rows, train={train_steps}, test={steps - train_steps}")
    return Dataset(X, labels, N, train_steps)


def save_dataset(dataset: Dataset, stem: str) -> List[str]:
    """Writes <stem>.npy (features with the label as last column) and <stem>.json (header)."""
    table = np.column_stack([dataset.features, dataset.labels.astype(np.uint8)])
    np.save(stem + '.npy', table, allow_pickle=False)
    with open(stem + '.json', 'w') as f:
        json.dump(dataset.header(), f, indent=2, sort_keys=True)
    return [stem + '.npy', stem + '.json']


def load_dataset(stem: str) -> Dataset:
    with open(stem + '.json') as f:
        header = json.load(f)
    table = np.load(stem + '.npy', allow_pickle=False)
    return Dataset(table[:, :-1], table[:, -1].astype(np.int64), header['N'], header['train_steps'])


def entropy(counts: np.ndarray) -> np.ndarray:
    """Shannon entropy (bits) along the last axis of a count array."""
    counts = np.asarray(counts, dtype=np.float64)
    totals = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide='ignore', invalid='ignore'):
        p = np.where(totals > 0, counts / totals, 0.0)
        terms = np.where(p > 0, -p * np.log2(p), 0.0)
    return terms.sum(axis=-1)


def split_gains(X: np.ndarray, y: np.ndarray, n_classes: int, min_leaf: int = 1) -> np.ndarray:
    """
    Information gain of splitting on each binary feature; -inf where a side
    would hold fewer than min_leaf rows.
    """
    n = len(y)
    parent = np.bincount(y, minlength=n_classes).astype(np.float64)
    ones = np.zeros((X.shape[1], n_classes))
    for c in range(n_classes):
        rows = X[y == c]
        if len(rows):
            ones[:, c] = rows.sum(axis=0, dtype=np.int64)
    zeros = parent[None, :] - ones
    n1 = ones.sum(axis=1)
    n0 = n - n1
    gain = entropy(parent) - (n1 / n) * entropy(ones) - (n0 / n) * entropy(zeros)
    gain[(n1 < min_leaf) | (n0 < min_leaf)] = -np.inf
    return gain


@dataclass
class DecisionTree:
    n_classes: int
    readout: str = 'mean'
    # node: {'feature', 'left', 'right'} for splits (left = feature 0), {'value'} for leaves
    nodes: List[Dict[str, Any]] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X), dtype=np.float64)
        stack = [(0, np.arange(len(X)))]
        while stack:
            node_id, idx = stack.pop()
            node = self.nodes[node_id]
            if 'value' in node:
                out[idx] = node['value']
                continue
            on = X[idx, node['feature']] == 1
            stack.append((node['left'], idx[~on]))
            stack.append((node['right'], idx[on]))
        return out

    def depth(self) -> int:
        def walk(i):
            node = self.nodes[i]
            return 0 if 'value' in node else 1 + max(walk(node['left']), walk(node['right']))
        return walk(0)

    def to_dict(self) -> Dict[str, Any]:
        return {'n_classes': self.n_classes, 'readout': self.readout, 'nodes': self.nodes}


def _leaf_value(y: np.ndarray, n_classes: int, readout: str) -> float:
    if readout == 'mode':
        return float(np.argmax(np.bincount(y, minlength=n_classes)))
    return float(y.mean())


def train_tree(X: np.ndarray, y: np.ndarray, max_depth: int = 20, min_leaf: int = 50,
               n_classes: Optional[int] = None, readout: str = 'mean') -> DecisionTree:
    """Greedy top-down induction; ties between features go to the lowest index."""
    if len(y) == 0:
        raise ValueError("cannot train a tree on empty data")
    if readout not in ('mean', 'mode'):
        raise ValueError(f"unknown readout {readout!r}")
    y = np.asarray(y, dtype=np.int64)
    n_classes = int(n_classes or y.max() + 1)
    tree = DecisionTree(n_classes=n_classes, readout=readout)
    tree.nodes.append({})
    stack = [(0, np.arange(len(y)), 0)]
    while stack:
        node_id, idx, depth = stack.pop()
        y_node = y[idx]
        split = None
        if depth < max_depth and len(idx) >= 2 * min_leaf and np.unique(y_node).size > 1:
            gains = split_gains(X[idx], y_node, n_classes, min_leaf)
            best = int(np.argmax(gains))
            if gains[best] > GAIN_EPS:
                split = best
        if split is None:
            tree.nodes[node_id] = {'value': _leaf_value(y_node, n_classes, readout), 'n': int(len(idx))}
            continue
        on = X[idx, split] == 1
        left, right = len(tree.nodes), len(tree.nodes) + 1
        tree.nodes.extend([{}, {}])
        tree.nodes[node_id] = {'feature': split, 'left': left, 'right': right,
                               'gain': float(gains[split]), 'n': int(len(idx))}
        stack.append((right, idx[on], depth + 1))
        stack.append((left, idx[~on], depth + 1))
    logger.info(f"Trained tree: {len(tree.nodes)} nodes, depth {tree.depth()}")
    return tree


def evaluate_tree(tree: DecisionTree, X: np.ndarray, y: np.ndarray) -> float:
    """R^2 with the same variance convention as the network score."""
    if np.var(np.asarray(y, dtype=np.float64)) == 0:
        raise UndefinedScoreError("test labels have zero variance")
    return r_squared_arrays(y, tree.predict(X))


def save_tree(tree: DecisionTree, path: str):
    with open(path, 'w') as f:
        json.dump(tree.to_dict(), f, indent=1, sort_keys=True)
