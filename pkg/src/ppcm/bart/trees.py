"""Flat-array binary decision trees with constant leaf values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tree:
    """A binary regression tree in flat-array form.

    Node i is a leaf when ``feature[i] < 0``; then ``value[i]`` holds the
    leaf parameter.  Internal nodes route row x to ``left[i]`` when
    ``x[feature[i]] < threshold[i]`` and to ``right[i]`` otherwise.  Node 0
    is the root.  Every internal node has exactly two children, so the leaf
    count always exceeds the internal count by one.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def single_leaf(cls, value: float) -> "Tree":
        return cls(
            feature=np.array([-1], dtype=np.int32),
            threshold=np.array([np.nan]),
            left=np.array([-1], dtype=np.int32),
            right=np.array([-1], dtype=np.int32),
            value=np.array([float(value)]),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def n_internal(self) -> int:
        return self.n_nodes - self.n_leaves

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Leaf value for each row of X."""
        return self.value[self.leaf_index(X)]

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        """Index of the terminal node each row of X is routed to."""
        n = X.shape[0]
        out = np.zeros(n, dtype=np.int32)
        if self.n_nodes == 1:
            return out
        stack = [(0, np.arange(n))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0:
                out[idx] = node
                continue
            go_left = X[idx, self.feature[node]] < self.threshold[node]
            stack.append((int(self.left[node]), idx[go_left]))
            stack.append((int(self.right[node]), idx[~go_left]))
        return out

    def split_counts(self, n_predictors: int) -> np.ndarray:
        """Number of internal nodes splitting on each predictor."""
        counts = np.zeros(n_predictors, dtype=np.int64)
        internal = self.feature[self.feature >= 0]
        np.add.at(counts, internal, 1)
        return counts

    def validate(self, X: np.ndarray | None = None) -> None:
        """Check structural invariants; with X, also nonempty leaf cells."""
        n_nodes = self.n_nodes
        seen = np.zeros(n_nodes, dtype=bool)
        stack = [0]
        while stack:
            node = stack.pop()
            if seen[node]:
                raise ValueError(f"node {node} reachable twice")
            seen[node] = True
            if self.feature[node] >= 0:
                l, r = int(self.left[node]), int(self.right[node])
                if not (0 <= l < n_nodes and 0 <= r < n_nodes):
                    raise ValueError(f"node {node} has out-of-range children")
                stack.extend((l, r))
        if not seen.all():
            raise ValueError("unreachable nodes present")
        if self.n_leaves != self.n_internal + 1:
            raise ValueError("leaf count must equal internal count + 1")
        if X is not None:
            hit = np.zeros(n_nodes, dtype=bool)
            hit[np.unique(self.leaf_index(X))] = True
            empty = (self.feature < 0) & ~hit
            if empty.any():
                raise ValueError(f"leaf {int(np.flatnonzero(empty)[0])} has an empty cell")

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        return cls(
            feature=np.asarray(data["feature"], dtype=np.int32),
            threshold=np.asarray(data["threshold"], dtype=float),
            left=np.asarray(data["left"], dtype=np.int32),
            right=np.asarray(data["right"], dtype=np.int32),
            value=np.asarray(data["value"], dtype=float),
        )
