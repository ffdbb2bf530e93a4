"""Optional compiled kernel for batch forest evaluation.

Falls back to per-tree numpy routing when numba is unavailable.  Both paths
accumulate tree outputs in the same order, so results are identical.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


def pack_trees(trees):
    """Concatenate flat tree arrays with per-tree node offsets."""
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    for k, tree in enumerate(trees):
        offsets[k + 1] = offsets[k] + tree.n_nodes
    return (
        np.concatenate([t.feature for t in trees]),
        np.concatenate([t.threshold for t in trees]),
        np.concatenate([t.left for t in trees]),
        np.concatenate([t.right for t in trees]),
        np.concatenate([t.value for t in trees]),
        offsets,
    )


def _eval_packed_py(feature, threshold, left, right, value, offsets, X, out):
    for k in range(offsets.size - 1):
        base = int(offsets[k])
        idx = np.arange(X.shape[0])
        stack = [(0, idx)]
        while stack:
            node, rows = stack.pop()
            j = feature[base + node]
            if j < 0:
                out[rows] += value[base + node]
                continue
            go_left = X[rows, j] < threshold[base + node]
            stack.append((int(left[base + node]), rows[go_left]))
            stack.append((int(right[base + node]), rows[~go_left]))


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _eval_packed_nb(feature, threshold, left, right, value, offsets, X, out):
        n = X.shape[0]
        for k in range(offsets.size - 1):
            base = offsets[k]
            for i in range(n):
                node = 0
                while feature[base + node] >= 0:
                    if X[i, feature[base + node]] < threshold[base + node]:
                        node = left[base + node]
                    else:
                        node = right[base + node]
                out[i] += value[base + node]

    eval_packed = _eval_packed_nb
else:  # pragma: no cover
    eval_packed = _eval_packed_py
