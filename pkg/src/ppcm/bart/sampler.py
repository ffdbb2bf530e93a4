"""Backfitting MCMC for sum-of-trees models.

One sweep updates each tree in turn against the partial residuals of the
others: a structural Metropolis-Hastings move (grow / prune / change), then
a conjugate redraw of every leaf value.  Continuous chains resample the
residual variance from its scaled-inverse-chi-squared full conditional;
probit chains resample truncated-normal latents instead and keep unit
variance.  With sparsity enabled, the per-predictor split probabilities are
a Dirichlet full conditional over split-usage counts and the concentration
parameter is resampled on a grid.

Cutpoints are proposed uniformly over the observed unique values of the
chosen predictor inside the node's cell (excluding the cell minimum), so
both children of any split are nonempty by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtr, ndtri

_TINY = 1e-12


class _Node:
    """Mutable tree node; leaves carry values and training-row indices."""

    __slots__ = ("var", "cut", "value", "left", "right", "rows")

    def __init__(self, rows: np.ndarray, value: float = 0.0):
        self.var = -1
        self.cut = 0.0
        self.value = value
        self.left: "_Node | None" = None
        self.right: "_Node | None" = None
        self.rows = rows

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass(frozen=True)
class ChainParams:
    """Resolved sampler settings on the internal (scaled) outcome."""

    n_trees: int
    n_burn: int
    n_keep: int
    alpha: float
    beta: float
    tau2: float           # leaf prior variance
    nu: float = 3.0       # sigma prior df (continuous only)
    lam: float = 1.0      # sigma prior scale (continuous only)
    sigma2_init: float = 1.0
    p_grow: float = 0.28
    p_prune: float = 0.28
    p_change: float = 0.44
    min_leaf: int = 5
    dart: bool = False
    dart_a: float = 0.5
    dart_b: float = 1.0
    dart_warmup: int = 0
    dart_grid: int = 1000


def _scan(root: _Node):
    """Collect (leaf, depth, parent) triples and prunable (node, depth) pairs."""
    leaves, prunable = [], []
    stack = [(root, 0, None)]
    while stack:
        node, depth, parent = stack.pop()
        if node.is_leaf:
            leaves.append((node, depth, parent))
        else:
            if node.left.is_leaf and node.right.is_leaf:
                prunable.append((node, depth))
            stack.append((node.left, depth + 1, node))
            stack.append((node.right, depth + 1, node))
    return leaves, prunable


def leaf_posterior(m: float, s: float, sigma2: float, tau2: float):
    """Conjugate posterior (mean, variance) of a leaf value.

    `m` is the number of rows in the leaf, `s` the sum of their partial
    residuals, under residual variance `sigma2` and leaf prior N(0, tau2).
    """
    denom = sigma2 + m * tau2
    return tau2 * s / denom, sigma2 * tau2 / denom


def _log_marginal(m, s, sigma2, tau2):
    denom = sigma2 + m * tau2
    return 0.5 * np.log(sigma2 / denom) + tau2 * s * s / (2.0 * sigma2 * denom)


def draw_sigma2(resid_ss: float, n: int, nu: float, lam: float, rng) -> float:
    """Scaled-inverse-chi-squared full conditional for the residual variance."""
    shape = (nu + n) / 2.0
    scale = (nu * lam + resid_ss) / 2.0
    return scale / rng.gamma(shape)


def update_dart_split_probs(usage_counts: np.ndarray, theta: float, rng) -> np.ndarray:
    """Draw split probabilities from their Dirichlet full conditional.

    The concentration is theta/p plus the per-predictor split tally.  With a
    single predictor the simplex is the point mass 1.
    """
    counts = np.asarray(usage_counts, dtype=float)
    p = counts.size
    if p == 1:
        return np.ones(1)
    probs = rng.dirichlet(theta / p + counts)
    probs = np.clip(probs, 1e-300, None)
    return probs / probs.sum()


def draw_dart_theta(split_probs, a, b, rho, rng, grid_size: int = 1000) -> float:
    """Resample the sparsity concentration on a grid.

    theta/(theta + rho) gets a Beta(a, b) prior; the likelihood is the
    symmetric Dirichlet density of the current split probabilities.
    """
    p = len(split_probs)
    lam = (np.arange(grid_size) + 1.0) / (grid_size + 1.0)
    theta = lam * rho / (1.0 - lam)
    conc = theta / p
    loglik = gammaln(theta) - p * gammaln(conc) + (conc - 1.0) * np.log(split_probs).sum()
    logprior = (a - 1.0) * np.log(lam) + (b - 1.0) * np.log1p(-lam)
    logw = loglik + logprior
    w = np.exp(logw - logw.max())
    cdf = np.cumsum(w)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1]))
    return float(theta[min(idx, grid_size - 1)])


def _choose_rule(X, rows, split_probs, min_leaf, rng):
    """Propose (var, cut, mask) from the rule prior restricted to the cell.

    Valid rules leave at least `min_leaf` training rows in each child; the
    variable is drawn from the sparsity weights restricted to variables
    with a valid cut, the cutpoint uniformly over that variable's valid
    observed values.  Returns None when the cell admits no rule.
    """
    m = rows.size
    if m < 2 * min_leaf:
        return None
    cell = X[rows]
    # a variable has a valid cut iff its min_leaf-th smallest value is
    # strictly below its min_leaf-th largest value
    lo_k = np.partition(cell, min_leaf - 1, axis=0)[min_leaf - 1]
    hi_k = np.partition(cell, m - min_leaf, axis=0)[m - min_leaf]
    valid = hi_k > lo_k
    if not valid.any():
        return None
    probs = np.where(valid, split_probs, 0.0)
    ssum = probs.sum()
    if ssum <= 0:  # sparsity collapsed onto invalid predictors
        probs = valid.astype(float)
        ssum = probs.sum()
    var = int(np.searchsorted(np.cumsum(probs), rng.random() * ssum))
    var = min(var, len(probs) - 1)
    values, counts = np.unique(cell[:, var], return_counts=True)
    below = np.cumsum(counts)[:-1]  # rows strictly below each candidate cut
    ok = np.flatnonzero((below >= min_leaf) & (m - below >= min_leaf))
    if ok.size == 0:
        return None
    cut = float(values[1 + ok[rng.integers(ok.size)]])
    mask = cell[:, var] < cut
    return var, cut, mask


def _psplit(alpha, beta, depth):
    return alpha / (1.0 + depth) ** beta


def _try_grow(tree, X, e, sigma2, params, split_probs, leaves, prunable, rng):
    b = len(leaves)
    node, depth, parent = leaves[rng.integers(b)]
    rule = _choose_rule(X, node.rows, split_probs, params.min_leaf, rng)
    if rule is None:
        return False
    var, cut, mask = rule
    e_node = e[node.rows]
    s = e_node.sum()
    s_left = e_node[mask].sum()
    m = node.rows.size
    m_left = int(mask.sum())
    m_right = m - m_left

    # after growing, this node becomes prunable; its parent stops being
    # prunable when the sibling is still a leaf
    parent_was_prunable = parent is not None and (
        (parent.right if parent.left is node else parent.left).is_leaf
    )
    w2_new = len(prunable) + 1 - (1 if parent_was_prunable else 0)
    ps, ps_child = _psplit(params.alpha, params.beta, depth), _psplit(
        params.alpha, params.beta, depth + 1
    )
    log_acc = (
        np.log(params.p_prune) - np.log(params.p_grow)
        + np.log(b) - np.log(w2_new)
        + np.log(ps) + 2.0 * np.log1p(-ps_child) - np.log1p(-ps)
        + _log_marginal(m_left, s_left, sigma2, params.tau2)
        + _log_marginal(m_right, s - s_left, sigma2, params.tau2)
        - _log_marginal(m, s, sigma2, params.tau2)
    )
    if np.log(rng.random() + _TINY) >= log_acc:
        return False
    node.var, node.cut = var, cut
    node.left = _Node(node.rows[mask], node.value)
    node.right = _Node(node.rows[~mask], node.value)
    node.rows = None  # type: ignore[assignment]
    return True


def _try_prune(tree, X, e, sigma2, params, leaves, prunable, rng):
    if not prunable:
        return False
    node, depth = prunable[rng.integers(len(prunable))]
    rows = np.concatenate([node.left.rows, node.right.rows])
    s_left = e[node.left.rows].sum()
    s_right = e[node.right.rows].sum()
    m_left, m_right = node.left.rows.size, node.right.rows.size
    b_after = len(leaves) - 1
    ps, ps_child = _psplit(params.alpha, params.beta, depth), _psplit(
        params.alpha, params.beta, depth + 1
    )
    log_acc = (
        np.log(params.p_grow) - np.log(params.p_prune)
        + np.log(len(prunable)) - np.log(b_after)
        - np.log(ps) - 2.0 * np.log1p(-ps_child) + np.log1p(-ps)
        + _log_marginal(m_left + m_right, s_left + s_right, sigma2, params.tau2)
        - _log_marginal(m_left, s_left, sigma2, params.tau2)
        - _log_marginal(m_right, s_right, sigma2, params.tau2)
    )
    if np.log(rng.random() + _TINY) >= log_acc:
        return False
    node.left = node.right = None
    node.var = -1
    node.rows = rows
    return True


def _try_change(tree, X, e, sigma2, params, split_probs, prunable, rng):
    if not prunable:
        return False
    node, _depth = prunable[rng.integers(len(prunable))]
    rows = np.concatenate([node.left.rows, node.right.rows])
    rule = _choose_rule(X, rows, split_probs, params.min_leaf, rng)
    if rule is None:
        return False
    var, cut, mask = rule
    e_rows = e[rows]
    s_all = e_rows.sum()
    s_new_left = e_rows[mask].sum()
    m_new_left = int(mask.sum())
    s_old_left = e[node.left.rows].sum()
    m_old_left = node.left.rows.size
    m = rows.size
    t2 = params.tau2
    log_acc = (
        _log_marginal(m_new_left, s_new_left, sigma2, t2)
        + _log_marginal(m - m_new_left, s_all - s_new_left, sigma2, t2)
        - _log_marginal(m_old_left, s_old_left, sigma2, t2)
        - _log_marginal(m - m_old_left, s_all - s_old_left, sigma2, t2)
    )
    if np.log(rng.random() + _TINY) >= log_acc:
        return False
    node.var, node.cut = var, cut
    node.left.rows = rows[mask]
    node.right.rows = rows[~mask]
    return True


def _update_tree(tree, X, e, sigma2, params, split_probs, rng, n):
    """One structural move plus a full conjugate leaf redraw; returns fit."""
    leaves, prunable = _scan(tree)
    u = rng.random()
    changed = False
    if u < params.p_grow:
        changed = _try_grow(tree, X, e, sigma2, params, split_probs, leaves, prunable, rng)
    elif u < params.p_grow + params.p_prune:
        changed = _try_prune(tree, X, e, sigma2, params, leaves, prunable, rng)
    else:
        changed = _try_change(tree, X, e, sigma2, params, split_probs, prunable, rng)
    if changed:
        leaves, _ = _scan(tree)
    z = rng.standard_normal(len(leaves))
    fit = np.empty(n)
    for i, (node, _d, _p) in enumerate(leaves):
        mean, var = leaf_posterior(node.rows.size, e[node.rows].sum(), sigma2, params.tau2)
        node.value = mean + np.sqrt(var) * z[i]
        fit[node.rows] = node.value
    return fit


def _contribution(tree, n):
    fit = np.empty(n)
    leaves, _ = _scan(tree)
    for node, _d, _p in leaves:
        fit[node.rows] = node.value
    return fit


def _snapshot_tree(root: _Node, value_scale: float):
    """Freeze the mutable tree into preorder flat arrays."""
    feature, threshold, left, right, value = [], [], [], [], []

    def emit(node) -> int:
        idx = len(feature)
        feature.append(node.var)
        threshold.append(node.cut if node.var >= 0 else np.nan)
        left.append(-1)
        right.append(-1)
        value.append(node.value * value_scale if node.is_leaf else np.nan)
        if not node.is_leaf:
            left[idx] = emit(node.left)
            right[idx] = emit(node.right)
        return idx

    emit(root)
    return (
        np.asarray(feature, dtype=np.int32),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int32),
        np.asarray(right, dtype=np.int32),
        np.asarray(value, dtype=float),
    )


def _dart_counts(trees, p):
    counts = np.zeros(p, dtype=np.int64)
    for tree in trees:
        stack = [tree]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                counts[node.var] += 1
                stack.extend((node.left, node.right))
    return counts


def run_continuous_chain(X, y, params: ChainParams, rng):
    """Run the continuous-outcome chain; yields per-draw state tuples.

    Returns a list of (trees, sigma2, split_probs) snapshots on the internal
    outcome scale, where trees are flat-array tuples.
    """
    n, p = X.shape
    trees = [_Node(np.arange(n)) for _ in range(params.n_trees)]
    total = np.zeros(n)
    sigma2 = params.sigma2_init
    split_probs = np.full(p, 1.0 / p)
    theta = float(p)
    draws = []
    for it in range(params.n_burn + params.n_keep):
        for tree in trees:
            g_old = _contribution(tree, n)
            e = y - total + g_old
            g_new = _update_tree(tree, X, e, sigma2, params, split_probs, rng, n)
            total += g_new - g_old
        resid = y - total
        sigma2 = draw_sigma2(float(resid @ resid), n, params.nu, params.lam, rng)
        if params.dart and it >= params.dart_warmup:
            counts = _dart_counts(trees, p)
            split_probs = update_dart_split_probs(counts, theta, rng)
            theta = draw_dart_theta(
                split_probs, params.dart_a, params.dart_b, float(p), rng, params.dart_grid
            )
        if it >= params.n_burn:
            draws.append(
                (
                    [_snapshot_tree(t, 1.0) for t in trees],
                    sigma2,
                    split_probs.copy(),
                )
            )
    return draws


def _draw_latent(mu, r_pos, u):
    """Truncated-normal probit latents: positive where r_pos, else negative."""
    p_neg = ndtr(-mu)  # mass below zero
    arg = np.where(r_pos, p_neg + u * (1.0 - p_neg), u * p_neg)
    arg = np.clip(arg, 1e-16, 1.0 - 1e-16)
    return mu + ndtri(arg)


def run_probit_chain(X, r, offset, params: ChainParams, rng):
    """Run the probit chain with latent-variable augmentation.

    `r` is a 0/1 vector; trees model the latent mean around `offset` with
    unit residual variance.
    """
    n, p = X.shape
    r_pos = np.asarray(r, dtype=bool)
    trees = [_Node(np.arange(n)) for _ in range(params.n_trees)]
    total = np.zeros(n)
    split_probs = np.full(p, 1.0 / p)
    theta = float(p)
    draws = []
    for it in range(params.n_burn + params.n_keep):
        mu = offset + total
        z = _draw_latent(mu, r_pos, rng.random(n))
        y_work = z - offset
        for tree in trees:
            g_old = _contribution(tree, n)
            e = y_work - total + g_old
            g_new = _update_tree(tree, X, e, 1.0, params, split_probs, rng, n)
            total += g_new - g_old
        if params.dart and it >= params.dart_warmup:
            counts = _dart_counts(trees, p)
            split_probs = update_dart_split_probs(counts, theta, rng)
            theta = draw_dart_theta(
                split_probs, params.dart_a, params.dart_b, float(p), rng, params.dart_grid
            )
        if it >= params.n_burn:
            draws.append(([_snapshot_tree(t, 1.0) for t in trees], None, split_probs.copy()))
    return draws
