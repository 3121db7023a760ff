"""Independent reference implementations used to check the package.

Nothing here imports the code under test except plain data types, so a bug
in the package cannot hide behind the same bug in its oracle.
"""

from __future__ import annotations

import itertools

import numpy as np


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` (modified in place, then restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        grad[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def brute_force_valid(k: int, source: tuple[int, ...], target: tuple[int, ...]) -> bool:
    """Acceptance rule written out from scratch: a source state, a nonempty target, k in 1..10."""
    has_source_state = any(source[3 * j] for j in range(k + 1))
    return has_source_state and any(target) and 1 <= k <= 10


def all_mask_pairs(k: int):
    n = 3 * k + 3
    for src in itertools.product((0, 1), repeat=n):
        for tgt in itertools.product((0, 1), repeat=n):
            yield src, tgt


def space_size_by_counting(k_max: int, n_ops: int) -> int:
    """Sum over horizons of 2^(3k+3) * 2^(3k+3) mask pairs, times operators."""
    total = 0
    for k in range(1, k_max + 1):
        n = 3 * k + 3
        total += (1 << n) * (1 << n)
    return total * n_ops


def element_bits(names, k: int) -> tuple[int, ...]:
    """Bits for element names like "s1", "a0", "r3" over a horizon-k window."""
    bits = [0] * (3 * k + 3)
    for name in names:
        kind = "sar".index(name[0])
        bits[3 * int(name[1:]) + kind] = 1
    return tuple(bits)


def subset_pattern(src_bits, tgt_bits, pattern_src, pattern_tgt) -> bool:
    """Pattern check by set inclusion on element-name sets."""
    def names(bits):
        return {f"{'sar'[i % 3]}{i // 3}" for i, b in enumerate(bits) if b}

    return set(pattern_src) <= names(src_bits) and set(pattern_tgt) <= names(tgt_bits)


# -- numpy forward references for the ten operators -----------------------------

def _unit(x, eps):
    return x / np.sqrt((x * x).sum(axis=1, keepdims=True) + eps)


def _lse(m):
    mx = m.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(m - mx).sum(axis=1, keepdims=True)))[:, 0]


def reference_operator_loss(measure: str, negatives: bool, y, y_hat, w=None, eps=1e-8) -> float:
    """Loss value computed directly with numpy, one formula per operator."""
    if measure in ("mse", "nmse"):
        if measure == "nmse":
            y, y_hat = _unit(y, eps), _unit(y_hat, eps)
        per_row = ((y - y_hat) ** 2).mean(axis=1)
        if negatives:
            neg = np.roll(y_hat, -1, axis=0)
            per_row = per_row - ((y - neg) ** 2).mean(axis=1)
        return float(per_row.mean())
    if measure == "inner":
        m = y @ y_hat.T
    elif measure == "bilinear":
        m = y @ w @ y_hat.T
    elif measure == "cosine":
        m = _unit(y, eps) @ _unit(y_hat, eps).T
    else:
        raise ValueError(measure)
    diag = np.diag(m)
    if negatives:
        return float((_lse(m) - diag).mean())
    return float(-diag.mean())


# -- frozen reference values ---------------------------------------------------

# scipy.stats.ttest_ind(xs, ys, equal_var=False), run once and frozen
WELCH_REFERENCE = [
    ([1, 2, 3, 4, 5], [2, 3, 4, 5, 6], -1.0, 0.34659350708733416),
    ([0.5, 1.7, 2.2, 3.9, 4.1, 5.5], [2.0, 2.1, 2.9, 6.5], -0.3015287178180851, 0.7734166666759394),
]

# scripted reach controller on pointmass-dense, 20 episodes, seed 0
CONTROLLER_RETURN = 181.0701920373166


def controller_return_vectorized(episodes: int = 20, seed: int = 0) -> float:
    """All episodes stepped together as arrays; same physics written independently."""
    ep_seeds = np.random.SeedSequence(seed).generate_state(episodes)
    starts = [np.random.default_rng(int(s)).uniform(-0.9, 0.9, size=4) for s in ep_seeds]
    p = np.array([s[:2] for s in starts])
    g = np.array([s[2:] for s in starts])
    v = np.zeros_like(p)
    total = np.zeros(episodes)
    for _ in range(200):
        act = np.clip(2.0 * (g - p) - v, -1.0, 1.0)
        v = np.clip(v + 0.5 * act * 0.05, -1.0, 1.0)
        p = np.clip(p + v * 0.05, -1.0, 1.0)
        total += 1.0 - np.linalg.norm(p - g, axis=1) / (2.0 * np.sqrt(2.0))
    return float(total.mean())
