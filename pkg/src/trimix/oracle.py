"""Deliberately naive reference implementations for certification.

Everything here is written as explicit loops over definitions, shares no
code with the optimized modules it checks, and is only meant to be fast
enough for tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateFeatureError, NumericError


@dataclass
class OracleReport:
    case_id: str
    max_abs_diff: float
    tolerance: float
    seed: int

    @property
    def passed(self) -> bool:
        return self.max_abs_diff < self.tolerance

    def describe(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{self.case_id}: max |diff| {self.max_abs_diff:.3e} "
            f"(tolerance {self.tolerance:g}, seed {self.seed}) {status}"
        )


def naive_correlation(z: np.ndarray, z2: np.ndarray, mode: str) -> np.ndarray:
    """Correlation with explicit square-root denominators, entry by entry."""
    z = np.asarray(z, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z.shape != z2.shape or z.ndim != 2:
        raise ContractError(f"naive_correlation: need equal BxD inputs, got {z.shape} and {z2.shape}")
    b, d = z.shape
    if mode == "features":
        out = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                num = 0.0
                den_a = 0.0
                den_b = 0.0
                for s in range(b):
                    num += z[s, i] * z2[s, j]
                    den_a += z[s, i] ** 2
                    den_b += z2[s, j] ** 2
                if den_a == 0.0 or den_b == 0.0:
                    raise DegenerateFeatureError(
                        f"naive_correlation: zero denominator at feature pair ({i}, {j})"
                    )
                out[i, j] = num / (math.sqrt(den_a) * math.sqrt(den_b))
        return out
    if mode == "samples":
        out = np.empty((b, b))
        for m in range(b):
            for n in range(b):
                num = 0.0
                den_a = 0.0
                den_b = 0.0
                for a in range(d):
                    num += z[m, a] * z2[n, a]
                    den_a += z[m, a] ** 2
                    den_b += z2[n, a] ** 2
                if den_a == 0.0 or den_b == 0.0:
                    raise DegenerateFeatureError(
                        f"naive_correlation: zero denominator at sample pair ({m}, {n})"
                    )
                out[m, n] = num / (math.sqrt(den_a) * math.sqrt(den_b))
        return out
    raise ContractError(f"naive_correlation: unknown mode {mode!r}")


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"naive_matmul: bad shapes {a.shape} x {b.shape}")
    p, q = a.shape
    r = b.shape[1]
    out = np.zeros((p, r))
    for i in range(p):
        for j in range(r):
            acc = 0.0
            for s in range(q):
                acc += a[i, s] * b[s, j]
            out[i, j] = acc
    return out


def naive_bt_terms(c: np.ndarray) -> tuple[float, float]:
    """Invariance and off-diagonal redundancy sums, as plain double loops."""
    c = np.asarray(c, dtype=np.float64)
    d = c.shape[0]
    l_inv = 0.0
    l_rr = 0.0
    for i in range(d):
        l_inv += (1.0 - c[i, i]) ** 2
        for j in range(d):
            if j != i:
                l_rr += c[i, j] ** 2
    return l_inv, l_rr


def naive_mean_abs(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    total = 0.0
    for x, y in zip(a.reshape(-1), b.reshape(-1)):
        total += abs(x - y)
    return total / a.size


def finite_diff(loss_fn, params: list, h: float = 1e-5) -> list:
    """Central differences per coordinate over in-place perturbed arrays.

    `loss_fn` takes no arguments and must depend on `params` (a list of
    float64 arrays) only through their current contents.
    """
    grads = []
    for arr in params:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn())
            flat[i] = orig - h
            f_minus = float(loss_fn())
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError(f"finite_diff: non-finite loss at coordinate {i}")
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Coordinate-wise |a-b| / max(1, |a|, |b|), reduced with max.

    The unit floor keeps negligible coordinates from inflating the
    metric; large coordinates are compared relatively.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def naive_knn_predict(
    train_feats: np.ndarray, train_labels: np.ndarray, test_feats: np.ndarray, k: int
) -> np.ndarray:
    """Full-sort cosine KNN: sort all similarities, vote, tie-break by
    summed similarity then smaller class id."""
    def unit(rows):
        out = np.array(rows, dtype=np.float64)
        for i in range(out.shape[0]):
            norm = math.sqrt(float((out[i] ** 2).sum()))
            if norm < 1e-12:
                raise DegenerateFeatureError(f"naive_knn: zero-norm row {i}")
            out[i] = out[i] / norm
        return out

    train = unit(train_feats)
    test = unit(test_feats)
    preds = np.empty(test.shape[0], dtype=np.int64)
    for i in range(test.shape[0]):
        sims = [float(np.dot(test[i], train[j])) for j in range(train.shape[0])]
        ranked = sorted(range(len(sims)), key=lambda j: (-sims[j], j))[:k]
        counts: dict[int, int] = {}
        weights: dict[int, float] = {}
        for j in ranked:
            cls = int(train_labels[j])
            counts[cls] = counts.get(cls, 0) + 1
            weights[cls] = weights.get(cls, 0.0) + sims[j]
        best = sorted(counts, key=lambda cls: (-counts[cls], -weights[cls], cls))
        preds[i] = best[0]
    return preds


def reference_adam(
    grad_fn, theta0: float, lr: float, steps: int,
    beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0,
) -> list:
    """Scalar Adam trajectory, one float at a time; returns theta after each step."""
    theta = float(theta0)
    m = 0.0
    v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = float(grad_fn(theta)) + weight_decay * theta
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        theta -= lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out
