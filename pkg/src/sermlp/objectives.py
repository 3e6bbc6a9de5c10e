"""Correlation metrics and regression losses for valence/arousal/dominance prediction.

All statistics are population statistics (divide by n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _pair(x, y, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {x.size}")
    return x, y


def _moments(x: np.ndarray, y: np.ndarray):
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    return mx, my, np.mean(dx * dx), np.mean(dy * dy), np.mean(dx * dy)


def pearson(x, y) -> float:
    x, y = _pair(x, y, 2)
    _, _, vx, vy, cxy = _moments(x, y)
    if vx == 0 or vy == 0:
        raise ValueError("undefined correlation: constant input")
    return float(np.clip(cxy / np.sqrt(vx * vy), -1.0, 1.0))


def ccc(x, y) -> float:
    """Concordance correlation coefficient of predictions ``x`` against gold ``y``.

    Uses cov(x, y) in place of rho * sigma_x * sigma_y, so a constant prediction gives 0
    instead of 0/0. Two identical constants give 1.
    """
    x, y = _pair(x, y, 2)
    mx, my, vx, vy, cxy = _moments(x, y)
    denom = vx + vy + (mx - my) ** 2
    if denom == 0:
        return 1.0
    return float(2.0 * cxy / denom)


def ccc_loss(x, y) -> float:
    return 1.0 - ccc(x, y)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0 / 3.0
    beta: float = 1.0 / 3.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta > 1.0 + 1e-12:
            raise ValueError(f"invalid loss weights alpha={self.alpha}, beta={self.beta}")

    @property
    def gamma(self) -> float:
        return 1.0 - self.alpha - self.beta

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


def total_ccc_loss(lv: float, la: float, ld: float, w: LossWeights | None = None) -> float:
    w = w or LossWeights()
    return w.alpha * lv + w.beta * la + w.gamma * ld


def mse(x, y) -> float:
    x, y = _pair(x, y, 1)
    d = x - y
    return float(np.mean(d * d))


def total_mse(mv: float, ma: float, md: float) -> float:
    return (mv + ma + md) / 3.0


@dataclass(frozen=True)
class EvalTriple:
    ccc_v: float
    ccc_a: float
    ccc_d: float

    @property
    def mean(self) -> float:
        return (self.ccc_v + self.ccc_a + self.ccc_d) / 3.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.ccc_v, self.ccc_a, self.ccc_d, self.mean


def evaluate(predictions, gold) -> EvalTriple:
    """Per-dimension CCC. Both arguments are (v, a, d) triples of vectors, or (n, 3) arrays.

    Callers pass predictions already mapped back to the label space of ``gold``.
    """
    p = _as_columns(predictions)
    g = _as_columns(gold)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != gold shape {g.shape}")
    return EvalTriple(*(ccc(p[:, i], g[:, i]) for i in range(3)))


def _as_columns(triple) -> np.ndarray:
    if isinstance(triple, np.ndarray) and triple.ndim == 2 and triple.shape[1] == 3:
        return triple.astype(np.float64)
    cols = [np.asarray(c, dtype=np.float64).ravel() for c in triple]
    if len(cols) != 3:
        raise ValueError("expected three dimensions (valence, arousal, dominance)")
    return np.column_stack(cols)
