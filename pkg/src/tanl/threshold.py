"""Decision threshold: fixed gamma or variance-minimizing dynamic gamma.

The dynamic mode treats the score history as two clusters split at
gamma and picks the split minimizing the sum of intra-cluster
(population) variances, searched exactly over midpoints of consecutive
distinct sorted scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GammaPolicy:
    """Threshold policy: ``fixed`` (requires a value) or ``dynamic``."""

    mode: str = "dynamic"
    fixed_value: float | None = None

    def __post_init__(self):
        if self.mode not in ("fixed", "dynamic"):
            raise ValueError(f"unknown gamma mode {self.mode!r}")
        if self.mode == "fixed":
            if self.fixed_value is None:
                raise ValueError("fixed gamma mode requires a value")
            if not 0.0 <= self.fixed_value <= 1.0:
                raise ValueError(f"fixed gamma must lie in [0, 1], got {self.fixed_value}")

    @classmethod
    def parse(cls, text: str) -> "GammaPolicy":
        """Parse ``dynamic`` or ``fixed:<value>``."""
        text = text.strip()
        if text == "dynamic":
            return cls(mode="dynamic")
        if text.startswith("fixed:"):
            return cls(mode="fixed", fixed_value=float(text.split(":", 1)[1]))
        raise ValueError(f"cannot parse gamma policy {text!r} (use 'dynamic' or 'fixed:<v>')")

    def __str__(self) -> str:
        return "dynamic" if self.mode == "dynamic" else f"fixed:{self.fixed_value}"


def decide(score: float, gamma: float) -> bool:
    """Eq.-style decision: in-distribution iff ``score >= gamma`` (inclusive)."""
    return score >= gamma


@dataclass
class DynamicGammaResult:
    gamma: float
    objective: float
    degenerate: bool = False


def dynamic_gamma(scores: np.ndarray) -> DynamicGammaResult:
    """Threshold minimizing var(upper cluster) + var(lower cluster).

    Candidates are the midpoints between consecutive distinct sorted
    scores, so neither side is ever empty; ties break to the smaller
    gamma. A history with a single distinct value is degenerate and
    returns that value.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.size
    if n < 2:
        raise ValueError(f"dynamic gamma needs at least two scores, got {n}")
    s = np.sort(scores)
    boundaries = np.nonzero(s[:-1] < s[1:])[0]
    if boundaries.size == 0:
        return DynamicGammaResult(gamma=float(s[0]), objective=0.0, degenerate=True)

    c1 = np.cumsum(s)
    c2 = np.cumsum(s * s)
    k = boundaries + 1  # lower-cluster sizes, one per candidate split
    lower_mean = c1[boundaries] / k
    lower_var = c2[boundaries] / k - lower_mean**2
    upper_n = n - k
    upper_sum = c1[-1] - c1[boundaries]
    upper_sq = c2[-1] - c2[boundaries]
    upper_mean = upper_sum / upper_n
    upper_var = upper_sq / upper_n - upper_mean**2
    objective = np.maximum(lower_var, 0.0) + np.maximum(upper_var, 0.0)

    best = int(np.argmin(objective))  # first minimum = smallest candidate gamma
    gamma = 0.5 * (s[boundaries[best]] + s[boundaries[best] + 1])
    return DynamicGammaResult(gamma=float(gamma), objective=float(objective[best]))
