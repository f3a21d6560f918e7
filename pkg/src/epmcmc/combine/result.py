from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CombineError(ValueError):
    """Invalid input to a combination method."""


@dataclass
class CombineResult:
    """Combined samples plus bookkeeping.

    ``n_weight_evals`` counts mixture-weight evaluations of proposed IMG
    components; ``op_count`` is a rough floating-point operation count used by
    the modeled clock.
    """

    samples: np.ndarray
    method: str
    accept_rate: float = float("nan")
    n_weight_evals: int = 0
    wall_time: float = 0.0
    op_count: int = 0
    meta: dict = field(default_factory=dict)
    components: np.ndarray | None = None
