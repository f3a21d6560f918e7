from __future__ import annotations

from dataclasses import dataclass

RULES = ("annealed", "fixed", "constant")


@dataclass(frozen=True)
class BandwidthSchedule:
    """Kernel bandwidth as a function of the output index ``i`` (1-based).

    - ``annealed``: ``h(i) = i ** (-1 / (4 + d))``
    - ``fixed``: ``h = T ** (-1 / (2 * beta + d))`` for ``T`` samples per machine
    - ``constant``: ``h`` as given
    """

    rule: str = "annealed"
    beta: float = 2.0
    h: float | None = None
    T: int | None = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown bandwidth rule {self.rule!r}; choose from {RULES}")
        if self.beta <= 0:
            raise ValueError("smoothness beta must be positive")
        if self.rule == "constant" and not (self.h and self.h > 0):
            raise ValueError("constant rule needs h > 0")

    def __call__(self, i: int, d: int, T: int | None = None) -> float:
        if self.rule == "annealed":
            return float(i) ** (-1.0 / (4.0 + d))
        if self.rule == "fixed":
            T = self.T if self.T is not None else T
            if T is None:
                raise ValueError("fixed bandwidth rule needs the per-machine sample count T")
            return float(T) ** (-1.0 / (2.0 * self.beta + d))
        return float(self.h)

    def describe(self) -> dict:
        return {"rule": self.rule, "beta": self.beta, "h": self.h, "T": self.T}
