"""Single-candidate random square search, the comparison baseline for the
evolutionary attack.

It starts from one full-stripes image and proposes square mutations of the
current candidate. A proposal is kept only if it strictly lowers the
unregularised margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_runtime.oracle import QueryOracle, predict_label
from .query_attack import (
    DEFAULT_P_THRESHOLDS,
    AttackResult,
    ConfigError,
    margin,
    p_schedule,
    square_mutation,
    stripes_init,
)
from .tensor_ops import as_image


@dataclass(frozen=True)
class BaselineConfig:
    eps: float
    budget: int = 42_000
    p0: float = 0.1
    p_thresholds: tuple[int, ...] = DEFAULT_P_THRESHOLDS
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.eps <= 1.0):
            raise ConfigError(f"eps must lie in [0, 1], got {self.eps}")
        if self.budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.budget}")
        if not (0.0 < self.p0 <= 1.0):
            raise ConfigError(f"p0 must lie in (0, 1], got {self.p0}")


def random_search_attack(oracle: QueryOracle, x, y: int, cfg: BaselineConfig) -> AttackResult:
    """Returns an ``AttackResult`` whose ``best_fitness_history`` is the
    sequence of accepted margins. At most ``budget + 1`` queries: one for the
    starting image plus one per proposal."""
    x = as_image(x)
    rng = np.random.default_rng(cfg.seed)
    current = stripes_init(x, cfg.eps, 1, "full_stripes", rng)[0]
    logits = oracle.predict_logits(current)
    used = 1
    best = margin(logits, y)
    accepted = [best]
    label = predict_label(logits)
    proposals = 0
    while label == y and proposals < cfg.budget:
        p = p_schedule(used, cfg.p0, cfg.p_thresholds)
        proposal = square_mutation(current, x, cfg.eps, p, rng)
        prop_logits = oracle.predict_logits(proposal)
        used += 1
        proposals += 1
        value = margin(prop_logits, y)
        prop_label = predict_label(prop_logits)
        # a misclassifying proposal ends the run even on an exact margin tie
        if value < best or prop_label != y:
            current, logits, best, label = proposal, prop_logits, value, prop_label
            accepted.append(best)
    return AttackResult(label != y, current, used, proposals, best, label, y, accepted)
