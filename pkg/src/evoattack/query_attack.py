"""Evolutionary L-inf black-box attack.

A population of perturbed copies of the input image is initialised with
vertical stripes on the edge of the epsilon ball, then evolved with tournament
selection, two-point crossover, square mutations and single-individual
elitism. Fitness is the classification margin of the true class plus an L2
penalty, and lower is better. Each candidate is sent to the oracle exactly
once; its logits are cached and reused for selection and for the termination
check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model_runtime.oracle import QueryOracle, predict_label
from .tensor_ops import as_image, l2_dist, project_feasible

DEFAULT_P_THRESHOLDS = (40, 200, 800, 4000, 8000, 16000, 24000, 32000)
INIT_MODES = ("full_stripes", "sparse_stripes")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    eps: float
    lam: float = 1.0
    pop_size: int = 70
    tournament: int = 25
    max_generations: int = 600
    p0: float = 0.1
    p_thresholds: tuple[int, ...] = DEFAULT_P_THRESHOLDS
    seed: int = 0
    init_mode: str = "full_stripes"
    # Candidates are sent to the oracle k at a time and evaluation stops at the
    # first chunk holding a success. k = 1 charges exactly the queries up to
    # the first misclassified candidate; None sends whole generations, which
    # is faster but charges the rest of the winning generation too.
    eval_chunk: int | None = 1

    def __post_init__(self):
        object.__setattr__(self, "p_thresholds", tuple(int(t) for t in self.p_thresholds))
        if not (0.0 <= self.eps <= 1.0):
            raise ConfigError(f"eps must lie in [0, 1], got {self.eps}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.pop_size < 4 or (self.pop_size - 1) % 3:
            raise ConfigError(f"population size must be >= 4 with (N - 1) divisible by 3, got {self.pop_size}")
        if not (1 <= self.tournament <= self.pop_size):
            raise ConfigError(f"tournament size must lie in [1, {self.pop_size}], got {self.tournament}")
        if self.max_generations < 1:
            raise ConfigError(f"max_generations must be >= 1, got {self.max_generations}")
        if not (0.0 < self.p0 <= 1.0):
            raise ConfigError(f"p0 must lie in (0, 1], got {self.p0}")
        if list(self.p_thresholds) != sorted(self.p_thresholds):
            raise ConfigError("p halving thresholds must be ascending")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.eval_chunk is not None and self.eval_chunk < 1:
            raise ConfigError(f"eval_chunk must be >= 1, got {self.eval_chunk}")

    @property
    def budget(self) -> int:
        return self.pop_size * self.max_generations


@dataclass
class Candidate:
    image: np.ndarray
    logits: np.ndarray
    fitness: float


@dataclass
class AttackResult:
    success: bool
    adversarial: np.ndarray
    queries_used: int
    generations_run: int
    final_fitness: float
    adversarial_label: int
    original_label: int
    best_fitness_history: list[float] = field(default_factory=list)


def margin(logits, y: int) -> float:
    """True-class logit minus the best other logit."""
    logits = np.asarray(logits, dtype=np.float64)
    if not (0 <= y < logits.size):
        raise IndexError(f"label {y} outside 0..{logits.size - 1}")
    others = np.delete(logits, y)
    return float(logits[y] - others.max())


def fitness(logits, y: int, x_hat, x, lam: float) -> float:
    logits = np.asarray(logits)
    if logits.size < 2:
        raise ValueError("need at least two classes")
    return margin(logits, y) + lam * l2_dist(x_hat, x)


def _fitness_batch(logits: np.ndarray, y: int, images: np.ndarray, x: np.ndarray, lam: float) -> np.ndarray:
    others = logits.copy()
    others[:, y] = -np.inf
    diffs = (images - x[None]).reshape(len(images), -1)
    return logits[:, y] - others.max(axis=1) + lam * np.linalg.norm(diffs, axis=1)


def p_schedule(queries_used: int, p0: float = 0.1, thresholds=DEFAULT_P_THRESHOLDS) -> float:
    """``p0`` halved once for every threshold already reached (inclusive)."""
    passed = sum(1 for t in thresholds if t <= queries_used)
    return p0 * 0.5 ** passed


def square_size(p: float, height: int, width: int) -> int:
    # the epsilon keeps exact squares such as p*f == 100.00000000000001 from rounding up
    return max(1, math.ceil(math.sqrt(p * height * width) - 1e-9))


def _random_signs(rng: np.random.Generator, size) -> np.ndarray:
    return rng.integers(0, 2, size=size) * 2.0 - 1.0


def stripes_init(x, eps: float, n: int, mode: str = "full_stripes", rng: np.random.Generator | None = None):
    """``n`` feasible starting images near the edge of the epsilon ball.

    ``full_stripes`` shifts every column of every channel by +eps or -eps.
    ``sparse_stripes`` adds, per channel, one randomly placed width-1 column
    whose entries are independently +eps or -eps.
    """
    if rng is None:
        rng = np.random.default_rng()
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    out = []
    for _ in range(n):
        if mode == "full_stripes":
            delta = eps * _random_signs(rng, (c, 1, w))
            cand = x + delta
        elif mode == "sparse_stripes":
            cand = x.copy()
            for ch in range(c):
                col = rng.integers(0, w)
                cand[ch, :, col] += eps * _random_signs(rng, h)
        else:
            raise ConfigError(f"unknown init mode {mode!r}")
        out.append(project_feasible(cand, x, eps))
    return out


def tournament_select(pop, t: int, rng: np.random.Generator) -> Candidate:
    """Best of ``t`` members drawn without replacement; ties go to the lower
    population index."""
    if not (1 <= t <= len(pop)):
        raise ValueError(f"tournament size {t} outside [1, {len(pop)}]")
    picks = rng.choice(len(pop), size=t, replace=False)
    best = min(picks, key=lambda i: (pop[i].fitness, i))
    return pop[best]


def crossover_segment(a: np.ndarray, b: np.ndarray, i: int, j: int):
    """Swap the channel-major flat segment ``[i, j)`` between ``a`` and ``b``."""
    fa, fb = a.ravel().copy(), b.ravel().copy()
    fa[i:j], fb[i:j] = b.ravel()[i:j], a.ravel()[i:j]
    return fa.reshape(a.shape), fb.reshape(b.shape)


def two_point_crossover(p1, p2, origin, eps: float, rng: np.random.Generator):
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise ValueError(f"parents differ in shape: {p1.shape} vs {p2.shape}")
    i, j = sorted(int(v) for v in rng.integers(0, p1.size + 1, size=2))
    c1, c2 = crossover_segment(p1, p2, i, j)
    return project_feasible(c1, origin, eps), project_feasible(c2, origin, eps)


def square_mutation(x_hat, origin, eps: float, p: float, rng: np.random.Generator) -> np.ndarray:
    """Add +-2 eps (sign drawn per channel) over one random k x k window,
    k = ceil(sqrt(p * h * w)), then project back onto the feasible set."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    c, h, w = x_hat.shape
    if not (0.0 < p <= 1.0):
        raise ValueError(f"p must lie in (0, 1], got {p}")
    k = square_size(p, h, w)
    if k > min(h, w):
        raise ValueError(f"square of side {k} does not fit a {h}x{w} image")
    row = int(rng.integers(0, h - k + 1))
    col = int(rng.integers(0, w - k + 1))
    tau = 2.0 * eps * _random_signs(rng, c)
    out = x_hat.copy()
    out[:, row:row + k, col:col + k] += tau[:, None, None]
    return project_feasible(out, origin, eps)


def _evaluate(oracle: QueryOracle, images, x, y, cfg: AttackConfig):
    """Query ``images`` in population order. Returns the evaluated candidates
    and the index of the first misclassified one (or None)."""
    chunk = cfg.eval_chunk or max(len(images), 1)
    done: list[Candidate] = []
    for start in range(0, len(images), chunk):
        batch = np.stack(images[start:start + chunk])
        logits = oracle.predict_logits_batch(batch)
        fits = _fitness_batch(logits, y, batch, x, cfg.lam)
        for img, lg, fv in zip(batch, logits, fits):
            done.append(Candidate(img, lg, float(fv)))
        labels = np.argmax(logits, axis=1)
        wrong = np.flatnonzero(labels != y)
        if wrong.size:
            return done, start + int(wrong[0])
    return done, None


def _best_index(pop) -> int:
    return min(range(len(pop)), key=lambda i: (pop[i].fitness, i))


def attack(oracle: QueryOracle, x, y: int, cfg: AttackConfig) -> AttackResult:
    """Run the evolutionary search against ``oracle`` for image ``x`` of true label ``y``.

    The query budget is ``pop_size * max_generations``. The first generation
    costs ``pop_size`` queries, every later one ``pop_size - 1`` because the
    elite keeps its cached logits, and the generation that would overrun the
    budget is evaluated only as far as the budget allows. On success the
    first misclassified candidate (lowest population index) of the
    terminating generation is returned; otherwise the best candidate. The
    chunk size only changes how many queries a success is charged, never
    which candidate wins.
    """
    x = as_image(x)
    if tuple(x.shape) != tuple(oracle.input_shape):
        raise ValueError(f"image shape {x.shape} does not match oracle input {oracle.input_shape}")
    rng = np.random.default_rng(cfg.seed)
    n, budget = cfg.pop_size, cfg.budget
    used = 0
    carried: list[Candidate] = []
    pending = stripes_init(x, cfg.eps, n, cfg.init_mode, rng)
    history: list[float] = []
    generations = 0
    while True:
        fresh, hit = _evaluate(oracle, pending[:budget - used], x, y, cfg)
        used += len(fresh)
        pop = carried + fresh
        generations += 1
        history.append(min(c.fitness for c in pop))
        if hit is not None:
            winner = fresh[hit]
            return AttackResult(True, winner.image, used, generations, winner.fitness,
                                predict_label(winner.logits), y, history)
        if used >= budget:
            break
        elite = pop[_best_index(pop)]
        p = p_schedule(used, cfg.p0, cfg.p_thresholds)
        children = []
        for _ in range((n - 1) // 3):
            parent1 = tournament_select(pop, cfg.tournament, rng)
            parent2 = tournament_select(pop, cfg.tournament, rng)
            off1, off2 = two_point_crossover(parent1.image, parent2.image, x, cfg.eps, rng)
            children += [off1, square_mutation(off1, x, cfg.eps, p, rng), square_mutation(off2, x, cfg.eps, p, rng)]
        carried, pending = [elite], children
    best = pop[_best_index(pop)]
    label = predict_label(best.logits)
    return AttackResult(label != y, best.image, used, generations, best.fitness, label, y, history)
