"""Experiment orchestration: pick correctly classified images, attack each with
a fresh query counter, aggregate success rate and median query count."""

from __future__ import annotations

import logging
import platform
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..baselines import BaselineConfig, random_search_attack
from ..defenses import DefenseSpec, defended_oracle
from ..model_runtime import Dataset, Model, QueryOracle, load_weights
from ..query_attack import AttackConfig, attack
from ..tensor_ops import l2_dist, linf_dist
from .datasets import load_cifar_bin, load_mnist_idx

log = logging.getLogger(__name__)

ATTACKS = ("query", "random-search")
MEDIAN_RULE = (
    "median of queries_used over all attacked images, failed attacks counted at the full budget; "
    "mean of the two middle values for an even count"
)


@dataclass
class ExperimentConfig:
    model_path: str | None = None
    images_path: str | None = None
    labels_path: str | None = None
    data_format: str = "idx"  # or "cifar"
    attack: str = "query"
    eps: float = 60 / 255
    lam: float = 1.0
    pop_size: int = 70
    tournament: int = 25
    budget: int = 42_000
    p0: float = 0.1
    init_mode: str = "full_stripes"
    eval_chunk: int | None = 1
    defense: str | None = None
    count: int = 200
    seed: int = 0
    out_dir: str | None = None
    workers: int = 1
    model_name: str | None = None

    def __post_init__(self):
        if self.attack not in ATTACKS:
            raise ValueError(f"attack must be one of {ATTACKS}, got {self.attack!r}")
        if self.budget < self.pop_size:
            raise ValueError(f"budget {self.budget} is smaller than one population ({self.pop_size})")
        if self.count < 1:
            raise ValueError("image count must be >= 1")
        if self.defense is not None:
            DefenseSpec.parse(self.defense)

    @property
    def generations(self) -> int:
        return self.budget // self.pop_size

    @property
    def effective_budget(self) -> int:
        """Query cap per image actually used; ``budget`` rounded down to whole
        populations for the evolutionary attack."""
        if self.attack == "query":
            return self.pop_size * self.generations
        return self.budget

    def attack_config(self, seed: int) -> AttackConfig:
        return AttackConfig(
            eps=self.eps, lam=self.lam, pop_size=self.pop_size, tournament=self.tournament,
            max_generations=self.generations, p0=self.p0, seed=seed, init_mode=self.init_mode,
            eval_chunk=self.eval_chunk,
        )

    def baseline_config(self, seed: int) -> BaselineConfig:
        return BaselineConfig(eps=self.eps, budget=self.budget, p0=self.p0, seed=seed)


@dataclass
class EvalSelection:
    dataset: Dataset
    source_indices: list[int]
    verification_queries: int
    drawn: int


def select_eval_set(oracle: QueryOracle, dataset: Dataset, m: int, seed: int) -> EvalSelection:
    """Draw images uniformly without replacement, keeping those ``oracle``
    labels correctly, until ``m`` are kept or the dataset runs out.

    Verification queries go to ``oracle`` and are reported here, never
    charged to an attack.
    """
    if len(dataset) == 0:
        raise ValueError("cannot select from an empty dataset")
    order = np.random.default_rng(seed).permutation(len(dataset))
    before = oracle.query_count
    kept: list[int] = []
    drawn = 0
    for idx in order:
        if len(kept) >= m:
            break
        drawn += 1
        logits = oracle.predict_logits(dataset.images[idx])
        if int(np.argmax(logits)) == int(dataset.labels[idx]):
            kept.append(int(idx))
    if len(kept) < m:
        warnings.warn(f"only {len(kept)} of the requested {m} images are classified correctly", RuntimeWarning)
    return EvalSelection(dataset.subset(kept), kept, oracle.query_count - before, drawn)


@dataclass
class ExperimentReport:
    config: dict
    rows: list[dict]
    asr: float
    median_queries: float | None
    budget: int
    eval_info: dict
    runtime: dict = field(default_factory=dict)
    median_rule: str = MEDIAN_RULE

    @property
    def attacked(self) -> list[dict]:
        return [r for r in self.rows if r.get("error") is None]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentReport":
        return cls(**data)


def summarize(rows: list[dict], budget: int) -> tuple[float, float | None]:
    """(ASR, median queries) over the rows without an error marker; the
    median is None when nothing was attacked."""
    done = [r for r in rows if r.get("error") is None]
    if not done:
        return 0.0, None
    asr = sum(1 for r in done if r["success"]) / len(done)
    counted = [r["queries_used"] if r["success"] else budget for r in done]
    return asr, float(np.median(counted))


def _make_oracle(model, defense: str | None) -> QueryOracle:
    oracle = QueryOracle(model)
    return defended_oracle(oracle, defense) if defense else oracle


def _attack_row(model, cfg: ExperimentConfig, index: int, source_index: int, x, y: int) -> dict:
    row = {"index": index, "source_index": source_index, "label": y, "error": None}
    try:
        oracle = _make_oracle(model, cfg.defense)
        seed = cfg.seed + index
        if cfg.attack == "query":
            result = attack(oracle, x, y, cfg.attack_config(seed))
        else:
            result = random_search_attack(oracle, x, y, cfg.baseline_config(seed))
        if oracle.query_count != result.queries_used:
            raise RuntimeError(f"oracle counted {oracle.query_count} queries, attack reported {result.queries_used}")
        row.update(
            seed=seed,
            success=bool(result.success),
            queries_used=int(result.queries_used),
            oracle_queries=int(oracle.query_count),
            generations_run=int(result.generations_run),
            final_fitness=float(result.final_fitness),
            adversarial_label=int(result.adversarial_label),
            linf=linf_dist(result.adversarial, x),
            l2=l2_dist(result.adversarial, x),
            shape=list(x.shape),
            original=[float(v) for v in np.ravel(x)],
            adversarial=[float(v) for v in np.ravel(result.adversarial)],
        )
    except Exception as exc:  # one bad image must not sink the run
        log.exception("image %d failed", index)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data_format == "idx":
        return load_mnist_idx(cfg.images_path, cfg.labels_path)
    if cfg.data_format == "cifar":
        return load_cifar_bin(cfg.images_path)
    raise ValueError(f"unknown data format {cfg.data_format!r}")


def run_experiment(cfg: ExperimentConfig, model=None, dataset: Dataset | None = None) -> ExperimentReport:
    """Run ``cfg``. ``model``/``dataset`` override the paths in the config."""
    started = time.time()
    if model is None:
        spec, weights = load_weights(cfg.model_path)
        model = Model(spec, weights)
    if dataset is None:
        dataset = load_dataset(cfg)

    selection = select_eval_set(_make_oracle(model, cfg.defense), dataset, cfg.count, cfg.seed)
    chosen = selection.dataset
    jobs = [
        (i, selection.source_indices[i], chosen.images[i], int(chosen.labels[i]))
        for i in range(len(chosen))
    ]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(lambda job: _attack_row(model, cfg, *job), jobs))
    else:
        rows = [_attack_row(model, cfg, *job) for job in jobs]

    budget = cfg.effective_budget
    asr, median = summarize(rows, budget)
    config = asdict(cfg)
    config.update(generations=cfg.generations, effective_budget=budget)
    config.pop("out_dir", None)
    config.pop("workers", None)
    return ExperimentReport(
        config=config,
        rows=rows,
        asr=asr,
        median_queries=median,
        budget=budget,
        eval_info={
            "requested": cfg.count,
            "selected": len(chosen),
            "drawn": selection.drawn,
            "verification_queries": selection.verification_queries,
        },
        runtime={
            "seconds": round(time.time() - started, 3),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "workers": cfg.workers,
        },
    )
