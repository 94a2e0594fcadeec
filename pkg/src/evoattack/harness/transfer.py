"""Transferability: do adversarial images crafted on one model also fool another?"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model_runtime import QueryOracle
from .experiment import ExperimentReport


@dataclass
class TransferResult:
    eps: float
    source_successes: int
    evaluated: int
    transferred: int
    dropped_unclean: int
    target_queries: int

    @property
    def tsr(self) -> float:
        return self.transferred / self.evaluated if self.evaluated else float("nan")


def run_transferability(source_report, target_oracle: QueryOracle, filter_clean: bool = False) -> dict[float, TransferResult]:
    """Transfer success rate per epsilon.

    ``source_report`` is one report or a list of them (one per epsilon). Each
    source-successful adversarial image costs one target query. With
    ``filter_clean`` the original image is checked on the target first (one
    more query) and rows it already misclassifies are dropped.
    """
    reports = source_report if isinstance(source_report, (list, tuple)) else [source_report]
    out: dict[float, TransferResult] = {}
    for report in reports:
        if isinstance(report, dict):
            report = ExperimentReport.from_dict(report)
        eps = float(report.config["eps"])
        wins = [r for r in report.attacked if r["success"]]
        if not wins:
            raise ValueError(f"source report at eps={eps:.6g} has no successful adversarial images")
        before = target_oracle.query_count
        evaluated = transferred = dropped = 0
        for row in wins:
            shape = tuple(row["shape"])
            if filter_clean:
                original = np.asarray(row["original"], dtype=np.float64).reshape(shape)
                if int(np.argmax(target_oracle.predict_logits(original))) != row["label"]:
                    dropped += 1
                    continue
            adv = np.asarray(row["adversarial"], dtype=np.float64).reshape(shape)
            label = int(np.argmax(target_oracle.predict_logits(adv)))
            evaluated += 1
            transferred += int(label != row["label"])
        out[eps] = TransferResult(eps, len(wins), evaluated, transferred, dropped, target_oracle.query_count - before)
    return out
