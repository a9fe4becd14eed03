"""Shared experiment definitions used by the acceptance suite and the scripts."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import partial
from typing import Sequence

import numpy as np

from .data import SyntheticDomainSpec, TwoDomainData, make_two_domain_dataset
from .harness import RunConfig, Selection, select_model

LAMBDAS = (0.3, 1.0, 3.0)
GAMMAS = (0.3, 1.0)


def ordering_grids(base: RunConfig | None = None) -> dict[str, list[RunConfig]]:
    """Hyperparameter grid per objective for the hard-shift comparison."""
    base = base or RunConfig(val_size=200)
    cfg = partial(replace, base)
    return {
        "source_only": [cfg(objective="source_only")],
        "dann": [cfg(objective="dann", lam=lam) for lam in LAMBDAS],
        "dann_ss": [cfg(objective="dann_ss", lam=lam) for lam in LAMBDAS],
        "dann_em": [cfg(objective="dann_em", lam=lam, gamma=g) for lam in LAMBDAS for g in GAMMAS],
    }


@dataclass
class OrderingReport:
    selections: dict[str, Selection]
    checksum: str
    notes: dict = field(default_factory=dict)

    def accuracy(self, objective: str) -> float:
        return self.selections[objective].best.mean_test

    def entropy(self, objective: str) -> float:
        return float(np.mean(self.selections[objective].best.entropy))

    def rows(self) -> list[dict]:
        out = []
        for name, sel in self.selections.items():
            b = sel.best
            out.append({"objective": name, "selected": b.config.label(), "val": b.mean_val, "test": b.mean_test,
                        "stderr": b.stderr_test, "entropy": float(np.mean(b.entropy))})
        return out


def adaptation_ordering(seeds: Sequence[int] = tuple(range(10)), spec: SyntheticDomainSpec | None = None,
                        base: RunConfig | None = None, data: TwoDomainData | None = None) -> OrderingReport:
    """Select the best grid point per objective by validation accuracy and report its test accuracy and entropy."""
    data = data or make_two_domain_dataset(spec or SyntheticDomainSpec())
    sels = {name: select_model(grid, data, seeds) for name, grid in ordering_grids(base).items()}
    return OrderingReport(sels, data.checksum())
