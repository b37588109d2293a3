"""Renewable-availability scenarios."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["ScenarioSet", "generate_scenarios", "write_scenarios_csv", "read_scenarios_csv"]


@dataclass(frozen=True)
class ScenarioSet:
    availability: np.ndarray  # MW, [scenario, unit, period]
    probabilities: np.ndarray
    seed: int | None = None
    base_profile: np.ndarray | None = None  # [unit, period]

    def __post_init__(self):
        avail = np.asarray(self.availability, dtype=float)
        probs = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "availability", avail)
        object.__setattr__(self, "probabilities", probs)
        if avail.ndim != 3:
            raise ValueError("availability must be [scenario, unit, period]")
        if probs.shape != (avail.shape[0],):
            raise ValueError("one probability per scenario required")
        if avail.shape[0] == 0:
            raise ValueError("at least one scenario required")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        if np.any(avail < 0):
            raise ValueError("availability must be non-negative")
        avail.setflags(write=False)
        probs.setflags(write=False)

    @property
    def n(self) -> int:
        return self.availability.shape[0]

    @property
    def n_units(self) -> int:
        return self.availability.shape[1]

    @property
    def periods(self) -> int:
        return self.availability.shape[2]

    @classmethod
    def deterministic(cls, profile) -> ScenarioSet:
        """A single scenario equal to ``profile`` ([unit, period] or [period])."""
        base = np.atleast_2d(np.asarray(profile, dtype=float))
        return cls(base[None, :, :].copy(), np.ones(1), None, base)

    def scaled(self, k: float) -> ScenarioSet:
        return ScenarioSet(self.availability * k, self.probabilities, self.seed, self.base_profile)


def generate_scenarios(base_profile, n: int, sigma: float, capacity, seed: int | None = 0) -> ScenarioSet:
    """Equiprobable scenarios ``clip(base + N(0, sigma^2), 0, capacity)``, i.i.d. per unit and period."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    base = np.atleast_2d(np.asarray(base_profile, dtype=float))
    cap = np.broadcast_to(np.asarray(capacity, dtype=float).reshape(-1, 1), base.shape)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=(n,) + base.shape) if sigma > 0 else np.zeros((n,) + base.shape)
    avail = np.clip(base[None] + noise, 0.0, cap[None])
    return ScenarioSet(avail, np.full(n, 1.0 / n), seed, base)


def write_scenarios_csv(scen: ScenarioSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "unit", "period", "probability", "mw"])
        for s in range(scen.n):
            for u in range(scen.n_units):
                for t in range(scen.periods):
                    w.writerow([s + 1, u + 1, t + 1, repr(float(scen.probabilities[s])), repr(float(scen.availability[s, u, t]))])


def read_scenarios_csv(path: str | Path) -> ScenarioSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    S = max(int(r["scenario"]) for r in rows)
    U = max(int(r["unit"]) for r in rows)
    T = max(int(r["period"]) for r in rows)
    avail = np.zeros((S, U, T))
    probs = np.zeros(S)
    for r in rows:
        s, u, t = int(r["scenario"]) - 1, int(r["unit"]) - 1, int(r["period"]) - 1
        avail[s, u, t] = float(r["mw"])
        probs[s] = float(r["probability"])
    return ScenarioSet(avail, probs)
