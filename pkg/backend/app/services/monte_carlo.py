"""
Monte Carlo simulation of the availability CTMC.

Each trial starts in A and walks the chain with exponential holding times up
to the horizon. Random draws come from numpy's PCG64 in fixed-size blocks, one
exponential and one uniform per transition, so a sealed and a cold run with
the same seed share their crash times.
"""
from __future__ import annotations

import logging
from typing import Iterable, List

import numpy as np
import pandas as pd

from ..models.dependability import CtmcParams
from ..models.simulation import McConfig, McResult
from .dependability import A, D, F, R, STATE_NAMES, generator_matrix

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["lambda_c", "eca_sealed", "eca_cold", "ci_lo", "ci_hi"]
_BLOCK = 4096


class _Draws:
    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._exp = np.empty(0)
        self._uni = np.empty(0)
        self._i = 0

    def next(self):
        if self._i >= len(self._exp):
            self._exp = self._rng.standard_exponential(_BLOCK)
            self._uni = self._rng.random(_BLOCK)
            self._i = 0
        e, u = self._exp[self._i], self._uni[self._i]
        self._i += 1
        return float(e), float(u)


def _jump_tables(q: np.ndarray):
    exit_rates = -np.diag(q)
    cum = []
    for s in range(4):
        c = np.cumsum(np.clip(q[s], 0.0, None))
        cum.append(c / c[-1] if c[-1] > 0 else None)
    return exit_rates, cum


def _trial(exit_rates, cum, horizon: float, draws: _Draws, dwell: np.ndarray) -> int:
    state, t, gaps = A, 0.0, 0
    while True:
        rate = exit_rates[state]
        if rate <= 0:
            dwell[state] += horizon - t
            return gaps
        e, u = draws.next()
        hold = e / rate
        if t + hold >= horizon:
            dwell[state] += horizon - t
            return gaps
        dwell[state] += hold
        t += hold
        nxt = int(np.searchsorted(cum[state], u, side="right"))
        # one gap per outage; R -> F continues the same one
        if state in (A, D) and nxt in (R, F):
            gaps += 1
        state = nxt


def mc_simulate(config: McConfig) -> McResult:
    exit_rates, cum = _jump_tables(generator_matrix(config.params, config.sealed_recovery, config.branching))
    draws = _Draws(np.random.Generator(np.random.PCG64(config.rng_seed)))
    horizon = config.horizon_hours

    per_trial = np.empty(config.trials)
    totals = np.zeros(4)
    gaps = 0
    for i in range(config.trials):
        dwell = np.zeros(4)
        gaps += _trial(exit_rates, cum, horizon, draws, dwell)
        per_trial[i] = 1.0 - (dwell[R] + dwell[F]) / horizon
        totals += dwell

    est = float(per_trial.mean())
    se = float(per_trial.std(ddof=1) / np.sqrt(config.trials)) if config.trials > 1 else 0.0
    fractions = totals / totals.sum()
    logger.debug("[mc] lambda_c=%g sealed=%s eca=%.9f se=%.2e", config.params.lambda_c, config.sealed_recovery, est, se)
    return McResult(
        eca_estimate=est,
        std_error=se,
        confidence_interval_95=(est - 1.96 * se, est + 1.96 * se),
        dwell_fractions={name: float(fractions[s]) for s, name in enumerate(STATE_NAMES)},
        gap_count=gaps,
        trials=config.trials,
        horizon_hours=horizon,
    )


def mc_sweep(base: McConfig, lambda_c_values: Iterable[float]) -> pd.DataFrame:
    """Sealed and cold-only ECA per crash rate; CI columns belong to the sealed curve."""
    rows: List[dict] = []
    for lc in lambda_c_values:
        params: CtmcParams = base.params.model_copy(update={"lambda_c": float(lc)})
        sealed = mc_simulate(base.model_copy(update={"params": params, "sealed_recovery": True}))
        cold = mc_simulate(base.model_copy(update={"params": params, "sealed_recovery": False}))
        lo, hi = sealed.confidence_interval_95
        rows.append({
            "lambda_c": float(lc),
            "eca_sealed": sealed.eca_estimate,
            "eca_cold": cold.eca_estimate,
            "ci_lo": lo,
            "ci_hi": hi,
        })
        logger.info("[mc] lambda_c=%g sealed=%.6f cold=%.6f", lc, sealed.eca_estimate, cold.eca_estimate)
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
