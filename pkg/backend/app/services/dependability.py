"""
Four-state availability model: A (active), D (degraded/partitioned),
R (sealed recovery), F (cold restart). Rates are per hour.

ECA is the steady-state probability of an evidence-producing state (A or D).
"""
from __future__ import annotations

import logging
import math
from typing import Dict, Iterable, List

import numpy as np
import pandas as pd

from ..core.errors import SingularSystem
from ..models.dependability import (
    Branching,
    CompositionInputs,
    CompositionMode,
    CtmcParams,
    CtmcSolution,
)

logger = logging.getLogger(__name__)

A, D, R, F = 0, 1, 2, 3
STATE_NAMES = ("A", "D", "R", "F")


def generator_matrix(
    params: CtmcParams, sealed_recovery: bool = True, branching: Branching = Branching.SPLIT
) -> np.ndarray:
    """Rate matrix Q (rows A, D, R, F). Without sealed recovery every A-crash goes to F."""
    q = np.zeros((4, 4))
    q[A, D] = params.lambda_p
    q[A, R if sealed_recovery else F] = params.lambda_c
    q[D, A] = params.mu_p
    q[D, F] = params.lambda_c
    if branching == Branching.SPLIT:
        q[R, A] = (1.0 - params.p_f) * params.mu_r
    else:
        q[R, A] = params.mu_r
    q[R, F] = params.p_f * params.mu_r
    q[F, A] = params.mu_f
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def steady_state(
    params: CtmcParams, sealed_recovery: bool = True, branching: Branching = Branching.SPLIT
) -> CtmcSolution:
    """Solve pi Q = 0 with one balance equation replaced by sum(pi) = 1."""
    q = generator_matrix(params, sealed_recovery, branching)
    lhs = q.T.copy()
    lhs[-1, :] = 1.0
    rhs = np.array([0.0, 0.0, 0.0, 1.0])
    try:
        pi = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularSystem(f"steady state undefined for {params}") from e
    if not np.all(np.isfinite(pi)):
        raise SingularSystem(f"non-finite steady state for {params}")
    # round-off can leave tiny negatives on states with vanishing mass
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    return CtmcSolution(
        pi_A=float(pi[A]), pi_D=float(pi[D]), pi_R=float(pi[R]), pi_F=float(pi[F]),
        eca=float(pi[A] + pi[D]),
    )


def eca_closed_form(params: CtmcParams) -> float:
    if params.p_f != 0:
        raise ValueError("closed form holds for p_f = 0 only")
    lc, lp = params.lambda_c, params.lambda_p
    d_ratio = lp / (params.mu_p + lc)
    pi_a = 1.0 / (1.0 + d_ratio + lc / params.mu_r + lc * d_ratio / params.mu_f)
    return pi_a * (1.0 + d_ratio)


def eca_approximation(params: CtmcParams) -> float:
    """Valid when lambda_c << mu_p."""
    return params.mu_r / (params.mu_r + params.lambda_c)


def mtbeg(params: CtmcParams, eca: float) -> float:
    """Mean time between evidence gaps, hours."""
    if params.lambda_c == 0 or eca == 0:
        return math.inf
    return 1.0 / (params.lambda_c * eca)


def worst_case_eca(n_crashes: int, delta: float, horizon: float) -> float:
    if n_crashes < 0 or delta < 0 or horizon <= 0:
        raise ValueError("need n_crashes >= 0, delta >= 0, horizon > 0")
    if n_crashes * delta > horizon:
        raise ValueError("n_crashes * delta exceeds the horizon")
    return 1.0 - n_crashes * delta / horizon


def leakage_bound(hidden_bits: int) -> float:
    if hidden_bits < 0:
        raise ValueError("hidden_bits must be >= 0")
    return 2.0 ** -hidden_bits


def composition_bound(inputs: CompositionInputs, mode: CompositionMode) -> float:
    if mode == CompositionMode.MULTIPLICATIVE:
        return inputs.eps_negl * inputs.p_beh * inputs.p_temp * inputs.p_content
    total = inputs.eps_sc + inputs.p_beh + inputs.p_temp + inputs.p_content + inputs.eps_negl
    return min(1.0, total)


# ---------------- tables ----------------
def mtbeg_table(presets: Dict[str, CtmcParams]) -> pd.DataFrame:
    rows = []
    for name, p in presets.items():
        sol = steady_state(p)
        rows.append({
            "preset": name,
            "lambda_c": p.lambda_c,
            "eca": sol.eca,
            "mtbeg_h": mtbeg(p, sol.eca),
            "mtbeg_approx_h": math.inf if p.lambda_c == 0 else 1.0 / p.lambda_c,
        })
    return pd.DataFrame(rows)


def pf_sweep(params: CtmcParams, p_f_values: Iterable[float], branching: Branching = Branching.SPLIT) -> pd.DataFrame:
    rows: List[dict] = []
    for pf in p_f_values:
        p = params.model_copy(update={"p_f": float(pf)})
        rows.append({"p_f": float(pf), "eca": steady_state(p, branching=branching).eca})
    return pd.DataFrame(rows)


def analytic_sweep(params: CtmcParams, lambda_c_values: Iterable[float]) -> pd.DataFrame:
    rows = []
    for lc in lambda_c_values:
        p = params.model_copy(update={"lambda_c": float(lc)})
        rows.append({
            "lambda_c": float(lc),
            "eca_sealed": steady_state(p).eca,
            "eca_cold": steady_state(p, sealed_recovery=False).eca,
        })
    return pd.DataFrame(rows)
