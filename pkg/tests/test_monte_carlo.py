import numpy as np
import pytest

from backend.app.core.config import BUILTIN_PRESETS
from backend.app.models.dependability import CtmcParams
from backend.app.models.simulation import McConfig
from backend.app.services.dependability import steady_state
from backend.app.services.monte_carlo import SWEEP_COLUMNS, mc_simulate, mc_sweep

DESKTOP = BUILTIN_PRESETS["desktop"]


def test_deterministic_per_seed():
    cfg = McConfig(params=DESKTOP, horizon_hours=2_000, trials=20, rng_seed=3)
    assert mc_simulate(cfg) == mc_simulate(cfg)
    assert mc_simulate(cfg).eca_estimate != mc_simulate(cfg.model_copy(update={"rng_seed": 4})).eca_estimate


def test_no_faults_means_full_availability():
    cfg = McConfig(params=CtmcParams(lambda_c=0.0, lambda_p=0.0), horizon_hours=100, trials=5)
    res = mc_simulate(cfg)
    assert res.eca_estimate == 1.0
    assert res.gap_count == 0
    assert res.dwell_fractions["A"] == pytest.approx(1.0)


def test_dwell_fractions_sum_to_one():
    res = mc_simulate(McConfig(params=DESKTOP, horizon_hours=1_000, trials=10))
    assert sum(res.dwell_fractions.values()) == pytest.approx(1.0)
    lo, hi = res.confidence_interval_95
    assert lo <= res.eca_estimate <= hi


def test_agrees_with_steady_state_desktop():
    cfg = McConfig(params=DESKTOP, horizon_hours=10_000, trials=100, rng_seed=1)
    res = mc_simulate(cfg)
    assert abs(res.eca_estimate - steady_state(DESKTOP).eca) <= 4 * res.std_error + 1e-9


def test_common_random_numbers_keep_cold_below_sealed():
    params = DESKTOP.model_copy(update={"lambda_c": 1e-1})
    base = McConfig(params=params, horizon_hours=1_000, trials=30, rng_seed=9)
    sealed = mc_simulate(base)
    cold = mc_simulate(base.model_copy(update={"sealed_recovery": False}))
    assert cold.eca_estimate < sealed.eca_estimate


def test_sweep_columns_and_ordering():
    frame = mc_sweep(McConfig(params=DESKTOP, horizon_hours=1_000, trials=20), [1e-3, 1e-1])
    assert list(frame.columns) == SWEEP_COLUMNS
    assert (frame["eca_sealed"] >= frame["eca_cold"]).all()
    assert (frame["ci_lo"] <= frame["eca_sealed"]).all()


def test_failed_recovery_counts_as_one_gap():
    # every crash goes A -> R -> F -> A, which is still a single outage
    params = CtmcParams(lambda_c=1e-2, lambda_p=0.0, p_f=1.0)
    res = mc_simulate(McConfig(params=params, horizon_hours=10_000, trials=50, rng_seed=5))
    expected = 50 * 10_000 * 1e-2
    assert abs(res.gap_count - expected) <= 300


def test_crash_while_partitioned_counts_once():
    params = CtmcParams(lambda_c=1e-2, lambda_p=1.0, mu_p=1e-2, p_f=0.0)
    res = mc_simulate(McConfig(params=params, horizon_hours=10_000, trials=20, rng_seed=6))
    # nearly all time is spent in D, so outages come at roughly lambda_c per hour
    assert abs(res.gap_count - 20 * 10_000 * 1e-2) <= 250


@pytest.mark.slow
def test_agrees_with_steady_state_on_random_presets():
    rng = np.random.default_rng(2024)
    for i in range(19):
        params = CtmcParams(
            lambda_c=10 ** rng.uniform(-3, -1),
            lambda_p=10 ** rng.uniform(-3, -1),
            mu_r=10 ** rng.uniform(2, 3.6),
            mu_f=10 ** rng.uniform(1, 2.6),
            mu_p=10 ** rng.uniform(0, 1),
            p_f=rng.uniform(0, 0.1),
        )
        res = mc_simulate(McConfig(params=params, horizon_hours=10_000, trials=100, rng_seed=i))
        assert abs(res.eca_estimate - steady_state(params).eca) <= 4 * res.std_error + 1e-9, params
