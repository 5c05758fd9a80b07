"""
attestchain command line.

    run     simulate a session with injected faults and write its chain file(s)
    verify  verify a chain file against a verifier nonce
    eca     evidence chain availability for one parameter set
    sweep   ECA over a range of crash rates (or p_f values) as CSV
    bound   composition and side-channel leakage bounds
    bench   sealed recovery vs cold restart latency

Exit codes: 0 success / Valid, 1 Invalid verdict, 2 usage or config error,
3 I/O or parse error.
"""
from __future__ import annotations

import json
import logging
import math
import re
import shutil
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import numpy as np
import pandas as pd

from backend.app.core.config import (
    Settings,
    get_preset,
    load_fault_profile,
    load_presets,
    load_settings,
    load_typing_model,
)
from backend.app.core.crypto_core import PlatformRoot
from backend.app.core.errors import AttestError, ConfigInvalid, ParseError, PersistenceFailure
from backend.app.models.dependability import Branching, CompositionInputs, CompositionMode, CtmcParams
from backend.app.models.simulation import FaultProfile, McConfig, TypingModel
from backend.app.models.verification import VerificationMode, VerificationPolicy, Verdict
from backend.app.services import codec
from backend.app.services.dependability import (
    analytic_sweep,
    composition_bound,
    eca_approximation,
    eca_closed_form,
    leakage_bound,
    mtbeg,
    mtbeg_table,
    pf_sweep,
    steady_state,
)
from backend.app.services.fault_log import write_fault_log
from backend.app.services.monte_carlo import SWEEP_COLUMNS, mc_simulate, mc_sweep
from backend.app.services.session_sim import bench_recovery, run_session
from backend.app.services.verifier import check_freshness, verify_chain

logger = logging.getLogger("attestchain")

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
FORMATS = click.Choice(["human", "json", "csv"])
_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([smh]?)\s*$")
_UNITS = {"": 1.0, "s": 1.0, "m": 60.0, "h": 3600.0}


# ---------------- parsing helpers ----------------
def parse_duration(text: str) -> float:
    """'4h', '30m', '90s' or plain seconds."""
    m = _DURATION.match(text)
    if not m:
        raise click.BadParameter(f"'{text}' is not a duration (use s/m/h suffixes)")
    return float(m.group(1)) * _UNITS[m.group(2)]


def parse_values(text: str) -> List[float]:
    """Comma list ('1e-4,1e-3') or a decade range ('1e-5..1e-1', one point per decade)."""
    try:
        if ".." in text:
            lo, hi = (float(x) for x in text.split("..", 1))
            if lo <= 0 or hi < lo:
                raise ValueError
            lo_exp, hi_exp = math.log10(lo), math.log10(hi)
            n = int(round(hi_exp - lo_exp)) + 1
            return [float(v) for v in np.logspace(lo_exp, hi_exp, num=max(n, 2) if hi > lo else 1)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise click.BadParameter(f"'{text}' is not a value list or 'lo..hi' range")


def _hex(text: Optional[str], what: str) -> Optional[bytes]:
    if text is None:
        return None
    try:
        return bytes.fromhex(text.strip())
    except ValueError:
        raise click.BadParameter(f"{what} must be hex")


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


# ---------------- output ----------------
def _emit(fmt: str, data: Any, human: Optional[List[str]] = None) -> None:
    if fmt == "json":
        click.echo(json.dumps(data, indent=2, default=str))
    elif fmt == "csv":
        if isinstance(data, pd.DataFrame):
            frame = data
        else:
            frame = pd.DataFrame([{k: ";".join(map(str, v)) if isinstance(v, list) else v for k, v in data.items()}])
        click.echo(frame.to_csv(index=False), nl=False)
    else:
        for line in human if human is not None else [f"{k}: {v}" for k, v in data.items()]:
            click.echo(line)


def _settings(ctx: click.Context) -> Settings:
    return ctx.obj["settings"]


def _platform(ctx: click.Context) -> PlatformRoot:
    return PlatformRoot.from_settings(_settings(ctx))


def _params(ctx: click.Context, preset: Optional[str], overrides: Dict[str, Optional[float]]) -> CtmcParams:
    base = get_preset(preset, _settings(ctx)) if preset else CtmcParams()
    update = {k: v for k, v in overrides.items() if v is not None}
    try:
        return CtmcParams(**{**base.model_dump(), **update})
    except ValueError as e:
        raise ConfigInvalid(str(e)) from e


def _rate_options(f):
    for name, help_text in reversed([
        ("lambda-c", "crash rate per hour"),
        ("lambda-p", "partition rate per hour"),
        ("mu-r", "sealed recovery rate per hour"),
        ("mu-f", "cold restart rate per hour"),
        ("mu-p", "partition repair rate per hour"),
        ("p-f", "probability a sealed recovery fails"),
    ]):
        f = click.option(f"--{name}", type=float, default=None, help=help_text)(f)
    return click.option("--preset", default=None, help="desktop, server, iot or a PRESETS_PATH entry")(f)


def _rates(kw: Dict[str, Any]) -> Dict[str, Optional[float]]:
    return {k: kw.pop(k) for k in ("lambda_c", "lambda_p", "mu_r", "mu_f", "mu_p", "p_f")}


class _Group(click.Group):
    """Map pipeline errors onto exit codes."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except ConfigInvalid as e:
            _fail(EXIT_USAGE, str(e))
        except (ParseError, PersistenceFailure, OSError) as e:
            _fail(EXIT_IO, str(e))
        except AttestError as e:
            _fail(EXIT_IO, f"{type(e).__name__}: {e}")


@click.group(cls=_Group)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="KEY=VALUE settings file (overrides ATTESTCHAIN_CONFIG)")
@click.option("--log-level", default=None, help="overrides LOG_LEVEL from the settings file")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], log_level: Optional[str]) -> None:
    settings = load_settings(config_path)
    logging.basicConfig(
        level=(log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
        stream=sys.stderr,
    )
    ctx.ensure_object(dict)
    ctx.obj["settings"] = settings


# ---------------- run ----------------
@cli.command()
@click.option("--duration", default="4h", show_default=True, help="session length (s/m/h suffix)")
@click.option("--interval", type=float, default=None, help="checkpoint interval in seconds")
@click.option("--faults", "faults_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="YAML fault profile")
@click.option("--typing", "typing_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="YAML typing model")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True, help="chain file to write")
@click.option("--format", "fmt", type=FORMATS, default="human", show_default=True)
@click.pass_context
def run(ctx, duration, interval, faults_path, typing_path, seed, out_path, fmt):
    """Simulate a session and write its evidence chain, nonce and fault log next to OUT."""
    settings = _settings(ctx)
    seconds = parse_duration(duration)
    overrides = {} if interval is None else {"checkpoint_interval_s": interval}
    config = settings.session_config(**overrides)
    typing = load_typing_model(typing_path) if typing_path else TypingModel()
    typing = typing.model_copy(update={"session_duration_s": seconds})
    profile = load_fault_profile(faults_path) if faults_path else FaultProfile()

    out = Path(out_path)
    workdir = out.with_name(out.name + ".work")
    if workdir.exists():
        shutil.rmtree(workdir)
    result = run_session(
        config, typing, profile, seed, platform=_platform(ctx), workdir=workdir,
        retain=settings.store_retain, fsync=settings.store_fsync,
    )

    outputs = []
    for i, (src, nonce) in enumerate(zip(result.chain_paths, result.verifier_nonces)):
        dst = out if i == 0 else out.with_name(f"{out.stem}-{i}{out.suffix}")
        shutil.copyfile(src, dst)
        dst.with_name(dst.name + ".nonce").write_text(nonce.hex() + "\n", encoding="utf-8")
        outputs.append(str(dst))
    fault_log = out.with_name(out.name + ".faults.csv")
    write_fault_log(result.fault_log, fault_log)

    summary = {
        "chains": outputs,
        "checkpoints": [len(c.checkpoints) for c in result.chains],
        "verifier_nonces": [n.hex() for n in result.verifier_nonces],
        "faults": len(result.fault_log),
        "fault_log": str(fault_log),
    }
    _emit(fmt, summary)


# ---------------- verify ----------------
@cli.command()
@click.argument("chain", type=click.Path(dir_okay=False))
@click.option("--nonce", default=None, help="verifier nonce (hex); defaults to CHAIN.nonce")
@click.option("--mode", type=click.Choice([m.value for m in VerificationMode]), default="full", show_default=True)
@click.option("--k", "sample_count", type=int, default=None, help="SWF openings checked per checkpoint")
@click.option("--fraction", type=float, default=0.10, show_default=True, help="checkpoint sample fraction")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--t-max", default="24h", show_default=True, help="offline staleness horizon")
@click.option("--beta", type=float, default=0.3, show_default=True)
@click.option("--measurement", default=None, help="expected enclave measurement (hex)")
@click.option("--format", "fmt", type=FORMATS, default="human", show_default=True)
@click.pass_context
def verify(ctx, chain, nonce, mode, sample_count, fraction, workers, alpha, t_max, beta, measurement, fmt):
    """Verify CHAIN; exit 0 when Valid (with or without gaps), 1 when Invalid."""
    verifier_nonce = _hex(nonce, "--nonce")
    if verifier_nonce is None:
        nonce_file = Path(chain + ".nonce")
        if not nonce_file.exists():
            raise click.UsageError(f"no --nonce given and {nonce_file} does not exist")
        verifier_nonce = _hex(nonce_file.read_text(encoding="utf-8"), str(nonce_file))

    try:
        policy = VerificationPolicy(
            mode=VerificationMode(mode), sample_count=sample_count, checkpoint_sample_fraction=fraction,
            entropy_threshold=_settings(ctx).entropy_threshold, alpha=alpha, t_max_s=parse_duration(t_max),
            beta=beta, expected_measurement=_hex(measurement, "--measurement"), workers=workers,
        )
    except ValueError as e:
        raise ConfigInvalid(str(e)) from e

    f = codec.read_chain_file(chain)
    report = verify_chain(f, policy, verifier_nonce, root_public_key=_platform(ctx).public_key)
    freshness = check_freshness(f, verifier_nonce)

    data = {
        "verdict": report.verdict.value,
        "mode": report.mode.value,
        "session_id": report.session_id,
        "checkpoints": report.checkpoint_count,
        "gaps": len(report.gaps),
        "gap_seconds": round(sum(g.duration_s for g in report.gaps), 6),
        "fidelity": round(report.fidelity_aggregate, 6),
        "fresh": freshness.reason.value,
        "failure_index": report.failure_index,
        "failure_reason": report.failure_reason,
        "elapsed_s": round(report.elapsed_s, 6),
    }
    if fmt == "json":
        data["header_failures"] = report.header_failures
        data["warnings"] = report.warnings
        data["gap_entries"] = [g.model_dump(mode="json") for g in report.gaps]
    human = [
        f"verdict:     {data['verdict']} ({data['mode']} mode, {data['elapsed_s']:.3f}s)",
        f"session:     {data['session_id']}",
        f"checkpoints: {data['checkpoints']}",
        f"gaps:        {data['gaps']} ({data['gap_seconds']:.1f}s)",
        f"fidelity:    {data['fidelity']:.4f}",
        f"freshness:   {data['fresh']}",
    ]
    if report.failure_reason:
        human.append(f"failure:     checkpoint {report.failure_index}: {report.failure_reason}")
    human.extend(f"warning:     {w}" for w in report.warnings)
    _emit(fmt, data, human)
    sys.exit(EXIT_INVALID if report.verdict == Verdict.INVALID else EXIT_OK)


# ---------------- availability ----------------
def _mc_config(params: CtmcParams, trials: int, horizon: float, seed: int, branching: str) -> McConfig:
    try:
        return McConfig(params=params, trials=trials, horizon_hours=horizon, rng_seed=seed,
                        branching=Branching(branching))
    except ValueError as e:
        raise ConfigInvalid(str(e)) from e


@cli.command()
@_rate_options
@click.option("--trials", type=int, default=100, show_default=True, help="Monte Carlo trials (0 skips)")
@click.option("--horizon", type=float, default=10_000.0, show_default=True, help="hours per trial")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--branching", type=click.Choice([b.value for b in Branching]), default="split", show_default=True)
@click.option("--table", is_flag=True, help="MTBEG table over all presets instead")
@click.option("--format", "fmt", type=FORMATS, default="human", show_default=True)
@click.pass_context
def eca(ctx, trials, horizon, seed, branching, table, fmt, **kw):
    """Closed form, steady-state solve and Monte Carlo estimate for one parameter set."""
    rates = _rates(kw)
    if table:
        _emit(fmt if fmt != "human" else "csv", mtbeg_table(load_presets(_settings(ctx))))
        return

    params = _params(ctx, kw.pop("preset"), rates)
    b = Branching(branching)
    sealed = steady_state(params, branching=b)
    pf0 = params.model_copy(update={"p_f": 0.0})
    data: Dict[str, Any] = {
        **params.model_dump(),
        "eca_solver": sealed.eca,
        "eca_cold": steady_state(params, sealed_recovery=False, branching=b).eca,
        "eca_closed_form_pf0": eca_closed_form(pf0),
        "eca_solver_pf0": steady_state(pf0).eca,
        "eca_approx": eca_approximation(params),
        "mtbeg_h": mtbeg(params, sealed.eca),
    }
    if trials > 0:
        mc = mc_simulate(_mc_config(params, trials, horizon, seed, branching))
        data.update(eca_mc=mc.eca_estimate, mc_std_error=mc.std_error, mc_gaps=mc.gap_count)
    _emit(fmt, data)


@cli.command()
@_rate_options
@click.option("--lambda-c-values", "lambda_values", default="1e-5..1e-1", show_default=True,
              help="crash rates: 'lo..hi' decades or a comma list")
@click.option("--p-f-values", "pf_values", default=None, help="sweep p_f instead of lambda_c")
@click.option("--trials", type=int, default=100, show_default=True, help="Monte Carlo trials (0 = analytic only)")
@click.option("--horizon", type=float, default=10_000.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="write CSV here")
@click.option("--format", "fmt", type=FORMATS, default="csv", show_default=True)
@click.pass_context
def sweep(ctx, lambda_values, pf_values, trials, horizon, seed, out_path, fmt, **kw):
    """Sealed and cold-only ECA per crash rate, with the Monte Carlo 95% interval."""
    rates = _rates(kw)
    rates.pop("lambda_c")
    params = _params(ctx, kw.pop("preset"), rates)

    if pf_values is not None:
        frame = pf_sweep(params, parse_values(pf_values))
    elif trials > 0:
        frame = mc_sweep(_mc_config(params, trials, horizon, seed, "split"), parse_values(lambda_values))
    else:
        frame = analytic_sweep(params, parse_values(lambda_values))
        frame["ci_lo"] = frame["eca_sealed"]
        frame["ci_hi"] = frame["eca_sealed"]
        frame = frame[SWEEP_COLUMNS]

    if out_path:
        frame.to_csv(out_path, index=False)
        logger.info("[cli] sweep written to %s", out_path)
    if fmt == "json":
        _emit(fmt, frame.to_dict(orient="records"))
    elif fmt == "csv" and not out_path:
        _emit(fmt, frame)
    elif fmt == "human":
        click.echo(frame.to_string(index=False))


@cli.command()
@click.option("--eps-sc", type=float, default=None, help="side-channel advantage (default 2^-hidden_bits)")
@click.option("--hidden-bits", type=int, default=None)
@click.option("--eps-negl", type=float, default=0.0, show_default=True)
@click.option("--p-beh", type=float, required=True)
@click.option("--p-temp", type=float, required=True)
@click.option("--p-content", type=float, required=True)
@click.option("--mode", type=click.Choice([m.value for m in CompositionMode]), default="additive", show_default=True)
@click.option("--format", "fmt", type=FORMATS, default="human", show_default=True)
def bound(eps_sc, hidden_bits, eps_negl, p_beh, p_temp, p_content, mode, fmt):
    """Forgery bound from the per-domain probabilities."""
    try:
        leak = leakage_bound(hidden_bits) if hidden_bits is not None else None
        if eps_sc is None:
            eps_sc = leak if leak is not None else 0.0
        inputs = CompositionInputs(eps_sc=eps_sc, eps_negl=eps_negl, p_beh=p_beh, p_temp=p_temp, p_content=p_content)
    except ValueError as e:
        raise ConfigInvalid(str(e)) from e
    data = {**inputs.model_dump(), "mode": mode, "bound": composition_bound(inputs, CompositionMode(mode))}
    if leak is not None:
        data["leakage_bound"] = leak
    _emit(fmt, data)


@cli.command()
@click.option("--reps", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workdir", type=click.Path(file_okay=False), default="bench.work", show_default=True)
@click.option("--format", "fmt", type=FORMATS, default="human", show_default=True)
@click.pass_context
def bench(ctx, reps, seed, workdir, fmt):
    """Recovery time of sealed recovery against a cold restart."""
    result = bench_recovery(_settings(ctx).session_config(), reps, platform=_platform(ctx), workdir=workdir, seed=seed)
    rows = [
        {"path": name, **getattr(result, name).model_dump()} for name in ("sealed", "cold")
    ]
    frame = pd.DataFrame(rows)
    if fmt == "human":
        click.echo(f"memory cost {result.memory_cost // 1024} KiB, {result.repetitions} repetitions")
        click.echo(frame.to_string(index=False))
    else:
        _emit(fmt, frame if fmt == "csv" else rows)


def main() -> None:
    cli(obj={})


if __name__ == "__main__":
    main()
