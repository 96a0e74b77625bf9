"""Baseline schemes, Monte Carlo sweep harness, and CSV reporting.

Four schemes share one geometry draw per trial (common random numbers):
the movable-element surface (full alternating optimization), a fixed
half-wavelength grid baseline, a fixed random-placement baseline, and a
split surface operating as two one-sided halves. For the power and
region-size sweeps each (scheme, trial) chain is warm-started from the
previous sweep point, which makes the per-trial results non-decreasing by
the optimizer's monotone acceptance rule.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import ao, channel
from .config import (
    ConfigError,
    ElementLayout,
    SurfaceCoefficients,
    Beamformer,
    SystemConfig,
    bs_array_positions,
    config_from_entries,
    dbm_to_watts,
    parse_kv_file,
    validate_config,
)
from .positions import PenaltyState, PositionObjective, to_unconstrained

SCHEMES = ("ME-STARS", "FPE-STARS", "RPE-STARS", "ME-RIS")
SWEEP_VARS = ("max_power_dbm", "num_elements", "region_wavelengths", "num_paths")
# sweep variables whose growth keeps the previous optimum feasible; those
# chains are warm-started, making each trial's curve non-decreasing
CHAINED_VARS = ("max_power_dbm", "region_wavelengths")

CSV_COLUMNS = ("scheme", "sweep_var", "sweep_value", "trial", "seed",
               "sum_secrecy_rate", "iterations", "wall_ms")


class ScenarioError(ValueError):
    pass


class SchemeError(RuntimeError):
    """An optimization run ended in a hard failure state."""


@dataclass(frozen=True)
class Scenario:
    """One sweep specification: which variable moves, over which values,
    which schemes run, and how many Monte Carlo trials per point."""

    sweep_var: str = "max_power_dbm"
    sweep_values: tuple = (30.0,)
    schemes: tuple = SCHEMES
    trials: int = 1
    base: SystemConfig = field(default_factory=SystemConfig)
    seed: int = 0


def validate_scenario(sc: Scenario) -> Scenario:
    if sc.sweep_var not in SWEEP_VARS:
        raise ScenarioError(f"unknown sweep_var {sc.sweep_var!r}; expected one of {SWEEP_VARS}")
    if not sc.sweep_values:
        raise ScenarioError("sweep_values must be non-empty")
    for s in sc.schemes:
        if s not in SCHEMES:
            raise ScenarioError(f"unknown scheme {s!r}; expected one of {SCHEMES}")
    if sc.trials < 1:
        raise ScenarioError(f"trials must be >= 1, got {sc.trials}")
    if sc.sweep_var in CHAINED_VARS:
        vals = list(sc.sweep_values)
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ScenarioError(f"{sc.sweep_var} sweep values must be strictly "
                                f"increasing (chains are warm-started), got {vals}")
    if "ME-RIS" in sc.schemes:
        for value in sc.sweep_values:
            if config_at(sc, value).num_elements % 2:
                raise ScenarioError("ME-RIS requires an even element count")
    validate_config(sc.base)
    return sc


_SCENARIO_INT_KEYS = {"trials", "seed"}


def scenario_from_file(path) -> Scenario:
    """Scenario file: the flat config format plus the keys sweep_var,
    sweep_values (comma list), schemes (comma list), trials, seed."""
    entries = parse_kv_file(path)
    fields_ = {}
    if "sweep_var" in entries:
        fields_["sweep_var"] = entries.pop("sweep_var")
    if "sweep_values" in entries:
        raw = entries.pop("sweep_values")
        try:
            vals = tuple(float(v) for v in raw.split(",") if v.strip())
        except ValueError as exc:
            raise ScenarioError(f"{path}: bad sweep_values {raw!r}") from exc
        if fields_.get("sweep_var") in ("num_elements", "num_paths"):
            vals = tuple(int(v) for v in vals)
        fields_["sweep_values"] = vals
    if "schemes" in entries:
        fields_["schemes"] = tuple(s.strip() for s in entries.pop("schemes").split(",")
                                   if s.strip())
    for key in _SCENARIO_INT_KEYS:
        if key in entries:
            try:
                fields_[key] = int(entries.pop(key))
            except ValueError as exc:
                raise ScenarioError(f"{path}: bad value for {key!r}") from exc
    try:
        base = config_from_entries(entries, where=str(path))
    except ConfigError as exc:
        raise ScenarioError(str(exc)) from exc
    return validate_scenario(Scenario(base=base, **fields_))


def config_at(sc: Scenario, value) -> SystemConfig:
    """The system configuration at one sweep point."""
    if sc.sweep_var == "max_power_dbm":
        cfg = replace(sc.base, max_power=dbm_to_watts(float(value)))
    elif sc.sweep_var == "num_elements":
        cfg = replace(sc.base, num_elements=int(value))
    elif sc.sweep_var == "region_wavelengths":
        cfg = replace(sc.base, region_edge=float(value) * sc.base.wavelength)
    elif sc.sweep_var == "num_paths":
        cfg = replace(sc.base, num_paths=int(value))
    else:
        raise ScenarioError(f"unknown sweep_var {sc.sweep_var!r}")
    return validate_config(cfg)


def trial_seed(base_seed, trial) -> int:
    """Stable 64-bit geometry seed for one trial, shared by every scheme and
    (except for the path-count sweep, where the draw dimension changes) every
    sweep point."""
    ss = np.random.SeedSequence([int(base_seed), int(trial)])
    return int(ss.generate_state(1, np.uint64)[0])


# scheme layouts -----------------------------------------------------------

def fpe_grid_layout(cfg: SystemConfig) -> ElementLayout:
    """Fixed-deployment baseline: elements on a ceil-square grid at exactly
    half-wavelength pitch, centered on the region origin."""
    n = cfg.num_elements
    nx = math.ceil(math.sqrt(n))
    ny = math.ceil(n / nx)
    pitch = cfg.wavelength / 2.0
    xs = (np.arange(nx) - (nx - 1) / 2.0) * pitch
    ys = (np.arange(ny) - (ny - 1) / 2.0) * pitch
    pts = [(x, y) for y in ys for x in xs][:n]
    return ElementLayout(np.array(pts).T, bs_array_positions(cfg))


def rpe_random_layout(cfg: SystemConfig, rng) -> ElementLayout:
    """One random feasible deployment: uniform positions kept only when they
    clear the minimum separation (dart throwing with restarts)."""
    half = cfg.region_edge / 2.0
    n = cfg.num_elements
    for _ in range(200):
        pts = []
        for _ in range(500 * n):
            p = rng.uniform(-half, half, size=2)
            if all(float(np.hypot(p[0] - q[0], p[1] - q[1])) >= cfg.min_separation
                   for q in pts):
                pts.append(p)
                if len(pts) == n:
                    return ElementLayout(np.array(pts).T, bs_array_positions(cfg))
    raise SchemeError(f"could not place {n} elements with separation "
                      f"{cfg.min_separation} in a {cfg.region_edge} square")


def split_surface_support(n: int) -> dict:
    """Index partition for the split-surface scheme: the first half of the
    elements transmits only, the second half reflects only."""
    if n % 2:
        raise SchemeError("the split-surface scheme requires an even element count")
    half = n // 2
    return {"t": list(range(half)), "r": list(range(half, n))}


# single-scheme runs -------------------------------------------------------

@dataclass
class SchemeRun:
    scheme: str
    rate: float
    iterations: int
    status: str
    state: ao.AoState


def run_scheme(scheme, geom, cfg: SystemConfig, rng_seed=0, inits=None) -> SchemeRun:
    """One optimization run of one scheme on one geometry draw.

    The movable schemes run the full three-stage loop; the fixed-layout
    baselines alternate only the surface and beamformer stages. All schemes
    of a trial start from the same random feasible layout (drawn from
    rng_seed), so the movable result dominates the random-placement baseline
    by the monotone acceptance rule. `inits` carries (layout, coeffs,
    beamformer) from a previous warm-start chain point."""
    if scheme not in SCHEMES:
        raise SchemeError(f"unknown scheme {scheme!r}")
    stages = ao.STAGES if scheme in ("ME-STARS", "ME-RIS") else ("passive", "active")
    support = split_surface_support(cfg.num_elements) if scheme == "ME-RIS" else None

    if inits is not None:
        layout, coeffs, w_init = inits
    else:
        coeffs = None
        w_init = None
        if scheme == "FPE-STARS":
            layout = fpe_grid_layout(cfg)
        else:
            layout = rpe_random_layout(cfg, np.random.default_rng([int(rng_seed), 1]))

    state = ao.run(geom, cfg, layout_init=layout, coeffs_init=coeffs,
                   w_init=w_init, support=support, stages=stages)
    if state.status.startswith(("stage_failure", "init_infeasible")):
        raise SchemeError(f"{scheme}: {state.status}")
    return SchemeRun(scheme, state.objective, state.iteration, state.status, state)


# sweep harness ------------------------------------------------------------

@dataclass
class PointStat:
    scheme: str
    sweep_value: float
    mean: float
    std_error: float
    trials: int


@dataclass
class SweepResult:
    scenario: Scenario
    records: list      # per-trial dicts in deterministic order
    failures: list     # manifest entries for failed trials
    points: list       # PointStat per (scheme, sweep point)


def _run_chain(sc: Scenario, scheme, trial, deterministic_timing):
    """All sweep points of one (scheme, trial) lane, warm-started in order
    when the sweep variable supports it."""
    records = []
    failures = []
    seed = trial_seed(sc.seed, trial)
    chained = sc.sweep_var in CHAINED_VARS
    inits = None
    for value in sc.sweep_values:
        cfg = config_at(sc, value)
        try:
            geom = channel.sample_geometry(cfg, rng_seed=seed)
            t0 = time.perf_counter()
            run = run_scheme(scheme, geom, cfg, rng_seed=seed, inits=inits)
            wall_ms = 0.0 if deterministic_timing else round(
                (time.perf_counter() - t0) * 1000.0, 3)
            records.append({
                "scheme": scheme,
                "sweep_var": sc.sweep_var,
                "sweep_value": value,
                "trial": trial,
                "seed": seed,
                "sum_secrecy_rate": run.rate,
                "iterations": run.iterations,
                "wall_ms": wall_ms,
            })
            if chained:
                inits = (run.state.layout, run.state.coeffs, run.state.beamformer)
        except Exception as exc:  # per-trial isolation: record and continue
            failures.append({
                "scheme": scheme,
                "sweep_var": sc.sweep_var,
                "sweep_value": value,
                "trial": trial,
                "seed": seed,
                "error": f"{type(exc).__name__}: {exc}",
            })
            inits = None
    return records, failures


def sweep(sc: Scenario, out_path=None, threads=1, deterministic_timing=False) -> SweepResult:
    """Run the scenario, optionally writing the per-trial CSV (plus a
    .failures.json manifest when trials failed). Lanes of one (scheme, trial)
    pair are independent and can run in parallel processes; output order is
    deterministic regardless of scheduling."""
    validate_scenario(sc)
    lanes = [(scheme, trial) for scheme in sc.schemes for trial in range(sc.trials)]
    outputs = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {lane: pool.submit(_run_chain, sc, lane[0], lane[1],
                                         deterministic_timing)
                       for lane in lanes}
            for lane, fut in futures.items():
                outputs[lane] = fut.result()
    else:
        for scheme, trial in lanes:
            outputs[(scheme, trial)] = _run_chain(sc, scheme, trial,
                                                  deterministic_timing)

    records = []
    failures = []
    for scheme in sc.schemes:
        for value in sc.sweep_values:
            for trial in range(sc.trials):
                recs, fails = outputs[(scheme, trial)]
                records.extend(r for r in recs if r["sweep_value"] == value)
                failures.extend(f for f in fails if f["sweep_value"] == value
                                and f not in failures)

    points = []
    for scheme in sc.schemes:
        for value in sc.sweep_values:
            rates = [r["sum_secrecy_rate"] for r in records
                     if r["scheme"] == scheme and r["sweep_value"] == value]
            if not rates:
                continue
            mean = float(np.mean(rates))
            se = (float(np.std(rates, ddof=1)) / math.sqrt(len(rates))
                  if len(rates) > 1 else 0.0)
            points.append(PointStat(scheme, value, mean, se, len(rates)))

    result = SweepResult(sc, records, failures, points)
    if out_path is not None:
        write_records_csv(records, out_path)
        if failures:
            with open(str(out_path) + ".failures.json", "w", encoding="utf-8") as fh:
                json.dump(failures, fh, indent=2, sort_keys=True)
    return result


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records_csv(records, path):
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        lines.append(",".join(_csv_cell(r[c]) for c in CSV_COLUMNS))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# gradient verification ----------------------------------------------------

@dataclass
class GradientCheckResult:
    instances: int
    max_rel_error: float
    bad_instances: int

    @property
    def passed(self):
        return self.bad_instances == 0


def _random_instance(rng):
    """One random small scenario with a margin away from the objective's
    subgradient kinks (worst-eavesdropper ties and the secrecy clamp), where
    finite differences are meaningful."""
    n = int(rng.choice([2, 4]))
    m = int(rng.choice([2, 4]))
    L = int(rng.choice([1, 2, 3]))
    cfg = validate_config(replace(SystemConfig(), num_elements=n,
                                  num_bs_antennas=m, num_paths=L))
    geom = channel.sample_geometry(cfg, rng_seed=int(rng.integers(2 ** 32)))
    layout = rpe_random_layout(cfg, rng)
    coeffs = SurfaceCoefficients(
        beta_t=rng.uniform(0.1, 0.9, n),
        theta_t=rng.uniform(-math.pi, math.pi, n),
        theta_r=rng.uniform(-math.pi, math.pi, n),
    )
    wmat = rng.standard_normal((m, 2)) + 1j * rng.standard_normal((m, 2))
    wmat *= math.sqrt(0.9 * cfg.max_power) / np.linalg.norm(wmat)
    W = Beamformer(W=wmat)
    return cfg, geom, layout, coeffs, W


def _kink_margin(obj: PositionObjective, r_dot):
    """Distance of the rate terms from the non-smooth switch points."""
    from .config import EVES, USERS
    R = obj.cfg.region_edge / 2.0 * np.tanh(r_dot)
    a, _ = obj.powers(R)
    ur, er = obj._rates_from_powers(a)
    margin = math.inf
    for u in USERS:
        worst = max(er[(ke, u)] for ke in EVES)
        margin = min(margin, abs(ur[u] - worst))
        margin = min(margin, abs(er[("e_t", u)] - er[("e_r", u)]))
    return margin


def decomposition_check(instances=100, rng_seed=0):
    """Worst relative disagreement between the direct effective-channel power
    and its per-element decomposition over random instances."""
    from .config import RECEIVERS, USERS
    from . import rates
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for _ in range(instances):
        cfg, geom, layout, coeffs, W = _random_instance(rng)
        for k in RECEIVERS:
            for k_l in USERS:
                direct = rates.effective_power(k, k_l, layout, coeffs, W, geom)
                decomp = rates.effective_power_decomposed(k, k_l, layout, coeffs, W, geom)
                worst = max(worst, abs(direct - decomp) / max(abs(direct), 1e-300))
    return worst


def sdp_lambda_max_check(instances=100, rng_seed=0):
    """Worst objective error of the interior-point solver on random
    largest-eigenvalue problems (max Tr(CX), Tr(X) = 1, X PSD), whose optimum
    is the analytic lambda_max(C)."""
    from . import sdp
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(2, 9))
        a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        c = 0.5 * (a + a.conj().T)
        prob = sdp.SdpProblem()
        prob.add_psd_block("x", d, complex_=True)
        prob.set_objective(maximize=True, block_terms={"x": c})
        prob.add_constraint(block_terms={"x": np.eye(d)}, sense="==", rhs=1.0)
        sol = sdp.solve(prob)
        exact = float(np.linalg.eigvalsh(c)[-1])
        worst = max(worst, abs(sol.objective - exact) / max(1.0, abs(exact)))
    return worst


def gradient_check(instances=50, rng_seed=0, step=1e-6, tol=1e-5,
                   component_floor=1e-8) -> GradientCheckResult:
    """Compare the analytic gradient of the smoothed position objective with
    central finite differences on random instances. Relative error is taken
    per component, restricted to components above the floor."""
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    bad = 0
    done = 0
    while done < instances:
        cfg, geom, layout, coeffs, W = _random_instance(rng)
        obj = PositionObjective(layout, coeffs, W, geom, cfg)
        r_dot = to_unconstrained(layout.me_positions, cfg.region_edge)
        r_dot = r_dot + rng.uniform(-0.05, 0.05, r_dot.shape)
        if _kink_margin(obj, r_dot) < 1e-4:
            continue
        state = PenaltyState(rho=0.1, mu=0.3)
        analytic = obj.gradient(r_dot, state)
        fd = np.zeros_like(analytic)
        for idx in np.ndindex(*analytic.shape):
            e = np.zeros_like(analytic)
            e[idx] = step
            fd[idx] = (obj.value(r_dot + e, state) - obj.value(r_dot - e, state)) / (2 * step)
        mask = np.abs(fd) > component_floor
        if mask.any():
            rel = float(np.max(np.abs(analytic - fd)[mask] / np.abs(fd)[mask]))
            worst = max(worst, rel)
            if rel > tol:
                bad += 1
        done += 1
    return GradientCheckResult(instances, worst, bad)
