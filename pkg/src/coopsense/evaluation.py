"""Monte-Carlo evaluation: cooperation modes, association, SMSE and sweeps."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .estimators import EstimationError, EstimatorOptions, Method, localize
from .fusion import FusionMode, fuse_symbol_level, link_lattice
from .scenario import (DEFAULT_REGION, Scenario, SystemConfig, build_grid, dbm_to_watts,
                       desk_config, reference_scenario)
from .waveform import GainMode, Side, noise_variance, synthesize_echo


class Cooperation(str, enum.Enum):
    COOPERATIVE = "COOPERATIVE"
    MBS_ONLY = "MBS_ONLY"
    MIBS_ONLY = "MIBS_ONLY"


class FusionLevel(str, enum.Enum):
    SYMBOL_LEVEL = "SYMBOL_LEVEL"
    DATA_LEVEL = "DATA_LEVEL"


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: Scenario = field(default_factory=reference_scenario)
    config: SystemConfig = field(default_factory=desk_config)
    method: Method = Method.GDFT
    cooperation: Cooperation = Cooperation.COOPERATIVE
    fusion_mode: FusionLevel = FusionLevel.SYMBOL_LEVEL
    noise_sweep_dbm_hz: tuple[float | None, ...] = (-175.0, -165.0, -155.0, -145.0, -135.0)
    trials: int = 100
    base_seed: int = 0
    region: tuple[float, float, float, float] = DEFAULT_REGION
    grid_resolution_m: float = 5.0
    gain_mode: GainMode = GainMode.BISTATIC_RADAR
    symbol_fusion: FusionMode = FusionMode.NORMALIZED
    equalize: bool = False
    estimator: EstimatorOptions = field(default_factory=EstimatorOptions)
    workers: int = 1

    def __post_init__(self):
        for name, kind in (("method", Method), ("cooperation", Cooperation),
                           ("fusion_mode", FusionLevel), ("gain_mode", GainMode),
                           ("symbol_fusion", FusionMode)):
            object.__setattr__(self, name, kind(getattr(self, name)))
        sweep = tuple(self.noise_sweep_dbm_hz)
        object.__setattr__(self, "noise_sweep_dbm_hz", sweep)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not sweep:
            raise ValueError("noise sweep is empty")
        levels = [-math.inf if s is None else s for s in sweep]
        if levels != sorted(levels):
            raise ValueError("noise sweep must be sorted ascending")
        if not self.scenario.targets:
            raise ValueError("scenario has no targets")

    @property
    def label(self) -> str:
        return f"{self.method.value}/{self.cooperation.value}/{self.fusion_mode.value}"


def balanced_setup(config: SystemConfig, scenario: Scenario, reference_dbm_hz: float = -175.0,
                   snr_db: float = 0.0) -> tuple[SystemConfig, Scenario]:
    """Equalize the two links and pin the per-RE echo SNR at a reference noise level.

    The MBS transmit power is lowered by ``10 log10(q)`` so both receivers see
    the same per-RE SNR (the MiBS receiver's subcarriers are ``q`` times
    narrower). Target reflectivities are then set so one unit-gain echo has
    ``snr_db`` per resource element at ``reference_dbm_hz``.
    """
    config = replace(config, tx_power_mbs_dbm=config.tx_power_mibs_dbm - 10 * math.log10(config.q))
    power = dbm_to_watts(config.tx_power_mibs_dbm)
    amp = math.sqrt(noise_variance(reference_dbm_hz, config.scs_mibs_hz) / power
                    * 10 ** (snr_db / 10))
    targets = tuple(replace(t, reflectivity=amp) for t in scenario.targets)
    return config, replace(scenario, targets=targets)


def desk_experiment(**overrides) -> "ExperimentSpec":
    """Desk-scale trend setup: unit path gain on balanced links."""
    config, scenario = balanced_setup(desk_config(tx_power_mibs_dbm=46.0), reference_scenario())
    params = dict(scenario=scenario, config=config, gain_mode=GainMode.UNIT)
    params.update(overrides)
    return ExperimentSpec(**params)


@dataclass(frozen=True, eq=False)
class Assignment:
    pairs: list[tuple[int, int]]  # (truth index, estimate index)
    sq_errors: np.ndarray  # per truth
    misses: int

    @property
    def cost(self) -> float:
        return float(self.sq_errors.sum())


def associate(estimates, truths, miss_penalty_sq: float = math.inf) -> Assignment:
    """Minimum total squared distance one-to-one assignment of estimates to truths.

    Truths left without an estimate get ``miss_penalty_sq``.
    """
    est = np.asarray(estimates, dtype=float).reshape(-1, 2)
    tru = np.asarray(truths, dtype=float).reshape(-1, 2)
    if len(tru) == 0:
        raise ValueError("no truths to associate")
    sq = np.full(len(tru), miss_penalty_sq, dtype=float)
    if len(est) == 0:
        return Assignment([], sq, len(tru))
    cost = ((tru[:, None, :] - est[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    sq[rows] = cost[rows, cols]
    return Assignment(list(zip(rows.tolist(), cols.tolist())), sq, len(tru) - len(rows))


def smse(sq_errors) -> float:
    """Per-target RMSE over trials, summed over targets.

    ``sq_errors`` has shape ``(trials, targets)``.
    """
    sq = np.asarray(sq_errors, dtype=float)
    if sq.size == 0:
        raise ValueError("no trials")
    sq = sq.reshape(sq.shape[0], -1)
    return float(np.sum(np.sqrt(np.mean(sq, axis=0))))


def trial_smse(sq_errors) -> np.ndarray:
    """SMSE of each trial on its own (sum of per-target distances)."""
    sq = np.asarray(sq_errors, dtype=float)
    return np.sum(np.sqrt(sq.reshape(sq.shape[0], -1)), axis=1)


@dataclass(frozen=True, eq=False)
class TrialRecord:
    index: int
    seed: int
    estimates: np.ndarray
    truth: np.ndarray
    sq_errors: np.ndarray
    failed: bool = False
    error: str = ""
    misses: int = 0

    def to_dict(self) -> dict:
        return {
            "trial": self.index,
            "seed": self.seed,
            "estimates": self.estimates.tolist(),
            "truth": self.truth.tolist(),
            "errors_m": np.sqrt(self.sq_errors).tolist(),
            "misses": self.misses,
            "failed": self.failed,
            "error": self.error,
        }


@dataclass(frozen=True, eq=False)
class CellReport:
    noise_dbm_hz: float | None
    method: Method
    cooperation: Cooperation
    fusion: FusionLevel
    records: list[TrialRecord]
    wall_time_s: float

    @property
    def successes(self) -> list[TrialRecord]:
        return [r for r in self.records if not r.failed]

    @property
    def failures(self) -> int:
        return sum(r.failed for r in self.records)

    @property
    def failure_rate(self) -> float:
        return self.failures / len(self.records)

    def sq_errors(self) -> np.ndarray:
        ok = self.successes
        return np.array([r.sq_errors for r in ok]) if ok else np.empty((0, 0))

    @property
    def smse_m(self) -> float:
        sq = self.sq_errors()
        return smse(sq) if sq.size else math.nan

    @property
    def median_smse_m(self) -> float:
        sq = self.sq_errors()
        return float(np.median(trial_smse(sq))) if sq.size else math.nan


def _localize_lattice(spec: ExperimentSpec, lattice, grid):
    return localize(spec.method, lattice, grid, len(spec.scenario.targets), spec.scenario.mbs_pos,
                    spec.scenario.mibs_pos, spec.estimator)


def _data_level(spec: ExperimentSpec, y_mbs, y_mibs, grid) -> np.ndarray:
    q = spec.config.q
    from_mbs = _localize_lattice(spec, link_lattice(y_mbs, q), grid).estimates
    from_mibs = _localize_lattice(spec, link_lattice(y_mibs, q), grid).estimates
    if len(from_mbs) == 0:
        return from_mibs
    if len(from_mibs) == 0:
        return from_mbs
    match = associate(from_mibs, from_mbs)  # MBS estimates act as anchors
    fused = from_mbs.copy()
    for i_mbs, i_mibs in match.pairs:
        fused[i_mbs] = 0.5 * (from_mbs[i_mbs] + from_mibs[i_mibs])
    return fused


def estimate_trial(spec: ExperimentSpec, scenario: Scenario, grid, seed: int) -> np.ndarray:
    """Synthesize both receivers' tensors and localize per the spec's mode."""
    rng = np.random.default_rng(seed)
    y_mbs = synthesize_echo(spec.config, scenario, Side.MBS_RX, 0, rng, spec.gain_mode)
    y_mibs = synthesize_echo(spec.config, scenario, Side.MIBS_RX, 0, rng, spec.gain_mode)
    if spec.cooperation is Cooperation.MBS_ONLY:
        return _localize_lattice(spec, link_lattice(y_mbs, spec.config.q), grid).estimates
    if spec.cooperation is Cooperation.MIBS_ONLY:
        return _localize_lattice(spec, link_lattice(y_mibs, spec.config.q), grid).estimates
    if spec.fusion_mode is FusionLevel.DATA_LEVEL:
        return _data_level(spec, y_mbs, y_mibs, grid)
    fused = fuse_symbol_level(y_mbs, y_mibs, spec.config.q, spec.symbol_fusion, spec.equalize)
    return _localize_lattice(spec, fused, grid).estimates


def spec_grid(spec: ExperimentSpec):
    return build_grid(spec.region, spec.grid_resolution_m, spec.scenario)


def run_cell(spec: ExperimentSpec, noise_dbm_hz: float | None, grid=None) -> CellReport:
    grid = grid if grid is not None else spec_grid(spec)
    scenario = spec.scenario.with_noise(noise_dbm_hz)
    truth = scenario.truth()
    penalty = grid.diagonal_m ** 2

    def one(i: int) -> TrialRecord:
        seed = spec.base_seed + i
        try:
            est = estimate_trial(spec, scenario, grid, seed)
        except (EstimationError, np.linalg.LinAlgError) as exc:
            return TrialRecord(i, seed, np.empty((0, 2)), truth, np.full(len(truth), math.nan),
                               failed=True, error=str(exc))
        match = associate(est, truth, penalty)
        return TrialRecord(i, seed, est, truth, match.sq_errors, misses=match.misses)

    start = time.perf_counter()
    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            records = list(pool.map(one, range(spec.trials)))
    else:
        records = [one(i) for i in range(spec.trials)]
    return CellReport(noise_dbm_hz, spec.method, spec.cooperation, spec.fusion_mode, records,
                      time.perf_counter() - start)


@dataclass(frozen=True, eq=False)
class EvalReport:
    cells: list[CellReport]
    base_seed: int = 0

    @property
    def wall_time_s(self) -> float:
        return sum(c.wall_time_s for c in self.cells)

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.cells + other.cells, self.base_seed)

    def select(self, **criteria) -> list[CellReport]:
        return [c for c in self.cells
                if all(getattr(c, k) == v for k, v in criteria.items())]


def run_sweep(spec: ExperimentSpec) -> EvalReport:
    grid = spec_grid(spec)
    return EvalReport([run_cell(spec, level, grid) for level in spec.noise_sweep_dbm_hz],
                      spec.base_seed)


REPORT_COLUMNS = ["noise_dbm_hz", "method", "cooperation", "fusion", "smse_m", "median_smse_m",
                  "trials", "failures"]
TIMING_COLUMNS = ["noise_dbm_hz", "method", "cooperation", "fusion", "trials", "wall_time_s"]


def _noise_str(level) -> str:
    return "none" if level is None else repr(float(level))


def report_csv(report: EvalReport, header_lines=()) -> str:
    """Deterministic per-cell summary; timings live in :func:`timing_csv`."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for c in report.cells:
        writer.writerow([_noise_str(c.noise_dbm_hz), c.method.value, c.cooperation.value,
                         c.fusion.value, repr(c.smse_m), repr(c.median_smse_m),
                         len(c.records), c.failures])
    return buf.getvalue()


def timing_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TIMING_COLUMNS)
    for c in report.cells:
        writer.writerow([_noise_str(c.noise_dbm_hz), c.method.value, c.cooperation.value,
                         c.fusion.value, len(c.records), f"{c.wall_time_s:.6f}"])
    return buf.getvalue()


def records_jsonl(report: EvalReport) -> str:
    lines = []
    for c in report.cells:
        for r in c.records:
            row = {"noise_dbm_hz": c.noise_dbm_hz, "method": c.method.value,
                   "cooperation": c.cooperation.value, "fusion": c.fusion.value}
            row.update(r.to_dict())
            lines.append(json.dumps(row, sort_keys=True))
    return "\n".join(lines) + "\n"


def sweep_matrix(base: ExperimentSpec, methods=None, cooperations=None, fusions=None) -> EvalReport:
    """Run :func:`run_sweep` for every (method, cooperation, fusion) combination.

    Data-level fusion only applies to cooperative runs and is skipped otherwise.
    """
    methods = methods or [base.method]
    cooperations = cooperations or [base.cooperation]
    fusions = fusions or [base.fusion_mode]
    report = EvalReport([], base.base_seed)
    for m in methods:
        for coop in cooperations:
            for fus in fusions:
                if Cooperation(coop) is not Cooperation.COOPERATIVE and \
                        FusionLevel(fus) is FusionLevel.DATA_LEVEL:
                    continue
                report = report + run_sweep(replace(base, method=m, cooperation=coop,
                                                    fusion_mode=fus))
    return report
