"""Command-line front end: map, sweep, bench and validate subcommands.

Settings come from built-in defaults, then an optional YAML file, then flags
(``--set key=value`` included), later sources winning.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .estimators import (EstimatorOptions, Method, dft3d_estimate, dft3d_transform,
                         gdft_spectrum, localize, music3d_estimate, music3d_spectra)
from .evaluation import (Cooperation, ExperimentSpec, FusionLevel, associate, balanced_setup,
                         records_jsonl, report_csv, spec_grid, sweep_matrix, timing_csv)
from .fusion import FusionMode, compact, fuse_symbol_level, link_lattice
from .scenario import (DEFAULT_REGION, SystemConfig, desk_config, grid_from_points,
                       reference_scenario)
from .waveform import GainMode, Side, synthesize_echo

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


def _enum_list(kind):
    def check(value):
        items = value if isinstance(value, list) else [value]
        out = []
        for item in items:
            try:
                out.append(kind(str(item)).value)
            except ValueError:
                valid = ", ".join(m.value for m in kind)
                raise ConfigError(f"invalid value {item!r}; expected one of: {valid}") from None
        return out
    return check


def _enum(kind):
    def check(value):
        if isinstance(value, list):
            _bad(value, "a single value")
        return _enum_list(kind)(value)[0]
    return check


def _bad(value, expected):
    raise ConfigError(f"expected {expected}, got {value!r}")


def _int(lo=None):
    def check(value):
        if isinstance(value, bool) or not isinstance(value, int):
            _bad(value, "an integer")
        if lo is not None and value < lo:
            raise ConfigError(f"must be >= {lo}, got {value}")
        return value
    return check


def _float(positive=False, allow_null=False):
    def check(value):
        if value is None and allow_null:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _bad(value, "a number")
        value = float(value)
        if not math.isfinite(value) or (positive and value <= 0):
            raise ConfigError(f"must be a {'positive ' if positive else ''}finite number, "
                              f"got {value}")
        return value
    return check


def _float_list(allow_null=False):
    def check(value):
        items = value if isinstance(value, list) else [value]
        if not items:
            raise ConfigError("list must be nonempty")
        return [_float(allow_null=allow_null)(v) for v in items]
    return check


def _int_list(value):
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ConfigError("list must be nonempty")
    return [_int(1)(v) for v in items]


def _bool(value):
    if not isinstance(value, bool):
        _bad(value, "true or false")
    return value


def _region(value):
    if not isinstance(value, list) or len(value) != 4:
        _bad(value, "[xmin, xmax, ymin, ymax]")
    return [_float()(v) for v in value]


def _system(value):
    if not isinstance(value, dict):
        _bad(value, "a mapping of system parameters")
    known = {f.name for f in fields(SystemConfig)}
    unknown = sorted(set(value) - known)
    if unknown:
        raise ConfigError(f"unknown system keys {unknown}; known: {sorted(known)}")
    return dict(value)


def _link_model(value):
    if value not in ("balanced", "physical"):
        raise ConfigError(f"invalid value {value!r}; expected one of: balanced, physical")
    return value


SCHEMA = {
    "seed": (_int(0), 0),
    "trials": (_int(1), 100),
    "workers": (_int(1), 1),
    "noise_dbm_hz": (_float_list(allow_null=True), [-175.0, -165.0, -155.0, -145.0, -135.0]),
    "map_noise_dbm_hz": (_float(allow_null=True), -200.0),
    "method": (_enum_list(Method), [m.value for m in Method]),
    "cooperation": (_enum_list(Cooperation), [c.value for c in Cooperation]),
    "fusion_mode": (_enum_list(FusionLevel), [f.value for f in FusionLevel]),
    "grid_res_m": (_float(positive=True), 5.0),
    "region": (_region, list(DEFAULT_REGION)),
    "full_scale": (_bool, False),
    "link_model": (_link_model, "balanced"),
    "symbol_fusion": (_enum(FusionMode), FusionMode.NORMALIZED.value),
    "max_failure_rate": (_float(), 0.1),
    "bench_grid_sizes": (_int_list, None),
    "bench_repeats": (_int(1), 3),
    "system": (_system, {}),
}


def default_settings() -> dict:
    return {key: (list(d) if isinstance(d, list) else dict(d) if isinstance(d, dict) else d)
            for key, (_, d) in SCHEMA.items()}


def validate_settings(raw: dict, source: str = "config") -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    out = {}
    for key, value in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"{source}: unknown key {key!r}; known keys: {', '.join(SCHEMA)}")
        try:
            out[key] = SCHEMA[key][0](value)
        except ConfigError as exc:
            raise ConfigError(f"{source}: {key}: {exc}") from None
    if "noise_dbm_hz" in out:
        levels = [-math.inf if v is None else v for v in out["noise_dbm_hz"]]
        if levels != sorted(levels):
            raise ConfigError(f"{source}: noise_dbm_hz must be sorted ascending")
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return validate_settings(raw, str(path))


@dataclass
class RunManifest:
    subcommand: str
    out_dir: Path
    config_path: Path | None = None
    overrides: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.settings["seed"]


def _flag_overrides(args) -> dict:
    flags = {}
    for key, attr in (("seed", "seed"), ("method", "method"), ("cooperation", "cooperation"),
                      ("fusion_mode", "fusion_mode"), ("grid_res_m", "grid_res_m"),
                      ("trials", "trials")):
        value = getattr(args, attr, None)
        if value is not None:
            flags[key] = value
    if args.noise_dbm_hz is not None:
        flags["noise_dbm_hz"] = args.noise_dbm_hz
        if len(args.noise_dbm_hz) == 1:
            flags["map_noise_dbm_hz"] = args.noise_dbm_hz[0]
        elif args.command == "map":
            raise ConfigError("map takes a single --noise-dbm-hz value")
    if args.full_scale:
        flags["full_scale"] = True
    for item in args.set or []:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key.strip()] = yaml.safe_load(text)
    return flags


def build_manifest(args) -> RunManifest:
    settings = default_settings()
    if args.config is not None:
        settings.update(load_config(args.config))
    overrides = _flag_overrides(args)
    settings.update(validate_settings(overrides, "flags"))
    out_dir = Path(args.out)
    return RunManifest(args.command, out_dir, args.config, overrides, settings)


def build_spec(settings: dict) -> ExperimentSpec:
    """Base experiment for the resolved settings (first method/cooperation/fusion)."""
    base = SystemConfig() if settings["full_scale"] else desk_config()
    scenario = reference_scenario()
    if settings["link_model"] == "balanced":
        config, scenario = balanced_setup(replace(base, tx_power_mibs_dbm=46.0), scenario)
        gain = GainMode.UNIT
    else:
        config, gain = base, GainMode.BISTATIC_RADAR
    if settings["system"]:
        try:
            config = replace(config, **settings["system"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"system: {exc}") from None
    try:
        return ExperimentSpec(
            scenario=scenario, config=config, method=settings["method"][0],
            cooperation=settings["cooperation"][0], fusion_mode=settings["fusion_mode"][0],
            noise_sweep_dbm_hz=tuple(settings["noise_dbm_hz"]), trials=settings["trials"],
            base_seed=settings["seed"], region=tuple(settings["region"]),
            grid_resolution_m=settings["grid_res_m"], gain_mode=gain,
            symbol_fusion=settings["symbol_fusion"], workers=settings["workers"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(columns, rows, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


def _trial_tensors(spec: ExperimentSpec, noise, seed):
    scenario = spec.scenario.with_noise(noise)
    rng = np.random.default_rng(seed)
    y_mbs = synthesize_echo(spec.config, scenario, Side.MBS_RX, 0, rng, spec.gain_mode)
    y_mibs = synthesize_echo(spec.config, scenario, Side.MIBS_RX, 0, rng, spec.gain_mode)
    return y_mbs, y_mibs


def _lattice(spec: ExperimentSpec, cooperation: Cooperation, y_mbs, y_mibs):
    q = spec.config.q
    if cooperation is Cooperation.MBS_ONLY:
        return link_lattice(y_mbs, q)
    if cooperation is Cooperation.MIBS_ONLY:
        return link_lattice(y_mibs, q)
    return fuse_symbol_level(y_mbs, y_mibs, q, spec.symbol_fusion, spec.equalize)


def _spectrum_rows(method: Method, lattice, grid, n_targets, options: EstimatorOptions):
    if method is Method.GDFT:
        values = gdft_spectrum(lattice, grid).values
        return (["grid_index", "x_m", "y_m", "spectrum_value"],
                [[g, _fmt(x), _fmt(y), _fmt(v)]
                 for g, ((x, y), v) in enumerate(zip(grid.points, values))])
    data, scs, bins = compact(lattice)
    if method is Method.DFT3D:
        mag = np.abs(dft3d_transform(data))
        rows = [[a, b, c, _fmt(mag[a, b, c])] for a, b, c in np.ndindex(mag.shape)]
        return ["aoa_bin", "aod_bin", "delay_bin", "magnitude"], rows
    span = (float(grid.delays.min()), float(grid.delays.max()))
    spectra = music3d_spectra(data, n_targets, options.angle_grid, options.delay_grid, scs,
                              bins if len(bins) != data.shape[2] else None, span)
    rows = [["aoa", _fmt(a), _fmt(v)] for a, v in zip(spectra.angles, spectra.aoa)]
    rows += [["aod", _fmt(a), _fmt(v)] for a, v in zip(spectra.angles, spectra.aod)]
    rows += [["delay", _fmt(d), _fmt(v)] for d, v in zip(spectra.delays, spectra.delay)]
    return ["axis", "coordinate", "pseudospectrum"], rows


def cmd_map(manifest: RunManifest) -> int:
    """One trial per (method, cooperation): spectrum and estimates-vs-truth CSVs."""
    s = manifest.settings
    spec = build_spec(s)
    grid = spec_grid(spec)
    noise = s["map_noise_dbm_hz"]
    truth = spec.scenario.truth()
    header = [f"seed={manifest.seed}", f"noise_dbm_hz={noise}"]
    y_mbs, y_mibs = _trial_tensors(spec, noise, manifest.seed)
    for m in s["method"]:
        method = Method(m)
        for c in s["cooperation"]:
            coop = Cooperation(c)
            lattice = _lattice(spec, coop, y_mbs, y_mibs)
            tag = f"{method.value}_{coop.value}"
            columns, rows = _spectrum_rows(method, lattice, grid, len(truth), spec.estimator)
            write_atomic(manifest.out_dir / f"map_spectrum_{tag}.csv",
                         _csv_text(columns, rows, header))
            est = localize(method, lattice, grid, len(truth), spec.scenario.mbs_pos,
                           spec.scenario.mibs_pos, spec.estimator).estimates
            match = associate(est, truth, grid.diagonal_m ** 2)
            rows = []
            for t, e in sorted(match.pairs):
                rows.append([t, _fmt(truth[t, 0]), _fmt(truth[t, 1]), _fmt(est[e, 0]),
                             _fmt(est[e, 1]), _fmt(math.sqrt(match.sq_errors[t]))])
            matched = {t for t, _ in match.pairs}
            for t in range(len(truth)):
                if t not in matched:
                    rows.append([t, _fmt(truth[t, 0]), _fmt(truth[t, 1]), "", "", ""])
            rows.sort(key=lambda r: r[0])
            write_atomic(manifest.out_dir / f"map_estimates_{tag}.csv",
                         _csv_text(["target", "truth_x_m", "truth_y_m", "est_x_m", "est_y_m",
                                    "error_m"], rows, header))
    return EXIT_OK


FIGURE_SUBSETS = {
    # cooperative vs. single-receiver sensing with the grid method
    "fig4_cooperation.csv": dict(method=Method.GDFT, fusion=FusionLevel.SYMBOL_LEVEL),
    # grid method vs. the DFT and MUSIC baselines on the fused tensor
    "fig5_methods.csv": dict(cooperation=Cooperation.COOPERATIVE,
                             fusion=FusionLevel.SYMBOL_LEVEL),
    # symbol-level vs. data-level fusion
    "fig6_fusion.csv": dict(method=Method.GDFT, cooperation=Cooperation.COOPERATIVE),
}


def cmd_sweep(manifest: RunManifest) -> int:
    s = manifest.settings
    spec = build_spec(s)
    report = sweep_matrix(spec, s["method"], s["cooperation"], s["fusion_mode"])
    header = [f"seed={manifest.seed}", f"trials={spec.trials}"]
    out = manifest.out_dir
    write_atomic(out / "report.csv", report_csv(report, header))
    write_atomic(out / "timing.csv", timing_csv(report))
    meta = json.dumps({"seed": manifest.seed, "schema": ["noise_dbm_hz", "method", "cooperation",
                                                         "fusion", "trial", "seed", "estimates",
                                                         "truth", "errors_m", "misses",
                                                         "failed", "error"]})
    write_atomic(out / "records.jsonl", meta + "\n" + records_jsonl(report))
    for name, criteria in FIGURE_SUBSETS.items():
        subset = type(report)(report.select(**criteria), report.base_seed)
        write_atomic(out / name, report_csv(subset, header))
    bad = [c for c in report.cells if c.failure_rate > s["max_failure_rate"]]
    for c in bad:
        print(f"cell {c.method.value}/{c.cooperation.value}/{c.fusion.value} at "
              f"{c.noise_dbm_hz}: failure rate {c.failure_rate:.2f} exceeds "
              f"{s['max_failure_rate']}", file=sys.stderr)
    return EXIT_FAILURES if bad else EXIT_OK


def bench_grid(region, n_points: int, mbs_pos, mibs_pos):
    """Square ``sqrt(n) x sqrt(n)`` lattice spread over the region (rounded up)."""
    if n_points < 1:
        raise ConfigError("bench grid must have at least one point")
    side = math.isqrt(n_points - 1) + 1
    xmin, xmax, ymin, ymax = region
    gx, gy = np.meshgrid(np.linspace(xmin, xmax, side), np.linspace(max(ymin, 1e-3), ymax, side))
    pts = np.column_stack([gx.ravel(), gy.ravel()])[:n_points]
    return grid_from_points(pts, mbs_pos, mibs_pos)


def _best_time(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_rows(spec: ExperimentSpec, grid_sizes, repeats: int = 3):
    """``(method, params, wall_time_s)`` rows on one shared fused tensor."""
    y_mbs, y_mibs = _trial_tensors(spec, None, spec.base_seed)
    fused = _lattice(spec, Cooperation.COOPERATIVE, y_mbs, y_mibs)
    n = spec.config.n_antennas
    n_targets = len(spec.scenario.targets)
    sc = spec.scenario
    rows = []
    if grid_sizes is None:
        grids = [spec_grid(spec)]
    else:
        grids = [bench_grid(spec.region, g, sc.mbs_pos, sc.mibs_pos) for g in grid_sizes]
    for grid in grids:
        t = _best_time(lambda: gdft_spectrum(fused, grid), repeats)
        rows.append([Method.GDFT.value, f"G={grid.n_grid};N={n};bins={fused.n_bins}", t])
    data, scs, bins = compact(fused)
    t = _best_time(lambda: dft3d_estimate(data, scs, n_targets), repeats)
    rows.append([Method.DFT3D.value, f"N={n};bins={data.shape[2]}", t])
    opts = spec.estimator
    sub = bins if len(bins) != data.shape[2] else None
    t = _best_time(lambda: music3d_estimate(data, n_targets, opts.angle_grid, opts.delay_grid,
                                            scs, sub), repeats)
    rows.append([Method.MUSIC3D.value,
                 f"N={n};bins={len(bins)};angles={opts.angle_grid};delays={opts.delay_grid}", t])
    return rows


def cmd_bench(manifest: RunManifest) -> int:
    s = manifest.settings
    rows = bench_rows(build_spec(s), s["bench_grid_sizes"], s["bench_repeats"])
    text = _csv_text(["method", "params", "wall_time_s"],
                     [[m, p, f"{t:.6f}"] for m, p, t in rows], [f"seed={manifest.seed}"])
    write_atomic(manifest.out_dir / "bench.csv", text)
    return EXIT_OK


def cmd_validate(manifest: RunManifest) -> int:
    build_spec(manifest.settings)
    print(yaml.safe_dump(manifest.settings, sort_keys=True), end="")
    return EXIT_OK


COMMANDS = {"map": cmd_map, "sweep": cmd_sweep, "bench": cmd_bench, "validate": cmd_validate}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopsense",
                                     description="Cooperative bistatic sensing experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML settings file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--noise-dbm-hz", type=float, nargs="+", dest="noise_dbm_hz")
    common.add_argument("--method", action="append", choices=[m.value for m in Method])
    common.add_argument("--cooperation", action="append",
                        choices=[c.value for c in Cooperation])
    common.add_argument("--fusion-mode", action="append", dest="fusion_mode",
                        choices=[f.value for f in FusionLevel])
    common.add_argument("--grid-res-m", type=float, dest="grid_res_m")
    common.add_argument("--trials", type=int)
    common.add_argument("--full-scale", action="store_true", dest="full_scale",
                        help="full-size system dimensions (slow)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key (YAML value syntax)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("map", parents=[common], help="single-trial spectra and estimates")
    sub.add_parser("sweep", parents=[common], help="Monte-Carlo noise sweep")
    sub.add_parser("bench", parents=[common], help="estimator timings")
    sub.add_parser("validate", parents=[common], help="check a config and print it resolved")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        manifest = build_manifest(args)
        return COMMANDS[args.command](manifest)
    except ConfigError as exc:
        print(f"coopsense {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
