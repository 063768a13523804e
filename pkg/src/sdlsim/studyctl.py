"""Study configuration, result files and the ``sdlsim`` command line."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__, conveyor, gp, metrics, surfaces
from .acquisition import PendingPolicy, StrategyKind, StrategySpec, preset_betas

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "SDLSIM_OUTPUT_DIR"
SDL_FIT_NOISE_VARIANCE = surfaces.SDL_NOISE_STD ** 2

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_INCOMPLETE = 5
EXIT_IO = 6

SCHEMA_HELP = """\
Study config (YAML). Top-level keys, all optional except surfaces/delays/strategies:
  n_trials: int >= 1            (default 30)
  n_init: int >= 1              (default 10)
  budget: int > n_init          (default 100)
  base_seed: int                (default 0)
  output_dir: path              (default "results"; env SDLSIM_OUTPUT_DIR overrides)
  regret_of_mean_curve: bool    (default false; regret of the averaged curve)
  sdl_dataset: path to CSV      (header, 7 input columns, 1 target column)
  sdl_bounds: [[lo, hi] x 7]    (default: coating-process bounds)
  sdl_noise_std: float          (default 2e5, observation noise of the sdl surface)
  sdl_fit_noise_variance: float (default 4e10, fixed GP noise for the surrogate fit)
  sdl_seed: int                 (default 0, surrogate fit / global-max search seed)
  require_real_data: bool       (default false; refuse the synthetic stand-in)
  surfaces: list of {name: ackley|levy|sdl, dims: [int, ...], noise_std: float}
  delays: list of int >= 0
  strategies: list of
    {kind: random|ei|qnei|modecycle, label: str, mc_samples: int >= 64,
     beta_schedule: [float, ...] or {delay: [float, ...]},
     candidate_pool_size: int, restarts: int, pending_policy: fantasize|none,
     noise: learned | <fixed variance>}
"""

TOP_KEYS = {
    "n_trials", "n_init", "budget", "base_seed", "output_dir", "regret_of_mean_curve",
    "sdl_dataset", "sdl_bounds", "sdl_noise_std", "sdl_fit_noise_variance", "sdl_seed",
    "require_real_data", "surfaces", "delays", "strategies",
}
SURFACE_KEYS = {"name", "dims", "noise_std"}
STRATEGY_KEYS = {
    "kind", "label", "mc_samples", "beta_schedule", "candidate_pool_size", "restarts",
    "pending_policy", "noise",
}


class ConfigError(ValueError):
    pass


# -- YAML with line numbers ----------------------------------------------------


class _Map(dict):
    line: int = 0
    lines: dict


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise yaml.constructor.ConstructorError(
                None, None, f"duplicate key {key!r}", key_node.start_mark)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


class _Ctx:
    def __init__(self, source: str):
        self.source = source

    def fail(self, line, msg):
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {msg}")

    def check_keys(self, mapping, allowed, what):
        if not isinstance(mapping, dict):
            self.fail(getattr(mapping, "line", 0), f"{what} must be a mapping")
        for key in mapping:
            if key not in allowed:
                self.fail(mapping.lines.get(key), f"unknown key {key!r} in {what}")

    def integer(self, mapping, key, default, minimum=None):
        if key not in mapping or mapping[key] is None:
            return default
        value, line = mapping[key], mapping.lines.get(key)
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(line, f"{key} must be an integer, got {value!r}")
        if minimum is not None and value < minimum:
            self.fail(line, f"{key} must be >= {minimum}, got {value}")
        return value

    def number(self, mapping, key, default, positive=False):
        if key not in mapping or mapping[key] is None:
            return default
        value, line = mapping[key], mapping.lines.get(key)
        try:
            if isinstance(value, bool):
                raise ValueError
            out = float(value)  # YAML 1.1 reads "2e5" as a string
        except (TypeError, ValueError):
            self.fail(line, f"{key} must be a number, got {value!r}")
        if not np.isfinite(out) or (positive and not out > 0) or out < 0:
            self.fail(line, f"{key} must be {'positive' if positive else 'nonnegative'}, got {value!r}")
        return out

    def boolean(self, mapping, key, default):
        if key not in mapping or mapping[key] is None:
            return default
        if not isinstance(mapping[key], bool):
            self.fail(mapping.lines.get(key), f"{key} must be true or false")
        return mapping[key]


# -- config types --------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceSpec:
    name: str
    dims: tuple[int, ...]
    noise_std: float | None = None


@dataclass
class StudyConfig:
    surfaces: list[SurfaceSpec]
    delays: list[int]
    strategies: list[StrategySpec]
    n_trials: int = 30
    n_init: int = 10
    budget: int = 100
    base_seed: int = 0
    output_dir: Path = Path("results")
    sdl_dataset: Path | None = None
    sdl_bounds: tuple = surfaces.SDL_BOUNDS
    sdl_noise_std: float = surfaces.SDL_NOISE_STD
    sdl_fit_noise_variance: float = SDL_FIT_NOISE_VARIANCE
    sdl_seed: int = 0
    require_real_data: bool = False
    regret_of_mean_curve: bool = False
    # per-strategy {delay: betas} overrides, keyed by strategy label
    beta_overrides: dict = field(default_factory=dict)
    _surface_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def canonical(self) -> dict:
        """Every field that can change results, with defaults filled in."""
        out = {
            "n_trials": self.n_trials, "n_init": self.n_init, "budget": self.budget,
            "base_seed": self.base_seed, "delays": list(self.delays),
            "regret_of_mean_curve": self.regret_of_mean_curve,
            "surfaces": [[s.name, list(s.dims), s.noise_std] for s in self.surfaces],
            "strategies": [self._strategy_canonical(s) for s in self.strategies],
        }
        if any(s.name == "sdl" for s in self.surfaces):
            out["sdl"] = {
                "bounds": [list(b) for b in self.sdl_bounds],
                "noise_std": self.sdl_noise_std,
                "fit_noise_variance": self.sdl_fit_noise_variance,
                "seed": self.sdl_seed,
                "dataset_sha256": _file_sha256(self.sdl_dataset) if self.sdl_dataset else None,
            }
        return out

    def _strategy_canonical(self, s: StrategySpec) -> dict:
        return {
            "kind": s.kind.value, "label": s.label, "mc_samples": s.mc_samples,
            "beta_schedule": list(s.beta_schedule) if s.beta_schedule else None,
            "beta_overrides": {str(k): list(v) for k, v in
                               sorted(self.beta_overrides.get(s.label, {}).items())},
            "candidate_pool_size": s.candidate_pool_size, "restarts": s.restarts,
            "pending_policy": s.pending_policy.value,
            "noise": "learned" if s.noise_mode.is_learned else s.noise_mode.fixed,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def build_surface(self, spec: SurfaceSpec, dim: int) -> surfaces.ProblemSurface:
        cache_key = (spec.name, dim, spec.noise_std)
        if cache_key in self._surface_cache:
            return self._surface_cache[cache_key]
        if spec.name == "ackley":
            surf = surfaces.ackley(dim, *(() if spec.noise_std is None else (spec.noise_std,)))
        elif spec.name == "levy":
            surf = surfaces.levy(dim, *(() if spec.noise_std is None else (spec.noise_std,)))
        else:
            if self.sdl_dataset is not None:
                data = surfaces.load_dataset(self.sdl_dataset, self.sdl_bounds)
            else:
                log.info("no sdl_dataset given; using the synthetic stand-in")
                data = surfaces.synthetic_sdl_standin(self.sdl_seed)
            noise = self.sdl_noise_std if spec.noise_std is None else spec.noise_std
            surf = surfaces.fit_surrogate_surface(data, self.sdl_fit_noise_variance, noise,
                                                  seed=self.sdl_seed)
        self._surface_cache[cache_key] = surf
        return surf

    def strategy_for(self, strategy: StrategySpec, delay: int) -> StrategySpec:
        """Strategy with its mode-cycle betas resolved for ``delay``."""
        if strategy.kind is not StrategyKind.MODECYCLE:
            return strategy
        betas = self.beta_overrides.get(strategy.label, {}).get(delay)
        if betas is None:
            betas = strategy.beta_schedule or preset_betas(delay)
        return replace(strategy, beta_schedule=tuple(betas))

    def cells(self) -> list[conveyor.Cell]:
        out = []
        for spec in self.surfaces:
            for dim in spec.dims:
                surf = self.build_surface(spec, dim)
                for delay in self.delays:
                    for strat in self.strategies:
                        out.append(conveyor.Cell(surf, self.strategy_for(strat, delay), delay))
        return out


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parse_strategy(ctx: _Ctx, item) -> tuple[StrategySpec, dict]:
    ctx.check_keys(item, STRATEGY_KEYS, "strategy")
    line = item.line
    kind = item.get("kind")
    try:
        kind = StrategyKind(str(kind).lower())
    except ValueError:
        ctx.fail(item.lines.get("kind", line),
                 f"strategy kind must be one of {[k.value for k in StrategyKind]}, got {kind!r}")
    kwargs = {"kind": kind}
    for key in ("mc_samples", "candidate_pool_size", "restarts"):
        if key in item:
            kwargs[key] = ctx.integer(item, key, None, minimum=1)
    if "label" in item:
        kwargs["label"] = str(item["label"])
    if "pending_policy" in item:
        try:
            kwargs["pending_policy"] = PendingPolicy(str(item["pending_policy"]).lower())
        except ValueError:
            ctx.fail(item.lines["pending_policy"], "pending_policy must be fantasize or none")
    elif kind is StrategyKind.RANDOM:
        kwargs["pending_policy"] = PendingPolicy.NONE
    if "noise" in item and item["noise"] is not None and str(item["noise"]).lower() != "learned":
        kwargs["noise_mode"] = gp.NoiseMode.fixed_value(ctx.number(item, "noise", None))
    overrides = {}
    sched = item.get("beta_schedule")
    if sched is not None:
        if kind is not StrategyKind.MODECYCLE:
            ctx.fail(item.lines["beta_schedule"], "beta_schedule only applies to modecycle")
        if isinstance(sched, dict):
            for delay, betas in sched.items():
                if not isinstance(delay, int) or delay < 0:
                    ctx.fail(sched.lines.get(delay), f"beta_schedule key {delay!r} is not a delay")
                overrides[delay] = _betas(ctx, betas, sched.lines.get(delay))
        else:
            kwargs["beta_schedule"] = _betas(ctx, sched, item.lines["beta_schedule"])
    try:
        return StrategySpec(**kwargs), overrides
    except ValueError as exc:
        ctx.fail(line, str(exc))


def _betas(ctx, value, line) -> tuple[float, ...]:
    if not isinstance(value, list) or not value:
        ctx.fail(line, "beta list must be a nonempty list of positive numbers")
    try:
        betas = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        ctx.fail(line, f"bad beta list {value!r}")
    if any(not b > 0 for b in betas):
        ctx.fail(line, f"betas must be positive, got {value!r}")
    return betas


def parse_config(path, text: str | None = None) -> StudyConfig:
    """Read and validate a study config file."""
    path = Path(path)
    ctx = _Ctx(str(path))
    if text is None:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        raw = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        ctx.fail(mark.line + 1 if mark else None,
                 f"invalid YAML: {getattr(exc, 'problem', None) or exc}")
    if not isinstance(raw, dict):
        ctx.fail(None, "config must be a mapping at the top level")
    ctx.check_keys(raw, TOP_KEYS, "study config")

    n_trials = ctx.integer(raw, "n_trials", 30, minimum=1)
    n_init = ctx.integer(raw, "n_init", 10, minimum=1)
    budget = ctx.integer(raw, "budget", 100, minimum=2)
    if n_init + 1 > budget:
        ctx.fail(raw.lines.get("budget", raw.lines.get("n_init")),
                 f"budget ({budget}) must exceed n_init ({n_init})")
    base_seed = ctx.integer(raw, "base_seed", 0)

    surf_list = raw.get("surfaces")
    if not isinstance(surf_list, list) or not surf_list:
        ctx.fail(raw.lines.get("surfaces"), "surfaces must be a nonempty list")
    surface_specs = []
    for item in surf_list:
        ctx.check_keys(item, SURFACE_KEYS, "surface")
        name = str(item.get("name", "")).lower()
        if name not in ("ackley", "levy", "sdl"):
            ctx.fail(item.lines.get("name", item.line), f"unknown surface {item.get('name')!r}")
        dims = item.get("dims", [7] if name == "sdl" else None)
        if not isinstance(dims, list) or not dims or any(
                isinstance(d, bool) or not isinstance(d, int) or d < 1 for d in dims):
            ctx.fail(item.lines.get("dims", item.line), "dims must be a nonempty list of positive ints")
        if name == "sdl" and dims != [7]:
            ctx.fail(item.lines.get("dims", item.line), "the sdl surface is fixed at 7 dimensions")
        noise = ctx.number(item, "noise_std", None)
        surface_specs.append(SurfaceSpec(name, tuple(dims), noise))

    delays = raw.get("delays")
    if not isinstance(delays, list) or not delays or any(
            isinstance(d, bool) or not isinstance(d, int) or d < 0 for d in delays):
        ctx.fail(raw.lines.get("delays"), "delays must be a nonempty list of ints >= 0")
    if len(set(delays)) != len(delays):
        ctx.fail(raw.lines.get("delays"), "delays contain duplicates")

    strat_list = raw.get("strategies")
    if not isinstance(strat_list, list) or not strat_list:
        ctx.fail(raw.lines.get("strategies"), "strategies must be a nonempty list")
    strategies, beta_overrides = [], {}
    for item in strat_list:
        spec, overrides = _parse_strategy(ctx, item)
        if spec.label in beta_overrides:
            ctx.fail(item.line, f"duplicate strategy label {spec.label!r}")
        beta_overrides[spec.label] = overrides
        strategies.append(spec)
    beta_overrides = {k: v for k, v in beta_overrides.items() if v}

    sdl_dataset = raw.get("sdl_dataset")
    if sdl_dataset is not None:
        sdl_dataset = Path(str(sdl_dataset))
        if not sdl_dataset.is_absolute():
            sdl_dataset = path.parent / sdl_dataset
        if not sdl_dataset.is_file():
            ctx.fail(raw.lines["sdl_dataset"], f"sdl_dataset {sdl_dataset} does not exist")
    require_real = ctx.boolean(raw, "require_real_data", False)
    uses_sdl = any(s.name == "sdl" for s in surface_specs)
    if uses_sdl and require_real and sdl_dataset is None:
        ctx.fail(raw.lines.get("require_real_data"),
                 "require_real_data is set but no sdl_dataset path was given")

    sdl_bounds = surfaces.SDL_BOUNDS
    if raw.get("sdl_bounds") is not None:
        b = raw["sdl_bounds"]
        line = raw.lines["sdl_bounds"]
        try:
            sdl_bounds = tuple((float(lo), float(hi)) for lo, hi in b)
        except (TypeError, ValueError):
            ctx.fail(line, "sdl_bounds must be a list of [lower, upper] pairs")
        if len(sdl_bounds) != 7 or any(not lo < hi for lo, hi in sdl_bounds):
            ctx.fail(line, "sdl_bounds needs 7 pairs with lower < upper")

    output_dir = Path(str(raw.get("output_dir") or "results"))
    return StudyConfig(
        surfaces=surface_specs, delays=list(delays), strategies=strategies,
        n_trials=n_trials, n_init=n_init, budget=budget, base_seed=base_seed,
        output_dir=output_dir, sdl_dataset=sdl_dataset, sdl_bounds=sdl_bounds,
        sdl_noise_std=ctx.number(raw, "sdl_noise_std", surfaces.SDL_NOISE_STD),
        sdl_fit_noise_variance=ctx.number(raw, "sdl_fit_noise_variance",
                                          SDL_FIT_NOISE_VARIANCE, positive=True),
        sdl_seed=ctx.integer(raw, "sdl_seed", 0),
        require_real_data=require_real,
        regret_of_mean_curve=ctx.boolean(raw, "regret_of_mean_curve", False),
        beta_overrides=beta_overrides,
    )


def check_writable(directory: Path) -> None:
    """Raise OSError unless ``directory`` exists writable or can be created."""
    probe = Path(directory).resolve()
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir() or not os.access(probe, os.W_OK | os.X_OK):
        raise OSError(f"output directory {directory} is not writable (checked {probe})")


# -- result files ----------------------------------------------------------------


def _f(v) -> str:
    return repr(float(v))


def _safe_name(key: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in key)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def raw_rows(records):
    for trial, rec in enumerate(records):
        n_init = len(rec) - len(rec.pending_sizes)
        for i in range(len(rec)):
            step = i - n_init  # negative for initialization points
            yield ([trial, rec.seed, step] + [_f(v) for v in rec.x[i]]
                   + [_f(rec.y[i]), _f(rec.y_true[i]), int(rec.submit_index[i]),
                      int(rec.reveal_index[i]), rec.modes[i]])


def emit_results(summary: metrics.StudySummary, output_dir, study: StudyConfig | None = None) -> list[Path]:
    """Write raw, running-best, regret-summary and manifest files.

    On an I/O failure a ``PARTIAL`` marker is left in ``output_dir`` and the
    error is re-raised.
    """
    out = Path(output_dir)
    written: list[Path] = []
    try:
        (out / "raw").mkdir(parents=True, exist_ok=True)
        (out / "running_best").mkdir(parents=True, exist_ok=True)
        stale = out / "PARTIAL"
        if stale.exists():
            stale.unlink()
        summary_rows = []
        for key, cell in summary.cells.items():
            records = summary.records.get(key, [])
            name = _safe_name(key)
            if records:
                dim = records[0].x.shape[1]
                path = out / "raw" / f"{name}.csv"
                header = (["trial", "seed", "step"] + [f"x{i}" for i in range(dim)]
                          + ["y", "y_true", "submit_index", "reveal_index", "mode"])
                _write_csv(path, header, raw_rows(records))
                written.append(path)
            path = out / "running_best" / f"{name}.csv"
            _write_csv(path, ["step", "mean", "std"],
                       ([t, _f(m), _f(s)] for t, (m, s) in
                        enumerate(zip(cell.running_best_mean, cell.running_best_std))))
            written.append(path)
            meta = cell.meta
            summary_rows.append([key, meta.get("surface", ""), meta.get("dim", ""),
                                 meta.get("delay", ""), meta.get("strategy", ""),
                                 _f(cell.global_max), _f(cell.regret_mean), _f(cell.regret_std),
                                 cell.n_trials, int(cell.complete)])
        path = out / "regret_summary.csv"
        _write_csv(path, ["cell", "surface", "dim", "delay", "strategy", "global_max",
                          "regret_mean", "regret_std", "n_trials", "complete"], summary_rows)
        written.append(path)

        manifest = {
            "artifact": "sdlsim",
            "version": __version__,
            "config_hash": study.config_hash() if study else None,
            "base_seed": study.base_seed if study else None,
            "cells": {
                key: {"seeds": [int(r.seed) for r in summary.records.get(key, [])],
                      "complete": cell.complete, "errors": cell.errors,
                      "global_max": float(cell.global_max)}
                for key, cell in summary.cells.items()
            },
            "files": {str(p.relative_to(out)): _file_sha256(p) for p in written},
        }
        path = out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(path)
    except OSError:
        try:
            (out / "PARTIAL").write_text("output incomplete: I/O error while writing results\n")
        except OSError:
            pass
        raise
    return written


def load_raw_csv(path) -> dict[int, np.ndarray]:
    """Noisy observations per trial from a raw CSV, in submit order."""
    trials: dict[int, list[tuple[int, float]]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            trials.setdefault(int(row["trial"]), []).append(
                (int(row["submit_index"]), float(row["y"])))
    return {t: np.array([y for _, y in sorted(obs)]) for t, obs in sorted(trials.items())}


def regret_from_raw(path, global_max: float) -> dict[int, float]:
    return {t: metrics.cumulative_regret(y, global_max) for t, y in load_raw_csv(path).items()}


# -- CLI -----------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdlsim", description=__doc__,
                                epilog=SCHEMA_HELP,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a study and write result files")
    run.add_argument("config")
    run.add_argument("--jobs", type=int, default=1, help="concurrent trials (default 1)")
    run.add_argument("--out", help="output directory (overrides config and env)")
    run.add_argument("--seed", type=int, help="override base_seed")

    val = sub.add_parser("validate", help="check a study config without running it")
    val.add_argument("config")

    fs = sub.add_parser("fit-surrogate", help="fit the sdl surrogate GP and report CV r^2")
    fs.add_argument("csv", help="dataset CSV, or 'standin' for the synthetic data")
    fs.add_argument("--noise", type=float, default=surfaces.SDL_NOISE_STD,
                    help="noise standard deviation; fixed GP noise variance is its square")
    fs.add_argument("--folds", type=int, default=10)
    fs.add_argument("--seed", type=int, default=0)
    fs.add_argument("--dump", help="write a JSON model dump here")

    rg = sub.add_parser("regret", help="cumulative regret per trial from a raw CSV")
    rg.add_argument("raw_csv")
    rg.add_argument("--global-max", type=float, required=True)
    return p


def _cmd_run(args) -> int:
    study = parse_config(args.config)
    if args.seed is not None:
        study.base_seed = args.seed
    out = args.out or os.environ.get(OUTPUT_DIR_ENV) or study.output_dir
    out = Path(out)
    check_writable(out)
    summary = conveyor.run_study(study, jobs=max(1, args.jobs))
    emit_results(summary, out, study)
    for key, cell in summary.cells.items():
        status = "" if cell.complete else "  INCOMPLETE"
        print(f"{key}: regret {cell.regret_mean:.6g} +/- {cell.regret_std:.6g} "
              f"({cell.n_trials} trials){status}")
    print(f"results written to {out}")
    return EXIT_OK if summary.complete else EXIT_INCOMPLETE


def _cmd_validate(args) -> int:
    study = parse_config(args.config)
    out = Path(os.environ.get(OUTPUT_DIR_ENV) or study.output_dir)
    check_writable(out)
    n_cells = sum(len(s.dims) for s in study.surfaces) * len(study.delays) * len(study.strategies)
    print(f"{args.config}: ok ({n_cells} cells x {study.n_trials} trials, "
          f"budget {study.budget}, config hash {study.config_hash()[:12]})")
    return EXIT_OK


def _cmd_fit_surrogate(args) -> int:
    if args.csv == "standin":
        data = surfaces.synthetic_sdl_standin(args.seed)
    else:
        data = surfaces.load_dataset(args.csv)
    noise_var = args.noise ** 2
    surf = surfaces.fit_surrogate_surface(data, noise_var, args.noise, seed=args.seed)
    u = gp.normalize(data.x, data.bounds)
    r2 = gp.cross_validate(u, data.y, gp.NoiseMode.fixed_value(noise_var), args.folds,
                           seed=args.seed)
    hp = surf.model.hyperparams.to_dict()
    print(f"rows: {len(data)} (rejected {len(data.rejected)})")
    print(f"cross-validated r^2 ({args.folds}-fold): {r2:.6f}")
    print(f"signal_variance: {hp['signal_variance'] * surf.model.y_std ** 2:.6g}")
    print(f"noise_variance: {hp['noise_variance'] * surf.model.y_std ** 2:.6g}")
    print("lengthscales (normalized inputs): "
          + ", ".join(f"{v:.4g}" for v in hp["lengthscales"]))
    print(f"log marginal likelihood: {gp.log_marginal_likelihood(surf.model):.6f}")
    print(f"estimated global max: {surf.global_max:.6g}")
    if args.dump:
        dumped = gp.dump(surf.model, data.bounds)
        dumped["cv_r_squared"] = r2
        dumped["global_max"] = surf.global_max
        Path(args.dump).write_text(json.dumps(dumped, indent=2) + "\n")
    return EXIT_OK


def _cmd_regret(args) -> int:
    regrets = regret_from_raw(args.raw_csv, args.global_max)
    if not regrets:
        print(f"{args.raw_csv}: no observations", file=sys.stderr)
        return EXIT_DATA
    for t, r in regrets.items():
        print(f"trial {t}: {r!r}")
    agg = metrics.aggregate(list(load_raw_csv(args.raw_csv).values()), args.global_max)
    print(f"mean: {agg.regret_mean!r}")
    print(f"std: {agg.regret_std!r}")
    return EXIT_OK


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            print(f"\n{SCHEMA_HELP}", file=sys.stderr)
            return EXIT_USAGE
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "validate": _cmd_validate,
                "fit-surrogate": _cmd_fit_surrogate, "regret": _cmd_regret}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}\n\n{SCHEMA_HELP}", file=sys.stderr)
        return EXIT_CONFIG
    except (surfaces.DatasetError, gp.GPFitError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(cli_main())
