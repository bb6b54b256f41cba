"""Command-line driver: presets, config files, CSV and plot-script output."""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelParams
from .errors import ConfigError, WetLearnError
from .schemes import Scheme
from .sim import SimConfig, aggregate, run_trials

CSV_HEADER = "scheme,B,N,metric,mean,stderr,trials"
DEFAULT_TRIALS = 50
N_GRID = (1, 2, 4, 6, 8, 10, 12, 14, 16, 20, 25, 30, 40, 50, 60, 70, 80, 90, 100)


@dataclass(frozen=True)
class Series:
    label: str
    scheme: Scheme
    B: float
    pruneKeep: int | None = None
    alpha: float = 0.0
    robust: bool = False


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    series: tuple
    grid: tuple
    metrics: tuple = ("normError", "gainDb")
    axis: str = "N"  # sweep axis for the plot script

    def __post_init__(self):
        if not self.series or not self.grid:
            raise ConfigError(f"preset {self.name} has no series or grid")


Q, C, R = Scheme.QUANTIZATION, Scheme.COMPARISON, Scheme.RANDOM_BEAM


def _pair(bs):
    return tuple(Series(s.value, s, b) for b in bs for s in (Q, C))


def _prune_series():
    out = [Series("quantization", Q, 2)]
    out += [Series(f"quantization[keep={k}]", Q, 2, pruneKeep=k) for k in (16, 32, 48)]
    return tuple(out)


def _error_series():
    out = []
    for alpha in (0.0, 0.001, 0.01):
        for s in (Q, C):
            label = s.value if alpha == 0 else f"{s.value}[alpha={alpha:g}]"
            out.append(Series(label, s, 2, alpha=alpha, robust=alpha > 0))
    return tuple(out)


PRESETS = {
    "fig4": ExperimentPreset("fig4", _pair((1, 2)), N_GRID, ("normError",)),
    "fig5": ExperimentPreset("fig5", _pair((4, 10)) + (Series("quantization", Q, math.inf),), N_GRID,
                             ("normError",)),
    "fig7": ExperimentPreset("fig7", _pair((1, 2)) + (Series("random", R, 2),), N_GRID, ("gainDb",)),
    "fig8": ExperimentPreset("fig8", _pair((4, 10)) + (Series("quantization", Q, math.inf), Series("random", R, 4)),
                             N_GRID, ("gainDb",)),
    "fig9": ExperimentPreset("fig9", _pair(range(1, 11)), (10, 15), ("gainDb",), axis="B"),
    "fig10": ExperimentPreset("fig10", _prune_series(), N_GRID, ("normError",)),
    "fig11": ExperimentPreset("fig11", _prune_series(), N_GRID, ("gainDb",)),
    "fig12": ExperimentPreset("fig12", _error_series(), N_GRID, ("normError",)),
    "fig13": ExperimentPreset("fig13", _error_series(), N_GRID, ("gainDb",)),
}


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunSettings:
    preset: str | None = None
    scheme: Scheme = Scheme.QUANTIZATION
    B: float = 2
    N: int | None = None
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    alpha: float = 0.0
    pruneKeep: int | None = None
    robust: bool = False
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    outDir: Path = Path(".")
    dumpDebug: bool = False
    powerDbm: float = 30.0
    Tm: float = 2.0
    Tf: float = 1.0
    channel: ChannelParams = ChannelParams()
    noisyReference: bool = True
    relaxEveryInterval: bool = True
    augmentedPruneMetric: bool = False
    explicit: set = field(default_factory=set)

    @property
    def power(self) -> float:
        return dbm_to_watts(self.powerDbm)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def parse_b(text) -> float:
    s = str(text).strip().lower()
    if s in ("inf", "infinity", "infinite"):
        return math.inf
    try:
        b = int(s)
    except ValueError:
        raise ConfigError(f"B must be a positive integer or 'inf', got {text!r}") from None
    if b < 1:
        raise ConfigError(f"B must be at least 1, got {b}")
    return b


def _parse_bool(text: str) -> bool:
    s = text.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_scheme(text: str) -> Scheme:
    try:
        return Scheme(text.strip().lower())
    except ValueError:
        names = ", ".join(s.value for s in Scheme)
        raise ConfigError(f"unknown scheme {text!r} (expected one of {names})") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be at least 1")
    return v


def _optional_keep(text: str):
    return None if text.strip().lower() in ("none", "0", "") else _positive_int(text)


def _alpha(text: str) -> float:
    v = float(text)
    if not 0 <= v < 1:
        raise ValueError("alpha must lie in [0, 1)")
    return v


SETTING_PARSERS = {
    "preset": lambda s: s.strip(),
    "scheme": _parse_scheme,
    "B": parse_b,
    "N": _positive_int,
    "trials": _positive_int,
    "seed": lambda s: int(s),
    "alpha": _alpha,
    "pruneKeep": _optional_keep,
    "robust": _parse_bool,
    "threads": _positive_int,
    "outDir": Path,
    "dumpDebug": _parse_bool,
    "powerDbm": float,
    "Tm": float,
    "Tf": float,
    "noisyReference": _parse_bool,
    "relaxEveryInterval": _parse_bool,
    "augmentedPruneMetric": _parse_bool,
}
CHANNEL_PARSERS = {
    "mT": _positive_int,
    "mR": _positive_int,
    "ricianFactorDb": float,
    "pathLossDb": float,
    "elementSpacingOverWavelength": float,
    "arrivalAngleDeg": float,
}


def _apply(settings: RunSettings, key: str, raw: str, where: str) -> None:
    try:
        if key in SETTING_PARSERS:
            setattr(settings, key, SETTING_PARSERS[key](raw))
            settings.explicit.add(key)
        elif key in CHANNEL_PARSERS:
            settings.channel = dataclasses.replace(settings.channel, **{key: CHANNEL_PARSERS[key](raw)})
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    except ConfigError as exc:
        if str(exc).startswith(where):
            raise
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value {raw!r} for {key}: {exc}") from None


def read_config_file(path, settings: RunSettings) -> RunSettings:
    """Apply a flat ``key = value`` file (``#`` comments) onto ``settings``."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in text.split("=", 1))
        _apply(settings, key, value, f"{path}:{lineno}")
    return settings


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wetlearn",
        description="Monte-Carlo experiments for energy-feedback MIMO channel learning.",
    )
    p.add_argument("--config", help="flat key = value file applied before the flags")
    p.add_argument("--preset", choices=sorted(PRESETS, key=lambda k: int(k[3:])))
    p.add_argument("--scheme", help="quantization, comparison or random")
    p.add_argument("--B", dest="B", help="feedback bits per interval (integer or inf)")
    p.add_argument("--N", dest="N", help="number of feedback intervals")
    p.add_argument("--trials")
    p.add_argument("--seed")
    p.add_argument("--alpha", help="relative energy-meter error bound")
    p.add_argument("--prune-keep", dest="pruneKeep", help="cap on stored cutting planes")
    p.add_argument("--robust", action="store_const", const="true", help="relax planes against meter error")
    p.add_argument("--threads", help="worker processes for trials (default: CPU count)")
    p.add_argument("--out-dir", dest="outDir", default=None)
    p.add_argument("--dump-debug", dest="dumpDebug", action="store_const", const="true",
                   help="write per-interval solver diagnostics as JSON lines")
    return p


def parse_config(argv=None) -> RunSettings:
    """Resolve defaults, then the optional config file, then command-line flags."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code == 0:
            raise
        raise ConfigError("invalid command line") from None
    settings = RunSettings()
    if args.config:
        read_config_file(args.config, settings)
    for key in ("preset", "scheme", "B", "N", "trials", "seed", "alpha", "pruneKeep",
                "robust", "threads", "outDir", "dumpDebug"):
        value = getattr(args, key)
        if value is not None:
            _apply(settings, key, str(value), f"--{key}")
    if settings.preset is not None and settings.preset not in PRESETS:
        raise ConfigError(f"unknown preset {settings.preset!r}")
    if settings.B == math.inf and settings.scheme is not Scheme.QUANTIZATION and "scheme" in settings.explicit:
        raise ConfigError("B = inf is only defined for the quantization scheme")
    return settings


# ---------------------------------------------------------------------------
# experiments


def resolve_preset(settings: RunSettings) -> ExperimentPreset:
    """The preset to run; explicit --scheme/--B/--N narrow a named preset."""
    if settings.preset is None:
        n = settings.N or 60
        label = settings.scheme.value
        series = (Series(label, settings.scheme, settings.B, settings.pruneKeep, settings.alpha, settings.robust),)
        return ExperimentPreset("custom", series, tuple(range(1, n + 1)))
    preset = PRESETS[settings.preset]
    series = preset.series
    if "scheme" in settings.explicit:
        series = tuple(s for s in series if s.scheme is settings.scheme)
    if "B" in settings.explicit:
        series = tuple(s for s in series if s.B == settings.B)
    series = tuple(
        dataclasses.replace(
            s,
            pruneKeep=settings.pruneKeep if "pruneKeep" in settings.explicit else s.pruneKeep,
            alpha=settings.alpha if "alpha" in settings.explicit else s.alpha,
            robust=s.robust or settings.robust,
        )
        for s in series
    )
    grid = preset.grid
    if "N" in settings.explicit:
        grid = tuple(n for n in grid if n <= settings.N) or (settings.N,)
    if not series:
        raise ConfigError(f"the --scheme/--B filters leave preset {preset.name} empty")
    return dataclasses.replace(preset, series=series, grid=grid)


def series_config(settings: RunSettings, series: Series, N: int) -> SimConfig:
    channel = dataclasses.replace(settings.channel, rngSeed=settings.seed)
    try:
        return SimConfig(
            channel=channel, scheme=series.scheme, B=series.B, N=N, P=settings.power,
            Tm=settings.Tm, Tf=settings.Tf, pruneKeep=series.pruneKeep,
            robustAlpha=series.alpha, robust=series.robust, trials=settings.trials,
            seed=settings.seed, noisyReference=settings.noisyReference,
            relaxEveryInterval=settings.relaxEveryInterval,
            augmentedPruneMetric=settings.augmentedPruneMetric,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_series(settings: RunSettings, series: Series, grid):
    if series.scheme is Scheme.RANDOM_BEAM:
        records = []
        for n in grid:
            records += run_trials(series_config(settings, series, n), workers=settings.threads)
    else:
        records = run_trials(series_config(settings, series, max(grid)), workers=settings.threads)
    return records, aggregate(records, grid)


def _fmt(x) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.9g" % x


def csv_rows(series: Series, agg, metrics):
    rows = []
    for metric in metrics:
        stats = getattr(agg, metric)
        for j, n in enumerate(agg.grid):
            b = "inf" if series.B == math.inf else str(int(series.B))
            rows.append(",".join([series.label, b, str(n), metric, _fmt(float(stats.mean[j])),
                                  _fmt(float(stats.stderr[j])), str(int(stats.count[j]))]))
    return rows


def plot_script(preset: ExperimentPreset, csv_name: str) -> str:
    """gnuplot text reproducing the figure axes from the CSV."""
    lines = [
        f"# {preset.name}: run gnuplot on this file next to {csv_name}",
        "set datafile separator ','",
        "set key outside right",
        "set grid",
        "set terminal pngcairo size 900,600",
        f"set output '{Path(csv_name).stem}.png'",
    ]
    metric = preset.metrics[0]
    if preset.axis == "B":
        lines.append("set xlabel 'feedback bits per interval B'")
        x_col, key_col, filt = 2, 3, "N"
    else:
        lines.append("set xlabel 'feedback intervals N'")
        x_col, key_col, filt = 3, 2, "B"
    if metric == "normError":
        lines += ["set logscale y", "set ylabel 'normalized estimation error'"]
    else:
        lines += ["set ylabel 'energy beamforming gain (dB)'"]
    keys = sorted({(s.label, s.B) for s in preset.series}, key=lambda t: (t[0], t[1]))
    if preset.axis == "B":
        keys = sorted({(s.label, n) for s in preset.series for n in preset.grid})
    plots = []
    for label, k in keys:
        kv = "inf" if k == math.inf else str(int(k))
        sel = (f"(strcol(1) eq '{label}' && strcol({key_col}) eq '{kv}' && strcol(4) eq '{metric}' "
               f"? ${x_col} : 1/0)")
        plots.append(f"'{csv_name}' every ::1 using {sel}:5 with linespoints title '{label} {filt}={kv}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def debug_lines(series: Series, records):
    for rec in records:
        for iv in rec.intervals:
            yield json.dumps({
                "series": series.label,
                "B": "inf" if series.B == math.inf else int(series.B),
                "trial": rec.trial,
                "interval": iv.n,
                "planeCount": iv.planeCount,
                "newtonIterations": iv.newtonIterations,
                "kktResidual": None if not math.isfinite(iv.kktResidual) else iv.kktResidual,
                "minMargin": None if not math.isfinite(iv.minMargin) else iv.minMargin,
                "feedback": iv.feedback.payload() if iv.feedback is not None else None,
            }, sort_keys=True)
        if rec.failed:
            yield json.dumps({"series": series.label, "trial": rec.trial, "failure": rec.failure}, sort_keys=True)


def run_experiment(settings: RunSettings, preset: ExperimentPreset | None = None, log=None) -> dict:
    """Run every series of the preset and write CSV, plot script and optional debug dump."""
    preset = preset or resolve_preset(settings)
    out_dir = Path(settings.outDir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{preset.name}_{settings.seed}"
    rows = [CSV_HEADER]
    debug = []
    failures = 0
    for series in preset.series:
        records, agg = run_series(settings, series, preset.grid)
        failures += agg.failures
        metrics = preset.metrics if settings.preset else ("normError", "gainDb")
        if series.scheme is Scheme.RANDOM_BEAM:
            metrics = tuple(m for m in metrics if m != "normError") or ("gainDb",)
        rows += csv_rows(series, agg, metrics)
        if settings.dumpDebug:
            debug += list(debug_lines(series, records))
        if log:
            log(f"{series.label} B={series.B}: {agg.trials} trials, {agg.failures} failed")
    csv_path = out_dir / f"{stem}.csv"
    csv_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    gp_path = out_dir / f"{stem}.gp"
    gp_path.write_text(plot_script(preset, csv_path.name), encoding="utf-8")
    paths = {"csv": csv_path, "plot": gp_path}
    if settings.dumpDebug:
        dbg = out_dir / f"{stem}_debug.jsonl"
        dbg.write_text("\n".join(debug) + ("\n" if debug else ""), encoding="utf-8")
        paths["debug"] = dbg
    paths["failures"] = failures
    return paths


def main(argv=None) -> int:
    try:
        settings = parse_config(argv)
        preset = resolve_preset(settings)
    except ConfigError as exc:
        print(f"wetlearn: config error: {exc}", file=sys.stderr)
        return 2
    try:
        paths = run_experiment(settings, preset, log=lambda m: print(m, file=sys.stderr))
    except ConfigError as exc:
        print(f"wetlearn: config error: {exc}", file=sys.stderr)
        return 2
    except (WetLearnError, ArithmeticError, OSError) as exc:
        print(f"wetlearn: runtime failure: {exc}", file=sys.stderr)
        return 3
    print(paths["csv"])
    return 0
