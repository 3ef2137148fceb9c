"""Experiment drivers: dataset generation, hyperparameter sweeps and method comparison.

Every driver writes plain files (RBCE episodes, CSV tables, PGM images)
and treats per-item failures as data: a failing episode or configuration
is recorded and the batch carries on.  CSV contents depend only on the
input files, the configurations and the seed; wall-clock timings go to a
separate ``*.timing.csv`` file so the main tables stay byte-reproducible.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import Episode, SplitSpec, nsse, nusselt, read_episode, write_episode
from .dns import DESK_GRID, SimulationConfig, simulate_episode
from .errors import MissingConfig, RbcError
from .fields import Grid, ScalarField
from .kdmd import KernelSpec, SnapshotPair, fit, predict
from .lran import DESK_WIDTHS, PAPER_WIDTHS, LranConfig, rollout, save_model, train

log = logging.getLogger(__name__)

KDMD_SIGMAS = (1.0, 2.0, 4.0, 6.0)
KDMD_SNAPSHOT_SIZES = (5, 10, 30, 40, 60, 80, 100, 150)

# LRAN random-search ranges
LATENT_RANGE = (16, 1024)
DELTA_RANGE = (0.9, 1.0)
BETA_RANGE = (0.0, 10.0)
BETA_LOG_FLOOR = 1e-3
BETA_ZERO_PROB = 0.2
SEQUENCE_RANGE = (2, 30)
LEARNING_RATES = (1e-4, 1e-5)
EPISODE_CHOICES = (0, 1, 2, 3, 4)

# tuned operating points per Rayleigh number
KDMD_DEFAULTS = {ra: {"kind": "gaussian", "sigma": 2.0, "snapshot_size": 60} for ra in (1e5, 1e6, 2e6, 5e6)}
LRAN_DEFAULTS = {
    1e5: {"sequence_length": 18, "latent_dim": 200, "delta": 0.9},
    1e6: {"sequence_length": 20, "latent_dim": 400, "delta": 0.9},
    2e6: {"sequence_length": 20, "latent_dim": 400, "delta": 0.9},
    5e6: {"sequence_length": 25, "latent_dim": 500, "delta": 0.9},
}

RENDER_HORIZONS = (1, 10, 25)


def ra_tag(ra: float) -> str:
    """File-name form of a Rayleigh number: 100000, 2000000, 1500.5."""
    return str(int(ra)) if float(ra).is_integer() else repr(float(ra))


def episode_path(out_dir, ra: float, k: int) -> Path:
    return Path(out_dir) / f"ra{ra_tag(ra)}_ep{k}.rbce"


def load_episodes(data_dir, ra: float) -> list[tuple[int, Episode]]:
    """All ``ra<RA>_ep<k>.rbce`` files in ``data_dir``, ordered by k."""
    found = []
    prefix = f"ra{ra_tag(ra)}_ep"
    for p in Path(data_dir).glob(f"{prefix}*.rbce"):
        idx = p.stem[len(prefix):]
        if idx.isdigit():
            found.append((int(idx), p))
    if not found:
        raise FileNotFoundError(f"no episodes for Ra={ra_tag(ra)} in {data_dir}")
    return [(k, read_episode(p)) for k, p in sorted(found)]


def default_widths(grid: Grid) -> tuple[int, int, int, int]:
    return PAPER_WIDTHS if grid.shape == (64, 96) else DESK_WIDTHS


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _horizon_columns(n: int) -> list[str]:
    return [f"nsse_{i:02d}" for i in range(1, n + 1)]


@dataclass
class SweepRow:
    index: int
    config: dict
    nsse: np.ndarray | None
    wall_time: float
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.nsse is not None

    @property
    def mean_nsse(self) -> float:
        return float(np.mean(self.nsse)) if self.ok else math.nan


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    @property
    def failures(self) -> list[SweepRow]:
        return [r for r in self.rows if not r.ok]

    def sorted_by_mean(self) -> list[SweepRow]:
        return sorted(self.rows, key=lambda r: (not r.ok, r.mean_nsse if r.ok else 0.0, r.index))

    def write_csv(self, path, keys, order="mean", horizon=30) -> Path:
        rows = self.sorted_by_mean() if order == "mean" else sorted(self.rows, key=lambda r: r.index)
        header = ["config_index", *keys, "status", "mean_nsse", *_horizon_columns(horizon), "error"]
        body = []
        for r in rows:
            curve = list(r.nsse) if r.ok else [math.nan] * horizon
            body.append([r.index, *(r.config[k] for k in keys), "ok" if r.ok else "failed",
                         r.mean_nsse, *map(float, curve), r.error])
        path = _write_csv(path, header, body)
        _write_csv(path.with_suffix(".timing.csv"), ["config_index", "wall_time_s"],
                   [[r.index, round(r.wall_time, 3)] for r in sorted(self.rows, key=lambda r: r.index)])
        return path


@dataclass
class NsseCurve:
    ra: float
    method: str
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_runs(cls, ra, method, runs, horizon) -> "NsseCurve":
        if not runs:
            nan = np.full(horizon, math.nan)
            return cls(ra, method, nan, nan.copy())
        arr = np.array(runs)
        return cls(ra, method, arr.mean(axis=0), arr.std(axis=0))

    @property
    def horizon(self) -> np.ndarray:
        return np.arange(1, self.mean.size + 1)


# simulate

@dataclass
class SimulateReport:
    paths: list[Path] = field(default_factory=list)
    failures: list[tuple[int, str]] = field(default_factory=list)


def cmd_simulate(ra: float, episodes: int, seed: int, grid: Grid = DESK_GRID, out_dir=".", *, pr: float = 0.7,
                 dt: float = 0.025, cook_time: float = 100.0, episode_length: float = 500.0,
                 stream=None) -> SimulateReport:
    """Simulate ``episodes`` runs with seeds ``seed + k`` and write them to ``out_dir``."""
    stream = stream or sys.stdout
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = SimulateReport()
    print(f"{'episode':>7} {'seed':>6} {'records':>7} {'mean q':>12} {'seconds':>8}  status", file=stream)
    for k in range(episodes):
        cfg = SimulationConfig(ra=ra, pr=pr, grid=grid, dt=dt, cook_time=cook_time,
                               episode_length=episode_length, seed=seed + k)
        t0 = time.perf_counter()
        try:
            ep = simulate_episode(cfg)
        except RbcError as exc:
            report.failures.append((k, str(exc)))
            print(f"{k:>7} {seed + k:>6} {'-':>7} {'-':>12} {time.perf_counter() - t0:>8.1f}  failed: {exc}",
                  file=stream)
            continue
        path = write_episode(ep, episode_path(out_dir, ra, k))
        report.paths.append(path)
        print(f"{k:>7} {seed + k:>6} {len(ep):>7} {float(ep.data.mean()):>12.4e} "
              f"{time.perf_counter() - t0:>8.1f}  ok", file=stream)
    if report.failures:
        print(f"failed episodes: {[k for k, _ in report.failures]}", file=stream)
    return report


# KDMD

def kdmd_curve(episode: Episode, spec: KernelSpec, snapshot_size: int, split: SplitSpec = SplitSpec()):
    """Fit on the ``snapshot_size`` frames ending at ``train_end - 1``; return (nsse curve, predictions)."""
    split.check(len(episode))
    if not 3 <= snapshot_size <= split.train_end:
        raise ValueError(f"snapshot size {snapshot_size} must lie in [3, {split.train_end}]")
    window = episode.data[split.train_end - snapshot_size:split.train_end].astype(np.float64)
    model = fit(SnapshotPair.from_sequence(window), spec)
    preds = predict(model, window[-1], split.test_length)
    truth = episode.data[split.train_end:split.train_end + split.test_length].astype(np.float64)
    return np.array([nsse(t, p) for t, p in zip(truth, preds)]), preds


def cmd_sweep_kdmd(data_dir, ra: float, out_csv=None, split: SplitSpec = SplitSpec(),
                   sigmas=KDMD_SIGMAS, snapshot_sizes=KDMD_SNAPSHOT_SIZES) -> SweepResult:
    """Grid search over kernel width and snapshot count, averaged over all episodes."""
    episodes = load_episodes(data_dir, ra)
    result = SweepResult()
    for index, (sigma, m) in enumerate((s, m) for s in sigmas for m in snapshot_sizes):
        config = {"sigma": float(sigma), "snapshot_size": int(m)}
        t0 = time.perf_counter()
        try:
            curves = [kdmd_curve(ep, KernelSpec("gaussian", sigma=sigma), m, split)[0] for _, ep in episodes]
            row = SweepRow(index, config, np.mean(curves, axis=0), time.perf_counter() - t0)
        except (RbcError, ValueError, np.linalg.LinAlgError) as exc:
            row = SweepRow(index, config, None, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
        log.info("kdmd %s -> %s", config, row.mean_nsse)
        result.rows.append(row)
    if out_csv is not None:
        result.write_csv(out_csv, ["sigma", "snapshot_size"], order="mean", horizon=split.test_length)
    return result


# LRAN

def sample_lran_config(rng: np.random.Generator, seed: int, n_episodes: int = 5, widths=DESK_WIDTHS,
                       max_epochs: int = 50) -> tuple[int, LranConfig]:
    """One random configuration inside the search ranges, plus the episode index to train on."""
    lo, hi = LATENT_RANGE
    latent = int(np.clip(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))), lo, hi))
    delta = float(rng.uniform(*DELTA_RANGE))
    if rng.uniform() < BETA_ZERO_PROB:
        beta = 0.0
    else:
        beta = float(math.exp(rng.uniform(math.log(BETA_LOG_FLOOR), math.log(BETA_RANGE[1]))))
    length = int(rng.integers(SEQUENCE_RANGE[0], SEQUENCE_RANGE[1] + 1))
    lr = float(LEARNING_RATES[rng.integers(len(LEARNING_RATES))])
    choices = EPISODE_CHOICES[:max(1, min(n_episodes, len(EPISODE_CHOICES)))]
    episode = int(choices[rng.integers(len(choices))])
    cfg = LranConfig(latent_dim=latent, sequence_length=length, delta=delta, beta=beta, learning_rate=lr,
                     max_epochs=max_epochs, seed=seed, widths=widths)
    return episode, cfg


LRAN_SWEEP_KEYS = ["seed", "episode", "latent_dim", "sequence_length", "delta", "beta", "learning_rate",
                   "batch_size", "max_epochs", "epochs_run", "best_val_loss"]


def lran_curve(episode: Episode, config: LranConfig, split: SplitSpec = SplitSpec(), checkpoint=None):
    """Train on one episode and roll out over its test window; return (nsse curve, predictions, log)."""
    split.check(len(episode))
    config = dataclasses.replace(config, train_end=split.train_end)
    model, tlog = train(episode, config)
    if checkpoint is not None:
        save_model(model, checkpoint)
    entry = ScalarField(episode.grid, episode.data[split.train_end - 1].astype(np.float64))
    preds = [f.values for f in rollout(model, entry, split.test_length)]
    truth = episode.data[split.train_end:split.train_end + split.test_length].astype(np.float64)
    return np.array([nsse(t, p) for t, p in zip(truth, preds)]), preds, tlog


def cmd_sweep_lran(data_dir, ra: float, n_runs: int = 10, seed: int = 0, out_csv=None,
                   split: SplitSpec = SplitSpec(), max_epochs: int = 50, widths=None) -> SweepResult:
    """Random search: each run samples a configuration and trains on one episode."""
    episodes = dict(load_episodes(data_dir, ra))
    grid = next(iter(episodes.values())).grid
    widths = widths or default_widths(grid)
    rng = np.random.default_rng(seed)
    result = SweepResult()
    for run in range(n_runs):
        ep_idx, cfg = sample_lran_config(rng, seed + run, len(episodes), widths, max_epochs)
        config = {k: getattr(cfg, k) for k in ("seed", "latent_dim", "sequence_length", "delta", "beta",
                                               "learning_rate", "batch_size", "max_epochs")}
        config.update(episode=ep_idx, epochs_run=0, best_val_loss=math.nan)
        t0 = time.perf_counter()
        try:
            if ep_idx not in episodes:
                raise FileNotFoundError(f"episode {ep_idx} missing")
            curve, _, tlog = lran_curve(episodes[ep_idx], cfg, split)
            config.update(epochs_run=len(tlog.epochs), best_val_loss=tlog.best_val_loss)
            row = SweepRow(run, config, curve, time.perf_counter() - t0)
        except (RbcError, ValueError, OSError) as exc:
            row = SweepRow(run, config, None, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
        log.info("lran run %d %s -> %s", run, config, row.mean_nsse)
        result.rows.append(row)
    if out_csv is not None:
        result.write_csv(out_csv, LRAN_SWEEP_KEYS, order="index", horizon=split.test_length)
    return result


# comparison

def _load_json(cfg):
    if cfg is None or isinstance(cfg, dict):
        return cfg
    return json.loads(Path(cfg).read_text())


def resolve_kdmd_config(ra: float, cfg=None) -> tuple[KernelSpec, int]:
    cfg = _load_json(cfg)
    if cfg is None:
        if ra not in KDMD_DEFAULTS:
            raise MissingConfig(f"no KDMD configuration given and no default for Ra={ra_tag(ra)}")
        cfg = KDMD_DEFAULTS[ra]
    cfg = dict(cfg)
    if "snapshot_size" not in cfg:
        raise MissingConfig("KDMD configuration lacks 'snapshot_size'")
    m = int(cfg.pop("snapshot_size"))
    return KernelSpec(**cfg), m


def resolve_lran_config(ra: float, cfg=None, grid: Grid = DESK_GRID) -> LranConfig:
    cfg = _load_json(cfg)
    if cfg is None:
        if ra not in LRAN_DEFAULTS:
            raise MissingConfig(f"no LRAN configuration given and no default for Ra={ra_tag(ra)}")
        cfg = dict(LRAN_DEFAULTS[ra], widths=default_widths(grid))
    return LranConfig.from_dict(cfg)


@dataclass
class CompareResult:
    curves: dict[str, NsseCurve]
    per_episode: dict[str, dict[int, np.ndarray]]
    failures: list[tuple[str, int, str]]
    paths: list[Path]


def render_field(f: ScalarField | np.ndarray, path) -> Path:
    """8-bit P5 image, min-max scaled, top wall on the first row; bounds go to ``<path>.bounds``."""
    values = f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        pixels = np.rint((values - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.zeros(values.shape, dtype=np.uint8)
    pixels = pixels[::-1]
    ny, nx = pixels.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{nx} {ny}\n255\n".encode("ascii") + pixels.tobytes())
    Path(f"{path}.bounds").write_text(f"min {lo!r}\nmax {hi!r}\n")
    return path


def cmd_compare(data_dir, ra: float, kdmd_config=None, lran_config=None, out_dir=".",
                split: SplitSpec = SplitSpec(), render_horizons=RENDER_HORIZONS) -> CompareResult:
    """Evaluate both methods on every episode and write curves, Nusselt traces and renders."""
    episodes = load_episodes(data_dir, ra)
    grid = episodes[0][1].grid
    spec, m = resolve_kdmd_config(ra, kdmd_config)
    lcfg = resolve_lran_config(ra, lran_config, grid)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = ra_tag(ra)
    horizon = split.test_length

    per_episode = {"kdmd": {}, "lran": {}}
    preds = {"kdmd": {}, "lran": {}}
    failures = []
    paths = []
    for k, ep in episodes:
        try:
            per_episode["kdmd"][k], preds["kdmd"][k] = kdmd_curve(ep, spec, m, split)
        except (RbcError, ValueError, np.linalg.LinAlgError) as exc:
            failures.append(("kdmd", k, f"{type(exc).__name__}: {exc}"))
        try:
            ckpt = out_dir / f"lran_ra{tag}_ep{k}.lran"
            curve, p, tlog = lran_curve(ep, lcfg, split, checkpoint=ckpt)
            per_episode["lran"][k], preds["lran"][k] = curve, p
            tlog.write_csv(out_dir / f"lran_ra{tag}_ep{k}_log.csv")
            paths += [ckpt, out_dir / f"lran_ra{tag}_ep{k}_log.csv"]
        except (RbcError, ValueError) as exc:
            failures.append(("lran", k, f"{type(exc).__name__}: {exc}"))

    curves = {name: NsseCurve.from_runs(ra, name, list(runs.values()), horizon) for name, runs in per_episode.items()}
    kc, lc = curves["kdmd"], curves["lran"]
    paths.append(_write_csv(
        out_dir / f"nsse_ra{tag}.csv", ["horizon", "kdmd_mean", "kdmd_std", "lran_mean", "lran_std"],
        [[int(h), float(kc.mean[i]), float(kc.std[i]), float(lc.mean[i]), float(lc.std[i])]
         for i, h in enumerate(kc.horizon)]))
    paths.append(_write_csv(
        out_dir / f"nsse_ra{tag}_episodes.csv", ["method", "episode", *_horizon_columns(horizon)],
        [[name, k, *map(float, c)] for name, runs in per_episode.items() for k, c in sorted(runs.items())]))

    trace = []
    for k, ep in episodes:
        for i in range(horizon):
            truth = ep.data[split.train_end + i].astype(np.float64)
            row = [k, i + 1, nusselt(truth, ep.ra, ep.pr)]
            for name in ("kdmd", "lran"):
                p = preds[name].get(k)
                row.append(nusselt(p[i], ep.ra, ep.pr) if p is not None else math.nan)
            trace.append(row)
    paths.append(_write_csv(out_dir / f"nusselt_ra{tag}.csv", ["episode", "horizon", "nu_true", "nu_kdmd", "nu_lran"],
                            trace))

    k0, ep0 = episodes[0]
    for tau in render_horizons:
        if not 1 <= tau <= horizon:
            continue
        stem = out_dir / "render" / f"ra{tag}_ep{k0}_tau{tau:02d}"
        paths.append(render_field(ScalarField(grid, ep0.data[split.train_end + tau - 1].astype(np.float64)),
                                  f"{stem}_truth.pgm"))
        for name in ("kdmd", "lran"):
            if k0 in preds[name]:
                paths.append(render_field(ScalarField(grid, preds[name][k0][tau - 1]), f"{stem}_{name}.pgm"))

    if failures:
        _write_csv(out_dir / f"failures_ra{tag}.csv", ["method", "episode", "error"], failures)
    return CompareResult(curves, per_episode, failures, paths)


def cmd_render(episode_file, index: int, out) -> Path:
    ep = read_episode(episode_file)
    if not 0 <= index < len(ep):
        raise IndexError(f"snapshot index {index} outside 0..{len(ep) - 1}")
    return render_field(ep.snapshot(index), out)


def set_deterministic_threads() -> None:
    """Single-threaded torch kernels keep training bit-reproducible across runs."""
    torch.set_num_threads(1)
