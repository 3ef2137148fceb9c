"""Convective-flux observables, the NSSE metric, episode files and data splits."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadLength, BadSplit, DegenerateGradient, FormatError, ZeroReference
from .fields import Grid, ScalarField

MAGIC = b"RBCE"
VERSION = 1
# magic, version, ny, nx, n_snapshots, reserved, ra, pr, t_first, dt_record, seed
HEADER = struct.Struct("<4s5I4dQ")


def convective_field(state) -> ScalarField:
    """Local convective flux q = u_y * (T - <T>), the mean taken over the whole field."""
    T = state.temperature.values
    theta = T - T.mean()
    return ScalarField(state.temperature.grid, state.u_y.values * theta)


def nusselt(q_field, ra: float, pr: float = 0.7, t_bottom: float = 2.0, t_top: float = 1.0, h: float = 1.0) -> float:
    """Nusselt number from the spatially averaged convective flux.

    Uses the non-dimensional diffusivity 1/sqrt(Ra Pr); ``h`` is half the
    domain height.
    """
    if t_bottom == t_top:
        raise DegenerateGradient("wall temperatures are equal; conductive flux is zero")
    if h <= 0:
        raise ValueError("h must be positive")
    q = q_field.values if isinstance(q_field, ScalarField) else np.asarray(q_field)
    kappa = 1.0 / math.sqrt(ra * pr)
    return float(q.mean() / (kappa * (t_bottom - t_top) / h))


def nsse(truth, prediction) -> float:
    """Normalized sum of squared errors ||q - q_hat||^2 / ||q||^2."""
    q = truth.values if isinstance(truth, ScalarField) else np.asarray(truth, dtype=np.float64)
    p = prediction.values if isinstance(prediction, ScalarField) else np.asarray(prediction, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"shape mismatch {q.shape} vs {p.shape}")
    ref = float(np.sum(q * q))
    if ref == 0.0:
        raise ZeroReference("reference field has zero norm")
    d = q - p
    return float(np.sum(d * d)) / ref


class Episode:
    """Recorded convective-flux snapshots of one simulation run.

    Snapshot data is held at binary32 precision, the precision of the file
    format, so writing and reading an episode is lossless.
    """

    def __init__(self, ra, pr, seed, snapshots, grid=None, times=None, t_first=None, dt_record=None):
        data = np.stack([s.values if isinstance(s, ScalarField) else np.asarray(s) for s in snapshots]) \
            if not isinstance(snapshots, np.ndarray) else snapshots
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError("snapshots must stack to (n, ny, nx)")
        if grid is None:
            grid = Grid(nx=self.data.shape[2], ny=self.data.shape[1])
        if self.data.shape[1:] != grid.shape:
            raise ValueError(f"snapshot shape {self.data.shape[1:]} does not match grid {grid.shape}")
        if times is not None:
            times = np.asarray(times, dtype=np.float64)
            if times.size != self.data.shape[0]:
                raise ValueError("times and snapshots differ in length")
            if t_first is None:
                t_first = float(times[0]) if times.size else 0.0
            if dt_record is None:
                dt_record = float(times[1] - times[0]) if times.size > 1 else 1.0
            steps = np.diff(times)
            if steps.size and (np.any(steps <= 0) or not np.allclose(steps, dt_record, rtol=1e-9, atol=1e-9)):
                raise ValueError("times must be strictly increasing with constant spacing")
        self.ra = float(ra)
        self.pr = float(pr)
        self.seed = int(seed)
        self.grid = grid
        self.t_first = 0.0 if t_first is None else float(t_first)
        self.dt_record = 1.0 if dt_record is None else float(dt_record)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return (f"Episode(ra={self.ra:g}, pr={self.pr:g}, seed={self.seed}, n={len(self)}, "
                f"grid={self.grid.ny}x{self.grid.nx})")

    @property
    def times(self) -> np.ndarray:
        return self.t_first + self.dt_record * np.arange(len(self))

    @property
    def snapshots(self) -> list[ScalarField]:
        return [ScalarField(self.grid, s) for s in self.data]

    def snapshot(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.data[i])

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.ra == other.ra
            and self.pr == other.pr
            and self.seed == other.seed
            and self.t_first == other.t_first
            and self.dt_record == other.dt_record
            and self.grid == other.grid
            and np.array_equal(self.data, other.data)
        )


def manifest_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")


def write_episode(episode: Episode, path) -> Path:
    path = Path(path)
    g = episode.grid
    header = HEADER.pack(
        MAGIC, VERSION, g.ny, g.nx, len(episode), 0,
        episode.ra, episode.pr, episode.t_first, episode.dt_record, episode.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(episode.data.astype("<f4").tobytes(order="C"))
    manifest = {
        "format": "RBCE",
        "version": VERSION,
        "ra": episode.ra,
        "pr": episode.pr,
        "seed": episode.seed,
        "grid": {"nx": g.nx, "ny": g.ny, "lx": g.lx, "y_min": g.y_min, "y_max": g.y_max},
        "n_snapshots": len(episode),
        "t_first": episode.t_first,
        "dt_record": episode.dt_record,
        "times": episode.times.tolist(),
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_episode(path) -> Episode:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, ny, nx, n, _reserved, ra, pr, t_first, dt_record, seed = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = HEADER.size + 4 * n * ny * nx
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(n, ny, nx)

    grid = Grid(nx=nx, ny=ny)
    mpath = manifest_path(path)
    if mpath.exists():
        try:
            manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{mpath}: invalid JSON ({exc})") from exc
        for key, value in (("ra", ra), ("pr", pr), ("seed", seed), ("n_snapshots", n)):
            if key in manifest and manifest[key] != value:
                raise FormatError(f"{path}: manifest {key}={manifest[key]!r} disagrees with header {key}={value!r}")
        mg = manifest.get("grid", {})
        if mg.get("nx", nx) != nx or mg.get("ny", ny) != ny:
            raise FormatError(f"{path}: manifest grid {mg} disagrees with header {ny}x{nx}")
        grid = Grid(nx=nx, ny=ny, lx=mg.get("lx", grid.lx), y_min=mg.get("y_min", -1.0), y_max=mg.get("y_max", 1.0))
    return Episode(ra, pr, seed, data.astype(np.float32), grid=grid, t_first=t_first, dt_record=dt_record)


@dataclass(frozen=True)
class SplitSpec:
    train_end: int = 470
    test_length: int = 30

    def check(self, n_snapshots: int) -> None:
        if self.train_end < 1 or self.test_length < 1:
            raise BadSplit(f"train_end and test_length must be positive: {self}")
        if self.train_end + self.test_length > n_snapshots:
            raise BadSplit(
                f"train_end {self.train_end} + test_length {self.test_length} exceeds {n_snapshots} snapshots"
            )


@dataclass(frozen=True, eq=False)
class SequenceSet:
    starts: np.ndarray
    split: tuple[str, ...]
    length: int

    def __len__(self) -> int:
        return self.starts.size

    @property
    def train_starts(self) -> np.ndarray:
        return self.starts[np.array([s == "train" for s in self.split], dtype=bool)]

    @property
    def validation_starts(self) -> np.ndarray:
        return self.starts[np.array([s == "validation" for s in self.split], dtype=bool)]

    def windows(self, episode: Episode, which: str | None = None) -> np.ndarray:
        """Stacked windows ``(n_windows, length, ny, nx)``; ``which`` filters by split tag."""
        starts = self.starts if which is None else self.starts[np.array([s == which for s in self.split], dtype=bool)]
        idx = starts[:, None] + np.arange(self.length)[None, :]
        return episode.data[idx]


def make_sequences(episode: Episode, length: int, split_seed: int, train_end: int = 470,
                   validation_fraction: float = 0.2) -> SequenceSet:
    """Overlapping windows starting at 0 .. train_end-length-1, split 80/20 by seeded shuffle."""
    if not 2 <= length <= train_end:
        raise BadLength(f"sequence length must lie in [2, {train_end}], got {length}")
    if train_end > len(episode):
        raise BadLength(f"train_end {train_end} exceeds episode length {len(episode)}")
    n = train_end - length
    starts = np.arange(n)
    perm = np.random.default_rng(split_seed).permutation(n)
    n_val = int(math.floor(validation_fraction * n))
    tags = ["train"] * n
    for i in perm[:n_val]:
        tags[i] = "validation"
    return SequenceSet(starts=starts, split=tuple(tags), length=length)


def test_window(episode: Episode, split: SplitSpec = SplitSpec()) -> tuple[ScalarField, list[ScalarField]]:
    """Entry snapshot ``train_end - 1`` and the ``test_length`` snapshots that follow it."""
    split.check(len(episode))
    entry = episode.snapshot(split.train_end - 1)
    targets = [episode.snapshot(i) for i in range(split.train_end, split.train_end + split.test_length)]
    return entry, targets


test_window.__test__ = False  # keep pytest from collecting the name
