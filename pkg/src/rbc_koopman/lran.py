"""Linear recurrent autoencoder network (LRAN).

A convolutional encoder maps a convective field to ``latent_dim``
observables, a single matrix K advances the observables in time, and a
transposed-convolution decoder maps them back to a field.  Training
minimizes a decayed, normalized multi-step reconstruction error plus an
optional latent-consistency term over short snapshot sequences.
"""
from __future__ import annotations

import copy
import csv
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .dataset import Episode, SplitSpec, make_sequences, nsse
from .errors import BadSequence, FormatError, NonFiniteLoss, ShapeMismatch
from .fields import Grid, ScalarField

log = logging.getLogger(__name__)

KERNEL = 5
PAPER_WIDTHS = (32, 64, 32, 32)
DESK_WIDTHS = (16, 32, 16, 16)


@dataclass(frozen=True)
class LranConfig:
    latent_dim: int = 64
    sequence_length: int = 10
    delta: float = 0.9
    beta: float = 0.0
    eps1: float = 1e-6
    eps2: float = 1e-6
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    widths: tuple[int, int, int, int] = DESK_WIDTHS
    train_end: int = 470
    min_improvement: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.sequence_length < 1:
            raise ValueError("sequence_length must be positive")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.eps1 < 0 or self.eps2 < 0:
            raise ValueError("eps1/eps2 must be non-negative")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("learning_rate, batch_size, max_epochs and patience must be positive")
        if len(self.widths) != 4 or min(self.widths) < 1:
            raise ValueError("widths must be four positive channel counts")

    @classmethod
    def from_dict(cls, d: dict) -> "LranConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown LranConfig fields: {sorted(unknown)}")
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


class LranModel(nn.Module):
    """Encoder, decoder, latent operator K and the input normalization."""

    def __init__(self, grid_shape, latent_dim, widths=PAPER_WIDTHS, input_mean=0.0, input_std=1.0,
                 dtype=torch.float32):
        super().__init__()
        ny, nx = grid_shape
        if ny % 4 or nx % 4:
            raise ShapeMismatch(f"grid {ny}x{nx} must be divisible by 4 in both directions")
        if input_std <= 0:
            raise ValueError("input_std must be positive")
        c1, c2, c3, c4 = widths
        self.grid_shape = (ny, nx)
        self.latent_dim = latent_dim
        self.widths = tuple(widths)
        self.input_mean = float(input_mean)
        self.input_std = float(input_std)
        self.inner_shape = (c4, ny // 4, nx // 4)
        flat = c4 * (ny // 4) * (nx // 4)
        p = KERNEL // 2

        self.enc_conv1 = nn.Conv2d(1, c1, KERNEL, stride=2, padding=p)
        self.enc_conv2 = nn.Conv2d(c1, c2, KERNEL, stride=1, padding=p)
        self.enc_conv3 = nn.Conv2d(c2, c3, KERNEL, stride=2, padding=p)
        self.enc_conv4 = nn.Conv2d(c3, c4, KERNEL, stride=1, padding=p)
        self.enc_dense = nn.Linear(flat, latent_dim)

        self.dec_dense = nn.Linear(latent_dim, flat)
        self.dec_deconv1 = nn.ConvTranspose2d(c4, c3, KERNEL, stride=1, padding=p)
        self.dec_deconv2 = nn.ConvTranspose2d(c3, c2, KERNEL, stride=2, padding=p, output_padding=1)
        self.dec_deconv3 = nn.ConvTranspose2d(c2, c1, KERNEL, stride=1, padding=p)
        self.dec_deconv4 = nn.ConvTranspose2d(c1, 1, KERNEL, stride=2, padding=p, output_padding=1)

        self.k_matrix = nn.Parameter(torch.eye(latent_dim))
        self.to(dtype)

    # normalized units in, normalized units out

    def encoder(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 1, ny, nx) -> (B, latent_dim)."""
        h = F.gelu(self.enc_conv1(x))
        h = F.gelu(self.enc_conv2(h))
        h = F.gelu(self.enc_conv3(h))
        h = F.gelu(self.enc_conv4(h))
        return self.enc_dense(h.flatten(1))

    def encoder_flat_size(self, x: torch.Tensor) -> int:
        h = self.enc_conv4(self.enc_conv3(self.enc_conv2(self.enc_conv1(x))))
        return h.flatten(1).shape[1]

    def decoder(self, g: torch.Tensor) -> torch.Tensor:
        """(B, latent_dim) -> (B, 1, ny, nx)."""
        h = F.gelu(self.dec_dense(g)).reshape(g.shape[0], *self.inner_shape)
        h = F.gelu(self.dec_deconv1(h))
        h = F.gelu(self.dec_deconv2(h))
        h = F.gelu(self.dec_deconv3(h))
        return self.dec_deconv4(h)

    def advance(self, g: torch.Tensor, n: int = 1) -> torch.Tensor:
        """Apply K ``n`` times to row-stacked latent vectors."""
        for _ in range(n):
            g = g @ self.k_matrix.T
        return g

    def normalize(self, q):
        return (q - self.input_mean) / self.input_std

    def denormalize(self, q):
        return q * self.input_std + self.input_mean

    @property
    def dtype(self) -> torch.dtype:
        return self.k_matrix.dtype


def _as_tensor(model: LranModel, q) -> torch.Tensor:
    arr = q.values if isinstance(q, ScalarField) else np.asarray(q)
    if arr.shape[-2:] != model.grid_shape:
        raise ShapeMismatch(f"field shape {arr.shape[-2:]} does not match model grid {model.grid_shape}")
    return torch.tensor(np.asarray(arr), dtype=model.dtype)


def _grid_for(model: LranModel, like=None) -> Grid:
    if isinstance(like, ScalarField):
        return like.grid
    ny, nx = model.grid_shape
    return Grid(nx=nx, ny=ny)


@torch.no_grad()
def encode(model: LranModel, q) -> np.ndarray:
    x = model.normalize(_as_tensor(model, q)).reshape(1, 1, *model.grid_shape)
    return model.encoder(x)[0].double().numpy()


@torch.no_grad()
def decode(model: LranModel, g, grid: Grid | None = None) -> ScalarField:
    g = torch.as_tensor(np.asarray(g), dtype=model.dtype).reshape(-1)
    if g.numel() != model.latent_dim:
        raise ShapeMismatch(f"latent vector has length {g.numel()}, expected {model.latent_dim}")
    out = model.denormalize(model.decoder(g[None]))[0, 0].double().numpy()
    return ScalarField(grid or _grid_for(model), out)


@torch.no_grad()
def rollout(model: LranModel, entry, horizon: int) -> list[ScalarField]:
    """decode(K^n encode(entry)) for n = 1..horizon."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    x = model.normalize(_as_tensor(model, entry)).reshape(1, 1, *model.grid_shape)
    g = model.encoder(x)
    grid = _grid_for(model, entry)
    out = []
    for _ in range(horizon):
        g = model.advance(g)
        out.append(ScalarField(grid, model.denormalize(model.decoder(g))[0, 0].double().numpy()))
    return out


def batch_loss(model: LranModel, seq: torch.Tensor, delta: float, beta: float,
               eps1: float = 1e-6, eps2: float = 1e-6) -> torch.Tensor:
    """Mean sequence loss over a batch of normalized windows ``(B, T, ny, nx)``.

    Latent predictions are K^tau applied to the encoding of the first frame;
    both sums are decay-weighted means over the window.
    """
    b, t = seq.shape[:2]
    frames = seq.reshape(b * t, 1, *seq.shape[2:])
    g = model.encoder(frames).reshape(b, t, -1)

    g_hat = [g[:, 0]]
    for _ in range(1, t):
        g_hat.append(model.advance(g_hat[-1]))
    g_hat = torch.stack(g_hat, dim=1)
    q_hat = model.decoder(g_hat.reshape(b * t, -1)).reshape(seq.shape)

    w1 = torch.tensor([delta**tau for tau in range(t)], dtype=seq.dtype)
    rec = ((q_hat - seq) ** 2).flatten(2).sum(-1) / ((seq**2).flatten(2).sum(-1) + eps1)
    loss = (rec * w1).sum(1) / w1.sum()
    if t > 1 and beta != 0.0:
        w2 = torch.tensor([delta ** (tau - 1) for tau in range(1, t)], dtype=seq.dtype)
        hid = ((g_hat[:, 1:] - g[:, 1:]) ** 2).sum(-1) / ((g[:, 1:] ** 2).sum(-1) + eps2)
        loss = loss + beta * (hid * w2).sum(1) / w2.sum()
    return loss.mean()


def sequence_loss(model: LranModel, sequence, config: LranConfig) -> float:
    """Loss of one physical-unit sequence of fields, evaluated in normalized units."""
    if len(sequence) != config.sequence_length:
        raise BadSequence(f"sequence has {len(sequence)} frames, config expects {config.sequence_length}")
    arr = np.stack([s.values if isinstance(s, ScalarField) else np.asarray(s) for s in sequence])
    if arr.shape[1:] != model.grid_shape:
        raise BadSequence(f"frame shape {arr.shape[1:]} does not match model grid {model.grid_shape}")
    seq = model.normalize(torch.as_tensor(arr, dtype=model.dtype))[None]
    with torch.no_grad():
        return float(batch_loss(model, seq, config.delta, config.beta, config.eps1, config.eps2))


@dataclass
class TrainingLog:
    epochs: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def best_val_loss(self) -> float:
        return min(v for _, _, v in self.epochs)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for e, tr, va in self.epochs:
                w.writerow([e, repr(tr), repr(va)])


def build_model(config: LranConfig, grid_shape, mean=0.0, std=1.0, dtype=torch.float32) -> LranModel:
    """Fresh model with seeded fan-in uniform weights and K = I."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        return LranModel(grid_shape, config.latent_dim, config.widths, mean, std, dtype=dtype)


def _evaluate(model, windows, config, batch_size) -> float:
    total, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, windows.shape[0], batch_size):
            chunk = windows[i:i + batch_size]
            total += float(batch_loss(model, chunk, config.delta, config.beta, config.eps1, config.eps2)) * chunk.shape[0]
            count += chunk.shape[0]
    return total / max(count, 1)


def train(episode: Episode, config: LranConfig, dtype=torch.float32, progress=None) -> tuple[LranModel, TrainingLog]:
    """Train on the sequences of one episode; return the best-validation model and the epoch log."""
    seqs = make_sequences(episode, config.sequence_length, split_seed=config.seed, train_end=config.train_end)
    train_frames = episode.data[:config.train_end].astype(np.float64)
    mean, std = float(train_frames.mean()), float(train_frames.std())
    if not std > 0:
        std = 1.0
    model = build_model(config, episode.grid.shape, mean, std, dtype)

    def prep(which):
        w = torch.as_tensor(seqs.windows(episode, which).astype(np.float64), dtype=dtype)
        return model.normalize(w)

    train_w, val_w = prep("train"), prep("validation")
    if train_w.shape[0] == 0:
        raise BadSequence("no training sequences")
    if val_w.shape[0] == 0:
        val_w = train_w

    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(config.seed)
    log_ = TrainingLog()
    best_val, best_state, stale = math.inf, copy.deepcopy(model.state_dict()), 0

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = rng.permutation(train_w.shape[0])
        running, seen = 0.0, 0
        for i in range(0, order.size, config.batch_size):
            idx = torch.as_tensor(order[i:i + config.batch_size])
            batch = train_w[idx]
            opt.zero_grad()
            loss = batch_loss(model, batch, config.delta, config.beta, config.eps1, config.eps2)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}, batch {i // config.batch_size}")
            loss.backward()
            opt.step()
            running += float(loss.detach()) * batch.shape[0]
            seen += batch.shape[0]
        model.eval()
        train_loss = running / seen
        val_loss = _evaluate(model, val_w, config, max(config.batch_size, 64))
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        log_.epochs.append((epoch, train_loss, val_loss))
        log.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if progress is not None:
            progress(epoch, train_loss, val_loss)
        if val_loss < best_val - config.min_improvement:
            best_val, best_state, stale = val_loss, copy.deepcopy(model.state_dict()), 0
            log_.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                log_.stopped_early = True
                break
    model.load_state_dict(best_state)
    return model, log_


def one_step_nsse(model: LranModel, episode: Episode, starts) -> float:
    """Mean NSSE of decode(K encode(q_t)) against q_{t+1}, in physical units."""
    errs = []
    for t in np.asarray(starts):
        pred = rollout(model, episode.data[t].astype(np.float64), 1)[0]
        errs.append(nsse(episode.data[t + 1].astype(np.float64), pred.values))
    return float(np.mean(errs))


def rollout_nsse(model: LranModel, episode: Episode, split: SplitSpec = SplitSpec()) -> np.ndarray:
    """Per-horizon NSSE on the episode's test window."""
    split.check(len(episode))
    entry = episode.data[split.train_end - 1].astype(np.float64)
    preds = rollout(model, entry, split.test_length)
    return np.array([
        nsse(episode.data[split.train_end + i].astype(np.float64), p.values) for i, p in enumerate(preds)
    ])


# checkpoint file

CKPT_MAGIC = b"LRAN"
CKPT_VERSION = 1
# magic, version, latent_dim, ny, nx, input_mean, input_std
CKPT_HEADER = struct.Struct("<4sIIIIdd")
PARAM_ORDER = (
    "enc_conv1.weight", "enc_conv1.bias",
    "enc_conv2.weight", "enc_conv2.bias",
    "enc_conv3.weight", "enc_conv3.bias",
    "enc_conv4.weight", "enc_conv4.bias",
    "enc_dense.weight", "enc_dense.bias",
    "dec_dense.weight", "dec_dense.bias",
    "dec_deconv1.weight", "dec_deconv1.bias",
    "dec_deconv2.weight", "dec_deconv2.bias",
    "dec_deconv3.weight", "dec_deconv3.bias",
    "dec_deconv4.weight", "dec_deconv4.bias",
    "k_matrix",
)


def save_model(model: LranModel, path) -> Path:
    path = Path(path)
    ny, nx = model.grid_shape
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, model.latent_dim, ny, nx,
                                  model.input_mean, model.input_std))
        for name in PARAM_ORDER:
            t = state[name].detach().cpu().double().numpy()
            fh.write(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return path


def load_model(path, dtype=torch.float32) -> LranModel:
    raw = Path(path).read_bytes()
    if len(raw) < CKPT_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, latent, ny, nx, mean, std = CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = CKPT_HEADER.size
    tensors = {}
    try:
        for name in PARAM_ORDER:
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            if ndim > 8:
                raise FormatError(f"{path}: implausible rank {ndim} for {name}")
            dims = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            n = int(np.prod(dims)) if dims else 1
            if pos + 8 * n > len(raw):
                raise FormatError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(dims)
            pos += 8 * n
    except struct.error as exc:
        raise FormatError(f"{path}: truncated ({exc})") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    widths = tuple(tensors[f"enc_conv{i}.weight"].shape[0] for i in range(1, 5))
    try:
        model = LranModel((ny, nx), latent, widths, mean, std, dtype=dtype)
        model.load_state_dict({k: torch.as_tensor(v.copy(), dtype=dtype) for k, v in tensors.items()})
    except (RuntimeError, ValueError) as exc:
        raise FormatError(f"{path}: tensors inconsistent with header ({exc})") from exc
    return model
