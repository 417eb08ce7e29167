"""Self-supervised state representation.

A static encoder maps the rendered grids to an embedding h(s). A dynamic encoder
maps the force/torque window and velocity to a unit displacement dh(s). The
two are tied by latent consistency: h(s_t) + dh(s_t) should land on
h(s_{t+1}). A transposed-conv decoder reconstructs the grids from both the
encoded and the predicted embedding, which keeps the static encoder from
collapsing.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import gradnet as gn
from .errors import ConfigError, ContractError, NumericError, ValidationError
from .physim import Observation
from .physim.raster import GRID
from .physim.sensing import FT_CHANNELS, WINDOW

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReprConfig:
    grid: int = GRID
    window: int = WINDOW
    conv_channels: tuple[int, ...] = (8, 16, 32, 64)
    conv_kernel: int = 3
    branch_dim: int = 32
    embed_dim: int = 64
    fusion_hidden: int = 128
    causal_channels: tuple[int, ...] = (16, 16, 32, 32)
    causal_kernel: int = 4
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    dynamic_hidden: int = 64
    decoder_channels: tuple[int, ...] = (64, 32, 16, 8)
    ft_scale: float = 0.1  # newtons -> roughly unit range
    vel_scale: float = 4.0
    init_seed: int = 0

    def __post_init__(self):
        for name in ("conv_channels", "causal_channels", "dilations", "decoder_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.causal_channels) != len(self.dilations):
            raise ConfigError("one dilation per causal layer")
        if self.static_out_size() < 1:
            raise ConfigError("conv stack shrinks the grid below one cell")
        if self.decoder_base() * 2 ** len(self.decoder_channels) != self.grid:
            raise ConfigError("decoder cannot reach the grid size with stride-2 layers")

    def static_out_size(self) -> int:
        n = self.grid
        for _ in self.conv_channels:
            n = (n - self.conv_kernel) // 2 + 1
        return n

    def decoder_base(self) -> int:
        return self.grid // 2 ** len(self.decoder_channels)

    def receptive_field(self) -> int:
        return 1 + (self.causal_kernel - 1) * sum(self.dilations)

    @classmethod
    def tiny(cls) -> ReprConfig:
        """Width-4 embedding on 8x8 grids; used for finite-difference checks."""
        return cls(grid=8, window=8, conv_channels=(2, 3), branch_dim=3, embed_dim=4,
                   fusion_hidden=5, causal_channels=(2, 3), causal_kernel=2, dilations=(1, 2),
                   dynamic_hidden=4, decoder_channels=(3, 2))


@dataclass(frozen=True)
class Batch:
    """Model inputs for B observations: grids (B,2,G,G), window (B,W,6), velocity (B,3)."""

    grids: np.ndarray
    window: np.ndarray
    velocity: np.ndarray

    def __len__(self) -> int:
        return len(self.grids)

    @classmethod
    def from_observations(cls, obs: list[Observation]) -> Batch:
        return cls(
            np.stack([o.grids() for o in obs]),
            np.stack([o.ft_window for o in obs]),
            np.stack([o.velocity for o in obs]),
        )

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> Batch:
        """Rows laid out as ``Observation.flatten``."""
        flat = np.atleast_2d(np.asarray(flat, dtype=np.float64))
        n = GRID * GRID
        return cls(
            flat[:, : 2 * n].reshape(-1, 2, GRID, GRID),
            flat[:, 2 * n + 6 :].reshape(-1, WINDOW, FT_CHANNELS),
            flat[:, 2 * n + 3 : 2 * n + 6],
        )


@dataclass(frozen=True)
class LossBreakdown:
    l_temporal: float
    l_recon_t: float
    l_recon_next: float
    l_recon: float
    lam: float
    l: float
    norm_dev: float = 0.0  # max | ||dh|| - 1 | over the batch


class ReprModel:
    """Static encoder, dynamic encoder and static decoder sharing one parameter dict."""

    def __init__(self, config: ReprConfig | None = None):
        self.config = cfg = config or ReprConfig()
        rng = np.random.default_rng(cfg.init_seed)
        self.layers: dict[str, gn.Layer] = {}

        for branch in ("intensity", "depth"):
            c_in = 1
            for i, c in enumerate(cfg.conv_channels):
                self.layers[f"static.{branch}.conv{i}"] = gn.Conv2d(c_in, c, cfg.conv_kernel, 2, rng)
                c_in = c
            flat = c_in * cfg.static_out_size() ** 2
            self.layers[f"static.{branch}.proj"] = gn.Dense(flat, cfg.branch_dim, rng)
        self.layers["static.fuse0"] = gn.Dense(2 * cfg.branch_dim, cfg.fusion_hidden, rng)
        self.layers["static.fuse1"] = gn.Dense(cfg.fusion_hidden, cfg.embed_dim, rng)

        c_in = FT_CHANNELS
        for i, (c, d) in enumerate(zip(cfg.causal_channels, cfg.dilations)):
            self.layers[f"dynamic.causal{i}"] = gn.CausalConv1d(c_in, c, cfg.causal_kernel, d, rng)
            c_in = c
        self.layers["dynamic.fuse0"] = gn.Dense(c_in + 3, cfg.dynamic_hidden, rng)
        self.layers["dynamic.fuse1"] = gn.Dense(cfg.dynamic_hidden, cfg.embed_dim, rng)

        base = cfg.decoder_base()
        self.layers["decoder.proj"] = gn.Dense(cfg.embed_dim, cfg.decoder_channels[0] * base * base, rng)
        chans = list(cfg.decoder_channels) + [2]
        for i in range(len(cfg.decoder_channels)):
            self.layers[f"decoder.deconv{i}"] = gn.ConvTranspose2d(chans[i], chans[i + 1], 2, 2, rng)
        # a resting state has an all-zero window and velocity; a nonzero bias keeps
        # its displacement well defined from the first step
        self.layers["dynamic.fuse1"].bias.data = rng.normal(0.0, 0.1, cfg.embed_dim)

    # ------------------------------------------------------------ parameters

    def parameters(self) -> dict[str, gn.Tensor]:
        out: dict[str, gn.Tensor] = {}
        for name, layer in self.layers.items():
            out.update(layer.parameters(name))
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            missing = set(params) ^ set(state)
            raise ContractError(f"checkpoint keys do not match the model: {sorted(missing)[:4]}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ContractError(f"{k}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.copy()

    def copy(self) -> ReprModel:
        twin = ReprModel(self.config)
        twin.load_state_dict(self.state_dict())
        return twin

    def save(self, path: str | Path) -> bytes:
        return gn.checkpoint.save(path, self.parameters())

    @classmethod
    def load(cls, path: str | Path, config: ReprConfig | None = None) -> ReprModel:
        model = cls(config)
        model.load_state_dict(gn.checkpoint.load(path))
        return model

    # ------------------------------------------------------------ forward passes

    def _check(self, batch: Batch) -> None:
        g, w = self.config.grid, self.config.window
        if batch.grids.ndim != 4 or batch.grids.shape[1:] != (2, g, g):
            raise ContractError(f"grids must be (B, 2, {g}, {g}), got {batch.grids.shape}")
        if batch.window.shape[1:] != (w, FT_CHANNELS) or batch.velocity.shape[1:] != (3,):
            raise ContractError("window must be (B, W, 6) and velocity (B, 3)")

    def static(self, grids: gn.Tensor) -> gn.Tensor:
        cfg, L = self.config, self.layers
        feats = []
        for ch, branch in enumerate(("intensity", "depth")):
            x = gn.reshape(grids[:, ch : ch + 1], (grids.shape[0], 1, cfg.grid, cfg.grid))
            for i in range(len(cfg.conv_channels)):
                x = gn.relu(L[f"static.{branch}.conv{i}"](x))
            x = gn.reshape(x, (x.shape[0], -1))
            feats.append(gn.relu(L[f"static.{branch}.proj"](x)))
        h = gn.relu(L["static.fuse0"](gn.concat(feats, axis=1)))
        return L["static.fuse1"](h)

    def dynamic(self, window: gn.Tensor, velocity: gn.Tensor, normalize: bool = True) -> gn.Tensor:
        cfg, L = self.config, self.layers
        # (B, W, 6) -> (B, 6, W), oldest step first
        x = gn.as_tensor(np.ascontiguousarray(window.data.transpose(0, 2, 1)) * cfg.ft_scale)
        for i in range(len(cfg.causal_channels)):
            x = gn.relu(L[f"dynamic.causal{i}"](x))
        last = x[:, :, -1]
        z = gn.concat([last, velocity * cfg.vel_scale], axis=1)
        z = L["dynamic.fuse1"](gn.relu(L["dynamic.fuse0"](z)))
        return gn.l2_normalize(z) if normalize else z

    def decode(self, h: gn.Tensor) -> gn.Tensor:
        cfg, L = self.config, self.layers
        if h.ndim != 2 or h.shape[1] != cfg.embed_dim:
            raise ContractError(f"embedding must be (B, {cfg.embed_dim}), got {h.shape}")
        base = cfg.decoder_base()
        x = gn.relu(L["decoder.proj"](h))
        x = gn.reshape(x, (h.shape[0], cfg.decoder_channels[0], base, base))
        n = len(cfg.decoder_channels)
        for i in range(n):
            x = L[f"decoder.deconv{i}"](x)
            x = gn.sigmoid(x) if i == n - 1 else gn.relu(x)
        return x

    # ------------------------------------------------------------ numpy conveniences

    def encode_static_batch(self, batch: Batch) -> np.ndarray:
        self._check(batch)
        return self.static(gn.as_tensor(batch.grids)).data

    def encode_grids(self, grids: np.ndarray) -> np.ndarray:
        """Static embeddings for a (B, 2, G, G) stack; needs no dynamic inputs."""
        g = self.config.grid
        if grids.ndim != 4 or grids.shape[1:] != (2, g, g):
            raise ContractError(f"grids must be (B, 2, {g}, {g}), got {grids.shape}")
        return self.static(gn.as_tensor(grids)).data

    def encode_dynamic_batch(self, batch: Batch) -> np.ndarray:
        self._check(batch)
        return self.dynamic(gn.as_tensor(batch.window), gn.as_tensor(batch.velocity)).data


def _single(obs: Observation) -> Batch:
    return Batch.from_observations([obs])


def encode_static(model: ReprModel, obs: Observation) -> np.ndarray:
    return model.encode_static_batch(_single(obs))[0]


def encode_dynamic(model: ReprModel, obs: Observation) -> np.ndarray:
    return model.encode_dynamic_batch(_single(obs))[0]


def decode_static(model: ReprModel, h) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (model.config.embed_dim,):
        raise ContractError(f"embedding must have length {model.config.embed_dim}")
    out = model.decode(gn.as_tensor(h[None])).data[0]
    return out[0], out[1]


def predict_next(h_t, dh_t) -> np.ndarray:
    h_t, dh_t = np.asarray(h_t, dtype=np.float64), np.asarray(dh_t, dtype=np.float64)
    if h_t.shape != dh_t.shape:
        raise ContractError("embedding and displacement lengths differ")
    return h_t + dh_t


def combine(l_recon_t: float, l_recon_next: float, l_temporal: float, lam: float,
            norm_dev: float = 0.0) -> LossBreakdown:
    l_recon = l_recon_t + l_recon_next
    return LossBreakdown(l_temporal, l_recon_t, l_recon_next, l_recon, lam,
                         l_recon + lam * l_temporal, norm_dev)


def loss_graph(model: ReprModel, obs_t: Batch, obs_t1: Batch, lam: float) -> tuple[gn.Tensor, LossBreakdown]:
    """Differentiable hybrid loss over a batch of pairs, plus its float breakdown."""
    model._check(obs_t)
    model._check(obs_t1)
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    b = len(obs_t)
    grids_t = gn.as_tensor(obs_t.grids)
    grids_t1 = gn.as_tensor(obs_t1.grids)
    both = model.static(gn.as_tensor(np.concatenate([obs_t.grids, obs_t1.grids])))
    h_t, h_t1 = both[:b], both[b:]
    dh = model.dynamic(gn.as_tensor(obs_t.window), gn.as_tensor(obs_t.velocity))
    h_hat = h_t + dh
    recon = model.decode(gn.concat([h_t, h_hat], axis=0))
    l_recon_t = gn.mse(recon[:b], grids_t)
    l_recon_next = gn.mse(recon[b:], grids_t1)
    l_temporal = gn.mse(h_hat, h_t1)
    l_recon = l_recon_t + l_recon_next
    total = l_recon + l_temporal * lam
    norm_dev = float(np.max(np.abs(np.linalg.norm(dh.data, axis=1) - 1.0)))
    breakdown = combine(l_recon_t.item(), l_recon_next.item(), l_temporal.item(), lam, norm_dev)
    return total, breakdown


def hybrid_loss(model: ReprModel, pair: tuple[Observation, Observation], lam: float = 10.0) -> LossBreakdown:
    s_t, s_t1 = pair
    return loss_graph(model, _single(s_t), _single(s_t1), lam)[1]


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 32
    lr: float = 1e-4
    lam: float = 10.0
    seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.lr <= 0 or self.checkpoint_every < 1:
            raise ConfigError("lr and checkpoint_every must be positive")


@dataclass
class TrainResult:
    model: ReprModel
    history: list[LossBreakdown] = field(default_factory=list)
    checkpoints: list[int] = field(default_factory=list)  # iterations with a saved snapshot


def train(
    model: ReprModel,
    obs_t: np.ndarray,
    obs_t1: np.ndarray,
    config: TrainConfig,
    checkpoint_dir: str | Path | None = None,
    progress=None,
) -> TrainResult:
    """Mini-batch Adam on the hybrid loss. ``obs_t``/``obs_t1`` hold flattened observations.

    Batches are drawn from per-epoch permutations of a seeded generator, so two
    runs with the same seed produce identical parameters. A non-finite loss or
    gradient restores the last snapshot into ``model`` and raises NumericError.
    """
    obs_t = np.asarray(obs_t)
    obs_t1 = np.asarray(obs_t1)
    if len(obs_t) == 0 or len(obs_t) != len(obs_t1):
        raise ValidationError("training needs a non-empty, aligned pair set")
    result = TrainResult(model)
    if config.iterations == 0:
        return result
    params = model.parameters()
    state = gn.OptimState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    order = np.empty(0, dtype=np.int64)
    last_good = model.state_dict()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    for it in range(1, config.iterations + 1):
        if len(order) < config.batch_size:
            order = np.concatenate([order, rng.permutation(len(obs_t))])
        idx, order = order[: config.batch_size], order[config.batch_size :]
        try:
            loss, br = loss_graph(model, Batch.from_flat(obs_t[idx]), Batch.from_flat(obs_t1[idx]), config.lam)
            grads = gn.backward(loss, accumulate=False)
        except NumericError as exc:
            model.load_state_dict(last_good)
            raise NumericError(f"training aborted at iteration {it}: {exc}") from exc
        gn.adam_step(params, {k: grads.get(id(p), np.zeros_like(p.data)) for k, p in params.items()}, state)
        result.history.append(br)
        if it % config.checkpoint_every == 0 or it == config.iterations:
            last_good = model.state_dict()
            result.checkpoints.append(it)
            if ckpt_dir is not None:
                ckpt_dir.mkdir(parents=True, exist_ok=True)
                model.save(ckpt_dir / f"repr-{it:06d}.prck")
        if progress is not None:
            progress(it, br)
    return result


HISTORY_FIELDS = ("iteration", "l", "l_recon", "l_temporal")


def write_history(path: str | Path, history: list[LossBreakdown]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for i, br in enumerate(history, start=1):
            w.writerow([i, repr(br.l), repr(br.l_recon), repr(br.l_temporal)])


def read_history(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def config_dict(cfg: ReprConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}
