"""Training objective and ancestral sampler for the 4-channel denoising model.

Two canonical configurations pair a loss with a rate schedule: s1 = (L1,
linear) and s2 = (L2, cosine). The network is trained to predict the injected
noise; sampling runs the learned reverse chain from pure noise and clamps the
result to the [0, 1] data range.

Checkpoint file layout (little-endian):

    magic 'D4DC' | u32 version=1 | u32 json_len | config+arch JSON
    | u32 n_floats | n_floats * f32 parameter blob | u64 seed
"""

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad, reduce_loss
from .denoiser import DenoiserNet
from .errors import (
    FormatError,
    GenerationError,
    ParameterError,
    TrainingDiverged,
)
from .rng import substream
from .schedules import BetaSchedule, make_schedule

CKPT_MAGIC = b"D4DC"
CKPT_VERSION = 1

DESK_RESOLUTIONS = ((16, 12), (32, 24))
PAPER_RES_MIN = (64, 48)
PAPER_RES_MAX = (320, 240)

# paper-scale recipe, recorded for reference; desk runs override epochs/batch
PAPER_EPOCHS = 150
PAPER_LR = 1e-4
PAPER_WEIGHT_DECAY = 1e-2
PAPER_MILESTONES = (100, 125)
PAPER_LR_FACTOR = 0.1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class DiffusionConfig:
    """Loss/schedule pairing plus generation geometry."""

    loss_kind: str
    schedule_kind: str
    T: int
    width: int
    height: int
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in ("l1", "l2"):
            raise ParameterError(f"loss_kind must be 'l1' or 'l2', got {self.loss_kind!r}")
        if self.schedule_kind not in ("linear", "cosine"):
            raise ParameterError(
                f"schedule_kind must be 'linear' or 'cosine', got {self.schedule_kind!r}"
            )
        if self.T < 2:
            raise ParameterError(f"T must be >= 2, got {self.T}")
        res = (self.width, self.height)
        in_paper_range = (
            PAPER_RES_MIN[0] <= self.width <= PAPER_RES_MAX[0]
            and PAPER_RES_MIN[1] <= self.height <= PAPER_RES_MAX[1]
        )
        if res not in DESK_RESOLUTIONS and not in_paper_range:
            raise ParameterError(
                f"resolution {self.width}x{self.height} outside the supported range "
                f"({PAPER_RES_MIN[0]}x{PAPER_RES_MIN[1]}..{PAPER_RES_MAX[0]}x{PAPER_RES_MAX[1]} "
                f"or desk sizes {DESK_RESOLUTIONS})"
            )
        if self.width % 4 or self.height % 4:
            raise ParameterError(
                f"width and height must be divisible by 4, got {self.width}x{self.height}"
            )

    @property
    def canonical_name(self) -> str | None:
        if (self.loss_kind, self.schedule_kind) == ("l1", "linear"):
            return "s1"
        if (self.loss_kind, self.schedule_kind) == ("l2", "cosine"):
            return "s2"
        return None

    @property
    def is_canonical(self) -> bool:
        return self.canonical_name is not None

    @property
    def provenance(self) -> str:
        """Tag for generated samples; non-canonical configs tag by schedule."""
        name = self.canonical_name
        if name is not None:
            return name
        return "s1" if self.schedule_kind == "linear" else "s2"

    @classmethod
    def preset(cls, name: str, T: int, width: int, height: int, seed: int = 0) -> "DiffusionConfig":
        if name == "s1":
            return cls("l1", "linear", T, width, height, seed)
        if name == "s2":
            return cls("l2", "cosine", T, width, height, seed)
        raise ParameterError(f"unknown configuration {name!r} (expected 's1' or 's2')")


def lr_schedule(base_lr: float, epoch: int, milestones, factor: float = 0.1) -> float:
    """Step decay: base_lr * factor^(number of milestones <= epoch)."""
    hits = sum(1 for m in milestones if m <= epoch)
    return base_lr * factor**hits


def adamw_update(params, grads, moments, lr, wd, b1, b2, eps, step):
    """One decoupled-weight-decay Adam step, in place on ``params``.

    moments is a dict with 'm' and 'v' lists matching params. The decay term
    lr*wd*theta is applied separately from the adaptive update.
    """
    if step < 1:
        raise ParameterError(f"step must be >= 1, got {step}")
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    for theta, g, m, v in zip(params, grads, moments["m"], moments["v"], strict=True):
        if theta.shape != g.shape:
            raise ParameterError(f"grad shape {g.shape} does not match param {theta.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
        theta -= lr * wd * theta


def init_moments(params) -> dict:
    return {
        "m": [np.zeros_like(p) for p in params],
        "v": [np.zeros_like(p) for p in params],
    }


@dataclass
class TrainState:
    """Mutable optimizer state wrapped around a denoiser."""

    net: DenoiserNet
    moments: dict = None
    step: int = 0
    epoch: int = 0
    loss_history: list = field(default_factory=list)
    lr: float = PAPER_LR
    weight_decay: float = PAPER_WEIGHT_DECAY

    def __post_init__(self):
        if self.moments is None:
            self.moments = init_moments([p.data for p in self.net.parameters()])


def train_step(
    state: TrainState,
    cfg: DiffusionConfig,
    sched: BetaSchedule,
    batch: np.ndarray,
    rng: np.random.Generator,
    t: np.ndarray | None = None,
    noise: np.ndarray | None = None,
) -> float:
    """One noising + prediction + optimizer update. Returns the scalar loss.

    t and noise default to fresh draws from ``rng``; tests may inject them.
    """
    batch = np.asarray(batch)
    n = batch.shape[0]
    if t is None:
        t = rng.integers(1, sched.T + 1, size=n)
    if noise is None:
        noise = rng.standard_normal(batch.shape, dtype=batch.dtype)

    sqrt_ab = np.sqrt(sched.alpha_bars[t - 1]).astype(batch.dtype)[:, None, None, None]
    sqrt_one_minus = np.sqrt(1.0 - sched.alpha_bars[t - 1]).astype(batch.dtype)[
        :, None, None, None
    ]
    x_t = sqrt_ab * batch + sqrt_one_minus * noise

    state.net.zero_grads()
    pred = state.net.forward(Tensor(x_t), t)
    loss = reduce_loss(cfg.loss_kind, pred, Tensor(noise))
    loss_value = loss.item()
    if not np.isfinite(loss_value):
        raise TrainingDiverged(
            f"non-finite loss {loss_value} at step {state.step + 1} (t draws {np.unique(t)})",
            step=state.step + 1,
        )
    loss.backward()

    state.step += 1
    params = state.net.parameters()
    adamw_update(
        [p.data for p in params],
        [p.grad for p in params],
        state.moments,
        state.lr,
        state.weight_decay,
        ADAM_BETA1,
        ADAM_BETA2,
        ADAM_EPS,
        state.step,
    )
    state.loss_history.append(loss_value)
    return loss_value


def train_denoiser(
    cfg: DiffusionConfig,
    data: np.ndarray,
    epochs: int,
    batch_size: int = 32,
    base_lr: float = PAPER_LR,
    weight_decay: float = PAPER_WEIGHT_DECAY,
    milestones=PAPER_MILESTONES,
    lr_factor: float = PAPER_LR_FACTOR,
    seed: int = 0,
    net: DenoiserNet | None = None,
):
    """Train a denoiser on (N, 4, H, W) data in [0, 1].

    Returns (net, log_rows) where each row is (epoch, step, loss, lr).
    """
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 4 or data.shape[1] != 4:
        raise ParameterError(f"training data must be (N, 4, H, W), got {data.shape}")
    if data.shape[0] == 0:
        raise ParameterError("training data is empty")
    if data.min() < 0.0 or data.max() > 1.0:
        raise ParameterError("training data must lie in [0, 1]")
    sched = make_schedule(cfg.schedule_kind, cfg.T)
    if net is None:
        net = DenoiserNet(T=cfg.T, dtype=np.float32, rng=substream(seed, "diffusion/init"))
    state = TrainState(net=net, weight_decay=weight_decay)

    rows = []
    n = data.shape[0]
    for epoch in range(1, epochs + 1):
        state.epoch = epoch
        state.lr = lr_schedule(base_lr, epoch, milestones, lr_factor)
        epoch_rng = substream(seed, f"diffusion/train-epoch-{epoch}")
        perm = epoch_rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = data[perm[start : start + batch_size]]
            loss = train_step(state, cfg, sched, batch, epoch_rng)
            rows.append((epoch, state.step, loss, state.lr))
    return net, rows


def epoch_mean_losses(rows) -> dict[int, float]:
    sums: dict[int, list] = {}
    for epoch, _, loss, _ in rows:
        sums.setdefault(epoch, []).append(loss)
    return {e: float(np.mean(v)) for e, v in sums.items()}


def write_loss_log(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,step,loss,lr\n")
        for epoch, step, loss, lr in rows:
            fh.write(f"{epoch},{step},{loss!r},{lr!r}\n")


# -- sampling -----------------------------------------------------------------


def posterior_sigma(sched: BetaSchedule, sigma_kind: str) -> np.ndarray:
    """Per-step reverse noise scale sigma_t, indexed 0..T-1 for steps 1..T."""
    if sigma_kind == "posterior":
        var = sched.betas * (1.0 - sched.alpha_bar_prev) / (1.0 - sched.alpha_bars)
    elif sigma_kind == "beta":
        var = sched.betas.copy()
    else:
        raise ParameterError(f"unknown sigma kind {sigma_kind!r}")
    return np.sqrt(var)


def _sample_shard(cfg, sched, denoiser, n, rng, sigmas):
    x = rng.standard_normal((n, 4, cfg.height, cfg.width), dtype=np.float32)
    inv_sqrt_alpha = 1.0 / np.sqrt(sched.alphas)
    eps_coeff = sched.betas / np.sqrt(1.0 - sched.alpha_bars)
    for t in range(sched.T, 0, -1):
        with no_grad():
            eps_hat = denoiser.forward(Tensor(x), np.full(n, t)).data
        x = (x - np.float32(eps_coeff[t - 1]) * eps_hat) * np.float32(inv_sqrt_alpha[t - 1])
        if t > 1:
            z = rng.standard_normal(x.shape, dtype=np.float32)
            x = x + np.float32(sigmas[t - 1]) * z
        if not np.isfinite(x).all():
            raise GenerationError(f"non-finite sample state at step t={t}")
    return np.clip(x, 0.0, 1.0)


def sample(
    cfg: DiffusionConfig,
    sched: BetaSchedule,
    denoiser,
    count: int,
    seed: int,
    sigma_kind: str = "posterior",
    shard_size: int = 32,
    threads: int = 1,
) -> np.ndarray:
    """Draw ``count`` images from the learned reverse chain, clamped to [0, 1].

    Work is split into fixed-size shards with derived per-shard streams, so
    results do not depend on the number of worker threads.
    """
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    if threads < 1:
        raise ParameterError(f"threads must be >= 1, got {threads}")
    sigmas = posterior_sigma(sched, sigma_kind)
    shards = []
    start = 0
    while start < count:
        n = min(shard_size, count - start)
        shards.append((len(shards), n))
        start += n

    def run(item):
        idx, n = item
        rng = substream(seed, f"generate/shard-{idx}")
        return _sample_shard(cfg, sched, denoiser, n, rng, sigmas)

    if threads == 1 or len(shards) == 1:
        parts = [run(s) for s in shards]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, shards))
    return np.concatenate(parts, axis=0)


# -- checkpoints -----------------------------------------------------------------

_CKPT_HEADER = struct.Struct("<4sII")


def save_checkpoint(
    path, cfg: DiffusionConfig, net: DenoiserNet, seed: int, extra: dict | None = None
) -> None:
    meta = {
        "loss_kind": cfg.loss_kind,
        "schedule_kind": cfg.schedule_kind,
        "T": cfg.T,
        "width": cfg.width,
        "height": cfg.height,
        "seed": cfg.seed,
        "arch": {
            "in_channels": net.in_channels,
            "widths": list(net.widths),
            "time_dim": net.time_dim,
            "time_hidden": net.time_hidden,
        },
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    vec = net.param_vector()
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", vec.size))
        fh.write(vec.astype("<f4").tobytes())
        fh.write(struct.pack("<Q", int(seed) & ((1 << 64) - 1)))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (config, net, seed, extra) for a file written by save_checkpoint."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CKPT_HEADER.size:
        raise FormatError("file too short for checkpoint header", offset=len(raw))
    magic, version, json_len = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}", offset=0)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    offset = _CKPT_HEADER.size
    if len(raw) < offset + json_len + 4:
        raise FormatError("truncated checkpoint metadata", offset=len(raw))
    meta = json.loads(raw[offset : offset + json_len].decode("utf-8"))
    offset += json_len
    (n_floats,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    expected = offset + 4 * n_floats + 8
    if len(raw) != expected:
        raise FormatError(
            f"checkpoint should be {expected} bytes, file has {len(raw)}",
            offset=min(len(raw), expected),
        )
    vec = np.frombuffer(raw, dtype="<f4", count=n_floats, offset=offset)
    offset += 4 * n_floats
    (seed,) = struct.unpack_from("<Q", raw, offset)

    cfg = DiffusionConfig(
        loss_kind=meta["loss_kind"],
        schedule_kind=meta["schedule_kind"],
        T=meta["T"],
        width=meta["width"],
        height=meta["height"],
        seed=meta["seed"],
    )
    arch = meta["arch"]
    net = DenoiserNet(
        in_channels=arch["in_channels"],
        widths=tuple(arch["widths"]),
        time_dim=arch["time_dim"],
        time_hidden=arch["time_hidden"],
        T=cfg.T,
        dtype=np.float32,
    )
    net.load_param_vector(vec)
    return cfg, net, seed, meta.get("extra", {})
