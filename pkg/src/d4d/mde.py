"""Toy encoder-decoder depth estimator, its training recipe, and metrics.

The network maps (N, 3, H, W) color input to a (N, 1, H, W) depth plane in
[0, 1] through a sigmoid head. Training minimizes the mean absolute depth
error in normalized units with seeded flip/crop augmentation. Evaluation
converts both ground truth and prediction to meters and pools every pixel of
the test set.

MDE checkpoint layout mirrors the diffusion one with magic 'D4DM'.
"""

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .denoiser import _uniform_fan_in
from .diffusion import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    adamw_update,
    init_moments,
    lr_schedule,
)
from .errors import (
    EvaluationError,
    FormatError,
    ParameterError,
    ShapeError,
    TrainingDiverged,
)
from .rgbd import RgbdDataset, bilinear_resize
from .rng import substream

MDE_BASE_LR = 1e-3
MDE_MILESTONE_EVERY = 20
MDE_EPOCHS_PAPER = 80
DELTA_THRESHOLD = 1.25
VALIDITY_FLOOR_M = 1e-3
CROP_AREA_FRACTION = 7.0 / 8.0

MDE_MAGIC = b"D4DM"
MDE_VERSION = 1


class MdeNet:
    """Encoder-decoder depth regressor with skip connections."""

    def __init__(
        self,
        widths: tuple[int, int, int] = (16, 32, 64),
        dtype=np.float32,
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        self.widths = tuple(widths)
        self.dtype = np.dtype(dtype)
        w0, w1, w2 = self.widths
        self.params: dict[str, Tensor] = {}

        def conv_param(name, c_out, c_in):
            fan_in = c_in * 9
            self.params[name + ".w"] = Tensor(
                _uniform_fan_in(rng, (c_out, c_in, 3, 3), fan_in, self.dtype), requires_grad=True
            )
            self.params[name + ".b"] = Tensor(np.zeros(c_out, dtype=self.dtype), requires_grad=True)

        conv_param("enc1", w0, 3)
        conv_param("down1", w1, w0)
        conv_param("enc2", w1, w1)
        conv_param("down2", w2, w1)
        conv_param("mid", w2, w2)
        conv_param("up1", w1, w2)
        conv_param("dec1", w1, 2 * w1)
        conv_param("up2", w0, w1)
        conv_param("dec2", w0, 2 * w0)
        conv_param("head", 1, w0)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def param_vector(self) -> np.ndarray:
        return np.concatenate([p.data.astype(np.float32).reshape(-1) for p in self.parameters()])

    def load_param_vector(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float32)
        if vec.size != self.parameter_count():
            raise ShapeError(
                f"parameter blob has {vec.size} floats, net needs {self.parameter_count()}"
            )
        offset = 0
        for p in self.parameters():
            n = p.data.size
            p.data[...] = vec[offset : offset + n].reshape(p.shape).astype(self.dtype)
            offset += n

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        n, c, h, w = x.shape
        if c != 3:
            raise ShapeError(f"expected 3-channel input, got {c}")
        if h % 4 != 0 or w % 4 != 0:
            raise ShapeError(f"spatial size must be divisible by 4, got {h}x{w}")
        p = self.params
        e1 = ad.silu(ad.conv2d(x, p["enc1.w"], p["enc1.b"], padding=1))
        d1 = ad.silu(ad.conv2d(e1, p["down1.w"], p["down1.b"], stride=2, padding=1))
        e2 = ad.silu(ad.conv2d(d1, p["enc2.w"], p["enc2.b"], padding=1))
        d2 = ad.silu(ad.conv2d(e2, p["down2.w"], p["down2.b"], stride=2, padding=1))
        m = ad.silu(ad.conv2d(d2, p["mid.w"], p["mid.b"], padding=1))
        u1 = ad.silu(ad.conv2d(ad.upsample2(m), p["up1.w"], p["up1.b"], padding=1))
        m1 = ad.silu(ad.conv2d(ad.concat([u1, e2], axis=1), p["dec1.w"], p["dec1.b"], padding=1))
        u2 = ad.silu(ad.conv2d(ad.upsample2(m1), p["up2.w"], p["up2.b"], padding=1))
        m2 = ad.silu(ad.conv2d(ad.concat([u2, e1], axis=1), p["dec2.w"], p["dec2.b"], padding=1))
        return ad.sigmoid(ad.conv2d(m2, p["head.w"], p["head.b"], padding=1))


def predict_depth(net: MdeNet, rgb: np.ndarray) -> np.ndarray:
    """Normalized depth predictions (N, H, W) without tape recording."""
    with no_grad():
        out = net.forward(np.asarray(rgb, dtype=np.float32))
    return out.data[:, 0]


# -- augmentation -----------------------------------------------------------


def augment_sample(
    rgb: np.ndarray, depth: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded horizontal flip (p=0.5) and random crop to 7/8 area, resized back."""
    h, w = depth.shape
    if rng.random() < 0.5:
        rgb = rgb[:, :, ::-1]
        depth = depth[:, ::-1]
    side = np.sqrt(CROP_AREA_FRACTION)
    ch = max(2, int(round(h * side)))
    cw = max(2, int(round(w * side)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    rgb_c = rgb[:, top : top + ch, left : left + cw]
    depth_c = depth[top : top + ch, left : left + cw]
    rgb_out = np.stack([bilinear_resize(np.ascontiguousarray(rgb_c[c]), w, h) for c in range(3)])
    depth_out = bilinear_resize(np.ascontiguousarray(depth_c), w, h)
    return rgb_out, depth_out


# -- training -----------------------------------------------------------------


def train_mde(
    net: MdeNet | None,
    train: RgbdDataset,
    epochs: int,
    base_lr: float = MDE_BASE_LR,
    seed: int = 0,
    batch_size: int = 32,
    weight_decay: float = 1e-2,
    milestone_every: int = MDE_MILESTONE_EVERY,
    augment: bool = True,
):
    """Train with AdamW on the L1 depth error. Returns (net, log_rows)."""
    if len(train) == 0:
        raise ParameterError("training dataset is empty")
    if net is None:
        net = MdeNet(rng=substream(seed, "mde/init"))
    arr = train.stack()
    rgb_all = arr[:, :3]
    depth_all = arr[:, 3]
    n = arr.shape[0]
    milestones = list(range(milestone_every, max(epochs, MDE_EPOCHS_PAPER) + 1, milestone_every))

    moments = init_moments([p.data for p in net.parameters()])
    rows = []
    step = 0
    for epoch in range(1, epochs + 1):
        lr = lr_schedule(base_lr, epoch, milestones)
        epoch_rng = substream(seed, f"mde/train-epoch-{epoch}")
        perm = epoch_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            if augment:
                pairs = [augment_sample(rgb_all[i], depth_all[i], epoch_rng) for i in idx]
                rgb = np.stack([p[0] for p in pairs])
                depth = np.stack([p[1] for p in pairs])
            else:
                rgb = rgb_all[idx]
                depth = depth_all[idx]

            net.zero_grads()
            pred = net.forward(Tensor(rgb))
            loss = ad.reduce_loss("l1", pred, Tensor(depth[:, None]))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite MDE loss at epoch {epoch} step {step + 1}", step=step + 1
                )
            loss.backward()
            step += 1
            params = net.parameters()
            adamw_update(
                [p.data for p in params],
                [p.grad for p in params],
                moments,
                lr,
                weight_decay,
                ADAM_BETA1,
                ADAM_BETA2,
                ADAM_EPS,
                step,
            )
            rows.append((epoch, step, loss_value, lr))
    return net, rows


# -- metrics ---------------------------------------------------------------------


@dataclass(frozen=True)
class DepthMetrics:
    """Pooled evaluation results; errors in meters, deltas in [0, 1]."""

    rmse: float
    mae: float
    abs_rel: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int
    n_valid: int

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mae": self.mae,
            "abs_rel": self.abs_rel,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
            "n_pixels": self.n_pixels,
            "n_valid": self.n_valid,
        }


def compute_depth_metrics(
    y_m: np.ndarray, yhat_m: np.ndarray, validity_floor: float = VALIDITY_FLOOR_M
) -> DepthMetrics:
    """Metrics over pooled pixels; inputs are depths in meters.

    RMSE/MAE use every pixel. AbsRel and the delta accuracies divide by the
    ground truth, so pixels with y below ``validity_floor`` are excluded
    there.
    """
    y = np.asarray(y_m, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat_m, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise ShapeError(f"shape mismatch: {y_m.shape} vs {yhat_m.shape}")
    if y.size == 0:
        raise EvaluationError("no pixels to evaluate")

    err = y - yhat
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))

    valid = y >= validity_floor
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EvaluationError("no pixels above the ground-truth validity floor")
    yv = y[valid]
    yhv = yhat[valid]
    abs_rel = float(np.mean(np.abs(yv - yhv) / yv))
    with np.errstate(divide="ignore"):
        ratio = np.where(yhv > 0.0, np.maximum(yv / yhv, yhv / yv), np.inf)
    deltas = [float(np.mean(ratio < DELTA_THRESHOLD**z)) for z in (1, 2, 3)]
    return DepthMetrics(
        rmse=rmse,
        mae=mae,
        abs_rel=abs_rel,
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
        n_pixels=int(y.size),
        n_valid=n_valid,
    )


def evaluate(net, test: RgbdDataset, batch_size: int = 64) -> DepthMetrics:
    """Run the net over a test set and pool all pixels into one metric set."""
    if len(test) == 0:
        raise EvaluationError("test dataset is empty")
    arr = test.stack()
    preds = []
    for start in range(0, arr.shape[0], batch_size):
        preds.append(predict_depth(net, arr[start : start + batch_size, :3]))
    yhat = np.concatenate(preds, axis=0).astype(np.float64) * test.max_depth_m
    y = arr[:, 3].astype(np.float64) * test.max_depth_m
    return compute_depth_metrics(y, yhat)


def difference_map(y_m: np.ndarray, yhat_m: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-pixel |prediction - truth| in meters, plus its max for colorbars."""
    y = np.asarray(y_m, dtype=np.float64)
    yhat = np.asarray(yhat_m, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ShapeError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    diff = np.abs(yhat - y)
    return diff, float(diff.max(initial=0.0))


def write_metrics_json(metrics: DepthMetrics, path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- checkpoints --------------------------------------------------------------

_MDE_HEADER = struct.Struct("<4sII")


def save_mde_checkpoint(path, net: MdeNet, seed: int) -> None:
    meta = {"widths": list(net.widths)}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    vec = net.param_vector()
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MDE_HEADER.pack(MDE_MAGIC, MDE_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", vec.size))
        fh.write(vec.astype("<f4").tobytes())
        fh.write(struct.pack("<Q", int(seed) & ((1 << 64) - 1)))
    os.replace(tmp, path)


def load_mde_checkpoint(path):
    """Returns (net, seed)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MDE_HEADER.size:
        raise FormatError("file too short for checkpoint header", offset=len(raw))
    magic, version, json_len = _MDE_HEADER.unpack_from(raw, 0)
    if magic != MDE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MDE_MAGIC!r}", offset=0)
    if version != MDE_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    offset = _MDE_HEADER.size
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
    net = MdeNet(widths=tuple(meta["widths"]))
    net.load_param_vector(vec)
    return net, seed
