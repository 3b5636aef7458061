"""Time-conditioned U-Net predicting the injected noise of a 4-channel image.

Two downsampling stages with skip connections, the smallest layout that
exercises skips at 16x12. The step index enters through sinusoidal features
fed to a small perceptron whose per-stage projections act as per-channel
biases. The final convolution is zero-initialized, so a fresh network
predicts zero noise.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ParameterError, ShapeError


def time_embedding(t: int, dim: int, T: int) -> np.ndarray:
    """Sinusoidal features of step t: pairs (sin, cos) at geometric frequencies.

    Layout interleaves sin/cos per frequency, so t = 0 gives 0,1,0,1,...
    """
    if dim % 2 != 0:
        raise ParameterError(f"embedding dim must be even, got {dim}")
    if not 0 <= t <= T:
        raise ParameterError(f"t must be in [0, {T}], got {t}")
    k = np.arange(dim // 2, dtype=np.float64)
    omega = 10000.0 ** (-2.0 * k / dim)
    emb = np.empty(dim, dtype=np.float64)
    emb[0::2] = np.sin(t * omega)
    emb[1::2] = np.cos(t * omega)
    return emb


def embed_times(ts: np.ndarray, dim: int, T: int) -> np.ndarray:
    """Stack of time embeddings for a batch of step indices."""
    return np.stack([time_embedding(int(t), dim, T) for t in np.asarray(ts).reshape(-1)])


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class DenoiserNet:
    """epsilon-hat(x_t, t) over (N, 4, H, W) inputs with H, W divisible by 4."""

    def __init__(
        self,
        in_channels: int = 4,
        widths: tuple[int, int, int] = (16, 32, 64),
        time_dim: int = 32,
        time_hidden: int = 64,
        T: int = 1000,
        dtype=np.float32,
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_channels = in_channels
        self.widths = tuple(widths)
        self.time_dim = time_dim
        self.time_hidden = time_hidden
        self.T = T
        self.dtype = np.dtype(dtype)
        w0, w1, w2 = self.widths

        self.params: dict[str, Tensor] = {}

        def conv_param(name, c_out, c_in, k=3, zero=False):
            fan_in = c_in * k * k
            data = (
                np.zeros((c_out, c_in, k, k), dtype=self.dtype)
                if zero
                else _uniform_fan_in(rng, (c_out, c_in, k, k), fan_in, self.dtype)
            )
            self.params[name + ".w"] = Tensor(data, requires_grad=True)
            self.params[name + ".b"] = Tensor(np.zeros(c_out, dtype=self.dtype), requires_grad=True)

        def dense_param(name, d_in, d_out):
            self.params[name + ".w"] = Tensor(
                _uniform_fan_in(rng, (d_in, d_out), d_in, self.dtype), requires_grad=True
            )
            self.params[name + ".b"] = Tensor(np.zeros(d_out, dtype=self.dtype), requires_grad=True)

        dense_param("time.fc1", time_dim, time_hidden)
        dense_param("time.fc2", time_hidden, time_hidden)
        for stage, width in (("enc1", w0), ("enc2", w1), ("mid", w2), ("dec1", w1), ("dec2", w0)):
            dense_param(f"time.{stage}", time_hidden, width)

        conv_param("enc1a", w0, in_channels)
        conv_param("enc1b", w0, w0)
        conv_param("down1", w1, w0)
        conv_param("enc2", w1, w1)
        conv_param("down2", w2, w1)
        conv_param("mid", w2, w2)
        conv_param("up1", w1, w2)
        conv_param("dec1", w1, 2 * w1)
        conv_param("up2", w0, w1)
        conv_param("dec2", w0, 2 * w0)
        conv_param("head", in_channels, w0, zero=True)

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def param_vector(self) -> np.ndarray:
        """Flat float32 view of all parameters, in declaration order."""
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

    # -- forward --------------------------------------------------------------

    def _stage_bias(self, emb: Tensor, stage: str, n: int, width: int) -> Tensor:
        b = ad.linear(emb, self.params[f"time.{stage}.w"], self.params[f"time.{stage}.b"])
        return ad.reshape(b, (n, width, 1, 1))

    def forward(self, x, t) -> Tensor:
        """Predict per-pixel noise for batch x at step indices t (one per item)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels}-channel input, got {c}")
        if h % 4 != 0 or w % 4 != 0:
            raise ShapeError(f"spatial size must be divisible by 4, got {h}x{w}")
        ts = np.asarray(t).reshape(-1)
        if ts.size != n:
            raise ShapeError(f"need one step index per batch item ({n}), got {ts.size}")

        p = self.params
        emb = Tensor(embed_times(ts, self.time_dim, self.T).astype(self.dtype))
        emb = ad.silu(ad.linear(emb, p["time.fc1.w"], p["time.fc1.b"]))
        emb = ad.silu(ad.linear(emb, p["time.fc2.w"], p["time.fc2.b"]))

        w0, w1, w2 = self.widths
        h1 = ad.conv2d(x, p["enc1a.w"], p["enc1a.b"], padding=1)
        h1 = ad.silu(ad.add(h1, self._stage_bias(emb, "enc1", n, w0)))
        h1 = ad.silu(ad.conv2d(h1, p["enc1b.w"], p["enc1b.b"], padding=1))

        d1 = ad.silu(ad.conv2d(h1, p["down1.w"], p["down1.b"], stride=2, padding=1))
        h2 = ad.conv2d(d1, p["enc2.w"], p["enc2.b"], padding=1)
        h2 = ad.silu(ad.add(h2, self._stage_bias(emb, "enc2", n, w1)))

        d2 = ad.silu(ad.conv2d(h2, p["down2.w"], p["down2.b"], stride=2, padding=1))
        m = ad.conv2d(d2, p["mid.w"], p["mid.b"], padding=1)
        m = ad.silu(ad.add(m, self._stage_bias(emb, "mid", n, w2)))

        u1 = ad.silu(ad.conv2d(ad.upsample2(m), p["up1.w"], p["up1.b"], padding=1))
        c1 = ad.concat([u1, h2], axis=1)
        m1 = ad.conv2d(c1, p["dec1.w"], p["dec1.b"], padding=1)
        m1 = ad.silu(ad.add(m1, self._stage_bias(emb, "dec1", n, w1)))

        u2 = ad.silu(ad.conv2d(ad.upsample2(m1), p["up2.w"], p["up2.b"], padding=1))
        c2 = ad.concat([u2, h1], axis=1)
        m2 = ad.conv2d(c2, p["dec2.w"], p["dec2.b"], padding=1)
        m2 = ad.silu(ad.add(m2, self._stage_bias(emb, "dec2", n, w0)))

        return ad.conv2d(m2, p["head.w"], p["head.b"], padding=1)
