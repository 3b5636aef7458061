"""Diffusion-rate tables: per-step noise variances and derived products.

A schedule fixes beta_1..beta_T. From it we derive alpha_t = 1 - beta_t and
the running product alpha_bar_t, which gives the closed-form noising marginal
x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps.

Steps are indexed t = 1..T with the convention alpha_bar_0 = 1 (t = 0 is the
identity marginal).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

DEFAULT_T = 1000
DESK_T = 200
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_COSINE_OFFSET = 0.008
DEFAULT_BETA_CLIP = 0.999


@dataclass(frozen=True)
class BetaSchedule:
    """Immutable table of diffusion rates and derived quantities.

    Arrays are indexed 0..T-1 for steps 1..T; use :meth:`alpha_bar` for the
    t = 0 convention.
    """

    kind: str
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    alpha_bar_prev: np.ndarray

    def __post_init__(self):
        for arr in (self.betas, self.alphas, self.alpha_bars, self.alpha_bar_prev):
            arr.setflags(write=False)

    def alpha_bar(self, t: int) -> float:
        """Cumulative alpha product with alpha_bar(0) == 1."""
        if not 0 <= t <= self.T:
            raise ParameterError(f"t must be in [0, {self.T}], got {t}")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def _finalize(kind: str, betas: np.ndarray) -> BetaSchedule:
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bars[:-1]))
    return BetaSchedule(
        kind=kind,
        T=len(betas),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        alpha_bar_prev=alpha_bar_prev,
    )


def linear_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> BetaSchedule:
    """Evenly spaced rates: beta_t = start + (t-1)/(T-1) * (end - start)."""
    if T < 2:
        raise ParameterError(f"linear schedule needs T >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    steps = np.arange(T, dtype=np.float64)
    betas = beta_start + steps / (T - 1) * (beta_end - beta_start)
    return _finalize("linear", betas)


def cosine_schedule(
    T: int = DEFAULT_T,
    s: float = DEFAULT_COSINE_OFFSET,
    beta_clip: float = DEFAULT_BETA_CLIP,
) -> BetaSchedule:
    """Squared-cosine rates: slow early noising, clipped near the end.

    f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), alpha_bar_t = f(t)/f(0),
    beta_t = min(1 - alpha_bar_t / alpha_bar_{t-1}, beta_clip).
    """
    if T < 2:
        raise ParameterError(f"cosine schedule needs T >= 2, got {T}")
    if s <= 0.0:
        raise ParameterError(f"cosine offset must be positive, got {s}")
    if not 0.0 < beta_clip < 1.0:
        raise ParameterError(f"beta clip must lie in (0, 1), got {beta_clip}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + s) / (1.0 + s) * (np.pi / 2.0)) ** 2
    bars = f / f[0]
    betas = np.minimum(1.0 - bars[1:] / bars[:-1], beta_clip)
    return _finalize("cosine", betas)


def make_schedule(kind: str, T: int) -> BetaSchedule:
    if kind == "linear":
        return linear_schedule(T)
    if kind == "cosine":
        return cosine_schedule(T)
    raise ParameterError(f"unknown schedule kind {kind!r}")


def closed_form_marginal(sched: BetaSchedule, t: int) -> tuple[float, float]:
    """Coefficients (mean, std) of the t-step noising marginal.

    x_t = mean_coeff * x_0 + std * eps with eps ~ N(0, I). t = 0 returns the
    identity (1, 0).
    """
    if not 0 <= t <= sched.T:
        raise ParameterError(f"t must be in [0, {sched.T}], got {t}")
    ab = sched.alpha_bar(t)
    return float(np.sqrt(ab)), float(np.sqrt(1.0 - ab))


def write_schedule_csv(sched: BetaSchedule, path) -> None:
    """Dump t,beta,alpha,alpha_bar rows for golden-file comparison."""
    with open(path, "w") as fh:
        fh.write("t,beta,alpha,alpha_bar\n")
        for i in range(sched.T):
            fh.write(
                f"{i + 1},{float(sched.betas[i])!r},{float(sched.alphas[i])!r},"
                f"{float(sched.alpha_bars[i])!r}\n"
            )
