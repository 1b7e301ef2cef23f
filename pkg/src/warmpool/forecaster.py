"""Demand forecasting: recurrent SSA, the SSA+ error corrector, and a peak baseline.

The SSA+ model is a singular-spectrum forecaster whose multi-step output is
adjusted by a 5-4-1 ReLU network trained with an asymmetric (pinball) loss,
so the correction can deliberately over- or under-shoot the ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .trace import DemandTrace

FORMAT_VERSION = 1
SECONDS_PER_DAY = 86400


class ModelFitError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int, batch: int):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")


# ---------------------------------------------------------------------------
# SSA
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SsaModel:
    window_length: int
    rank: int
    singular_values: np.ndarray
    left_vectors: np.ndarray  # L x rank
    recurrence_coefficients: np.ndarray  # L - 1, oldest lag first
    train_series_length: int
    nonnegative: bool = True

    @property
    def verticality(self) -> float:
        return float(np.sum(self.left_vectors[-1] ** 2))


def _hankel(x: np.ndarray, L: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(x, L).T  # L x K view


def _diagonal_average(Y: np.ndarray) -> np.ndarray:
    L, K = Y.shape
    out = np.zeros(L + K - 1)
    cnt = np.zeros(L + K - 1)
    for i in range(L):
        out[i : i + K] += Y[i]
        cnt[i : i + K] += 1
    return out / cnt


def ssa_fit(
    series: Sequence[float], window_length: int = 150, rank: int | None = None, energy: float = 0.9
) -> SsaModel:
    """Fit a recurrent SSA model.

    Either keep a fixed ``rank`` or the fewest leading components whose share
    of squared singular values reaches ``energy``.
    """
    x = np.asarray(series, dtype=float)
    L = int(window_length)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ValueError("series must be a finite 1-D sequence")
    if L < 2 or x.size < 2 * L:
        raise ValueError(f"need 1 < L and at least 2L={2 * L} points, got L={L}, n={x.size}")
    U, s, _ = np.linalg.svd(_hankel(x, L), full_matrices=False)
    total = float(np.sum(s**2))
    if total == 0.0:
        # identically zero series: forecast zero
        return SsaModel(L, 1, s, np.zeros((L, 1)), np.zeros(L - 1), x.size, True)
    if rank is None:
        if not 0 < energy <= 1:
            raise ValueError("energy threshold must be in (0, 1]")
        share = np.cumsum(s**2) / total
        r = int(np.searchsorted(share, energy - 1e-12) + 1)
    else:
        r = int(rank)
    r = max(1, min(r, L - 1, int(np.sum(s > s[0] * 1e-12)) or 1))
    if rank is not None and rank > r:
        raise ModelFitError(f"rank {rank} exceeds the usable rank {r}; lower it")
    Ur = U[:, :r]
    pi = Ur[-1]
    nu2 = float(pi @ pi)
    if nu2 >= 1.0 - 1e-10:
        raise ModelFitError("verticality coefficient is 1, no recurrence exists; change rank or window")
    R = (Ur[:-1] @ pi) / (1.0 - nu2)
    return SsaModel(L, r, s, Ur.copy(), R, x.size, bool(x.min() >= 0))


def ssa_reconstruct(model: SsaModel, series: Sequence[float]) -> np.ndarray:
    """Project ``series`` onto the model's signal subspace and diagonal-average back."""
    x = np.asarray(series, dtype=float)
    X = _hankel(x, model.window_length)
    U = model.left_vectors
    return _diagonal_average(U @ (U.T @ X))


def _tail(model: SsaModel, history: np.ndarray) -> np.ndarray:
    """Last L-1 values of the reconstructed history, the recurrence's starting state."""
    L = model.window_length
    if history.size < L - 1:
        raise ValueError(f"history needs at least L-1={L - 1} points")
    if history.size < L:
        return history[-(L - 1) :].copy()
    return ssa_reconstruct(model, history[-(2 * L - 2) :])[-(L - 1) :]


def _roll(model: SsaModel, tails: np.ndarray, horizon: int) -> np.ndarray:
    L = model.window_length
    n = tails.shape[0]
    buf = np.empty((n, L - 1 + horizon))
    buf[:, : L - 1] = tails
    R = model.recurrence_coefficients
    for h in range(horizon):
        buf[:, L - 1 + h] = buf[:, h : h + L - 1] @ R
    out = buf[:, L - 1 :]
    return np.maximum(out, 0.0) if model.nonnegative else out


def ssa_forecast(model: SsaModel, history: Sequence[float], horizon: int) -> np.ndarray:
    """Roll the linear recurrence ``horizon`` steps past the end of ``history``.

    Forecasts of series that were non-negative at fit time are clamped at zero.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    h = np.asarray(history, dtype=float)
    if horizon == 0:
        return np.zeros(0)
    return _roll(model, _tail(model, h)[None, :], horizon)[0]


# ---------------------------------------------------------------------------
# asymmetric loss
# ---------------------------------------------------------------------------


def asymmetric_loss(y, y_hat, alpha_prime: float) -> tuple[float, np.ndarray]:
    """Mean of ``a*max(d,0) + (1-a)*max(-d,0)`` with ``d = y - y_hat``, and its gradient in ``y_hat``.

    Under-prediction (``y > y_hat``) is weighted by ``alpha_prime``. The
    subgradient at ``d == 0`` is taken as 0.
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch {y.shape} vs {y_hat.shape}")
    if not 0.0 <= alpha_prime <= 1.0:
        raise ValueError("alpha_prime must lie in [0, 1]")
    if y.size == 0:
        return 0.0, np.zeros(0)
    d = y - y_hat
    loss = np.mean(alpha_prime * np.maximum(d, 0) + (1 - alpha_prime) * np.maximum(-d, 0))
    grad = np.where(d > 0, -alpha_prime, np.where(d < 0, 1 - alpha_prime, 0.0)) / y.size
    return float(loss), grad


# ---------------------------------------------------------------------------
# error corrector
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ErrorCorrector:
    """Two-layer ReLU net mapping forecast features to an additive correction.

    Features are ``[ssa forecast, sin(day phase), cos(day phase), recent mean,
    recent max]``; demand-valued features are divided by ``input_scale`` and
    the output is multiplied by ``output_scale``. The scales are fixed
    normalizers, not trained.
    """

    weights_1: np.ndarray
    bias_1: np.ndarray
    weights_2: np.ndarray
    bias_2: float
    input_scale: float = 1.0
    output_scale: float = 1.0
    activation: str = "relu"

    DEMAND_COLUMNS = (0, 3, 4)

    @classmethod
    def zeros(cls, input_dim: int = 5, hidden_dim: int = 4, **kw) -> "ErrorCorrector":
        return cls(np.zeros((hidden_dim, input_dim)), np.zeros(hidden_dim), np.zeros((1, hidden_dim)), 0.0, **kw)

    @property
    def input_dim(self) -> int:
        return self.weights_1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.weights_1.shape[0]

    @property
    def n_parameters(self) -> int:
        return self.weights_1.size + self.bias_1.size + self.weights_2.size + 1

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.weights_1.ravel(), self.bias_1, self.weights_2.ravel(), [self.bias_2]])

    def set_params(self, theta: np.ndarray) -> None:
        h, i = self.weights_1.shape
        k = h * i
        self.weights_1 = theta[:k].reshape(h, i).copy()
        self.bias_1 = theta[k : k + h].copy()
        self.weights_2 = theta[k + h : k + 2 * h].reshape(1, h).copy()
        self.bias_2 = float(theta[k + 2 * h])

    def _normalize(self, features: np.ndarray) -> np.ndarray:
        x = np.array(features, dtype=float)
        x[:, list(self.DEMAND_COLUMNS)] /= self.input_scale
        return x

    def __call__(self, features: np.ndarray) -> np.ndarray:
        x = self._normalize(features)
        hidden = np.maximum(x @ self.weights_1.T + self.bias_1, 0.0)
        return self.output_scale * (hidden @ self.weights_2[0] + self.bias_2)

    def loss_and_grad(self, features, base, y, alpha_prime: float) -> tuple[float, np.ndarray]:
        """Asymmetric loss of ``base + self(features)`` against ``y`` and its parameter gradient."""
        x = self._normalize(features)
        pre = x @ self.weights_1.T + self.bias_1
        hidden = np.maximum(pre, 0.0)
        out = self.output_scale * (hidden @ self.weights_2[0] + self.bias_2)
        loss, g = asymmetric_loss(y, base + out, alpha_prime)
        g = g * self.output_scale
        g_w2 = g @ hidden
        g_b2 = g.sum()
        g_hidden = np.outer(g, self.weights_2[0]) * (pre > 0)
        g_w1 = g_hidden.T @ x
        g_b1 = g_hidden.sum(axis=0)
        return loss, np.concatenate([g_w1.ravel(), g_b1, g_w2, [g_b2]])


@dataclass(frozen=True)
class TrainingConfig:
    alpha_prime_loss: float = 0.9
    epochs: int = 15
    batch_size: int = 768
    learning_rate: float = 0.001
    horizon: int = 120
    seed: int = 0
    hidden_dim: int = 4
    recent_window: int = 20
    origin_stride: int = 30
    max_origins: int = 400
    validation_fraction: float = 0.1
    patience: int = 3

    def __post_init__(self):
        if not 0.0 <= self.alpha_prime_loss <= 1.0:
            raise ValueError("alpha_prime_loss must lie in [0, 1]")
        for name in ("epochs", "batch_size", "horizon", "hidden_dim", "recent_window", "origin_stride", "max_origins"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def make_features(ssa_pred: np.ndarray, times: np.ndarray, recent: np.ndarray) -> np.ndarray:
    """Feature rows for forecasts ``ssa_pred`` (origins x steps) at epoch ``times``.

    ``recent`` holds, per origin, the demand window that precedes it.
    """
    ssa_pred = np.atleast_2d(ssa_pred)
    times = np.broadcast_to(np.atleast_2d(times), ssa_pred.shape)
    recent = np.atleast_2d(recent)
    phase = 2.0 * np.pi * (np.mod(times, SECONDS_PER_DAY) / SECONDS_PER_DAY)
    n, h = ssa_pred.shape
    out = np.empty((n, h, 5))
    out[..., 0] = ssa_pred
    out[..., 1] = np.sin(phase)
    out[..., 2] = np.cos(phase)
    out[..., 3] = recent.mean(axis=1)[:, None]
    out[..., 4] = recent.max(axis=1)[:, None]
    return out.reshape(n * h, 5)


@dataclass(frozen=True, eq=False)
class Series:
    """A real-valued series with a time axis, e.g. historical optimal pool sizes."""

    values: np.ndarray
    interval_seconds: int = 30
    start_time: int = 0

    def __len__(self) -> int:
        return len(self.values)


def _as_series(history) -> tuple[np.ndarray, int, int]:
    if isinstance(history, DemandTrace):
        return history.counts.astype(float), history.start_time, history.interval_seconds
    if isinstance(history, Series):
        return np.asarray(history.values, dtype=float), history.start_time, history.interval_seconds
    return np.asarray(history, dtype=float), 0, 30


def _training_set(ssa: SsaModel, x: np.ndarray, start: int, dt: int, cfg: TrainingConfig):
    L = ssa.window_length
    n = x.size
    o_min = max(L - 1, cfg.recent_window)
    H = min(cfg.horizon, n - o_min)
    if H < 1:
        raise ValueError("series too short to build a single corrector training window")
    origins = np.arange(n - H, o_min - 1, -cfg.origin_stride)[: cfg.max_origins][::-1]
    tails = np.stack([_tail(ssa, x[:o]) for o in origins])
    pred = _roll(ssa, tails, H)
    steps = origins[:, None] + np.arange(H)[None, :]
    truth = x[steps]
    recent = np.stack([x[o - cfg.recent_window : o] for o in origins])
    feats = make_features(pred, start + dt * steps, recent)
    return feats, pred.ravel(), truth.ravel(), len(origins), H


def train_hybrid(
    history, ssa: SsaModel, config: TrainingConfig = TrainingConfig(), log: list | None = None
) -> ErrorCorrector:
    """Train the error corrector on SSA forecasts issued from origins across ``history``.

    Origins are spaced ``origin_stride`` apart (most recent ``max_origins``);
    each contributes one sample per forecast step. The last
    ``validation_fraction`` of origins is held out for early stopping. The
    output bias starts at the ``alpha_prime_loss`` quantile of the training
    residuals, the best constant correction, and the output layer weights at
    zero, so the untrained net is already the optimal constant shift.

    If ``log`` is given, one ``(epoch, train_loss, val_loss)`` tuple is
    appended per epoch, epoch 0 being the initial state.
    """
    x, start, dt = _as_series(history)
    feats, base, y, n_orig, H = _training_set(ssa, x, start, dt, config)
    a = config.alpha_prime_loss
    n_val = min(n_orig - 1, max(1, round(config.validation_fraction * n_orig))) if n_orig > 1 else 0
    n_train = (n_orig - n_val) * H
    tr = slice(0, n_train)
    va = slice(n_train, None)

    resid = y[tr] - base[tr]
    out_scale = float(np.mean(np.abs(resid)))
    if out_scale == 0.0:
        out_scale = 1.0
    rng = np.random.default_rng(config.seed)
    hd = config.hidden_dim
    net = ErrorCorrector(
        weights_1=rng.normal(0.0, math.sqrt(2.0 / 5), (hd, 5)),
        bias_1=np.zeros(hd),
        weights_2=np.zeros((1, hd)),
        bias_2=float(np.quantile(resid, a)) / out_scale,
        input_scale=float(max(1.0, x.max())),
        output_scale=out_scale,
    )

    def full_loss(sl):
        return net.loss_and_grad(feats[sl], base[sl], y[sl], a)[0]

    init_train = full_loss(tr)
    best_theta, best_val = net.get_params(), full_loss(va) if n_val else init_train
    if log is not None:
        log.append((0, init_train, best_val))
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        for bi, lo in enumerate(range(0, n_train, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            loss, g = net.loss_and_grad(feats[idx], base[idx], y[idx], a)
            # step on the loss measured in units of output_scale
            theta = net.get_params() - config.learning_rate * g / out_scale
            if not (math.isfinite(loss) and np.all(np.isfinite(theta))):
                raise TrainingError("non-finite loss or parameters", epoch, bi)
            net.set_params(theta)
        train_loss = full_loss(tr)
        val_loss = full_loss(va) if n_val else train_loss
        if not math.isfinite(train_loss):
            raise TrainingError("non-finite training loss", epoch, -1)
        if log is not None:
            log.append((epoch + 1, train_loss, val_loss))
        if val_loss < best_val and train_loss <= init_train:
            best_theta, best_val, stale = net.get_params(), val_loss, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    net.set_params(best_theta)
    return net


def predict_hybrid(ssa: SsaModel, corrector: ErrorCorrector, history, horizon: int, recent_window: int = 20) -> np.ndarray:
    """``max(0, ssa_forecast + correction)`` for ``horizon`` steps after ``history``."""
    x, start, dt = _as_series(history)
    if horizon == 0:
        return np.zeros(0)
    base = ssa_forecast(ssa, x, horizon)
    times = start + dt * (x.size + np.arange(horizon))
    recent = x[-recent_window:]
    feats = make_features(base[None, :], times[None, :], recent[None, :])
    return np.maximum(base + corrector(feats), 0.0)


# ---------------------------------------------------------------------------
# baseline and metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineConfig:
    gamma: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def baseline_predict(train_series, config: BaselineConfig, horizon: int) -> np.ndarray:
    """Constant forecast at ``gamma`` times the training peak."""
    x, _, _ = _as_series(train_series)
    if x.size == 0:
        raise ValueError("training series is empty")
    return np.full(horizon, config.gamma * float(x.max()))


def accuracy_metrics(y, y_hat) -> tuple[float, float]:
    """(MAE, RMSE)."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("empty input")
    e = y - y_hat
    return float(np.mean(np.abs(e))), float(np.sqrt(np.mean(e**2)))


# ---------------------------------------------------------------------------
# forecaster objects used by the pipeline
# ---------------------------------------------------------------------------


@dataclass
class HybridForecaster:
    """SSA+ with fit/predict; set ``correct=False`` for plain SSA.

    The SSA part is fitted on the most recent ``series_length`` points; the
    corrector is trained on forecasts issued across the whole history.
    """

    window_length: int = 150
    series_length: int | None = 1800
    rank: int | None = None
    energy: float = 0.9
    training: TrainingConfig = field(default_factory=TrainingConfig)
    correct: bool = True
    ssa: SsaModel | None = None
    corrector: ErrorCorrector | None = None

    def fit(self, history) -> "HybridForecaster":
        x, _, _ = _as_series(history)
        if self.series_length is not None and x.size > max(self.series_length, 2 * self.window_length):
            x = x[-max(self.series_length, 2 * self.window_length) :]
        self.ssa = ssa_fit(x, self.window_length, self.rank, self.energy)
        self.corrector = train_hybrid(history, self.ssa, self.training) if self.correct else ErrorCorrector.zeros()
        return self

    def predict(self, history, horizon: int) -> np.ndarray:
        if self.ssa is None:
            raise RuntimeError("fit() first")
        return predict_hybrid(self.ssa, self.corrector, history, horizon, self.training.recent_window)


@dataclass
class BaselineForecaster:
    config: BaselineConfig = field(default_factory=BaselineConfig)
    level: float | None = None

    def fit(self, history) -> "BaselineForecaster":
        self.level = float(baseline_predict(history, self.config, 1)[0])
        return self

    def predict(self, history, horizon: int) -> np.ndarray:
        if self.level is None:
            raise RuntimeError("fit() first")
        return np.full(horizon, self.level)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_model(path: str | Path, ssa: SsaModel, corrector: ErrorCorrector | None = None) -> None:
    doc = {
        "format": "warmpool-ssa-plus",
        "version": FORMAT_VERSION,
        "ssa": {
            "window_length": ssa.window_length,
            "rank": ssa.rank,
            "singular_values": ssa.singular_values.tolist(),
            "left_vectors": ssa.left_vectors.tolist(),
            "recurrence_coefficients": ssa.recurrence_coefficients.tolist(),
            "train_series_length": ssa.train_series_length,
            "nonnegative": ssa.nonnegative,
        },
        "corrector": None
        if corrector is None
        else {
            "weights_1": corrector.weights_1.tolist(),
            "bias_1": corrector.bias_1.tolist(),
            "weights_2": corrector.weights_2.tolist(),
            "bias_2": corrector.bias_2,
            "input_scale": corrector.input_scale,
            "output_scale": corrector.output_scale,
            "activation": corrector.activation,
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> tuple[SsaModel, ErrorCorrector | None]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "warmpool-ssa-plus" or doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file {path}")
    s = doc["ssa"]
    ssa = SsaModel(
        s["window_length"],
        s["rank"],
        np.array(s["singular_values"], dtype=float),
        np.array(s["left_vectors"], dtype=float).reshape(s["window_length"], s["rank"]),
        np.array(s["recurrence_coefficients"], dtype=float),
        s["train_series_length"],
        s["nonnegative"],
    )
    c = doc["corrector"]
    corr = None
    if c is not None:
        corr = ErrorCorrector(
            np.array(c["weights_1"], dtype=float),
            np.array(c["bias_1"], dtype=float),
            np.array(c["weights_2"], dtype=float),
            float(c["bias_2"]),
            float(c["input_scale"]),
            float(c["output_scale"]),
            c["activation"],
        )
    return ssa, corr
