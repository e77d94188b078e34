"""Time-series anomaly detectors: LSTM and TCN next-step forecasters, a dense
autoencoder, percentile thresholds and the 2-of-3 vote.

Forecasters read a window of ``L`` feature rows ending at the target interval
``t`` and predict standardized ``power_kw`` at ``t``; their input columns hold
only covariates known at ``t`` (upstream supply, weather) and lagged meter
readings, so the target never leaks into the window. The anomaly score is the
absolute forecast deviation. The autoencoder reconstructs the window ending at
``t`` and scores it by the L2 norm of the residual.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyScores, LengthMismatch, NotTrained, ShapeMismatch, UsageError
from .features import FeatureFrame
from .numeric import (Adam, Dense, glorot_uniform, load_checkpoint, mse_loss, relu, relu_backward,
                      save_checkpoint, sigmoid, tanh, tanh_backward)
from .synthgrid import substream

logger = logging.getLogger(__name__)

WINDOW = 96
FORECAST_FEATURES = ("grid_supply_kw", "solar_kw", "temperature_c", "power_kw_lag1")
AE_FEATURES = ("power_kw", "grid_supply_kw", "loss_pct")
TARGET = "power_kw"


def feature_matrix(frame: FeatureFrame, names) -> np.ndarray:
    """Columns of ``frame``; a ``_lag1`` suffix shifts a column back one interval
    (the first row repeats its own value)."""
    cols = []
    for name in names:
        if name.endswith("_lag1"):
            x = frame[name[:-5]]
            cols.append(np.concatenate([x[:1], x[:-1]]))
        else:
            cols.append(frame[name])
    return np.column_stack(cols).astype(float)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Standardizer":
        rows = np.asarray(rows, float)
        std = rows.std(axis=0)
        return cls(rows.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def transform(self, x):
        return (np.asarray(x, float) - self.mean) / self.std


def windows_at(matrix: np.ndarray, targets: np.ndarray, length: int) -> np.ndarray:
    """(N, length, F) windows of ``matrix`` rows ending at each target index."""
    targets = np.asarray(targets, dtype=np.int64)
    if len(targets) and (targets.min() < length - 1 or targets.max() >= len(matrix)):
        raise UsageError("window would cross the start or end of the series")
    view = sliding_window_view(matrix, length, axis=0)  # (T-L+1, F, L)
    return np.ascontiguousarray(view[targets - (length - 1)].transpose(0, 2, 1))


@dataclass
class WindowDataset:
    """Standardized windows with their targets and provenance."""
    X: np.ndarray
    y: np.ndarray
    meter_ids: np.ndarray
    target_index: np.ndarray

    def __len__(self):
        return len(self.y)


def _iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


class _Trainable:
    """Shared mini-batch Adam loop; subclasses implement ``loss_and_grads`` and ``predict``."""

    params: dict
    trained: bool = False

    def _target(self, X, y):
        return y

    def fit(self, X, y=None, epochs: int = 8, batch_size: int = 64, lr: float = 3e-3,
            seed: int = 0) -> list[float]:
        """Train and return the full-dataset loss after each epoch."""
        X = np.asarray(X, float)
        y = self._target(X, y)
        rng = substream(seed, "minibatch", type(self).__name__)
        opt = Adam(lr)
        history = []
        for _ in range(epochs):
            for idx in _iterate_minibatches(len(X), batch_size, rng):
                _, grads = self.loss_and_grads(X[idx], y[idx])
                opt.step(self.params, grads)
            history.append(self.loss_and_grads(X, y, need_grads=False)[0])
        self.trained = True
        self.history = history
        return history

    def _check_trained(self):
        if not self.trained:
            raise NotTrained(f"{type(self).__name__} must be trained before scoring")


class LSTMForecaster(_Trainable):
    """Single-layer gated LSTM over the window plus a linear head on the last hidden state.

    Gate pre-activations are ``x_t Wx + h_{t-1} Wh + b``, split into input,
    forget, output and candidate blocks.
    """

    def __init__(self, n_features: int, hidden: int = 32, seed: int = 0):
        rng = substream(seed, "init", "lstm")
        H = hidden
        self.hidden = H
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget-gate bias
        self.params = {
            "Wx": glorot_uniform(rng, n_features, 4 * H, (n_features, 4 * H)),
            "Wh": glorot_uniform(rng, H, 4 * H, (H, 4 * H)),
            "b": b,
            "Wy": glorot_uniform(rng, H, 1, (H,)),
            "by": np.zeros(1),
        }

    def forward(self, X, keep_cache: bool = True):
        X = np.asarray(X, float)
        if X.ndim != 3 or X.shape[2] != self.params["Wx"].shape[0]:
            raise ShapeMismatch(f"LSTM expects (B, L, {self.params['Wx'].shape[0]}) windows")
        B, L, _ = X.shape
        H = self.hidden
        Wx, Wh, b = self.params["Wx"], self.params["Wh"], self.params["b"]
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        xw = X @ Wx + b  # (B, L, 4H), input projections for every step at once
        cache = []
        for t in range(L):
            z = xw[:, t] + h @ Wh
            gates = sigmoid(z[:, :3 * H])  # one call for the three sigmoid gates
            i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:]
            g = np.tanh(z[:, 3 * H:])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            if keep_cache:
                cache.append((h, c, i, f, o, g, tc))
            h, c = h_new, c_new
        pred = h @ self.params["Wy"] + self.params["by"][0]
        return pred, (X, cache, h)

    def backward(self, state, dpred) -> dict[str, np.ndarray]:
        X, cache, h_last = state
        H = self.hidden
        Wh = self.params["Wh"]
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grads["Wy"] = h_last.T @ dpred
        grads["by"] = np.array([dpred.sum()])
        dh = np.outer(dpred, self.params["Wy"])
        dc = np.zeros_like(dh)
        dz_all = np.empty((X.shape[0], X.shape[1], 4 * H))
        for t in range(len(cache) - 1, -1, -1):
            h_prev, c_prev, i, f, o, g, tc = cache[t]
            do = dh * tc
            dct = dc + dh * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dct * g * i * (1.0 - i),
                dct * c_prev * f * (1.0 - f),
                do * o * (1.0 - o),
                dct * i * (1.0 - g * g),
            ], axis=1)
            dz_all[:, t] = dz
            grads["Wh"] += h_prev.T @ dz
            dc = dct * f
            dh = dz @ Wh.T
        grads["Wx"] = np.einsum("blf,blg->fg", X, dz_all)
        grads["b"] = dz_all.sum(axis=(0, 1))
        return grads

    def loss_and_grads(self, X, y, need_grads: bool = True):
        pred, state = self.forward(X, keep_cache=need_grads)
        loss, dpred = mse_loss(pred, y)
        return loss, (self.backward(state, dpred) if need_grads else None)

    def predict(self, X, chunk: int = 2048) -> np.ndarray:
        self._check_trained()
        X = np.asarray(X, float)
        return np.concatenate([self.forward(X[s:s + chunk], keep_cache=False)[0]
                               for s in range(0, len(X), chunk)]) if len(X) else np.zeros(0)

    def score(self, X, y) -> np.ndarray:
        """Absolute deviation between forecast and observed value."""
        return np.abs(self.predict(X) - np.asarray(y, float))


class CausalConv1D:
    """``y[t] = sum_k W[k]^T x[t - d*k] + b`` with zeros before the series start."""

    def __init__(self, c_in: int, c_out: int, kernel: int, dilation: int, rng: np.random.Generator,
                 prefix: str = ""):
        self.kernel, self.dilation, self.prefix = kernel, dilation, prefix
        self.W = glorot_uniform(rng, c_in * kernel, c_out, (kernel, c_in, c_out))
        self.b = np.zeros(c_out)

    def _shift(self, x, s):
        if s == 0:
            return x
        out = np.zeros_like(x)
        if s < x.shape[1]:
            out[:, s:] = x[:, :-s]
        return out

    def forward(self, x):
        y = self.b + sum(self._shift(x, self.dilation * k) @ self.W[k] for k in range(self.kernel))
        return y

    def backward(self, x, dy):
        T = x.shape[1]
        dW = np.empty_like(self.W)
        dx = np.zeros_like(x)
        for k in range(self.kernel):
            s = self.dilation * k
            xs = self._shift(x, s)
            dW[k] = np.einsum("btc,bto->co", xs, dy)
            if s < T:
                dx[:, :T - s] += dy[:, s:] @ self.W[k].T
        return dx, dW, dy.sum(axis=(0, 1))


class TCNForecaster(_Trainable):
    """Stack of dilated causal convolutions (relu after each) and a linear head
    on the last time step."""

    def __init__(self, n_features: int, channels: int = 16, kernel: int = 3,
                 dilations=(1, 2, 4, 8), seed: int = 0):
        rng = substream(seed, "init", "tcn")
        self.kernel, self.dilations = kernel, tuple(dilations)
        self.layers = []
        c_in = n_features
        for j, d in enumerate(self.dilations):
            self.layers.append(CausalConv1D(c_in, channels, kernel, d, rng, f"conv{j}"))
            c_in = channels
        self.params = {}
        for j, layer in enumerate(self.layers):
            self.params[f"conv{j}.W"] = layer.W
            self.params[f"conv{j}.b"] = layer.b
        self.params["Wy"] = glorot_uniform(rng, channels, 1, (channels,))
        self.params["by"] = np.zeros(1)

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel - 1) * sum(self.dilations)

    def features(self, X, keep_cache: bool = False):
        """Top-layer activations at every position: (B, T, channels)."""
        X = np.asarray(X, float)
        if X.ndim != 3 or X.shape[2] != self.layers[0].W.shape[1]:
            raise ShapeMismatch(f"TCN expects (B, T, {self.layers[0].W.shape[1]}) input")
        cache = []
        h = X
        for layer in self.layers:
            pre = layer.forward(h)
            cache.append((h, pre))
            h = relu(pre)
        return h, (cache if keep_cache else None)

    def forward(self, X, keep_cache: bool = True):
        top, cache = self.features(X, keep_cache)
        last = top[:, -1]
        return last @ self.params["Wy"] + self.params["by"][0], (cache, last, top.shape)

    def forward_sequence(self, X_seq) -> np.ndarray:
        """Forecast at every position of a (T, F) series; output t sees inputs <= t only."""
        top, _ = self.features(np.asarray(X_seq, float)[None])
        return top[0] @ self.params["Wy"] + self.params["by"][0]

    def loss_and_grads(self, X, y, need_grads: bool = True):
        pred, (cache, last, shape) = self.forward(X, keep_cache=need_grads)
        loss, dpred = mse_loss(pred, y)
        if not need_grads:
            return loss, None
        grads = {"Wy": last.T @ dpred, "by": np.array([dpred.sum()])}
        dtop = np.zeros(shape)
        dtop[:, -1] = np.outer(dpred, self.params["Wy"])
        d = dtop
        for j in range(len(self.layers) - 1, -1, -1):
            h_in, pre = cache[j]
            d = relu_backward(pre, d)
            d, dW, db = self.layers[j].backward(h_in, d)
            grads[f"conv{j}.W"], grads[f"conv{j}.b"] = dW, db
        return loss, grads

    def predict(self, X, chunk: int = 4096) -> np.ndarray:
        self._check_trained()
        X = np.asarray(X, float)
        return np.concatenate([self.forward(X[s:s + chunk], keep_cache=False)[0]
                               for s in range(0, len(X), chunk)]) if len(X) else np.zeros(0)

    def score(self, X, y) -> np.ndarray:
        return np.abs(self.predict(X) - np.asarray(y, float))


class Autoencoder(_Trainable):
    """Dense autoencoder ``D -> 64 -> 16 -> 64 -> D`` with tanh hidden layers."""

    def __init__(self, n_inputs: int, hidden=(64, 16), seed: int = 0):
        rng = substream(seed, "init", "ae")
        sizes = [n_inputs, *hidden, *reversed(hidden[:-1]), n_inputs]
        self.layers = [Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.params = {}
        for j, layer in enumerate(self.layers):
            self.params[f"dense{j}.W"] = layer.params["W"]
            self.params[f"dense{j}.b"] = layer.params["b"]

    def _target(self, X, y):
        return X.reshape(len(X), -1)

    def reconstruct(self, X):
        h = np.asarray(X, float).reshape(len(X), -1)
        pre_acts = []
        for j, layer in enumerate(self.layers):
            z = layer.forward(h)
            pre_acts.append(z)
            h = tanh(z) if j < len(self.layers) - 1 else z
        return h, pre_acts

    def loss_and_grads(self, X, y=None, need_grads: bool = True):
        flat = np.asarray(X, float).reshape(len(X), -1)
        out, pre_acts = self.reconstruct(flat)
        loss, d = mse_loss(out, flat)
        if not need_grads:
            return loss, None
        grads = {}
        for j in range(len(self.layers) - 1, -1, -1):
            if j < len(self.layers) - 1:
                d = tanh_backward(pre_acts[j], d)
            d, dW, db = self.layers[j].backward(d)
            grads[f"dense{j}.W"], grads[f"dense{j}.b"] = dW, db
        return loss, grads

    def predict(self, X, chunk: int = 8192):
        self._check_trained()
        return np.concatenate([self.reconstruct(X[s:s + chunk])[0] for s in range(0, len(X), chunk)])

    def score(self, X, y=None) -> np.ndarray:
        """L2 norm of the reconstruction residual per window."""
        self._check_trained()
        X = np.asarray(X, float)
        out = []
        for s in range(0, len(X), 8192):
            flat = X[s:s + 8192].reshape(len(X[s:s + 8192]), -1)
            out.append(np.linalg.norm(flat - self.reconstruct(flat)[0], axis=1))
        return np.concatenate(out) if out else np.zeros(0)


def lstm_train(data: WindowDataset, epochs: int = 8, seed: int = 0, hidden: int = 32, **kw) -> LSTMForecaster:
    model = LSTMForecaster(data.X.shape[2], hidden, seed)
    model.fit(data.X, data.y, epochs=epochs, seed=seed, **kw)
    return model


def lstm_score(model: LSTMForecaster, data: WindowDataset) -> np.ndarray:
    return model.score(data.X, data.y)


def tcn_train(data: WindowDataset, epochs: int = 8, seed: int = 0, **kw) -> TCNForecaster:
    model = TCNForecaster(data.X.shape[2], seed=seed)
    model.fit(data.X, data.y, epochs=epochs, seed=seed, **kw)
    return model


def tcn_score(model: TCNForecaster, data: WindowDataset) -> np.ndarray:
    return model.score(data.X, data.y)


def ae_train(data: WindowDataset, epochs: int = 8, seed: int = 0, **kw) -> Autoencoder:
    model = Autoencoder(data.X.shape[1] * data.X.shape[2], seed=seed)
    model.fit(data.X, epochs=epochs, seed=seed, **kw)
    return model


def ae_score(model: Autoencoder, data: WindowDataset) -> np.ndarray:
    return model.score(data.X)


def calibrate_threshold(scores, q: float = 0.95) -> float:
    """Empirical ``q``-quantile with linear interpolation; flags use ``score > tau``."""
    s = np.asarray(scores, float)
    if s.size == 0:
        raise EmptyScores("cannot calibrate a threshold without scores")
    if not 0.0 <= q <= 1.0:
        raise UsageError("quantile must lie in [0, 1]")
    return float(np.quantile(s, q))


def ensemble_vote(flags_lstm, flags_tcn, flags_ae) -> np.ndarray:
    a, b, c = (np.asarray(f).astype(np.int8) for f in (flags_lstm, flags_tcn, flags_ae))
    if not (a.shape == b.shape == c.shape):
        raise LengthMismatch("flag arrays must have equal length")
    return ((a + b + c) >= 2).astype(np.int8)


@dataclass
class DetectorConfig:
    window: int = WINDOW
    hidden: int = 32
    tcn_channels: int = 16
    epochs: int = 8
    batch_size: int = 64
    lr: float = 3e-3
    max_train_windows: int = 3000
    calibration_windows: int = 20000
    quantile: float = 0.95
    forecast_features: tuple = FORECAST_FEATURES
    ae_features: tuple = AE_FEATURES

    def to_dict(self) -> dict:
        d = asdict(self)
        d["forecast_features"] = list(self.forecast_features)
        d["ae_features"] = list(self.ae_features)
        return d


@dataclass
class AnomalyScores:
    """Per-interval scores for one meter over the scored indices."""
    meter_id: str
    index: np.ndarray
    lstm_dev: np.ndarray
    tcn_dev: np.ndarray
    ae_err: np.ndarray
    thresholds: dict[str, float]
    flags: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.flags:
            self.flags = {
                "lstm": (self.lstm_dev > self.thresholds["lstm"]).astype(np.int8),
                "tcn": (self.tcn_dev > self.thresholds["tcn"]).astype(np.int8),
                "ae": (self.ae_err > self.thresholds["ae"]).astype(np.int8),
            }

    @property
    def ensemble(self) -> np.ndarray:
        return ensemble_vote(self.flags["lstm"], self.flags["tcn"], self.flags["ae"])

    def relative_score(self) -> np.ndarray:
        """Mean threshold-relative deviation over the three models."""
        t = self.thresholds
        return (self.lstm_dev / max(t["lstm"], 1e-12) + self.tcn_dev / max(t["tcn"], 1e-12)
                + self.ae_err / max(t["ae"], 1e-12)) / 3.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "meter_id": self.meter_id,
            "index": self.index,
            "lstm_dev": self.lstm_dev,
            "tcn_dev": self.tcn_dev,
            "ae_err": self.ae_err,
            "flag_lstm": self.flags["lstm"],
            "flag_tcn": self.flags["tcn"],
            "flag_ae": self.flags["ae"],
            "ensemble": self.ensemble,
        })


def scores_to_frame(scores: Mapping[str, AnomalyScores]) -> pd.DataFrame:
    return pd.concat([scores[m].to_frame() for m in sorted(scores)], ignore_index=True)


def read_scores(path, thresholds: Mapping[str, float]) -> dict[str, AnomalyScores]:
    df = pd.read_csv(path, dtype={"meter_id": str}, float_precision="round_trip")
    out = {}
    for m, g in df.groupby("meter_id", sort=True):
        g = g.sort_values("index")
        out[m] = AnomalyScores(
            m, g["index"].to_numpy(np.int64), g["lstm_dev"].to_numpy(float), g["tcn_dev"].to_numpy(float),
            g["ae_err"].to_numpy(float), dict(thresholds),
            {"lstm": g["flag_lstm"].to_numpy(np.int8), "tcn": g["flag_tcn"].to_numpy(np.int8),
             "ae": g["flag_ae"].to_numpy(np.int8)})
    return out


class DetectorSuite:
    """The three detectors trained on clean training windows, with calibrated thresholds."""

    def __init__(self, config: DetectorConfig | None = None, seed: int = 0):
        self.config = config or DetectorConfig()
        self.seed = seed
        self.thresholds: dict[str, float] = {}
        self.trained = False

    # -- data preparation -------------------------------------------------
    def _raw(self, frame: FeatureFrame):
        cfg = self.config
        return (feature_matrix(frame, cfg.forecast_features), frame[TARGET].astype(float),
                feature_matrix(frame, cfg.ae_features))

    def _clean_targets(self, labels: np.ndarray, stop: int) -> np.ndarray:
        """Targets < stop whose whole window is rule-normal."""
        L = self.config.window
        if stop < L:
            return np.zeros(0, dtype=np.int64)
        bad = np.concatenate([[0], np.cumsum(labels.astype(np.int64))])
        t = np.arange(L - 1, stop)
        return t[(bad[t + 1] - bad[t + 1 - L]) == 0]

    def _sample(self, frames, labels, train_stop, limit: int, stream: str):
        pool = []
        for m in sorted(frames):
            t = self._clean_targets(labels[m], train_stop[m])
            pool.extend((m, int(i)) for i in t)
        if not pool:
            raise EmptyScores("no clean training windows; check labels and split")
        rng = substream(self.seed, stream)
        if len(pool) > limit:
            keep = np.sort(rng.choice(len(pool), size=limit, replace=False))
            pool = [pool[i] for i in keep]
        return pool

    def _gather(self, frames, pool):
        L = self.config.window
        by_meter: dict[str, list[int]] = {}
        for m, t in pool:
            by_meter.setdefault(m, []).append(t)
        Xf, yf, Xa, mids, tix = [], [], [], [], []
        for m in sorted(by_meter):
            t = np.array(by_meter[m])
            f, y, a = self._raw(frames[m])
            Xf.append(windows_at(self.f_scaler.transform(f), t, L))
            yf.append((y[t] - self.y_mean) / self.y_std)
            Xa.append(windows_at(self.a_scaler.transform(a), t, L))
            mids.extend([m] * len(t))
            tix.append(t)
        return (np.concatenate(Xf), np.concatenate(yf), np.concatenate(Xa),
                np.array(mids, dtype=object), np.concatenate(tix))

    # -- training ---------------------------------------------------------
    def fit(self, frames: Mapping[str, FeatureFrame], labels: Mapping[str, np.ndarray],
            train_stop: Mapping[str, int]) -> "DetectorSuite":
        """Train on windows ending before ``train_stop[m]`` whose rows are all rule-normal."""
        cfg = self.config
        rows_f, rows_y, rows_a = [], [], []
        for m in sorted(frames):
            f, y, a = self._raw(frames[m])
            stop = train_stop[m]
            rows_f.append(f[:stop])
            rows_y.append(y[:stop])
            rows_a.append(a[:stop])
        self.f_scaler = Standardizer.fit(np.concatenate(rows_f))
        self.a_scaler = Standardizer.fit(np.concatenate(rows_a))
        ally = np.concatenate(rows_y)
        self.y_mean, self.y_std = float(ally.mean()), float(ally.std() or 1.0)

        pool = self._sample(frames, labels, train_stop, cfg.max_train_windows, "detector-train")
        Xf, yf, Xa, _, _ = self._gather(frames, pool)
        kw = dict(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=self.seed)
        self.lstm = LSTMForecaster(Xf.shape[2], cfg.hidden, self.seed)
        logger.info("training LSTM on %d windows", len(Xf))
        self.lstm.fit(Xf, yf, **kw)
        self.tcn = TCNForecaster(Xf.shape[2], cfg.tcn_channels, seed=self.seed)
        rf = self.tcn.receptive_field
        logger.info("training TCN on %d windows", len(Xf))
        self.tcn.fit(Xf[:, -rf:], yf, **kw)
        self.ae = Autoencoder(Xa.shape[1] * Xa.shape[2], seed=self.seed)
        logger.info("training autoencoder on %d windows", len(Xa))
        self.ae.fit(Xa, **kw)

        calib = self._sample(frames, labels, train_stop, cfg.calibration_windows, "detector-calibration")
        Xf, yf, Xa, _, _ = self._gather(frames, calib)
        self.trained = True
        self.thresholds = {
            "lstm": calibrate_threshold(self.lstm.score(Xf, yf), cfg.quantile),
            "tcn": calibrate_threshold(self.tcn.score(Xf[:, -rf:], yf), cfg.quantile),
            "ae": calibrate_threshold(self.ae.score(Xa), cfg.quantile),
        }
        return self

    # -- scoring ----------------------------------------------------------
    def score_meter(self, frame: FeatureFrame, index) -> AnomalyScores:
        """Scores for the intervals in ``index`` (each needs ``window - 1`` earlier rows)."""
        if not self.trained:
            raise NotTrained("DetectorSuite must be fit before scoring")
        L = self.config.window
        t = np.asarray(index, dtype=np.int64)
        f, y, a = self._raw(frame)
        fs = self.f_scaler.transform(f)
        ys = (y - self.y_mean) / self.y_std
        Xf = windows_at(fs, t, L)
        lstm = self.lstm.score(Xf, ys[t])
        tcn = np.abs(self.tcn.forward_sequence(fs)[t] - ys[t])
        ae = self.ae.score(windows_at(self.a_scaler.transform(a), t, L))
        return AnomalyScores(frame.meter_id, t, lstm, tcn, ae, dict(self.thresholds))

    def score(self, frames: Mapping[str, FeatureFrame], index_of: Mapping[str, np.ndarray]) -> dict[str, AnomalyScores]:
        return {m: self.score_meter(frames[m], index_of[m]) for m in sorted(frames)}

    # -- persistence ------------------------------------------------------
    def save(self, path) -> None:
        tensors = {}
        for tag, model in (("lstm", self.lstm), ("tcn", self.tcn), ("ae", self.ae)):
            for k, v in model.params.items():
                tensors[f"{tag}.{k}"] = v
        tensors["scaler.f.mean"], tensors["scaler.f.std"] = self.f_scaler.mean, self.f_scaler.std
        tensors["scaler.a.mean"], tensors["scaler.a.std"] = self.a_scaler.mean, self.a_scaler.std
        meta = {"config": self.config.to_dict(), "seed": self.seed, "thresholds": self.thresholds,
                "y_mean": self.y_mean, "y_std": self.y_std}
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "DetectorSuite":
        tensors, meta = load_checkpoint(path)
        c = dict(meta["config"])
        c["forecast_features"] = tuple(c["forecast_features"])
        c["ae_features"] = tuple(c["ae_features"])
        cfg = DetectorConfig(**c)
        suite = cls(cfg, meta["seed"])
        nf, na = len(cfg.forecast_features), len(cfg.ae_features)
        suite.lstm = LSTMForecaster(nf, cfg.hidden)
        suite.tcn = TCNForecaster(nf, cfg.tcn_channels)
        suite.ae = Autoencoder(cfg.window * na)
        for tag, model in (("lstm", suite.lstm), ("tcn", suite.tcn), ("ae", suite.ae)):
            for k in model.params:
                model.params[k][...] = tensors[f"{tag}.{k}"]
            model.trained = True
        suite.f_scaler = Standardizer(tensors["scaler.f.mean"], tensors["scaler.f.std"])
        suite.a_scaler = Standardizer(tensors["scaler.a.mean"], tensors["scaler.a.std"])
        suite.y_mean, suite.y_std = meta["y_mean"], meta["y_std"]
        suite.thresholds = {k: float(v) for k, v in meta["thresholds"].items()}
        suite.trained = True
        return suite
