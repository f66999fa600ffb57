"""Bidirectional LSTM classifier with hand-written backpropagation through time.

Gate blocks are stacked in the order input, forget, output, candidate:
``W`` is (4H, F), ``U`` is (4H, H), ``b`` is (4H,). One cell reads the
window left to right, the other right to left; the head maps the two
final hidden states, concatenated, to a single logit.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError, ShapeMismatch

GATES = ("input", "forget", "output", "candidate")
PROB_CLIP = 1e-7


@dataclass
class DetectorConfig:
    num_hidden_units: int = 32
    window_len: int = 48
    input_features: int = 1
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("num_hidden_units", "window_len", "input_features", "epochs", "batch_size"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("learning_rate must be >= 0 and momentum in [0, 1)")


@dataclass
class LstmCellParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str):
        k = GATES.index(name)
        H = self.hidden
        return self.W[k * H:(k + 1) * H], self.U[k * H:(k + 1) * H], self.b[k * H:(k + 1) * H]

    @classmethod
    def zeros(cls, hidden: int, features: int) -> LstmCellParams:
        return cls(np.zeros((4 * hidden, features)), np.zeros((4 * hidden, hidden)), np.zeros(4 * hidden))

    @classmethod
    def initial(cls, hidden: int, features: int, rng: np.random.Generator) -> LstmCellParams:
        bound = 1.0 / np.sqrt(hidden)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        return cls(rng.uniform(-bound, bound, (4 * hidden, features)),
                   rng.uniform(-bound, bound, (4 * hidden, hidden)), b)

    def copy(self) -> LstmCellParams:
        return LstmCellParams(self.W.copy(), self.U.copy(), self.b.copy())


@dataclass
class BiLstmModel:
    config: DetectorConfig
    forward_cell: LstmCellParams
    backward_cell: LstmCellParams
    head_w: np.ndarray
    head_b: np.ndarray = field(default_factory=lambda: np.zeros(1))
    norm_mean: float = 0.0
    norm_std: float = 1.0

    PARAM_NAMES = ("fwd.W", "fwd.U", "fwd.b", "bwd.W", "bwd.U", "bwd.b", "head.w", "head.b")

    @classmethod
    def initial(cls, config: DetectorConfig) -> BiLstmModel:
        rng = np.random.default_rng(config.seed)
        H, F = config.num_hidden_units, config.input_features
        fwd = LstmCellParams.initial(H, F, rng)
        bwd = LstmCellParams.initial(H, F, rng)
        bound = 1.0 / np.sqrt(H)
        return cls(config, fwd, bwd, rng.uniform(-bound, bound, 2 * H), np.zeros(1))

    def params(self) -> dict:
        """Every trainable tensor, by name, in the declared order (live views)."""
        f, b = self.forward_cell, self.backward_cell
        return dict(zip(self.PARAM_NAMES, (f.W, f.U, f.b, b.W, b.U, b.b, self.head_w, self.head_b)))

    def copy(self) -> BiLstmModel:
        return BiLstmModel(DetectorConfig(**asdict(self.config)), self.forward_cell.copy(),
                           self.backward_cell.copy(), self.head_w.copy(), self.head_b.copy(),
                           self.norm_mean, self.norm_std)

    def normalize(self, windows: np.ndarray) -> np.ndarray:
        return (np.asarray(windows, dtype=np.float64) - self.norm_mean) / self.norm_std


def sigmoid(z):
    # split form avoids overflow warnings for large |z|
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_step(cell: LstmCellParams, x_t, h_prev, c_prev):
    """One LSTM step; accepts a single vector or a batch in the leading axis."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    H = cell.hidden
    if x_t.shape[-1] != cell.W.shape[1] or h_prev.shape[-1] != H or c_prev.shape != h_prev.shape:
        raise ShapeMismatch(f"step inputs {x_t.shape}, {h_prev.shape}, {c_prev.shape} "
                            f"do not fit a cell with W {cell.W.shape}")
    z = x_t @ cell.W.T + h_prev @ cell.U.T + cell.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def _as_batch(model: BiLstmModel, windows) -> np.ndarray:
    X = np.asarray(windows, dtype=np.float64)
    cfg = model.config
    if X.ndim == 1:
        X = X[None, :, None]
    elif X.ndim == 2:
        X = X[:, :, None] if cfg.input_features == 1 else X[None]
    if X.ndim != 3 or X.shape[1] != cfg.window_len or X.shape[2] != cfg.input_features:
        raise ShapeMismatch(f"windows of shape {np.shape(windows)} do not match "
                            f"window_len={cfg.window_len}, input_features={cfg.input_features}")
    return X


def _run_cell(cell: LstmCellParams, X: np.ndarray, keep: bool):
    N, T, _ = X.shape
    H = cell.hidden
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    cache = []
    for t in range(T):
        x_t = X[:, t]
        z = x_t @ cell.W.T + h @ cell.U.T + cell.b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        o = sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep:
            cache.append((x_t, h_prev, c_prev, i, f, o, g, tc))
    return h, cache


def _logits(model: BiLstmModel, X: np.ndarray, keep: bool = False):
    h_fwd, cache_f = _run_cell(model.forward_cell, X, keep)
    h_bwd, cache_b = _run_cell(model.backward_cell, X[:, ::-1], keep)
    feat = np.concatenate([h_fwd, h_bwd], axis=1)
    return feat @ model.head_w + model.head_b[0], (feat, cache_f, cache_b)


def predict_proba(model: BiLstmModel, windows, normalize: bool = True) -> np.ndarray:
    X = _as_batch(model, model.normalize(windows) if normalize else windows)
    z, _ = _logits(model, X)
    return sigmoid(z)


def forward(model: BiLstmModel, window, normalize: bool = True) -> float:
    """Probability that one window is malicious."""
    return float(predict_proba(model, window, normalize)[0])


def _cell_backward(cell: LstmCellParams, cache, dh_final):
    H = cell.hidden
    dW, dU, db = np.zeros_like(cell.W), np.zeros_like(cell.U), np.zeros_like(cell.b)
    dh, dc = dh_final, np.zeros_like(dh_final)
    for x_t, h_prev, c_prev, i, f, o, g, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([dc * g * i * (1.0 - i),
                             dc * c_prev * f * (1.0 - f),
                             do * o * (1.0 - o),
                             dc * i * (1.0 - g * g)], axis=1)
        dW += dz.T @ x_t
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dh = dz @ cell.U
        dc = dc * f
    return dW, dU, db


def bce(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))


def loss_and_gradients(model: BiLstmModel, windows, labels, normalize: bool = False):
    """Mean binary cross-entropy over the batch and its gradient for every parameter.

    ``windows`` are taken as already-normalized features unless ``normalize``.
    """
    X = _as_batch(model, model.normalize(windows) if normalize else windows)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ShapeMismatch("one label per window is required")
    if np.any((y != 0) & (y != 1)):
        raise ConfigError("labels must be 0 or 1")
    N = X.shape[0]
    z, (feat, cache_f, cache_b) = _logits(model, X, keep=True)
    p = sigmoid(z)
    loss = float(bce(p, y).mean())
    inside = (p > PROB_CLIP) & (p < 1.0 - PROB_CLIP)
    dz = np.where(inside, p - y, 0.0) / N
    H = model.config.num_hidden_units
    dfeat = np.outer(dz, model.head_w)
    fw = _cell_backward(model.forward_cell, cache_f, dfeat[:, :H])
    bw = _cell_backward(model.backward_cell, cache_b, dfeat[:, H:])
    grads = dict(zip(BiLstmModel.PARAM_NAMES, (*fw, *bw, feat.T @ dz, np.array([dz.sum()]))))
    return loss, grads


# -- model file -----------------------------------------------------------------

_MAGIC = b"BLSM"
_VERSION = 1


def save_model(model: BiLstmModel, path) -> None:
    meta = json.dumps({"config": asdict(model.config), "norm_mean": model.norm_mean,
                       "norm_std": model.norm_std}, sort_keys=True).encode()
    out = [_MAGIC, struct.pack("<HI", _VERSION, len(meta)), meta]
    for arr in model.params().values():
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_model(path) -> BiLstmModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file {path} does not exist")
    data = path.read_bytes()
    if data[:4] != _MAGIC or len(data) < 10:
        raise DataError(f"{path} is not a model file")
    version, meta_len = struct.unpack_from("<HI", data, 4)
    if version != _VERSION:
        raise DataError(f"unsupported model file version {version}")
    try:
        meta = json.loads(data[10:10 + meta_len])
        config = DetectorConfig(**meta["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: corrupt model header ({exc})") from exc
    model = BiLstmModel(config, LstmCellParams.zeros(config.num_hidden_units, config.input_features),
                        LstmCellParams.zeros(config.num_hidden_units, config.input_features),
                        np.zeros(2 * config.num_hidden_units), np.zeros(1),
                        float(meta["norm_mean"]), float(meta["norm_std"]))
    at = 10 + meta_len
    for arr in model.params().values():
        n = arr.size * 8
        if at + n > len(data):
            raise DataError(f"{path}: truncated parameter data")
        arr[...] = np.frombuffer(data[at:at + n], dtype="<f8").reshape(arr.shape)
        at += n
    if at != len(data):
        raise DataError(f"{path}: trailing bytes after parameters")
    return model


def flag_series(model: BiLstmModel, series: list, threshold: float = 0.5) -> list:
    """Mean window probability per meter when it exceeds ``threshold``, else None."""
    out = []
    L = model.config.window_len
    for s in series:
        n = len(s.readings) // L
        if n == 0:
            out.append(None)
            continue
        prob = float(predict_proba(model, s.readings[:n * L].reshape(n, L)).mean())
        out.append(prob if prob > threshold else None)
    return out
