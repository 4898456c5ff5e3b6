"""Minimal dense/conv/LSTM layer kernels with exact backprop, in numpy.

Everything runs in 64-bit floats. Each layer implements forward (caching
what backward needs), backward (analytic gradients, full BPTT for the
LSTM), and a spec dict so a trained stack can be serialized and rebuilt.
A finite-difference checker validates every gradient path.

Conventions: batches lead every shape. Dense takes [B, in]; Conv2D and
MaxPool2D take channels-first images [B, C, H, W]; LSTM takes [B, T, F].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the offending epoch."""

    def __init__(self, epoch: int, where: str):
        self.epoch = epoch
        super().__init__(f"non-finite {where} loss at epoch {epoch}")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def xavier_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base interface; stateless layers leave params() empty."""

    def params(self) -> list[tuple[str, np.ndarray]]:
        return []

    def grads(self) -> list[tuple[str, np.ndarray]]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def _require_cache(self):
        if getattr(self, "_cache", None) is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng=None):
        self.in_dim, self.out_dim = in_dim, out_dim
        rng = rng or np.random.default_rng(0)
        self.W = xavier_uniform(rng, (in_dim, out_dim), in_dim, out_dim)
        self.b = np.zeros(out_dim)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [("W", self.W), ("b", self.b)]

    def grads(self):
        return [("W", self.gW), ("b", self.gb)]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"Dense({self.in_dim}->{self.out_dim}) got input shape {x.shape}"
            )
        self._cache = x
        return x @ self.W + self.b

    def backward(self, grad_out):
        self._require_cache()
        x = self._cache
        self.gW[...] = x.T @ grad_out
        self.gb[...] = grad_out.sum(axis=0)
        return grad_out @ self.W.T

    def spec(self):
        return {"kind": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim}


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad_out):
        self._require_cache()
        return np.where(self._cache, grad_out, 0.0)

    def spec(self):
        return {"kind": "relu"}


class Flatten(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        self._require_cache()
        return grad_out.reshape(self._cache)

    def spec(self):
        return {"kind": "flatten"}


class Reshape(Layer):
    """Reshapes each sample to target_shape (batch dimension untouched)."""

    def __init__(self, target_shape: tuple[int, ...]):
        self.target_shape = tuple(int(d) for d in target_shape)
        self._cache = None

    def forward(self, x):
        per_sample = int(np.prod(x.shape[1:]))
        if per_sample != int(np.prod(self.target_shape)):
            raise ShapeError(
                f"Reshape{self.target_shape} got incompatible input shape {x.shape}"
            )
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.target_shape)

    def backward(self, grad_out):
        self._require_cache()
        return grad_out.reshape(self._cache)

    def spec(self):
        return {"kind": "reshape", "target_shape": list(self.target_shape)}


class Conv2D(Layer):
    """2D cross-correlation over [B, C, H, W] via im2col.

    padding "same" keeps H and W (stride 1); "valid" drops border rows and
    columns that lack full kernel support.
    """

    def __init__(self, in_ch, out_ch, kh, kw, stride=1, padding="same", rng=None):
        if padding not in ("same", "valid"):
            raise ValueError(f"unknown padding: {padding}")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kh, self.kw, self.stride, self.padding = kh, kw, stride, padding
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kh * kw
        fan_out = out_ch * kh * kw
        self.W = xavier_uniform(rng, (out_ch, in_ch, kh, kw), fan_in, fan_out)
        self.b = np.zeros(out_ch)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [("W", self.W), ("b", self.b)]

    def grads(self):
        return [("W", self.gW), ("b", self.gb)]

    def _pad_amounts(self):
        if self.padding == "valid":
            return (0, 0), (0, 0)
        return ((self.kh - 1) // 2, self.kh // 2), ((self.kw - 1) // 2, self.kw // 2)

    def _col_indices(self, hp, wp):
        oh = (hp - self.kh) // self.stride + 1
        ow = (wp - self.kw) // self.stride + 1
        if oh <= 0 or ow <= 0:
            raise ShapeError(
                f"Conv2D kernel {self.kh}x{self.kw} larger than padded input {hp}x{wp}"
            )
        i0 = np.repeat(np.arange(self.kh), self.kw)
        i1 = self.stride * np.repeat(np.arange(oh), ow)
        j0 = np.tile(np.arange(self.kw), self.kh)
        j1 = self.stride * np.tile(np.arange(ow), oh)
        rows = i0[:, None] + i1[None, :]  # [kh*kw, oh*ow]
        cols = j0[:, None] + j1[None, :]
        return rows, cols, oh, ow

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(
                f"Conv2D(in_ch={self.in_ch}) got input shape {x.shape}"
            )
        (pt, pb), (pl, pr) = self._pad_amounts()
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        b, c, hp, wp = xp.shape
        rows, cols, oh, ow = self._col_indices(hp, wp)
        patches = xp[:, :, rows, cols]                # [B, C, kh*kw, oh*ow]
        col = patches.reshape(b, c * self.kh * self.kw, oh * ow)
        wflat = self.W.reshape(self.out_ch, -1)
        out = np.einsum("of,bfp->bop", wflat, col) + self.b[None, :, None]
        self._cache = (x.shape, xp.shape, col, rows, cols, oh, ow)
        return out.reshape(b, self.out_ch, oh, ow)

    def backward(self, grad_out):
        self._require_cache()
        x_shape, xp_shape, col, rows, cols, oh, ow = self._cache
        b = grad_out.shape[0]
        g = grad_out.reshape(b, self.out_ch, oh * ow)
        wflat = self.W.reshape(self.out_ch, -1)
        self.gW[...] = np.einsum("bop,bfp->of", g, col).reshape(self.W.shape)
        self.gb[...] = g.sum(axis=(0, 2))
        gcol = np.einsum("of,bop->bfp", wflat, g)
        gcol = gcol.reshape(b, xp_shape[1], self.kh * self.kw, oh * ow)
        gxp = np.zeros((b, xp_shape[1], xp_shape[2], xp_shape[3]))
        np.add.at(gxp, (slice(None), slice(None), rows, cols), gcol)
        (pt, pb_), (pl, pr) = self._pad_amounts()
        return gxp[
            :, :, pt : xp_shape[2] - pb_ or None, pl : xp_shape[3] - pr or None
        ]

    def spec(self):
        return {
            "kind": "conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch,
            "kh": self.kh, "kw": self.kw, "stride": self.stride,
            "padding": self.padding,
        }


class MaxPool2D(Layer):
    """Non-overlapping max pooling; trailing rows/cols that do not fill a
    whole window are dropped."""

    def __init__(self, ph: int, pw: int):
        self.ph, self.pw = ph, pw
        self._cache = None

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"MaxPool2D expects [B,C,H,W], got {x.shape}")
        b, c, h, w = x.shape
        oh, ow = h // self.ph, w // self.pw
        if oh == 0 or ow == 0:
            raise ShapeError(
                f"MaxPool2D({self.ph}x{self.pw}) input {h}x{w} too small"
            )
        xc = x[:, :, : oh * self.ph, : ow * self.pw]
        view = xc.reshape(b, c, oh, self.ph, ow, self.pw)
        flat = view.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, -1)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg, oh, ow)
        return out

    def backward(self, grad_out):
        self._require_cache()
        x_shape, arg, oh, ow = self._cache
        b, c, h, w = x_shape
        gflat = np.zeros((b, c, oh, ow, self.ph * self.pw))
        np.put_along_axis(gflat, arg[..., None], grad_out[..., None], axis=-1)
        g = gflat.reshape(b, c, oh, ow, self.ph, self.pw).transpose(0, 1, 2, 4, 3, 5)
        gx = np.zeros(x_shape)
        gx[:, :, : oh * self.ph, : ow * self.pw] = g.reshape(
            b, c, oh * self.ph, ow * self.pw
        )
        return gx

    def spec(self):
        return {"kind": "maxpool2d", "ph": self.ph, "pw": self.pw}


class LSTM(Layer):
    """Single LSTM layer unrolled over the full sequence.

    Gates are fused into one input projection and one recurrent
    projection, ordered (i, f, g, o). Initial hidden and cell states are
    zero. Backward is exact backpropagation through time.
    """

    def __init__(self, input_size: int, hidden_size: int, return_sequences=False, rng=None):
        self.input_size, self.hidden_size = input_size, hidden_size
        self.return_sequences = return_sequences
        rng = rng or np.random.default_rng(0)
        k = 1.0 / np.sqrt(hidden_size)
        self.Wx = rng.uniform(-k, k, size=(input_size, 4 * hidden_size))
        self.Wh = rng.uniform(-k, k, size=(hidden_size, 4 * hidden_size))
        self.b = np.zeros(4 * hidden_size)
        self.gWx = np.zeros_like(self.Wx)
        self.gWh = np.zeros_like(self.Wh)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [("Wx", self.Wx), ("Wh", self.Wh), ("b", self.b)]

    def grads(self):
        return [("Wx", self.gWx), ("Wh", self.gWh), ("b", self.gb)]

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(
                f"LSTM(input={self.input_size}) got input shape {x.shape}"
            )
        b, t, _ = x.shape
        hs = self.hidden_size
        h = np.zeros((b, hs))
        c = np.zeros((b, hs))
        pre = x @ self.Wx + self.b
        steps = []
        hist = np.empty((b, t, hs))
        for k in range(t):
            s = pre[:, k] + h @ self.Wh
            i = _sigmoid(s[:, :hs])
            f = _sigmoid(s[:, hs : 2 * hs])
            g = np.tanh(s[:, 2 * hs : 3 * hs])
            o = _sigmoid(s[:, 3 * hs :])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            steps.append((i, f, g, o, c_prev, tc, h))
            h = o * tc
            hist[:, k] = h
        self._cache = (x, steps)
        return hist if self.return_sequences else h

    def backward(self, grad_out):
        self._require_cache()
        x, steps = self._cache
        b, t, _ = x.shape
        hs = self.hidden_size
        self.gWx[...] = 0.0
        self.gWh[...] = 0.0
        self.gb[...] = 0.0
        gx = np.empty_like(x)
        dh_next = np.zeros((b, hs))
        dc_next = np.zeros((b, hs))
        for k in range(t - 1, -1, -1):
            i, f, g, o, c_prev, tc, h_prev = steps[k]
            dh = dh_next.copy()
            if self.return_sequences:
                dh += grad_out[:, k]
            elif k == t - 1:
                dh += grad_out
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            ds = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            self.gWx += x[:, k].T @ ds
            self.gWh += h_prev.T @ ds
            self.gb += ds.sum(axis=0)
            gx[:, k] = ds @ self.Wx.T
            dh_next = ds @ self.Wh.T
        return gx

    def spec(self):
        return {
            "kind": "lstm", "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "return_sequences": self.return_sequences,
        }


_LAYER_BUILDERS = {
    "dense": lambda s, rng: Dense(s["in_dim"], s["out_dim"], rng=rng),
    "relu": lambda s, rng: ReLU(),
    "flatten": lambda s, rng: Flatten(),
    "reshape": lambda s, rng: Reshape(tuple(s["target_shape"])),
    "conv2d": lambda s, rng: Conv2D(
        s["in_ch"], s["out_ch"], s["kh"], s["kw"],
        stride=s.get("stride", 1), padding=s.get("padding", "same"), rng=rng,
    ),
    "maxpool2d": lambda s, rng: MaxPool2D(s["ph"], s["pw"]),
    "lstm": lambda s, rng: LSTM(
        s["input_size"], s["hidden_size"],
        return_sequences=s.get("return_sequences", False), rng=rng,
    ),
}


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def params(self):
        out = []
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.params():
                out.append((f"{idx}.{name}", arr))
        return out

    def grads(self):
        out = []
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.grads():
                out.append((f"{idx}.{name}", arr))
        return out

    def get_weights(self):
        return [arr.copy() for _, arr in self.params()]

    def set_weights(self, weights):
        params = self.params()
        if len(weights) != len(params):
            raise ValueError("weight list length mismatch")
        for (_, arr), w in zip(params, weights):
            if arr.shape != w.shape:
                raise ValueError(f"weight shape mismatch: {arr.shape} vs {w.shape}")
            arr[...] = w

    def specs(self):
        return [layer.spec() for layer in self.layers]

    @staticmethod
    def from_specs(specs, rng=None) -> "Sequential":
        rng = rng or np.random.default_rng(0)
        layers = []
        for s in specs:
            kind = s["kind"]
            if kind not in _LAYER_BUILDERS:
                raise ValueError(f"unknown layer kind: {kind}")
            layers.append(_LAYER_BUILDERS[kind](s, rng))
        return Sequential(layers)


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements and its gradient wrt pred."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam with bias correction, updating parameter arrays in place."""

    def __init__(self, params: list[tuple[str, np.ndarray]], cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.params = params
        self.m = [np.zeros_like(arr) for _, arr in params]
        self.v = [np.zeros_like(arr) for _, arr in params]
        self.t = 0

    def step(self, grads: list[tuple[str, np.ndarray]]):
        if len(grads) != len(self.params):
            raise ValueError("gradient list length mismatch")
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for (name, arr), (gname, g), m, v in zip(self.params, grads, self.m, self.v):
            if name != gname:
                raise ValueError(f"parameter/gradient order mismatch: {name} vs {gname}")
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            arr -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0


@dataclass
class TrainResult:
    history: list[tuple[int, float, float]]  # (epoch, train_loss, val_loss)
    best_epoch: int
    best_val_loss: float
    epochs_run: int


def _batched_loss(model: Sequential, X, Y, chunk=256) -> float:
    total, count = 0.0, 0
    for i in range(0, len(X), chunk):
        pred = model.forward(X[i : i + chunk])
        diff = pred - Y[i : i + chunk]
        total += float(np.sum(diff * diff))
        count += diff.size
    return total / count


def train_model(model: Sequential, X, Y, X_val, Y_val, cfg: TrainConfig) -> TrainResult:
    """Minibatch Adam training with early stopping on validation loss.

    Shuffling is driven by a dedicated RNG seeded from cfg.seed, so a rerun
    with the same inputs reproduces the same parameter trajectory. The
    model is left holding the weights of its best validation epoch. A
    non-finite train or validation loss aborts with DivergenceError.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params(), AdamConfig(lr=cfg.lr))
    best_val = np.inf
    best_weights = model.get_weights()
    best_epoch = 0
    since_best = 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(X))
        train_total, train_count = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            pred = model.forward(X[idx])
            loss, grad = mse_loss(pred, Y[idx])
            model.backward(grad)
            opt.step(model.grads())
            train_total += loss * pred.size
            train_count += pred.size
        train_loss = train_total / train_count
        if not np.isfinite(train_loss):
            raise DivergenceError(epoch, "training")
        val_loss = _batched_loss(model, X_val, Y_val)
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch, "validation")
        history.append((epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_weights = model.get_weights()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    model.set_weights(best_weights)
    return TrainResult(history, best_epoch, best_val, len(history))


def grad_check(model: Sequential, x: np.ndarray, target: np.ndarray,
               h: float = 1e-5, max_entries_per_param: int | None = None,
               seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference grads.

    Perturbs parameters one scalar at a time (optionally a random subset
    per parameter tensor, for speed) and compares against the gradients
    produced by backward. Relative error uses max(|a|, |fd|, 1e-6) as the
    denominator so near-zero pairs do not blow up.
    """
    pred = model.forward(x)
    _, grad = mse_loss(pred, target)
    model.backward(grad)
    analytic = [g.copy() for _, g in model.grads()]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for (name, arr), ana in zip(model.params(), analytic):
        flat = arr.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            entries = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            entries = range(n)
        for j in entries:
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = mse_loss(model.forward(x), target)
            flat[j] = orig - h
            lm, _ = mse_loss(model.forward(x), target)
            flat[j] = orig
            fd = (lp - lm) / (2.0 * h)
            a = ana.reshape(-1)[j]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst


def gradient_suite(seed: int = 0) -> dict[str, float]:
    """Finite-difference check of every layer type, each exercised inside a
    small network so its backward also has to route gradients correctly.
    Returns {case: worst relative error}."""
    rng = np.random.default_rng(seed)
    cases = {
        "dense": (
            Sequential([Dense(5, 4, rng=rng), Dense(4, 3, rng=rng)]),
            rng.standard_normal((6, 5)), rng.standard_normal((6, 3)),
        ),
        "relu": (
            Sequential([Dense(5, 6, rng=rng), ReLU(), Dense(6, 2, rng=rng)]),
            rng.standard_normal((5, 5)), rng.standard_normal((5, 2)),
        ),
        "conv2d_same": (
            Sequential([Conv2D(2, 3, 3, 3, padding="same", rng=rng),
                        Flatten(), Dense(3 * 6 * 4, 2, rng=rng)]),
            rng.standard_normal((3, 2, 6, 4)), rng.standard_normal((3, 2)),
        ),
        "conv2d_valid": (
            Sequential([Conv2D(1, 2, 3, 2, padding="valid", rng=rng),
                        Flatten(), Dense(2 * 4 * 4, 2, rng=rng)]),
            rng.standard_normal((2, 1, 6, 5)), rng.standard_normal((2, 2)),
        ),
        "maxpool2d": (
            Sequential([Conv2D(1, 2, 3, 3, rng=rng), MaxPool2D(2, 1),
                        Flatten(), Dense(2 * 3 * 3, 2, rng=rng)]),
            rng.standard_normal((2, 1, 7, 3)), rng.standard_normal((2, 2)),
        ),
        "reshape": (
            Sequential([Reshape((1, 4, 3)), Conv2D(1, 2, 3, 3, rng=rng),
                        Flatten(), Dense(2 * 4 * 3, 2, rng=rng)]),
            rng.standard_normal((3, 4, 3)), rng.standard_normal((3, 2)),
        ),
        "lstm_last": (
            Sequential([LSTM(3, 5, rng=rng), Dense(5, 2, rng=rng)]),
            rng.standard_normal((4, 7, 3)), rng.standard_normal((4, 2)),
        ),
        "lstm_stacked": (
            Sequential([LSTM(3, 4, return_sequences=True, rng=rng),
                        LSTM(4, 4, rng=rng), Dense(4, 2, rng=rng)]),
            rng.standard_normal((3, 6, 3)), rng.standard_normal((3, 2)),
        ),
    }
    return {
        name: grad_check(net, x, y, max_entries_per_param=40, seed=seed)
        for name, (net, x, y) in cases.items()
    }
