"""Post-training static int8 quantization of neural checkpoints.

Weights use symmetric per-tensor quantization (zero point 0, scale
max|w|/127); activations use affine per-tensor quantization calibrated by
min/max over a calibration pass. Matrix products run in int8 with int32
accumulation; the integer results are corrected for zero points and
rescaled in float. LSTM gate nonlinearities and cell updates stay in
float between the integer projections, and hidden states are requantized
each step. A ReLU that follows a conv or dense layer is folded into that
layer's output requantization: its calibrated range starts at zero, so
the requantization clip performs the rectification.

Biases and scale tables ride along as float metadata; the quantized
weight payload is exactly one int8 byte per float32 weight, a 75% size
reduction.

Two interchangeable backends execute the integer pipeline. The numba
backend fuses each layer (the whole LSTM time loop, conv without an
im2col detour) into one jitted kernel, which is what makes single-window
inference faster than the float path; plain gemm-sized integer kernels
lose that race to BLAS plus per-step numpy overhead. The numpy backend
is the readable reference and the fallback when numba is absent. Integer
arithmetic is exact in both; tiny float discrepancies between backends
can appear only through libm-vs-SIMD transcendentals inside the LSTM.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn_core
from .dataset_windows import Normalizer
from .forecasters import ModelMeta, NeuralForecaster, _meta_from_dict, _meta_to_dict
from .forecasters import _normalizer_from_dict, _normalizer_to_dict

SCALE_FLOOR = 1e-8

_sigmoid = nn_core._sigmoid

try:  # pragma: no cover - environment probe
    import numba

    HAVE_NUMBA = True
except Exception:  # pragma: no cover
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _k_gemm_i8(a, b):  # [m,k] x [k,n] int8 -> int32
        m, k = a.shape
        _, n = b.shape
        out = np.zeros((m, n), dtype=np.int32)
        for i in range(m):
            for p in range(k):
                av = np.int32(a[i, p])
                if av != 0:
                    for j in range(n):
                        out[i, j] += av * np.int32(b[p, j])
        return out

    @numba.njit(cache=True, fastmath=False)
    def _k_dense_float(xq, wq, colsum, bias, zx, s):
        b, f = xq.shape
        o = wq.shape[1]
        out = np.empty((b, o), dtype=np.float64)
        for i in range(b):
            acc = np.zeros(o, dtype=np.int32)
            for p in range(f):
                av = np.int32(xq[i, p])
                if av != 0:
                    for j in range(o):
                        acc[j] += av * np.int32(wq[p, j])
            for j in range(o):
                out[i, j] = (acc[j] - zx * colsum[j]) * s + bias[j]
        return out

    @numba.njit(cache=True, fastmath=False)
    def _k_dense_requant(xq, wq, colsum, bias, zx, s, s_out, z_out):
        b, f = xq.shape
        o = wq.shape[1]
        out = np.empty((b, o), dtype=np.int8)
        for i in range(b):
            acc = np.zeros(o, dtype=np.int32)
            for p in range(f):
                av = np.int32(xq[i, p])
                if av != 0:
                    for j in range(o):
                        acc[j] += av * np.int32(wq[p, j])
            for j in range(o):
                y = (acc[j] - zx * colsum[j]) * s + bias[j]
                q = np.rint(y / s_out) + z_out
                if q < -128.0:
                    q = -128.0
                elif q > 127.0:
                    q = 127.0
                out[i, j] = np.int8(q)
        return out

    @numba.njit(cache=True, fastmath=False)
    def _k_lstm(xq, wxq, whq, bias, colx, colh, zx, zh, sxw, shw, sh):
        b, t, fdim = xq.shape
        h4 = wxq.shape[1]
        hs = h4 // 4
        seq = np.empty((b, t, hs), dtype=np.int8)
        for bi in range(b):
            hq = np.full(hs, zh, dtype=np.int8)
            c = np.zeros(hs, dtype=np.float64)
            for ti in range(t):
                accx = np.zeros(h4, dtype=np.int32)
                for p in range(fdim):
                    av = np.int32(xq[bi, ti, p])
                    if av != 0:
                        for j in range(h4):
                            accx[j] += av * np.int32(wxq[p, j])
                acch = np.zeros(h4, dtype=np.int32)
                for p in range(hs):
                    av = np.int32(hq[p])
                    if av != 0:
                        for j in range(h4):
                            acch[j] += av * np.int32(whq[p, j])
                pre = np.empty(h4, dtype=np.float64)
                for j in range(h4):
                    pre[j] = (
                        (accx[j] - zx * colx[j]) * sxw
                        + (acch[j] - zh * colh[j]) * shw
                    ) + bias[j]
                for i in range(hs):
                    # same stable sigmoid branches as the float layer
                    vi = pre[i]
                    ig = 1.0 / (1.0 + np.exp(-vi)) if vi >= 0 else (
                        np.exp(vi) / (1.0 + np.exp(vi))
                    )
                    vf = pre[hs + i]
                    fg = 1.0 / (1.0 + np.exp(-vf)) if vf >= 0 else (
                        np.exp(vf) / (1.0 + np.exp(vf))
                    )
                    gg = np.tanh(pre[2 * hs + i])
                    vo = pre[3 * hs + i]
                    og = 1.0 / (1.0 + np.exp(-vo)) if vo >= 0 else (
                        np.exp(vo) / (1.0 + np.exp(vo))
                    )
                    c[i] = fg * c[i] + ig * gg
                    hv = og * np.tanh(c[i])
                    q = np.rint(hv / sh) + zh
                    if q < -128.0:
                        q = -128.0
                    elif q > 127.0:
                        q = 127.0
                    hq[i] = np.int8(q)
                    seq[bi, ti, i] = hq[i]
        return seq

    @numba.njit(cache=True, fastmath=False)
    def _k_conv_requant(xq, wq, colsum, bias, zx, s, s_out, z_out,
                        kh, kw, stride, pt, pl, oh, ow):
        b, cin, hh, ww = xq.shape
        o = wq.shape[0]  # wq is [out_ch, cin*kh*kw]
        out = np.empty((b, o, oh, ow), dtype=np.int8)
        for bi in range(b):
            for oc in range(o):
                for i in range(oh):
                    for j in range(ow):
                        acc = np.int32(0)
                        for ci in range(cin):
                            base = ci * kh * kw
                            for u in range(kh):
                                row = i * stride + u - pt
                                for v in range(kw):
                                    col = j * stride + v - pl
                                    if 0 <= row < hh and 0 <= col < ww:
                                        av = np.int32(xq[bi, ci, row, col])
                                    else:
                                        av = np.int32(zx)
                                    acc += av * np.int32(wq[oc, base + u * kw + v])
                        y = (acc - zx * colsum[oc]) * s + bias[oc]
                        q = np.rint(y / s_out) + z_out
                        if q < -128.0:
                            q = -128.0
                        elif q > 127.0:
                            q = 127.0
                        out[bi, oc, i, j] = np.int8(q)
        return out


def _gemm_i8_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a.astype(np.int32) @ b.astype(np.int32)


def _resolve_backend(backend: str) -> str:
    if backend == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if backend == "numba" and not HAVE_NUMBA:
        raise QuantizationError("numba backend requested but numba is unavailable")
    if backend not in ("numba", "numpy"):
        raise QuantizationError(f"unknown backend: {backend}")
    return backend


def gemm_i8(a: np.ndarray, b: np.ndarray, backend: str = "auto") -> np.ndarray:
    """int8 x int8 -> int32 matrix product."""
    if _resolve_backend(backend) == "numpy":
        return _gemm_i8_numpy(a, b)
    return _k_gemm_i8(np.ascontiguousarray(a), np.ascontiguousarray(b))


class QuantizationError(ValueError):
    pass


@dataclass(frozen=True)
class QuantParams:
    """Affine int8 mapping: real = scale * (q - zero_point)."""

    scale: float
    zero_point: int

    def quantize(self, x: np.ndarray) -> np.ndarray:
        q = np.rint(x / self.scale) + self.zero_point
        return np.clip(q, -128, 127).astype(np.int8)

    def dequantize(self, q: np.ndarray) -> np.ndarray:
        return (q.astype(np.float64) - self.zero_point) * self.scale


def weight_qparams(w: np.ndarray) -> QuantParams:
    """Symmetric weight scheme: zero point 0, clip at +/-127."""
    amax = float(np.max(np.abs(w))) if w.size else 0.0
    return QuantParams(max(amax / 127.0, SCALE_FLOOR), 0)


def activation_qparams(lo: float, hi: float) -> QuantParams:
    """Affine activation scheme over the calibrated [lo, hi] range."""
    lo = min(lo, 0.0)  # keep zero representable
    hi = max(hi, 0.0)
    scale = (hi - lo) / 255.0
    if scale < SCALE_FLOOR:
        warnings.warn(
            f"degenerate activation range [{lo}, {hi}]; scale floored",
            RuntimeWarning,
            stacklevel=2,
        )
        scale = SCALE_FLOOR
    zp = int(np.clip(round(-128 - lo / scale), -128, 127))
    return QuantParams(scale, zp)


def quantize_weight(w: np.ndarray) -> tuple[np.ndarray, QuantParams]:
    qp = weight_qparams(w)
    q = np.clip(np.rint(w / qp.scale), -127, 127).astype(np.int8)
    return q, qp


# --- calibration -----------------------------------------------------------

def calibrate(model: NeuralForecaster, calibration_windows: np.ndarray,
              ap_ids) -> dict[str, tuple[float, float]]:
    """Min/max activation ranges over a forward pass on calibration data.

    Ranges are keyed 'input' for the normalized network input, 'out<i>'
    for the post-ReLU output of conv/dense layer i, and 'h<i>' for the
    hidden-state values of LSTM layer i across all time steps.
    """
    X = np.asarray(calibration_windows, dtype=float)
    if X.ndim != 3 or len(X) == 0:
        raise QuantizationError("calibration set must be a non-empty [B, L, |M|]")
    x = model.normalizer.apply(X, ap_ids, model.meta.input_features)
    layers = model.network.layers
    ranges: dict[str, tuple[float, float]] = {
        "input": (float(x.min()), float(x.max()))
    }
    cur = x
    for i, layer in enumerate(layers):
        cur = layer.forward(cur)
        if isinstance(layer, nn_core.LSTM):
            if layer.return_sequences:
                vals = cur
            else:
                # recover the per-step hidden states from the forward cache
                steps = layer._cache[1]
                vals = np.stack([o * tc for (_, _, _, o, _, tc, _) in steps], axis=1)
            ranges[f"h{i}"] = (float(vals.min()), float(vals.max()))
        elif isinstance(layer, (nn_core.Dense, nn_core.Conv2D)):
            post = cur
            if i + 1 < len(layers) and isinstance(layers[i + 1], nn_core.ReLU):
                post = np.maximum(cur, 0.0)
            ranges[f"out{i}"] = (float(post.min()), float(post.max()))
    return ranges


def merge_ranges(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, (lo, hi) in b.items():
        if k in out:
            out[k] = (min(out[k][0], lo), max(out[k][1], hi))
        else:
            out[k] = (lo, hi)
    return out


# --- quantized layer runtime ----------------------------------------------

def _colsum(arr: np.ndarray, axis: int) -> np.ndarray:
    return arr.astype(np.int32).sum(axis=axis, dtype=np.int32)


@dataclass
class QDense:
    idx: int
    wq: np.ndarray          # [in, out] int8
    w_scale: float
    bias: np.ndarray
    in_params: QuantParams
    out_params: QuantParams | None  # None = leave output in float
    relu: bool

    def weight_arrays(self):
        return [("W", self.wq)]

    def run(self, q_in: np.ndarray, backend: str):
        cs = _colsum(self.wq, axis=0)
        s = self.in_params.scale * self.w_scale
        zx = self.in_params.zero_point
        if backend == "numba":
            xq = np.ascontiguousarray(q_in)
            if self.out_params is None:
                return _k_dense_float(xq, self.wq, cs, self.bias, zx, s), False
            return (
                _k_dense_requant(
                    xq, self.wq, cs, self.bias, zx, s,
                    self.out_params.scale, self.out_params.zero_point,
                ),
                True,
            )
        acc = _gemm_i8_numpy(q_in, self.wq)
        y = (acc - zx * cs[None, :]) * s + self.bias
        if self.out_params is None:
            return y, False
        return self.out_params.quantize(y), True


@dataclass
class QConv2D:
    idx: int
    wq: np.ndarray          # [out_ch, in_ch*kh*kw] int8
    w_scale: float
    bias: np.ndarray
    kh: int
    kw: int
    stride: int
    padding: str
    in_ch: int
    out_ch: int
    in_params: QuantParams
    out_params: QuantParams
    relu: bool

    def weight_arrays(self):
        return [("W", self.wq)]

    def _geometry(self, h: int, w: int):
        if self.padding == "same":
            pt, pl = (self.kh - 1) // 2, (self.kw - 1) // 2
            pb, pr = self.kh // 2, self.kw // 2
        else:
            pt = pb = pl = pr = 0
        oh = (h + pt + pb - self.kh) // self.stride + 1
        ow = (w + pl + pr - self.kw) // self.stride + 1
        if oh <= 0 or ow <= 0:
            raise nn_core.ShapeError(
                f"quantized conv kernel {self.kh}x{self.kw} larger than input"
            )
        return pt, pb, pl, pr, oh, ow

    def run(self, q_in: np.ndarray, backend: str):
        b, c, h, w = q_in.shape
        pt, pb, pl, pr, oh, ow = self._geometry(h, w)
        cs = _colsum(self.wq, axis=1)
        s = self.in_params.scale * self.w_scale
        zx = self.in_params.zero_point
        if backend == "numba":
            out = _k_conv_requant(
                np.ascontiguousarray(q_in), self.wq, cs, self.bias, zx, s,
                self.out_params.scale, self.out_params.zero_point,
                self.kh, self.kw, self.stride, pt, pl, oh, ow,
            )
            return out, True
        xp = np.pad(q_in, ((0, 0), (0, 0), (pt, pb), (pl, pr)),
                    constant_values=np.int8(zx))
        i0 = np.repeat(np.arange(self.kh), self.kw)
        i1 = self.stride * np.repeat(np.arange(oh), ow)
        j0 = np.tile(np.arange(self.kw), self.kh)
        j1 = self.stride * np.tile(np.arange(ow), oh)
        rows = i0[:, None] + i1[None, :]
        cols = j0[:, None] + j1[None, :]
        patches = xp[:, :, rows, cols].reshape(b, c * self.kh * self.kw, oh * ow)
        fdim = patches.shape[1]
        col2d = patches.transpose(0, 2, 1).reshape(b * oh * ow, fdim)
        acc = _gemm_i8_numpy(col2d, self.wq.T)          # [b*oh*ow, out_ch]
        y = (acc - zx * cs[None, :]) * s + self.bias[None, :]
        y = y.reshape(b, oh, ow, self.out_ch).transpose(0, 3, 1, 2)
        return self.out_params.quantize(y), True


@dataclass
class QLSTM:
    idx: int
    wxq: np.ndarray
    wx_scale: float
    whq: np.ndarray
    wh_scale: float
    bias: np.ndarray
    hidden: int
    return_sequences: bool
    in_params: QuantParams
    h_params: QuantParams

    def weight_arrays(self):
        return [("Wx", self.wxq), ("Wh", self.whq)]

    def run(self, q_in: np.ndarray, backend: str):
        sxw = self.in_params.scale * self.wx_scale
        shw = self.h_params.scale * self.wh_scale
        zx, zh = self.in_params.zero_point, self.h_params.zero_point
        if backend == "numba":
            seq = _k_lstm(
                np.ascontiguousarray(q_in), self.wxq, self.whq, self.bias,
                _colsum(self.wxq, axis=0), _colsum(self.whq, axis=0),
                zx, zh, sxw, shw, self.h_params.scale,
            )
            if self.return_sequences:
                return seq, True
            return np.ascontiguousarray(seq[:, -1]), True
        b, t, fdim = q_in.shape
        hs = self.hidden
        x2d = q_in.reshape(b * t, fdim)
        acc_x = _gemm_i8_numpy(x2d, self.wxq).reshape(b, t, 4 * hs)
        corr_x = zx * _colsum(self.wxq, axis=0)
        pre_x = (acc_x - corr_x[None, None, :]) * sxw
        corr_h = zh * _colsum(self.whq, axis=0)
        h_q = np.full((b, hs), zh, dtype=np.int8)
        c = np.zeros((b, hs))
        seq_q = np.empty((b, t, hs), dtype=np.int8) if self.return_sequences else None
        for k in range(t):
            acc_h = _gemm_i8_numpy(h_q, self.whq)
            pre = (pre_x[:, k] + (acc_h - corr_h[None, :]) * shw) + self.bias
            i = _sigmoid(pre[:, :hs])
            f = _sigmoid(pre[:, hs : 2 * hs])
            g = np.tanh(pre[:, 2 * hs : 3 * hs])
            o = _sigmoid(pre[:, 3 * hs :])
            c = f * c + i * g
            h_float = o * np.tanh(c)
            h_q = self.h_params.quantize(h_float)
            if seq_q is not None:
                seq_q[:, k] = h_q
        if self.return_sequences:
            return seq_q, True
        return h_q, True


@dataclass
class QPassthrough:
    """Reshape / flatten / maxpool on the int8 tensor; ReLU layers that were
    folded into the previous layer's requantization are no-ops here."""

    idx: int
    kind: str
    arg: tuple = ()

    def weight_arrays(self):
        return []

    def run(self, q_in: np.ndarray, backend: str):
        if self.kind == "reshape":
            return q_in.reshape((q_in.shape[0],) + tuple(self.arg)), True
        if self.kind == "flatten":
            return q_in.reshape(q_in.shape[0], -1), True
        if self.kind == "maxpool2d":
            ph, pw = self.arg
            b, c, h, w = q_in.shape
            oh, ow = h // ph, w // pw
            v = q_in[:, :, : oh * ph, : ow * pw].reshape(b, c, oh, ph, ow, pw)
            return np.ascontiguousarray(v.max(axis=(3, 5))), True
        if self.kind == "relu_folded":
            return q_in, True
        raise QuantizationError(f"unknown passthrough kind {self.kind}")


@dataclass
class QuantizedModel:
    """Int8 counterpart of a trained NeuralForecaster."""

    meta: ModelMeta
    layer_specs: list[dict]
    qlayers: list
    input_params: QuantParams
    normalizer: Normalizer
    backend: str = "auto"

    def int8_payload_bytes(self) -> int:
        return sum(
            arr.size for ql in self.qlayers for _, arr in ql.weight_arrays()
        )

    def float32_payload_bytes(self) -> int:
        return 4 * self.int8_payload_bytes()

    def forward_normalized(self, xn: np.ndarray) -> np.ndarray:
        backend = _resolve_backend(self.backend)
        q = self.input_params.quantize(xn)
        quantized = True
        for ql in self.qlayers:
            q, quantized = ql.run(q, backend)
        if quantized:
            raise QuantizationError("network did not end in a float head")
        return q

    def predict_batch(self, X: np.ndarray, ap_ids) -> np.ndarray:
        meta = self.meta
        Xn = self.normalizer.apply(
            np.asarray(X, dtype=float), ap_ids, meta.input_features
        )
        raw = self.forward_normalized(Xn)
        S, n_out = meta.horizon_steps, len(meta.target_features)
        Yn = raw.reshape(-1, S, n_out)
        Y = self.normalizer.invert(Yn, ap_ids, meta.target_features)
        return np.maximum(Y, 0.0)

    def predict(self, window: np.ndarray, ap_id=None) -> np.ndarray:
        window = np.asarray(window, dtype=float)
        expected = (self.meta.lookback_steps, len(self.meta.input_features))
        if window.shape != expected:
            raise nn_core.ShapeError(
                f"quantized model expects window {expected}, got {window.shape}"
            )
        if ap_id is None:
            raise ValueError("quantized prediction needs the ap_id for scaling")
        return self.predict_batch(window[None], np.array([ap_id], dtype=object))[0]


def quant_infer(qm: QuantizedModel, window: np.ndarray, ap_id=None) -> np.ndarray:
    return qm.predict(window, ap_id)


def quantize_model(
    model: NeuralForecaster,
    ranges: dict[str, tuple[float, float]],
    backend: str = "auto",
) -> QuantizedModel:
    """Map a float checkpoint to int8 using calibrated activation ranges."""
    if "input" not in ranges:
        raise QuantizationError("calibration ranges missing the network input")
    layers = model.network.layers
    qlayers = []
    cur_params = activation_qparams(*ranges["input"])
    for i, layer in enumerate(layers):
        if isinstance(layer, nn_core.Dense):
            wq, wp = quantize_weight(layer.W)
            is_last = i == len(layers) - 1
            relu_next = (not is_last) and isinstance(layers[i + 1], nn_core.ReLU)
            out_params = None
            if not is_last:
                key = f"out{i}"
                if key not in ranges:
                    raise QuantizationError(f"missing calibrated range for {key}")
                out_params = activation_qparams(*ranges[key])
            qlayers.append(
                QDense(i, wq, wp.scale, layer.b.copy(), cur_params, out_params,
                       relu_next)
            )
            if out_params is not None:
                cur_params = out_params
        elif isinstance(layer, nn_core.Conv2D):
            key = f"out{i}"
            if key not in ranges:
                raise QuantizationError(f"missing calibrated range for {key}")
            wq, wp = quantize_weight(layer.W)
            out_params = activation_qparams(*ranges[key])
            relu_next = i + 1 < len(layers) and isinstance(
                layers[i + 1], nn_core.ReLU
            )
            qlayers.append(
                QConv2D(
                    i, np.ascontiguousarray(wq.reshape(layer.out_ch, -1)),
                    wp.scale, layer.b.copy(),
                    layer.kh, layer.kw, layer.stride, layer.padding,
                    layer.in_ch, layer.out_ch, cur_params, out_params, relu_next,
                )
            )
            cur_params = out_params
        elif isinstance(layer, nn_core.LSTM):
            key = f"h{i}"
            if key not in ranges:
                raise QuantizationError(f"missing calibrated range for {key}")
            wxq, wxp = quantize_weight(layer.Wx)
            whq, whp = quantize_weight(layer.Wh)
            h_params = activation_qparams(*ranges[key])
            qlayers.append(
                QLSTM(
                    i, wxq, wxp.scale, whq, whp.scale, layer.b.copy(),
                    layer.hidden_size, layer.return_sequences, cur_params,
                    h_params,
                )
            )
            cur_params = h_params
        elif isinstance(layer, nn_core.ReLU):
            prev = layers[i - 1] if i else None
            if isinstance(prev, (nn_core.Dense, nn_core.Conv2D)):
                qlayers.append(QPassthrough(i, "relu_folded"))
            else:
                raise QuantizationError(
                    "ReLU without a preceding dense/conv layer is unsupported"
                )
        elif isinstance(layer, nn_core.Reshape):
            qlayers.append(QPassthrough(i, "reshape", tuple(layer.target_shape)))
        elif isinstance(layer, nn_core.Flatten):
            qlayers.append(QPassthrough(i, "flatten"))
        elif isinstance(layer, nn_core.MaxPool2D):
            qlayers.append(QPassthrough(i, "maxpool2d", (layer.ph, layer.pw)))
        else:
            raise QuantizationError(
                f"cannot quantize layer kind {type(layer).__name__}"
            )
    return QuantizedModel(
        meta=model.meta,
        layer_specs=model.network.specs(),
        qlayers=qlayers,
        input_params=activation_qparams(*ranges["input"]),
        normalizer=model.normalizer,
        backend=backend,
    )


# --- serialization ---------------------------------------------------------

QUANT_MAGIC = b"APLDQNT1"


def save_quantized(qm: QuantizedModel, path) -> None:
    entries = []
    payload = b""
    for li, ql in enumerate(qm.qlayers):
        for name, arr in ql.weight_arrays():
            entries.append(
                {"layer": li, "name": name, "shape": list(arr.shape),
                 "offset": len(payload)}
            )
            payload += np.ascontiguousarray(arr, dtype=np.int8).tobytes()
    header = {
        "format": 1,
        "meta": _meta_to_dict(qm.meta),
        "layer_specs": qm.layer_specs,
        "normalizer": _normalizer_to_dict(qm.normalizer),
        "input_params": [qm.input_params.scale, qm.input_params.zero_point],
        "entries": entries,
        "runtime": _runtime_state(qm),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(QUANT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def _runtime_state(qm: QuantizedModel) -> list[dict]:
    out = []
    for ql in qm.qlayers:
        d: dict = {"cls": type(ql).__name__, "idx": ql.idx}
        if isinstance(ql, QDense):
            d.update(
                w_scale=ql.w_scale, bias=ql.bias.tolist(), relu=ql.relu,
                in_params=[ql.in_params.scale, ql.in_params.zero_point],
                out_params=None if ql.out_params is None
                else [ql.out_params.scale, ql.out_params.zero_point],
            )
        elif isinstance(ql, QConv2D):
            d.update(
                w_scale=ql.w_scale, bias=ql.bias.tolist(), kh=ql.kh, kw=ql.kw,
                stride=ql.stride, padding=ql.padding, in_ch=ql.in_ch,
                out_ch=ql.out_ch, relu=ql.relu,
                in_params=[ql.in_params.scale, ql.in_params.zero_point],
                out_params=[ql.out_params.scale, ql.out_params.zero_point],
            )
        elif isinstance(ql, QLSTM):
            d.update(
                wx_scale=ql.wx_scale, wh_scale=ql.wh_scale,
                bias=ql.bias.tolist(), hidden=ql.hidden,
                return_sequences=ql.return_sequences,
                in_params=[ql.in_params.scale, ql.in_params.zero_point],
                h_params=[ql.h_params.scale, ql.h_params.zero_point],
            )
        elif isinstance(ql, QPassthrough):
            d.update(kind=ql.kind, arg=list(ql.arg))
        out.append(d)
    return out


def load_quantized(path, backend: str = "auto") -> QuantizedModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(QUANT_MAGIC))
        if magic != QUANT_MAGIC:
            raise ValueError(f"not a quantized checkpoint: {path}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        payload = fh.read()
    weights: dict[tuple[int, str], np.ndarray] = {}
    for e in header["entries"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(
            payload, dtype=np.int8, count=count, offset=e["offset"]
        ).reshape(shape).copy()
        weights[(e["layer"], e["name"])] = arr
    qlayers = []
    for li, d in enumerate(header["runtime"]):
        cls = d["cls"]
        if cls == "QDense":
            qlayers.append(
                QDense(
                    d["idx"], weights[(li, "W")], d["w_scale"],
                    np.array(d["bias"]), QuantParams(*d["in_params"]),
                    None if d["out_params"] is None else QuantParams(*d["out_params"]),
                    d["relu"],
                )
            )
        elif cls == "QConv2D":
            qlayers.append(
                QConv2D(
                    d["idx"], weights[(li, "W")], d["w_scale"],
                    np.array(d["bias"]), d["kh"], d["kw"], d["stride"],
                    d["padding"], d["in_ch"], d["out_ch"],
                    QuantParams(*d["in_params"]), QuantParams(*d["out_params"]),
                    d["relu"],
                )
            )
        elif cls == "QLSTM":
            qlayers.append(
                QLSTM(
                    d["idx"], weights[(li, "Wx")], d["wx_scale"],
                    weights[(li, "Wh")], d["wh_scale"], np.array(d["bias"]),
                    d["hidden"], d["return_sequences"],
                    QuantParams(*d["in_params"]), QuantParams(*d["h_params"]),
                )
            )
        elif cls == "QPassthrough":
            qlayers.append(QPassthrough(d["idx"], d["kind"], tuple(d["arg"])))
        else:
            raise ValueError(f"unknown quantized layer class {cls}")
    return QuantizedModel(
        meta=_meta_from_dict(header["meta"]),
        layer_specs=header["layer_specs"],
        qlayers=qlayers,
        input_params=QuantParams(*header["input_params"]),
        normalizer=_normalizer_from_dict(header["normalizer"]),
        backend=backend,
    )
