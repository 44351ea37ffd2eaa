"""Frequency-shared separator network: BiLSTM -> BiLSTM -> time-distributed FC.

One set of parameters processes every frequency. Forward caches a trace
(gate activations, cell and hidden states) so `backward` can run exact
back-propagation through time. Checkpoints are a documented little-endian
binary: header with magic, version and a name/dtype/shape table, then the
raw array data concatenated in table order.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

CKPT_MAGIC = b"NBSEPCKP"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Widths of the separator. hidden1/hidden2 are per direction."""

    n_input: int = 16     # 2 * n_channels (interleaved Re/Im)
    hidden1: int = 256
    hidden2: int = 128
    n_output: int = 4     # 2 * n_sources

    def validate(self):
        for name in ("n_input", "hidden1", "hidden2", "n_output"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple]":
    """Parameter name -> shape, in the canonical flat-index order."""
    shapes = OrderedDict()
    layer_dims = [(config.n_input, config.hidden1),
                  (2 * config.hidden1, config.hidden2)]
    for l, (n_in, hidden) in enumerate(layer_dims):
        for d in ("fw", "bw"):
            shapes[f"lstm{l}_{d}_Wx"] = (4 * hidden, n_in)
            shapes[f"lstm{l}_{d}_Wh"] = (4 * hidden, hidden)
            shapes[f"lstm{l}_{d}_b"] = (4 * hidden,)
    shapes["fc_W"] = (config.n_output, 2 * config.hidden2)
    shapes["fc_b"] = (config.n_output,)
    return shapes


@dataclass
class ModelParams:
    """Named parameter arrays plus a flat index space over every scalar."""

    config: ModelConfig
    arrays: "OrderedDict[str, np.ndarray]"

    @property
    def names(self):
        return list(self.arrays)

    @property
    def dtype(self):
        return self.arrays["fc_W"].dtype

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def __getitem__(self, name):
        return self.arrays[name]

    def to_vector(self) -> np.ndarray:
        """All parameters raveled and concatenated in canonical order."""
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def from_vector(self, vec) -> "ModelParams":
        """New ModelParams with this one's shapes filled from a flat vector."""
        vec = np.asarray(vec)
        if vec.shape != (self.n_parameters,):
            raise ValueError(f"expected vector of length {self.n_parameters}")
        arrays = OrderedDict()
        offset = 0
        for name, a in self.arrays.items():
            arrays[name] = vec[offset:offset + a.size].reshape(a.shape).copy()
            offset += a.size
        return ModelParams(config=self.config, arrays=arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(config=self.config, arrays=OrderedDict(
            (k, v.copy()) for k, v in self.arrays.items()))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(config=self.config, arrays=OrderedDict(
            (k, v.astype(dtype)) for k, v in self.arrays.items()))

    def validate(self):
        expected = param_shapes(self.config)
        if list(self.arrays) != list(expected):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name} has shape {self.arrays[name].shape}, "
                                 f"expected {shape}")
            if not np.all(np.isfinite(self.arrays[name])):
                raise ValueError(f"non-finite values in {name}")


def init_params(config: ModelConfig, seed: int, dtype=np.float64) -> ModelParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; zero biases except forget gate = 1."""
    config.validate()
    rng = np.random.default_rng(seed)
    arrays = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name.endswith("_b") or name == "fc_b":
            b = np.zeros(shape, dtype=dtype)
            if name != "fc_b":
                hidden = shape[0] // 4
                b[hidden:2 * hidden] = 1.0
            arrays[name] = b
        else:
            # fan: hidden size for recurrent layers, input width for the FC
            fan = shape[0] // 4 if name.startswith("lstm") else shape[1]
            k = 1.0 / np.sqrt(fan)
            arrays[name] = rng.uniform(-k, k, shape).astype(dtype)
    return ModelParams(config=config, arrays=arrays)


@dataclass
class _DirectionTrace:
    # all arrays are in processing order (reversed time for the bw direction)
    gates: np.ndarray   # (T, B, 4H) post-activation i|f|g|o
    cs: np.ndarray      # (T, B, H) cell states
    tcs: np.ndarray     # (T, B, H) tanh(cell states)
    hs: np.ndarray      # (T, B, H) hidden states


@dataclass
class _LayerTrace:
    x: np.ndarray       # (T, B, n_in) layer input, natural time order
    fw: _DirectionTrace
    bw: _DirectionTrace


@dataclass
class ForwardTrace:
    """Cached activations from one forward pass, consumed by `backward`."""

    layers: list = field(default_factory=list)
    fc_x: np.ndarray = None  # (T, B, 2*hidden2) input to the FC
    n_items: int = 0
    n_frames: int = 0


def _run_direction(x, Wx, Wh, b, collect):
    """One LSTM direction over (T, B, n_in) input in processing order."""
    n_frames, n_items, _ = x.shape
    hidden = Wh.shape[1]
    zx = x @ Wx.T + b  # input projections for every step in one GEMM
    wh_t = np.ascontiguousarray(Wh.T)
    hs = np.empty((n_frames, n_items, hidden), dtype=zx.dtype)
    if collect:
        gates = np.empty((n_frames, n_items, 4 * hidden), dtype=zx.dtype)
        cs = np.empty((n_frames, n_items, hidden), dtype=zx.dtype)
        tcs = np.empty((n_frames, n_items, hidden), dtype=zx.dtype)
    h = np.zeros((n_items, hidden), dtype=zx.dtype)
    c = np.zeros((n_items, hidden), dtype=zx.dtype)
    for t in range(n_frames):
        z = zx[t] + h @ wh_t
        i = expit(z[:, :hidden])
        f = expit(z[:, hidden:2 * hidden])
        g = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = expit(z[:, 3 * hidden:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        if collect:
            gates[t, :, :hidden] = i
            gates[t, :, hidden:2 * hidden] = f
            gates[t, :, 2 * hidden:3 * hidden] = g
            gates[t, :, 3 * hidden:] = o
            cs[t] = c
            tcs[t] = tc
    if not collect:
        return hs, None
    return hs, _DirectionTrace(gates=gates, cs=cs, tcs=tcs, hs=hs)


def forward(params: ModelParams, x, collect_trace=True):
    """Run the separator on a batch of per-frequency sequences.

    Args:
        params: shared network parameters.
        x: (n_items, n_input, n_frames) real input batch.
        collect_trace: cache activations for `backward` (trace is None if off).

    Returns:
        (outputs, trace) with outputs (n_items, n_output, n_frames).
    """
    a = params.arrays
    cfg = params.config
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1] != cfg.n_input:
        raise ValueError(f"expected (n_items, {cfg.n_input}, n_frames) input, "
                         f"got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in model input")
    x_tm = np.ascontiguousarray(np.transpose(x, (2, 0, 1)), dtype=params.dtype)
    n_frames, n_items = x_tm.shape[:2]

    layers = []
    inp = x_tm
    for l in range(2):
        hs_f, tr_f = _run_direction(inp, a[f"lstm{l}_fw_Wx"], a[f"lstm{l}_fw_Wh"],
                                    a[f"lstm{l}_fw_b"], collect_trace)
        hs_b, tr_b = _run_direction(inp[::-1], a[f"lstm{l}_bw_Wx"],
                                    a[f"lstm{l}_bw_Wh"], a[f"lstm{l}_bw_b"],
                                    collect_trace)
        if collect_trace:
            layers.append(_LayerTrace(x=inp, fw=tr_f, bw=tr_b))
        inp = np.concatenate([hs_f, hs_b[::-1]], axis=2)
    y_tm = inp @ a["fc_W"].T + a["fc_b"]
    outputs = np.transpose(y_tm, (1, 2, 0))
    if not collect_trace:
        return outputs, None
    trace = ForwardTrace(layers=layers, fc_x=inp, n_items=n_items,
                         n_frames=n_frames)
    return outputs, trace


def _backward_direction(Wx, Wh, x, tr: _DirectionTrace, dh_out):
    """BPTT for one direction; everything in processing order."""
    n_frames, n_items, hidden = dh_out.shape
    gates, cs, tcs, hs = tr.gates, tr.cs, tr.tcs, tr.hs
    dzs = np.empty((n_frames, n_items, 4 * hidden), dtype=dh_out.dtype)
    dh = np.zeros((n_items, hidden), dtype=dh_out.dtype)
    dc = np.zeros((n_items, hidden), dtype=dh_out.dtype)
    for t in range(n_frames - 1, -1, -1):
        i = gates[t, :, :hidden]
        f = gates[t, :, hidden:2 * hidden]
        g = gates[t, :, 2 * hidden:3 * hidden]
        o = gates[t, :, 3 * hidden:]
        tc = tcs[t]
        dh_t = dh_out[t] + dh
        dc = dc + dh_t * o * (1.0 - tc * tc)
        c_prev = cs[t - 1] if t > 0 else 0.0
        dzs[t, :, :hidden] = dc * g * i * (1.0 - i)
        dzs[t, :, hidden:2 * hidden] = dc * c_prev * f * (1.0 - f)
        dzs[t, :, 2 * hidden:3 * hidden] = dc * i * (1.0 - g * g)
        dzs[t, :, 3 * hidden:] = dh_t * tc * o * (1.0 - o)
        dh = dzs[t] @ Wh
        dc = dc * f
    flat = dzs.reshape(n_frames * n_items, 4 * hidden)
    dWx = flat.T @ x.reshape(n_frames * n_items, -1)
    if n_frames > 1:
        dWh = dzs[1:].reshape(-1, 4 * hidden).T @ hs[:-1].reshape(-1, hidden)
    else:
        dWh = np.zeros_like(Wh)
    db = flat.sum(axis=0)
    dx = dzs @ Wx
    return dWx, dWh, db, dx


def backward(params: ModelParams, trace: ForwardTrace, grad_outputs):
    """Exact gradients of a scalar loss through the forward pass.

    Args:
        params: parameters used for the matching forward call.
        trace: ForwardTrace from that call.
        grad_outputs: (n_items, n_output, n_frames) dL/d(outputs).

    Returns:
        (grad_params, grad_inputs): name -> array matching param shapes, and
        (n_items, n_input, n_frames) dL/d(inputs).
    """
    a = params.arrays
    dy = np.asarray(grad_outputs)
    if trace is None or trace.fc_x is None:
        raise ValueError("backward requires a trace collected by forward")
    expected = (trace.n_items, params.config.n_output, trace.n_frames)
    if dy.shape != expected:
        raise ValueError(f"grad_outputs shape {dy.shape} does not match "
                         f"trace {expected}")
    if len(trace.layers) != 2:
        raise ValueError("trace is incomplete")
    dy_tm = np.ascontiguousarray(np.transpose(dy, (2, 0, 1)), dtype=params.dtype)
    n_frames, n_items = dy_tm.shape[:2]

    grads = {}
    flat = dy_tm.reshape(n_frames * n_items, -1)
    grads["fc_W"] = flat.T @ trace.fc_x.reshape(n_frames * n_items, -1)
    grads["fc_b"] = flat.sum(axis=0)
    dh = dy_tm @ a["fc_W"]  # (T, B, 2*hidden2)

    for l in (1, 0):
        tr = trace.layers[l]
        hidden = tr.fw.hs.shape[2]
        dWx_f, dWh_f, db_f, dx_f = _backward_direction(
            a[f"lstm{l}_fw_Wx"], a[f"lstm{l}_fw_Wh"], tr.x, tr.fw,
            dh[:, :, :hidden])
        dWx_b, dWh_b, db_b, dx_b = _backward_direction(
            a[f"lstm{l}_bw_Wx"], a[f"lstm{l}_bw_Wh"], tr.x[::-1], tr.bw,
            dh[:, :, hidden:][::-1])
        grads[f"lstm{l}_fw_Wx"] = dWx_f
        grads[f"lstm{l}_fw_Wh"] = dWh_f
        grads[f"lstm{l}_fw_b"] = db_f
        grads[f"lstm{l}_bw_Wx"] = dWx_b
        grads[f"lstm{l}_bw_Wh"] = dWh_b
        grads[f"lstm{l}_bw_b"] = db_b
        dh = dx_f + dx_b[::-1]
    grad_inputs = np.transpose(dh, (1, 2, 0))
    return grads, grad_inputs


def save_checkpoint(path, arrays):
    """Write named arrays: magic, version, name/dtype/shape table, raw data."""
    entries = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append((name, arr))
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(entries)))
        for name, arr in entries:
            name_bytes = name.encode("utf-8")
            dtype_bytes = arr.dtype.str.encode("ascii")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<H", len(dtype_bytes)))
            fh.write(dtype_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        for _, arr in entries:
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint; name -> array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    offset = len(CKPT_MAGIC)
    version, n_arrays = struct.unpack_from("<II", buf, offset)
    offset += 8
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    table = []
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (dtype_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        dtype = np.dtype(buf[offset:offset + dtype_len].decode("ascii"))
        offset += dtype_len
        (ndim,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, offset)
        offset += 8 * ndim
        table.append((name, dtype, tuple(int(s) for s in shape)))
    arrays = OrderedDict()
    for name, dtype, shape in table:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
        arrays[name] = arr.reshape(shape).copy()
        offset += nbytes
    if offset != len(buf):
        raise ValueError("trailing bytes in checkpoint file")
    return arrays


def save_model(path, params: ModelParams, extra=None):
    """Checkpoint a model: meta/ config scalars, param/ arrays, extra as-is."""
    arrays = OrderedDict()
    cfg = params.config
    for key in ("n_input", "hidden1", "hidden2", "n_output"):
        arrays[f"meta/{key}"] = np.array(getattr(cfg, key), dtype=np.int64)
    for name, arr in params.arrays.items():
        arrays[f"param/{name}"] = arr
    if extra:
        for name, arr in extra.items():
            arrays[name] = np.asarray(arr)
    save_checkpoint(path, arrays)


def load_model(path):
    """Inverse of save_model; returns (params, extra)."""
    arrays = load_checkpoint(path)
    try:
        config = ModelConfig(
            n_input=int(arrays.pop("meta/n_input")),
            hidden1=int(arrays.pop("meta/hidden1")),
            hidden2=int(arrays.pop("meta/hidden2")),
            n_output=int(arrays.pop("meta/n_output")))
    except KeyError as exc:
        raise ValueError(f"checkpoint is missing {exc}") from exc
    params_arrays = OrderedDict()
    for name in param_shapes(config):
        key = f"param/{name}"
        if key not in arrays:
            raise ValueError(f"checkpoint is missing {key}")
        params_arrays[name] = arrays.pop(key)
    params = ModelParams(config=config, arrays=params_arrays)
    params.validate()
    return params, arrays
