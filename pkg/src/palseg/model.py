"""Pluggable predictor interface and a small numpy encoder-decoder.

TinySegNet is a 2-level encoder-decoder (stride-2 convs down, nearest
upsampling + conv up, additive skip connections, sigmoid head) with
hand-derived gradients, small enough to train on a single CPU core.
The optimizer is adaptive-moment estimation with decoupled weight decay.

Activations use channels-last layout internally; convolution is im2col
plus one matmul per layer.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np

from .loss import LossOutput


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


class Predictor(ABC):
    """Interface any segmentation model must satisfy."""

    @abstractmethod
    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Map (B, H, W) images to (B, H, W) probabilities in (0, 1)."""

    @abstractmethod
    def train_step(self, batch: np.ndarray, labels: np.ndarray,
                   loss_fn) -> float:
        """One optimizer update; returns the pre-update batch loss."""

    @abstractmethod
    def save(self, path: str | Path) -> None: ...

    @abstractmethod
    def load(self, path: str | Path) -> None: ...

    @property
    @abstractmethod
    def param_count(self) -> int: ...


# ---------------------------------------------------------------------------
# conv primitives: 3x3 kernels, zero padding 1, channels-last activations
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, stride: int) -> tuple[np.ndarray, tuple]:
    """Unfold 3x3 windows: (B,H,W,C) -> (B*Ho*Wo, C*9)."""
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    win = win[:, ::stride, ::stride]        # (B, Ho, Wo, C, 3, 3)
    ho, wo = win.shape[1], win.shape[2]
    cols = win.reshape(b * ho * wo, c * 9)
    return cols, (b, h, w, c, ho, wo)


def _col2im(dcols: np.ndarray, geom: tuple, stride: int) -> np.ndarray:
    """Scatter-add column gradients back to (B,H,W,C)."""
    b, h, w, c, ho, wo = geom
    dwin = dcols.reshape(b, ho, wo, c, 3, 3)
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dcols.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki:ki + stride * ho:stride,
                kj:kj + stride * wo:stride, :] += dwin[:, :, :, :, ki, kj]
    return dxp[:, 1:-1, 1:-1, :]


def _wmat(weight: np.ndarray) -> np.ndarray:
    """(Co,Ci,3,3) kernel as a (Ci*9, Co) matrix matching _im2col order."""
    co = weight.shape[0]
    return weight.transpose(1, 2, 3, 0).reshape(-1, co)


def _conv_forward(x, weight, bias, stride):
    cols, geom = _im2col(x, stride)
    out = cols @ _wmat(weight) + bias
    b, _, _, _, ho, wo = geom
    return out.reshape(b, ho, wo, weight.shape[0]), (cols, geom)


def _conv_backward(dy, weight, cache, stride):
    cols, geom = cache
    co = weight.shape[0]
    dy_cols = dy.reshape(-1, co)
    ci = weight.shape[1]
    dw = (cols.T @ dy_cols).reshape(ci, 3, 3, co).transpose(3, 0, 1, 2)
    db = dy_cols.sum(axis=0)
    dx = _col2im(dy_cols @ _wmat(weight).T, geom, stride)
    return dx, dw, db


def _upsample2(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample2_backward(dy: np.ndarray) -> np.ndarray:
    b, h, w, c = dy.shape
    return dy.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_LAYERS = (
    # name, (out_ch, in_ch), stride
    ("enc0", (8, 1), 1),
    ("enc1", (16, 8), 2),
    ("enc2", (32, 16), 2),
    ("mid", (32, 32), 1),
    ("dec1", (16, 32), 1),
    ("dec0", (8, 16), 1),
    ("head", (1, 8), 1),
)

_STRIDES = {name: stride for name, _, stride in _LAYERS}

_BLOB_MAGIC = b"PSNET1\n"


class AdamW:
    """Adaptive-moment estimation with decoupled weight decay."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= self.lr * update
            p -= self.lr * self.weight_decay * p  # decoupled decay


class TinySegNet(Predictor):
    """Two-level encoder-decoder with additive skips, ~21k parameters."""

    def __init__(self, seed: int = 0, dtype=np.float32,
                 lr: float = 1e-3, weight_decay: float = 1e-2):
        self.dtype = np.dtype(dtype)
        rng = np.random.Generator(np.random.PCG64(seed))
        self.params: dict[str, np.ndarray] = {}
        for name, (co, ci), _ in _LAYERS:
            fan_in = ci * 9
            std = np.sqrt(2.0 / fan_in)
            self.params[f"{name}.w"] = rng.normal(
                0.0, std, size=(co, ci, 3, 3)).astype(self.dtype)
            self.params[f"{name}.b"] = np.zeros(co, dtype=self.dtype)
        self.optimizer = AdamW(self.params, lr=lr, weight_decay=weight_decay)

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def set_lr(self, lr: float) -> None:
        self.optimizer.lr = lr

    def _run(self, batch: np.ndarray):
        """Forward pass with caches for backprop. batch: (B,H,W)."""
        x = np.asarray(batch, dtype=self.dtype)[:, :, :, None]
        p = self.params
        cache: dict[str, object] = {}

        def conv(name, inp):
            y, c = _conv_forward(inp, p[f"{name}.w"], p[f"{name}.b"],
                                 _STRIDES[name])
            cache[name] = c
            return y

        c0 = conv("enc0", x)
        e0 = np.maximum(c0, 0)
        c1 = conv("enc1", e0)
        e1 = np.maximum(c1, 0)
        c2 = conv("enc2", e1)
        e2 = np.maximum(c2, 0)
        c3 = conv("mid", e2)
        m = np.maximum(c3, 0)
        c4 = conv("dec1", _upsample2(m))
        u1 = np.maximum(c4, 0) + e1
        c5 = conv("dec0", _upsample2(u1))
        u2 = np.maximum(c5, 0) + e0
        z = conv("head", u2)
        prob = _sigmoid(z)
        cache["acts"] = (c0, c1, c2, c3, c4, c5, prob)
        return prob[:, :, :, 0], cache

    def _backward(self, dprob: np.ndarray, cache) -> dict[str, np.ndarray]:
        p = self.params
        c0, c1, c2, c3, c4, c5, prob = cache["acts"]

        def convbw(name, dy):
            return _conv_backward(dy, p[f"{name}.w"], cache[name],
                                  _STRIDES[name])

        grads: dict[str, np.ndarray] = {}
        dz = dprob[:, :, :, None] * prob * (1.0 - prob)
        du2, grads["head.w"], grads["head.b"] = convbw("head", dz)
        de0 = du2.copy()                       # skip branch
        dc5 = du2 * (c5 > 0)
        dup1, grads["dec0.w"], grads["dec0.b"] = convbw("dec0", dc5)
        du1 = _upsample2_backward(dup1)
        de1 = du1.copy()                       # skip branch
        dc4 = du1 * (c4 > 0)
        dupm, grads["dec1.w"], grads["dec1.b"] = convbw("dec1", dc4)
        dm = _upsample2_backward(dupm)
        dc3 = dm * (c3 > 0)
        de2, grads["mid.w"], grads["mid.b"] = convbw("mid", dc3)
        dc2 = de2 * (c2 > 0)
        de1_enc, grads["enc2.w"], grads["enc2.b"] = convbw("enc2", dc2)
        de1 += de1_enc
        dc1 = de1 * (c1 > 0)
        de0_enc, grads["enc1.w"], grads["enc1.b"] = convbw("enc1", dc1)
        de0 += de0_enc
        dc0 = de0 * (c0 > 0)
        _, grads["enc0.w"], grads["enc0.b"] = convbw("enc0", dc0)
        return grads

    @staticmethod
    def _pad_to_multiple(batch: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
        h, w = batch.shape[1:]
        ph = (-h) % 4
        pw = (-w) % 4
        if ph or pw:
            batch = np.pad(batch, ((0, 0), (0, ph), (0, pw)), mode="reflect")
        return batch, (h, w)

    def forward(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=self.dtype)
        padded, (h, w) = self._pad_to_multiple(batch)
        prob, _ = self._run(padded)
        return prob[:, :h, :w]

    def loss_and_grads(self, batch: np.ndarray, labels: np.ndarray,
                       loss_fn) -> tuple[float, dict[str, np.ndarray]]:
        """Batch loss (per-image losses averaged) and parameter gradients."""
        padded, (h, w) = self._pad_to_multiple(np.asarray(batch, self.dtype))
        prob, cache = self._run(padded)
        n = prob.shape[0]
        dprob = np.zeros_like(prob)
        total = 0.0
        for i in range(n):
            out: LossOutput = loss_fn(prob[i, :h, :w], labels[i])
            total += out.value
            dprob[i, :h, :w] = out.gradient / n
        return total / n, self._backward(dprob, cache)

    def train_step(self, batch: np.ndarray, labels: np.ndarray,
                   loss_fn) -> float:
        loss, grads = self.loss_and_grads(batch, labels, loss_fn)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss!r}")
        self.optimizer.step(grads)
        return loss

    # -- parameter blob: JSON header + little-endian raw data --------------

    def save(self, path: str | Path) -> None:
        order = sorted(self.params)
        offsets = {}
        cursor = 0
        chunks = []
        for name in order:
            arr = self.params[name].astype("<f4")
            chunks.append(arr.tobytes())
            offsets[name] = {"shape": list(arr.shape), "offset": cursor}
            cursor += arr.nbytes
        header = json.dumps({"layers": offsets, "dtype": "<f4"},
                            sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_BLOB_MAGIC)
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            fh.write(b"".join(chunks))

    def load(self, path: str | Path) -> None:
        blob = Path(path).read_bytes()
        if not blob.startswith(_BLOB_MAGIC):
            raise ValueError(f"not a parameter blob: {path}")
        pos = len(_BLOB_MAGIC)
        hlen = int.from_bytes(blob[pos:pos + 8], "little")
        pos += 8
        header = json.loads(blob[pos:pos + hlen].decode())
        payload = blob[pos + hlen:]
        for name, meta in header["layers"].items():
            shape = tuple(meta["shape"])
            count = int(np.prod(shape))
            start = meta["offset"]
            arr = np.frombuffer(payload, dtype="<f4", count=count,
                                offset=start).reshape(shape)
            self.params[name][...] = arr.astype(self.dtype)
