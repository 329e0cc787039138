"""Minimal from-scratch neural-network primitives on numpy arrays.

Every layer is a small object holding its parameters and the cache of its
last forward pass; ``backward`` consumes an upstream gradient and both
accumulates parameter gradients and returns the input gradient. There is
no tape: composite models chain ``backward`` calls explicitly in reverse
order, which keeps every gradient step inspectable and finite-difference
checkable.

Shapes are batch-first: images are (B, C, H, W), node features (B, N, C).

Conventions pinned here and relied on by the gradient tests:
  * ReLU derivative at exactly 0 is 0.
  * max-aggregations route gradient to the first (lowest-index) argmax.
  * parameters initialize uniform in [-a, a], a = 1/sqrt(fan_in), from a
    caller-supplied seeded generator.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Param",
    "Conv2d",
    "Linear",
    "relu",
    "relu_grad",
    "sigmoid",
    "upsample2x",
    "upsample2x_grad",
    "Adam",
    "save_checkpoint",
    "load_checkpoint",
    "assign_params",
    "gradient_check",
    "compare_gradients",
    "CHECKPOINT_MAGIC",
]


class Param:
    """A named parameter tensor with an accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0.0


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    # He-style bound: keeps activation variance roughly constant through
    # ReLU stacks; a plain 1/sqrt(fan_in) bound attenuates a 5-layer conv
    # stack ~10x and starves the bit heads of per-node signal.
    a = np.sqrt(6.0 / fan_in)
    return rng.uniform(-a, a, size=shape).astype(dtype)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def upsample2x(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x spatial upsample of (B, C, H, W)."""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2x_grad(dy: np.ndarray) -> np.ndarray:
    b, c, h2, w2 = dy.shape
    return dy.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


class Conv2d:
    """2D convolution (cross-correlation) with square kernel via im2col."""

    def __init__(self, name: str, c_in: int, c_out: int, ksize: int = 3,
                 stride: int = 1, pad: int | None = None, *,
                 rng: np.random.Generator, dtype=np.float64):
        if pad is None:
            pad = ksize // 2
        self.c_in, self.c_out = c_in, c_out
        self.ksize, self.stride, self.pad = ksize, stride, pad
        fan_in = c_in * ksize * ksize
        self.w = Param(f"{name}.w", _uniform_init(rng, (c_out, c_in, ksize, ksize), fan_in, dtype))
        self.b = Param(f"{name}.b", _uniform_init(rng, (c_out,), fan_in, dtype))
        self._cache = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def _im2col(self, xp: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
        b, c = xp.shape[:2]
        k, s = self.ksize, self.stride
        cols = np.empty((b, c, k, k, h_out, w_out), dtype=xp.dtype)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, ki, kj] = xp[:, :, ki:ki + s * h_out:s, kj:kj + s * w_out:s]
        return cols.reshape(b, c * k * k, h_out * w_out)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"expected (B, {self.c_in}, H, W), got {x.shape}")
        b, _, h, w = x.shape
        k, s, p = self.ksize, self.stride, self.pad
        h_out = (h + 2 * p - k) // s + 1
        w_out = (w + 2 * p - k) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = self._im2col(xp, h_out, w_out)
        wmat = self.w.value.reshape(self.c_out, -1)
        y = (wmat @ cols).reshape(b, self.c_out, h_out, w_out)
        y += self.b.value[None, :, None, None]
        self._cache = (cols, x.shape, (h_out, w_out))
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        cols, x_shape, (h_out, w_out) = self._cache
        b, _, h, w = x_shape
        k, s, p = self.ksize, self.stride, self.pad
        dy_flat = dy.reshape(b, self.c_out, h_out * w_out)
        # cols.transpose view is BLAS-compatible (one contiguous axis), so the
        # batched matmul avoids materializing any transposed copy.
        dw = np.matmul(dy_flat, cols.transpose(0, 2, 1)).sum(axis=0)
        self.w.grad += dw.reshape(self.w.value.shape)
        self.b.grad += dy_flat.sum(axis=(0, 2))
        wmat = self.w.value.reshape(self.c_out, -1)
        dcols = (wmat.T @ dy_flat).reshape(b, self.c_in, k, k, h_out, w_out)
        dxp = np.zeros((b, self.c_in, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, :, ki:ki + s * h_out:s, kj:kj + s * w_out:s] += dcols[:, :, ki, kj]
        return dxp[:, :, p:p + h, p:p + w] if p else dxp


class Linear:
    """Affine map on the trailing axis: y = x @ w.T + b."""

    def __init__(self, name: str, c_in: int, c_out: int, *,
                 rng: np.random.Generator, dtype=np.float64):
        self.c_in, self.c_out = c_in, c_out
        self.w = Param(f"{name}.w", _uniform_init(rng, (c_out, c_in), c_in, dtype))
        self.b = Param(f"{name}.b", _uniform_init(rng, (c_out,), c_in, dtype))
        self._cache = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.c_in:
            raise ValueError(f"expected trailing dim {self.c_in}, got {x.shape}")
        self._cache = x
        if self.c_out == 1:
            # Single-output matmuls take a GEMV path whose summation order
            # depends on the row position; einsum keeps per-row results
            # identical under row permutations (needed for the bitwise
            # equivariance guarantee).
            return np.einsum("...c,oc->...o", x, self.w.value) + self.b.value
        return x @ self.w.value.T + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._cache
        if x is None:
            raise RuntimeError("backward called before forward")
        x2 = x.reshape(-1, self.c_in)
        dy2 = dy.reshape(-1, self.c_out)
        self.w.grad += dy2.T @ x2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.w.value


class Adam:
    """Adam optimizer over a parameter list, bias-corrected."""

    def __init__(self, params: Iterable[Param], lr: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.value -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


CHECKPOINT_MAGIC = b"GPCKPT\x00\x01"
_CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: Iterable[Param]) -> None:
    """Write named tensors as little-endian float32 with a magic header."""
    params = list(params)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<B", p.value.ndim))
            fh.write(struct.pack(f"<{p.value.ndim}q", *p.value.shape))
            fh.write(p.value.astype("<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> float32 array mapping."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a gridpose checkpoint (bad magic)")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(4 * n_items), dtype="<f4").reshape(shape)
            out[name] = data.copy()
    return out


def assign_params(params: Iterable[Param], tensors: dict[str, np.ndarray]) -> None:
    """Load checkpoint tensors into live parameters by name."""
    for p in params:
        if p.name not in tensors:
            raise KeyError(f"checkpoint is missing tensor {p.name!r}")
        t = tensors[p.name]
        if tuple(t.shape) != tuple(p.value.shape):
            raise ValueError(f"shape mismatch for {p.name!r}: {t.shape} vs {p.value.shape}")
        p.value[...] = t.astype(p.value.dtype)


def gradient_check(fn: Callable[[np.ndarray], tuple[float, bytes]],
                   x0: np.ndarray, step: float = 1e-4
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences of a scalar function with kink filtering.

    ``fn`` maps a flat parameter vector to ``(loss, routing_signature)``
    where the signature encodes every data-dependent branch taken (ReLU
    masks, argmax picks). Coordinates whose +/- perturbations change the
    signature sit on a kink and are excluded from comparison.

    Returns:
        (numeric gradient, comparable mask) both flat like ``x0``.
    """
    _, base_sig = fn(x0)
    g = np.zeros_like(x0, dtype=np.float64)
    ok = np.ones(x0.size, dtype=bool)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += step
        xm = x0.copy()
        xm[i] -= step
        lp, sig_p = fn(xp)
        lm, sig_m = fn(xm)
        g[i] = (lp - lm) / (2.0 * step)
        if sig_p != base_sig or sig_m != base_sig:
            ok[i] = False
    return g, ok


def compare_gradients(analytic: np.ndarray, numeric: np.ndarray,
                      ok: np.ndarray, rel_tol: float = 1e-4,
                      floor: float = 1e-3) -> float:
    """Max relative error over comparable coordinates above the magnitude floor."""
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    scale = np.abs(a) + np.abs(n)
    use = ok & (scale > floor)
    if not use.any():
        return 0.0
    return float(np.max(np.abs(a[use] - n[use]) / scale[use]))
