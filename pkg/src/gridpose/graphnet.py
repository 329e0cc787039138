"""Graph network over the keypoint k-NN graph, plus the training losses.

The per-layer edge operation follows the dynamic-graph convolution recipe:
for each directed edge (i, j) the edge feature is

    e_ij = ReLU(theta @ (f_j - f_i) + phi @ f_i)

and node i's updated feature is the channelwise max of e_ij over its
out-edges. The graph itself is static (k-NN in 3D object space), so
``theta @ f`` and ``phi @ f`` are computed once per node and gathered per
edge.

Backward passes are exact: the max routes gradient to the first (lowest
edge index) argmax, ReLU's derivative at 0 is 0, and probabilities are
clamped to [1e-7, 1 - 1e-7] inside every log so losses stay finite.

Node-feature arrays are (B, N, C) batch-first; single-sample (N, C) inputs
are accepted and returned at the same rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import BinaryCodeSet
from .geometry import KnnGraph
from .nnops import Linear, Param, relu, relu_grad, sigmoid, _uniform_init

__all__ = [
    "EdgeConvLayer",
    "StagePlan",
    "LossBreakdown",
    "edgeconv_forward",
    "edgeconv_backward",
    "InitEmbedding",
    "MlpHead",
    "Stage0Predictor",
    "RefinementStage",
    "loss_v",
    "loss_v_grad",
    "loss_bits",
    "loss_bits_grad",
    "loss_xy",
    "loss_mask",
    "loss_mask_grad",
    "total_loss",
    "EPS",
]

EPS = 1e-7


@dataclass(frozen=True)
class StagePlan:
    """Layer counts for the progressive predictor."""

    l0: int = 2
    lj: int = 3
    stages: int = 3
    head_hidden: int = 64

    def __post_init__(self):
        if min(self.l0, self.lj, self.stages, self.head_hidden) < 1:
            raise ValueError("all stage-plan counts must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    """The four loss parts; ``total`` is their exact sum."""

    l_v: float
    l_x: float
    l_y: float
    l_mask: float
    total: float

    @staticmethod
    def of(l_v: float, l_x: float, l_y: float, l_mask: float) -> "LossBreakdown":
        return LossBreakdown(l_v, l_x, l_y, l_mask, l_v + l_x + l_y + l_mask)


class EdgeConvLayer:
    """Filter weights theta, phi of one edge-convolution layer."""

    def __init__(self, name: str, c_in: int, c_out: int, *,
                 rng: np.random.Generator, dtype=np.float64):
        self.c_in, self.c_out = c_in, c_out
        self.theta = Param(f"{name}.theta", _uniform_init(rng, (c_out, c_in), c_in, dtype))
        self.phi = Param(f"{name}.phi", _uniform_init(rng, (c_out, c_in), c_in, dtype))
        self._cache = None

    def params(self) -> list[Param]:
        return [self.theta, self.phi]

    def routing(self) -> list[np.ndarray]:
        if self._cache is None:
            return []
        _, mask, arg, _ = self._cache
        return [mask.astype(np.uint8), arg.astype(np.int32)]


def _promote(f: np.ndarray) -> tuple[np.ndarray, bool]:
    f = np.asarray(f)
    if f.ndim == 2:
        return f[None], True
    if f.ndim != 3:
        raise ValueError(f"node features must be (N, C) or (B, N, C), got {f.shape}")
    return f, False


def edgeconv_forward(f: np.ndarray, graph: KnnGraph, layer: EdgeConvLayer) -> np.ndarray:
    """One edge-convolution pass; caches state on the layer for backward."""
    f, squeeze = _promote(f)
    if f.shape[1] != graph.node_count:
        raise ValueError(f"feature rows {f.shape[1]} != graph nodes {graph.node_count}")
    if f.shape[2] != layer.c_in:
        raise ValueError(f"feature width {f.shape[2]} != layer input {layer.c_in}")
    g_t = f @ layer.theta.value.T
    g_p = f @ layer.phi.value.T
    nbr = graph.neighbors
    e = g_t[:, nbr]
    e -= g_t[:, :, None, :]
    e += g_p[:, :, None, :]
    # (B, N, C, k) layout keeps the max axis contiguous.
    ec = np.ascontiguousarray(e.transpose(0, 1, 3, 2))
    mask = ec > 0.0
    np.maximum(ec, 0.0, out=ec)
    arg = np.argmax(ec, axis=3)
    out = np.take_along_axis(ec, arg[..., None], axis=3)[..., 0]
    layer._cache = (f, mask, arg, graph)
    return out[0] if squeeze else out


def edgeconv_backward(d_out: np.ndarray, layer: EdgeConvLayer
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of :func:`edgeconv_forward` w.r.t. features, theta, phi.

    Parameter gradients are both returned and accumulated into the layer's
    ``Param.grad`` buffers.
    """
    if layer._cache is None:
        raise RuntimeError("edgeconv_backward called with no cached forward state")
    f, mask, arg, graph = layer._cache
    d_out, squeeze = _promote(d_out)
    b, n, c, k = mask.shape
    d_ec = np.zeros(mask.shape, dtype=d_out.dtype)
    np.put_along_axis(d_ec, arg[..., None], d_out[..., None], axis=3)
    d_ec *= mask
    d_sum = d_ec.sum(axis=3)
    # Scatter per-edge grads into their target nodes via sorted segments
    # (equivalent to add.at over the neighbor indices, but vectorized).
    order, starts, targets = graph.scatter_plan()
    d_flat = d_ec.transpose(0, 1, 3, 2).reshape(b, n * k, c)[:, order]
    d_gt = np.zeros((b, n, c), dtype=d_out.dtype)
    d_gt[:, targets] = np.add.reduceat(d_flat, starts, axis=1)
    d_gt -= d_sum
    d_gp = d_sum
    d_theta = np.einsum("bnc,bnd->cd", d_gt, f)
    d_phi = np.einsum("bnc,bnd->cd", d_gp, f)
    layer.theta.grad += d_theta
    layer.phi.grad += d_phi
    d_f = d_gt @ layer.theta.value + d_gp @ layer.phi.value
    return (d_f[0] if squeeze else d_f), d_theta, d_phi


class InitEmbedding:
    """Coarse image features -> per-keypoint embeddings.

    Flattens (B, C0, 2^d0, 2^d0) to (B, C0, S) with S = 2^(2*d0) and maps
    the channel axis to N outputs, so keypoint n's embedding keeps the S
    spatial positions: out[b, n, s] = sum_c w[n, c] * f[b, c, s] + bias[n].
    """

    def __init__(self, name: str, n_nodes: int, c_in: int, *,
                 rng: np.random.Generator, dtype=np.float64):
        self.n_nodes, self.c_in = n_nodes, c_in
        self.w = Param(f"{name}.w", _uniform_init(rng, (n_nodes, c_in), c_in, dtype))
        self.b = Param(f"{name}.b", _uniform_init(rng, (n_nodes,), c_in, dtype))
        self._cache = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, f0: np.ndarray) -> np.ndarray:
        if f0.ndim == 3:
            f0 = f0[None]
        b, c, h, w = f0.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} channels, got {c}")
        flat = f0.reshape(b, c, h * w)
        self._cache = (flat, f0.shape)
        return np.einsum("nc,bcs->bns", self.w.value, flat) + self.b.value[None, :, None]

    def backward(self, d_emb: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        flat, shape = self._cache
        self.w.grad += np.einsum("bns,bcs->nc", d_emb, flat)
        self.b.grad += d_emb.sum(axis=(0, 2))
        d_flat = np.einsum("nc,bns->bcs", self.w.value, d_emb)
        return d_flat.reshape(shape)


class MlpHead:
    """Shared two-layer per-node MLP with sigmoid outputs in [0, 1]."""

    def __init__(self, name: str, c_in: int, hidden: int, n_out: int, *,
                 rng: np.random.Generator, dtype=np.float64):
        self.fc1 = Linear(f"{name}.fc1", c_in, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(f"{name}.fc2", hidden, n_out, rng=rng, dtype=dtype)
        self._cache = None

    def params(self) -> list[Param]:
        return self.fc1.params() + self.fc2.params()

    def forward(self, g: np.ndarray) -> np.ndarray:
        z1 = self.fc1.forward(g)
        h = relu(z1)
        p = sigmoid(self.fc2.forward(h))
        self._cache = (z1 > 0.0, p)
        return p

    def backward(self, d_p: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        mask, p = self._cache
        d_z2 = d_p * p * (1.0 - p)
        d_h = self.fc2.backward(d_z2)
        return self.fc1.backward(relu_grad(d_h, mask))

    def routing(self) -> list[np.ndarray]:
        return [self._cache[0].astype(np.uint8)] if self._cache else []


class Stage0Predictor:
    """L0 edge convolutions then heads for b_v and the first d0 bits."""

    def __init__(self, width: int, d0: int, plan: StagePlan, *,
                 rng: np.random.Generator, dtype=np.float64):
        self.layers = [EdgeConvLayer(f"stage0.ec{i}", width, width, rng=rng, dtype=dtype)
                       for i in range(plan.l0)]
        self.head_v = MlpHead("stage0.head_v", width, plan.head_hidden, 1, rng=rng, dtype=dtype)
        self.head_x = MlpHead("stage0.head_x", width, plan.head_hidden, d0, rng=rng, dtype=dtype)
        self.head_y = MlpHead("stage0.head_y", width, plan.head_hidden, d0, rng=rng, dtype=dtype)
        self._heads = (self.head_v, self.head_x, self.head_y)

    def params(self) -> list[Param]:
        out = [p for l in self.layers for p in l.params()]
        for h in self._heads:
            out += h.params()
        return out

    def forward(self, g: np.ndarray, graph: KnnGraph
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns (p_v (B,N), p_x (B,N,d0), p_y (B,N,d0), updated features)."""
        for layer in self.layers:
            g = edgeconv_forward(g, graph, layer)
        return (self.head_v.forward(g)[..., 0], self.head_x.forward(g),
                self.head_y.forward(g), g)

    def backward(self, d_pv: np.ndarray | None, d_px: np.ndarray | None,
                 d_py: np.ndarray | None, d_g: np.ndarray | None) -> np.ndarray:
        d = d_g
        if d_pv is not None:
            dd = self.head_v.backward(d_pv[..., None])
            d = dd if d is None else d + dd
        if d_px is not None:
            dd = self.head_x.backward(d_px)
            d = dd if d is None else d + dd
        if d_py is not None:
            dd = self.head_y.backward(d_py)
            d = dd if d is None else d + dd
        for layer in reversed(self.layers):
            d, _, _ = edgeconv_backward(d, layer)
        return d

    def routing(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += l.routing()
        for h in self._heads:
            out += h.routing()
        return out


class RefinementStage:
    """Fuse local image patches, run Lj edge convolutions, emit two bits.

    The patch vector of each node is concatenated to its features and
    projected back to the working width before the edge convolutions.
    """

    def __init__(self, stage: int, width: int, patch_dim: int, plan: StagePlan, *,
                 rng: np.random.Generator, dtype=np.float64):
        name = f"refine{stage}"
        self.width = width
        self.patch_dim = patch_dim
        self.project = Linear(f"{name}.project", width + patch_dim, width, rng=rng, dtype=dtype)
        self.layers = [EdgeConvLayer(f"{name}.ec{i}", width, width, rng=rng, dtype=dtype)
                       for i in range(plan.lj)]
        self.head_x = MlpHead(f"{name}.head_x", width, plan.head_hidden, 1, rng=rng, dtype=dtype)
        self.head_y = MlpHead(f"{name}.head_y", width, plan.head_hidden, 1, rng=rng, dtype=dtype)
        self._proj_mask = None

    def params(self) -> list[Param]:
        out = self.project.params()
        out += [p for l in self.layers for p in l.params()]
        out += self.head_x.params() + self.head_y.params()
        return out

    def forward(self, g: np.ndarray, patches: np.ndarray, graph: KnnGraph
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (p_x (B,N), p_y (B,N), updated features)."""
        if patches.shape[-1] != self.patch_dim:
            raise ValueError(f"patch width {patches.shape[-1]} != expected {self.patch_dim}")
        z = self.project.forward(np.concatenate([g, patches], axis=-1))
        self._proj_mask = z > 0.0
        g = relu(z)
        for layer in self.layers:
            g = edgeconv_forward(g, graph, layer)
        return self.head_x.forward(g)[..., 0], self.head_y.forward(g)[..., 0], g

    def backward(self, d_px: np.ndarray | None, d_py: np.ndarray | None,
                 d_g: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        """Returns (d_features, d_patches)."""
        d = d_g
        if d_px is not None:
            dd = self.head_x.backward(d_px[..., None])
            d = dd if d is None else d + dd
        if d_py is not None:
            dd = self.head_y.backward(d_py[..., None])
            d = dd if d is None else d + dd
        for layer in reversed(self.layers):
            d, _, _ = edgeconv_backward(d, layer)
        d_cat = self.project.backward(relu_grad(d, self._proj_mask))
        return d_cat[..., :-self.patch_dim], d_cat[..., -self.patch_dim:]

    def routing(self) -> list[np.ndarray]:
        out = [] if self._proj_mask is None else [self._proj_mask.astype(np.uint8)]
        for l in self.layers:
            out += l.routing()
        out += self.head_x.routing() + self.head_y.routing()
        return out


# --- losses -----------------------------------------------------------------

def _bce(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    pc = np.clip(p, EPS, 1.0 - EPS)
    return -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))


def _bce_grad(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    pc = np.clip(p, EPS, 1.0 - EPS)
    g = -t / pc + (1.0 - t) / (1.0 - pc)
    g[(p < EPS) | (p > 1.0 - EPS)] = 0.0
    return g


def loss_v(p_v: np.ndarray, t_v: np.ndarray) -> float:
    """Binary cross-entropy of the visibility bit, averaged over keypoints."""
    p_v = np.atleast_2d(p_v)
    t_v = np.atleast_2d(t_v).astype(np.float64)
    return float(_bce(p_v, t_v).sum() / p_v.size)


def loss_v_grad(p_v: np.ndarray, t_v: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(p_v)
    g = _bce_grad(p, np.atleast_2d(t_v).astype(np.float64)) / p.size
    return g.reshape(np.shape(p_v))


def loss_bits(p: np.ndarray, t: np.ndarray, visible: np.ndarray) -> tuple[float, int]:
    """Per-bit BCE over keypoints inside the RoI, normalized by d * N_I.

    Samples with no inside keypoint contribute 0. Returns the loss and the
    smallest per-sample inside count (0 signals the empty-mask case).
    """
    p, _ = _promote(p)
    t, _ = _promote(np.asarray(t, dtype=np.float64))
    vis = np.atleast_2d(visible).astype(bool)
    d = p.shape[2]
    per = _bce(p, t).sum(axis=2) * vis
    n_in = vis.sum(axis=1)
    safe = np.maximum(n_in, 1)
    per_sample = per.sum(axis=1) / (d * safe)
    return float(per_sample.mean()), int(n_in.min())


def loss_bits_grad(p: np.ndarray, t: np.ndarray, visible: np.ndarray) -> np.ndarray:
    pb, _ = _promote(p)
    tb, _ = _promote(np.asarray(t, dtype=np.float64))
    vis = np.atleast_2d(visible).astype(bool)
    d = pb.shape[2]
    n_in = vis.sum(axis=1)
    safe = np.maximum(n_in, 1)
    g = _bce_grad(pb, tb) * vis[:, :, None]
    g /= (d * safe * pb.shape[0])[:, None, None]
    return g.reshape(np.shape(p))


def loss_xy(p_x: np.ndarray, p_y: np.ndarray, target: BinaryCodeSet,
            t_v: np.ndarray | None = None) -> tuple[float, float, bool]:
    """Index-code losses (L_x, L_y) plus an empty-mask flag."""
    vis = target.b_v if t_v is None else t_v
    lx, nx = loss_bits(p_x, target.b_x, vis)
    ly, ny = loss_bits(p_y, target.b_y, vis)
    return lx, ly, min(nx, ny) == 0


def loss_mask(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean absolute difference between sigmoid(logits) and binary targets."""
    p = sigmoid(np.asarray(logits, dtype=np.float64))
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {t.shape}")
    return float(np.abs(p - t).mean())


def loss_mask_grad(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    p = sigmoid(np.asarray(logits, dtype=np.float64))
    t = np.asarray(targets, dtype=np.float64)
    return np.sign(p - t) * p * (1.0 - p) / p.size


def total_loss(l_v: float, l_x: float, l_y: float, l_mask: float) -> LossBreakdown:
    return LossBreakdown.of(l_v, l_x, l_y, l_mask)
