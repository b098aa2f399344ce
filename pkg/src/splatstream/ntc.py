"""Neural transformation cache: hash-grid encoding + small MLP decoder.

Maps a Gaussian's world-space mean to a 7-vector: a translation d_mu (3) and
an unnormalized rotation quaternion d_q (4). Features come from L
multi-resolution voxel grids whose corners live in learnable hash tables;
the decoder is a tiny ReLU MLP trained with Adam. All backprop is manual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .losses import warmup_loss
from .optim import Adam

__all__ = ["HashGridConfig", "NeuralTransformationCache", "warmup_train"]

# fixed primes of the standard spatial-hash scheme; the first coordinate
# passes through unmultiplied
HASH_PRIMES = (1, 2654435761, 805459861)

_CORNERS = np.array(
    [[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=np.int64
)


@dataclass(frozen=True)
class HashGridConfig:
    n_levels: int = 16
    n_features: int = 4
    table_size_log2: int = 15
    base_resolution: int = 16
    growth_factor: float = 32.0 ** (1.0 / 15.0)  # finest ~512 for 16 levels
    aabb_min: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    aabb_max: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if self.n_levels < 1 or self.n_features < 1:
            raise DataError("hash grid needs at least one level and one feature")
        if self.growth_factor < 1.0:
            raise DataError("growth_factor must be >= 1")
        lo = np.asarray(self.aabb_min, dtype=np.float64)
        hi = np.asarray(self.aabb_max, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,) or not np.all(lo < hi):
            raise DataError("aabb_min must be componentwise below aabb_max")

    @property
    def table_size(self) -> int:
        return 1 << self.table_size_log2

    def resolution(self, level: int) -> int:
        return int(np.floor(self.base_resolution * self.growth_factor**level))

    @staticmethod
    def growth_for(base: int, finest: int, n_levels: int) -> float:
        if n_levels <= 1:
            return 1.0
        return float((finest / base) ** (1.0 / (n_levels - 1)))


@dataclass
class EncodeContext:
    """Gather indices and trilinear weights, reusable across iterations when
    the input means are frozen (the per-frame stage-1 situation)."""

    corner_idx: np.ndarray  # (B, L, 8) int64 table rows
    corner_w: np.ndarray  # (B, L, 8)
    touched: list = field(default_factory=list)  # per level: unique rows


@dataclass
class ForwardContext:
    encode: EncodeContext
    features: np.ndarray  # (B, L*d) MLP input
    hidden: list  # post-ReLU activations per hidden layer


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class NeuralTransformationCache:
    def __init__(
        self,
        grid: HashGridConfig = HashGridConfig(),
        hidden_layers: int = 2,
        hidden_dim: int = 64,
        output_init: str = "identity",
        seed: int = 0,
    ) -> None:
        if output_init not in ("identity", "random"):
            raise DataError(f"unknown output_init {output_init!r}")
        self.grid = grid
        self.hidden_layers = hidden_layers
        self.hidden_dim = hidden_dim
        self.output_init = output_init
        rng = np.random.default_rng(seed)

        self.tables = rng.uniform(
            -1e-4, 1e-4, size=(grid.n_levels, grid.table_size, grid.n_features)
        )
        in_dim = grid.n_levels * grid.n_features
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        dims = [in_dim] + [hidden_dim] * hidden_layers
        for a, b in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (a + b))
            self.weights.append(rng.uniform(-bound, bound, size=(a, b)))
            self.biases.append(np.zeros(b))
        if output_init == "identity":
            # exact identity transform out of the box: d_mu = 0 and d_q the
            # identity quaternion via the w-component bias
            self.weights.append(np.zeros((dims[-1], 7)))
            out_bias = np.zeros(7)
            out_bias[3] = 1.0
            self.biases.append(out_bias)
        else:
            bound = np.sqrt(6.0 / (dims[-1] + 7))
            self.weights.append(rng.uniform(-bound, bound, size=(dims[-1], 7)))
            self.biases.append(rng.normal(scale=0.1, size=7))

        # keep parameters on the float32 lattice from the start: every
        # serialization boundary quantizes, and idempotence there makes
        # live training and stream replay bit-identical
        self.quantize_float32()
        self.adam = Adam(self._param_dict())

    # ---- parameter plumbing ----
    def _param_dict(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for level in range(self.grid.n_levels):
            params[f"table_{level}"] = self.tables[level]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"w_{i}"] = w
            params[f"b_{i}"] = b
        return params

    def get_params(self) -> dict[str, np.ndarray]:
        """Deep copy of all learnable arrays."""
        return {k: v.copy() for k, v in self._param_dict().items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        live = self._param_dict()
        if set(params) != set(live):
            raise DataError("parameter snapshot does not match cache layout")
        for k, v in live.items():
            v[:] = params[k]

    def quantize_float32(self) -> None:
        """Round every parameter through float32 (serialization boundary)."""
        for v in self._param_dict().values():
            v[:] = v.astype(np.float32).astype(np.float64)

    def reset_adam(self) -> None:
        self.adam.reset()

    # ---- encoding ----
    def encode(self, x: np.ndarray) -> tuple[np.ndarray, EncodeContext]:
        """Features (B, L*d) for world points (B, 3) inside the AABB."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        lo = np.asarray(self.grid.aabb_min)
        hi = np.asarray(self.grid.aabb_max)
        xn = (x - lo) / (hi - lo)
        if xn.size and (np.min(xn) < -1e-9 or np.max(xn) > 1.0 + 1e-9):
            raise DataError("point outside the hash grid bounding box")
        xn = np.clip(xn, 0.0, 1.0)

        batch = len(x)
        n_levels = self.grid.n_levels
        idx_all = np.empty((batch, n_levels, 8), dtype=np.int64)
        w_all = np.empty((batch, n_levels, 8))
        touched = []
        for level in range(n_levels):
            res = self.grid.resolution(level)
            pos = xn * res
            c0 = np.minimum(np.floor(pos), res - 1).astype(np.int64)
            frac = pos - c0
            corners = c0[:, None, :] + _CORNERS[None, :, :]  # (B, 8, 3)
            t = np.where(
                _CORNERS[None, :, :].astype(bool), frac[:, None, :], 1.0 - frac[:, None, :]
            )
            w_all[:, level] = t.prod(axis=2)
            idx_all[:, level] = self._corner_index(corners, res)
            touched.append(np.unique(idx_all[:, level]))

        ctx = EncodeContext(corner_idx=idx_all, corner_w=w_all, touched=touched)
        return self.gather_features(ctx), ctx

    def _corner_index(self, corners: np.ndarray, res: int) -> np.ndarray:
        """Table rows for integer corner coordinates (..., 3) at a level."""
        size = self.grid.table_size
        if (res + 1) ** 3 <= size:
            stride = res + 1
            return corners[..., 0] + stride * (corners[..., 1] + stride * corners[..., 2])
        h = (
            corners[..., 0] * HASH_PRIMES[0]
            ^ corners[..., 1] * HASH_PRIMES[1]
            ^ corners[..., 2] * HASH_PRIMES[2]
        )
        return h % size

    def gather_features(self, ctx: EncodeContext) -> np.ndarray:
        """Interpolated features from a cached context against the live
        tables; this is what makes frozen-mean retraining cheap."""
        batch = ctx.corner_idx.shape[0]
        n_levels = self.grid.n_levels
        feats = np.empty((batch, n_levels, self.grid.n_features))
        for level in range(n_levels):
            corner_feats = self.tables[level][ctx.corner_idx[:, level]]  # (B, 8, d)
            feats[:, level] = np.einsum(
                "bk,bkd->bd", ctx.corner_w[:, level], corner_feats
            )
        return feats.reshape(batch, -1)

    # ---- decoder ----
    def forward(
        self, mu: np.ndarray, encode_ctx: EncodeContext | None = None
    ) -> tuple[np.ndarray, np.ndarray, ForwardContext]:
        """(d_mu (B,3), d_q (B,4), context). Pass a cached EncodeContext to
        skip re-hashing frozen means."""
        mu = np.asarray(mu, dtype=np.float64).reshape(-1, 3)
        if len(mu) == 0:
            ctx = ForwardContext(
                encode=EncodeContext(
                    corner_idx=np.zeros((0, self.grid.n_levels, 8), dtype=np.int64),
                    corner_w=np.zeros((0, self.grid.n_levels, 8)),
                    touched=[np.empty(0, dtype=np.int64)] * self.grid.n_levels,
                ),
                features=np.zeros((0, self.grid.n_levels * self.grid.n_features)),
                hidden=[],
            )
            return np.zeros((0, 3)), np.zeros((0, 4)), ctx
        if encode_ctx is None:
            features, encode_ctx = self.encode(mu)
        else:
            features = self.gather_features(encode_ctx)

        hidden = []
        z = features
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = _relu(z @ w + b)
            hidden.append(z)
        out = z @ self.weights[-1] + self.biases[-1]
        ctx = ForwardContext(encode=encode_ctx, features=features, hidden=hidden)
        return out[:, :3], out[:, 3:], ctx

    def backward(
        self, ctx: ForwardContext, grad_d_mu: np.ndarray, grad_d_q: np.ndarray
    ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        """Gradients for every parameter array, plus the touched-row map.

        Hash-table gradients are dense arrays with nonzero rows only where
        the batch actually interpolated.
        """
        grad_out = np.concatenate(
            [
                np.asarray(grad_d_mu, dtype=np.float64),
                np.asarray(grad_d_q, dtype=np.float64),
            ],
            axis=1,
        )
        grads: dict[str, np.ndarray] = {}
        touched: dict[str, np.ndarray] = {}

        layer_inputs = [ctx.features] + ctx.hidden  # input to layer i
        delta = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            x_in = layer_inputs[i]
            grads[f"w_{i}"] = x_in.T @ delta
            grads[f"b_{i}"] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * (ctx.hidden[i - 1] > 0)

        # delta is now dL/d(features), shape (B, L*d)
        batch = delta.shape[0]
        n_levels, d = self.grid.n_levels, self.grid.n_features
        delta = delta.reshape(batch, n_levels, d)
        for level in range(n_levels):
            g = np.zeros_like(self.tables[level])
            contrib = ctx.encode.corner_w[:, level][..., None] * delta[:, level][:, None, :]
            np.add.at(g, ctx.encode.corner_idx[:, level].ravel(), contrib.reshape(-1, d))
            grads[f"table_{level}"] = g
            touched[f"table_{level}"] = ctx.encode.touched[level]
        return grads, touched

    def adam_step(
        self, grads: dict[str, np.ndarray], lr: float, touched: dict[str, np.ndarray]
    ) -> None:
        self.adam.step(grads, lr, touched)


def warmup_train(
    cache: NeuralTransformationCache,
    initial_means: np.ndarray,
    noise_sigma: float,
    iterations: int,
    lr: float = 0.002,
    batch_size: int = 65536,
    seed: int = 0,
) -> tuple[dict[str, np.ndarray], list[float]]:
    """Pull the cache toward the identity transform on noisy scene points.

    Trains on batches of initial means plus Gaussian jitter, clamped to the
    AABB. Returns (parameter snapshot quantized through float32, per-iteration
    loss history); the cache itself is left holding the snapshot and with
    fresh optimizer state, ready to be reused as the start of every frame.
    """
    means = np.asarray(initial_means, dtype=np.float64).reshape(-1, 3)
    if len(means) == 0:
        raise DataError("warmup_train needs at least one mean")
    rng = np.random.default_rng(seed)
    lo = np.asarray(cache.grid.aabb_min)
    hi = np.asarray(cache.grid.aabb_max)

    history: list[float] = []
    for _ in range(iterations):
        take = min(batch_size, len(means))
        sel = rng.choice(len(means), size=take, replace=False)
        batch = means[sel] + rng.normal(scale=noise_sigma, size=(take, 3))
        batch = np.clip(batch, lo, hi)
        d_mu, d_q, ctx = cache.forward(batch)
        loss, g_mu, g_q = warmup_loss(d_mu, d_q)
        history.append(loss)
        grads, touched = cache.backward(ctx, g_mu, g_q)
        cache.adam_step(grads, lr, touched)

    cache.quantize_float32()
    cache.reset_adam()
    return cache.get_params(), history
