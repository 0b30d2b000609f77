"""Reference forward/backward for the 9 -> 18 -> 9 projection MLP and a
single max-aggregated EdgeConv layer, in plain numpy float64."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import NeighborGraph

IN_DIM, HIDDEN_DIM, OUT_DIM = 9, 18, 9
ACTIVATIONS = ("relu", "tanh")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z):
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - np.tanh(z) ** 2


@dataclass
class MlpParams:
    w1: np.ndarray  # (18, 9)
    b1: np.ndarray  # (18,)
    w2: np.ndarray  # (9, 18)
    b2: np.ndarray  # (9,)
    activation: str = "relu"
    seed: Optional[int] = None

    def __post_init__(self):
        shapes = {"w1": (HIDDEN_DIM, IN_DIM), "b1": (HIDDEN_DIM,),
                  "w2": (OUT_DIM, HIDDEN_DIM), "b2": (OUT_DIM,)}
        for name, shape in shapes.items():
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")
            setattr(self, name, a)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def random(cls, seed: int, activation: str = "relu") -> "MlpParams":
        """Seeded uniform[-0.5, 0.5] initialization (test fixtures only)."""
        rng = np.random.default_rng(seed)
        u = lambda *shape: rng.uniform(-0.5, 0.5, size=shape)
        return cls(u(HIDDEN_DIM, IN_DIM), u(HIDDEN_DIM), u(OUT_DIM, HIDDEN_DIM), u(OUT_DIM),
                   activation, seed)

    @classmethod
    def zeros(cls, activation: str = "relu") -> "MlpParams":
        return cls(np.zeros((HIDDEN_DIM, IN_DIM)), np.zeros(HIDDEN_DIM),
                   np.zeros((OUT_DIM, HIDDEN_DIM)), np.zeros(OUT_DIM), activation)


@dataclass
class MlpGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    p: np.ndarray


def _check_input(p, dim):
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != dim:
        raise ValueError(f"input must have trailing dimension {dim}, got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite input")
    return p


def mlp_forward(params: MlpParams, p) -> np.ndarray:
    """``w2 @ act(w1 @ p + b1) + b2``; ``p`` may be one 9-vector or (N, 9)."""
    p = _check_input(p, IN_DIM)
    h = _act(params.activation, p @ params.w1.T + params.b1)
    return h @ params.w2.T + params.b2


def mlp_backward(params: MlpParams, p, upstream) -> MlpGrads:
    """Gradients of ``upstream . mlp_forward(params, p)`` for a single 9-vector."""
    p = _check_input(p, IN_DIM)
    g = np.asarray(upstream, dtype=np.float64).reshape(OUT_DIM)
    z = params.w1 @ p + params.b1
    h = _act(params.activation, z)
    dh = params.w2.T @ g
    dz = dh * _act_grad(params.activation, z)
    return MlpGrads(
        w1=np.outer(dz, p),
        b1=dz,
        w2=np.outer(g, h),
        b2=g.copy(),
        p=params.w1.T @ dz,
    )


@dataclass
class EdgeConvParams:
    """``weight`` is ``(out_dim, 2 * in_dim)``: the first ``in_dim`` columns
    act on x_i, the rest on x_j - x_i."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"
    seed: Optional[int] = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[1] % 2:
            raise ValueError("weight must be (out_dim, 2 * in_dim)")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias must have length out_dim")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1] // 2

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def random(cls, in_dim: int, out_dim: int, seed: int, activation: str = "relu"):
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-0.5, 0.5, (out_dim, 2 * in_dim)),
                   rng.uniform(-0.5, 0.5, out_dim), activation, seed)


def edgeconv_forward(params: EdgeConvParams, features, graph: NeighborGraph) -> np.ndarray:
    """``out_i = max_j act(W [x_i, x_j - x_i] + b)`` over out-neighbors j."""
    x = _check_input(features, params.in_dim)
    if x.shape[0] != graph.n_vertices:
        raise ValueError("feature rows must match graph vertices")
    isolated = np.flatnonzero(graph.degree == 0)
    if isolated.size:
        raise ValueError(f"vertex {int(isolated[0])} has no out-neighbors")
    w_self = params.weight[:, : params.in_dim]
    w_edge = params.weight[:, params.in_dim:]
    k = graph.targets.shape[1]
    mask = np.arange(k)[None, :] < graph.degree[:, None]
    safe = np.where(mask, graph.targets, np.arange(graph.n_vertices)[:, None])
    offsets = x[safe] - x[:, None, :]
    # fixed-order accumulation: each edge response is bitwise independent of
    # where the edge sits in the table (BLAS blocking is not)
    self_part = np.zeros((x.shape[0], params.out_dim))
    resp = np.zeros(offsets.shape[:2] + (params.out_dim,))
    for d in range(params.in_dim):
        self_part += x[:, d, None] * w_self[:, d]
        resp += offsets[:, :, d, None] * w_edge[:, d]
    resp = self_part[:, None, :] + resp + params.bias
    resp = _act(params.activation, resp)
    resp = np.where(mask[..., None], resp, -np.inf)
    return resp.max(axis=1)


# ---------------------------------------------------------------------------
# parameter files: 3 header lines, then one "name,rows,cols,v..." line per
# row-major matrix (vectors have cols = 1)


def _write_params(path, kind, shape, activation, seed, arrays):
    lines = [
        f"shape,{kind}," + ",".join(str(s) for s in shape),
        f"activation,{activation}",
        f"seed,{'' if seed is None else seed}",
    ]
    for name, a in arrays:
        rows, cols = (a.shape[0], 1) if a.ndim == 1 else a.shape
        lines.append(f"{name},{rows},{cols}," + ",".join(repr(float(v)) for v in a.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_params(path):
    lines = Path(path).read_text().splitlines()
    if len(lines) < 3 or not lines[0].startswith("shape,"):
        raise ValueError(f"{path}: missing parameter header")
    shape = lines[0].split(",")
    activation = lines[1].split(",", 1)[1]
    seed_txt = lines[2].split(",", 1)[1]
    seed = int(seed_txt) if seed_txt else None
    arrays = {}
    for lineno, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        name, rows, cols, *vals = line.split(",")
        rows, cols = int(rows), int(cols)
        if len(vals) != rows * cols:
            raise ValueError(f"{path}:{lineno}: expected {rows * cols} values for {name}")
        a = np.array([float(v) for v in vals])
        arrays[name] = a if cols == 1 else a.reshape(rows, cols)
    return shape[1], [int(s) for s in shape[2:]], activation, seed, arrays


def save_mlp_params(path, params: MlpParams) -> None:
    _write_params(path, "mlp", (IN_DIM, HIDDEN_DIM, OUT_DIM), params.activation, params.seed,
                  [("w1", params.w1), ("b1", params.b1), ("w2", params.w2), ("b2", params.b2)])


def load_mlp_params(path) -> MlpParams:
    kind, shape, activation, seed, arrays = _read_params(path)
    if kind != "mlp" or shape != [IN_DIM, HIDDEN_DIM, OUT_DIM]:
        raise ValueError(f"{path}: not a {IN_DIM}-{HIDDEN_DIM}-{OUT_DIM} mlp parameter file")
    return MlpParams(arrays["w1"], arrays["b1"], arrays["w2"], arrays["b2"], activation, seed)


def save_edgeconv_params(path, params: EdgeConvParams) -> None:
    _write_params(path, "edgeconv", (params.in_dim, params.out_dim), params.activation,
                  params.seed, [("weight", params.weight), ("bias", params.bias)])


def load_edgeconv_params(path) -> EdgeConvParams:
    kind, shape, activation, seed, arrays = _read_params(path)
    if kind != "edgeconv":
        raise ValueError(f"{path}: not an edgeconv parameter file")
    p = EdgeConvParams(arrays["weight"], arrays["bias"], activation, seed)
    if [p.in_dim, p.out_dim] != shape:
        raise ValueError(f"{path}: header shape {shape} disagrees with matrices")
    return p
