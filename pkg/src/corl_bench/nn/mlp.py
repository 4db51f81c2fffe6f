"""Feed-forward networks: parameter container, forward pass, gradients.

Parameters of a network are the flat list [W0, b0, W1, b1, ...]; a
GradientSet mirrors that layout exactly. Per-layer activations are limited
to what the agents need: relu, identity, and tanh scaled by an action bound.
"""
from __future__ import annotations

import numpy as np

from .autodiff import NonFiniteLossError, Tensor

__all__ = ["Mlp", "GradientSet", "ShapeError", "mlp_forward", "compute_gradients"]

_ACTIVATIONS = ("relu", "identity", "tanh")


class ShapeError(ValueError):
    """Input or parameter shapes do not line up."""


class Mlp:
    """Fully-connected network with one activation tag per layer.

    dims        -- layer sizes, e.g. (4, 128, 128, 2)
    activations -- one tag per weight layer; defaults to relu on hidden
                   layers and identity on the output
    output_scale-- multiplies a tanh output layer (action bound)
    """

    def __init__(self, dims, activations=None, output_scale=1.0, rng=None,
                 dtype=np.float32):
        if len(dims) < 2:
            raise ShapeError("an Mlp needs at least an input and output dim")
        self.dims = tuple(int(d) for d in dims)
        if any(d <= 0 for d in self.dims):
            raise ShapeError(f"non-positive layer dim in {self.dims}")
        n_layers = len(self.dims) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise ShapeError("need exactly one activation per layer")
        for act in activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.activations = list(activations)
        self.output_scale = float(output_scale)
        self.dtype = np.dtype(dtype)
        self.params: list[np.ndarray] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype)
            b = rng.uniform(-bound, bound, size=(fan_out,)).astype(self.dtype)
            self.params.extend([w, b])

    # ------------------------------------------------------------ structure

    @property
    def input_dim(self):
        return self.dims[0]

    @property
    def output_dim(self):
        return self.dims[-1]

    def param_count(self):
        return sum(p.size for p in self.params)

    def copy(self):
        other = Mlp.__new__(Mlp)
        other.dims = self.dims
        other.activations = list(self.activations)
        other.output_scale = self.output_scale
        other.dtype = self.dtype
        other.params = [p.copy() for p in self.params]
        return other

    def set_params(self, params):
        if len(params) != len(self.params):
            raise ShapeError("parameter list length mismatch")
        for own, new in zip(self.params, params):
            if own.shape != new.shape:
                raise ShapeError(f"parameter shape {new.shape} != {own.shape}")
            own[...] = new

    def flat_params(self):
        return np.concatenate([p.ravel() for p in self.params])

    # -------------------------------------------------------------- forward

    def forward(self, x):
        """Plain numpy forward pass; accepts a vector or a batch."""
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ShapeError(
                f"input dim {x.shape[1]} does not match net input {self.input_dim}")
        h = x
        for i, act in enumerate(self.activations):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if act == "relu":
                h = np.maximum(h, 0.0)
            elif act == "tanh":
                h = np.tanh(h) * self.output_scale
        return h[0] if single else h

    def forward_tape(self, x, param_tensors):
        """Taped forward pass through externally supplied parameter Tensors."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise ShapeError(
                f"taped input must be (batch, {self.input_dim}), got {x.data.shape}")
        h = x
        for i, act in enumerate(self.activations):
            h = h @ param_tensors[2 * i] + param_tensors[2 * i + 1]
            if act == "relu":
                h = h.relu()
            elif act == "tanh":
                h = h.tanh() * self.output_scale
        return h

    def taped_params(self, requires_grad=True):
        return [Tensor(p, requires_grad=requires_grad) for p in self.params]


class GradientSet:
    """Per-parameter gradients, shape-congruent with an Mlp's params."""

    def __init__(self, arrays):
        self.arrays = list(arrays)

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays])

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays)

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(p) for p in net.params])

    @classmethod
    def from_flat(cls, vec, like):
        arrays = []
        offset = 0
        for p in like:
            n = p.size
            arrays.append(np.asarray(vec[offset:offset + n], dtype=p.dtype).reshape(p.shape))
            offset += n
        return cls(arrays)

    def congruent_with(self, net):
        return (len(self.arrays) == len(net.params)
                and all(a.shape == p.shape for a, p in zip(self.arrays, net.params)))


def mlp_forward(net: Mlp, x):
    """Evaluate `net` on `x` (vector in, vector out)."""
    return net.forward(x)


def compute_gradients(net: Mlp, loss_fn) -> GradientSet:
    """Differentiate a scalar loss w.r.t. `net`'s parameters.

    `loss_fn` receives a taped forward callable (batch in, Tensor out) and
    returns either a scalar loss Tensor or a per-sample loss Tensor, which is
    mean-reduced here. Non-finite losses are rejected; when the loss was
    per-sample the first offending batch index is reported.
    """
    ptensors = net.taped_params()

    def fwd(x):
        return net.forward_tape(x, ptensors)

    loss = loss_fn(fwd)
    vals = np.asarray(loss.data)
    if not np.all(np.isfinite(vals)):
        index = None
        if vals.size > 1:
            index = int(np.flatnonzero(~np.isfinite(vals.ravel()))[0])
        raise NonFiniteLossError(
            f"non-finite loss (batch index {index})", batch_index=index)
    if vals.size > 1:
        loss = loss.mean()
    loss.backward()
    grads = [pt.grad if pt.grad is not None else np.zeros_like(pt.data)
             for pt in ptensors]
    return GradientSet(grads)
