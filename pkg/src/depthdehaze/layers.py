"""Parameter containers and the small layer vocabulary built on autodiff.

Parameters live in plain nested dicts of ndarrays; the helpers here create,
flatten, wrap, and count them.  Layers are lightweight objects that know their
shapes: ``init_params(rng)`` draws fan-in-scaled uniform weights and
``__call__(params, x)`` applies the layer to tensors.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (Tensor, concat, conv2d, layernorm, matmul, narrow,
                       pad_hw, relu)

ParamTree = dict


# -- parameter trees -------------------------------------------------------

def tree_flatten(tree: ParamTree, prefix: str = "") -> dict:
    """Flatten a nested dict into {'a.b.c': array}; values are aliases."""
    out = {}
    for k, v in tree.items():
        name = f"{prefix}.{k}" if prefix else k
        if isinstance(v, dict):
            out.update(tree_flatten(v, name))
        else:
            out[name] = v
    return out


def tree_unflatten(flat: dict) -> ParamTree:
    tree: ParamTree = {}
    for name, v in flat.items():
        parts = name.split(".")
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = v
    return tree


def tree_map(fn, tree: ParamTree) -> ParamTree:
    return {k: tree_map(fn, v) if isinstance(v, dict) else fn(v) for k, v in tree.items()}


def wrap_params(tree: ParamTree, requires_grad: bool) -> ParamTree:
    return tree_map(lambda a: Tensor(a, requires_grad=requires_grad), tree)


def collect_grads(tree: ParamTree) -> dict:
    """Flat {name: grad} for a wrapped tree; missing grads become zeros."""
    flat = tree_flatten(tree)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in flat.items()}


def count_params(tree: ParamTree) -> int:
    return int(sum(a.size for a in tree_flatten(tree).values()))


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# -- layers ----------------------------------------------------------------

class Conv:
    """3x3-style conv with 'same' padding for odd kernels, optional stride."""

    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 dilation: int = 1, bias: bool = True):
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.dilation, self.bias = stride, dilation, bias
        self.pad = dilation * (k - 1) // 2

    def init_params(self, rng, dtype=np.float32) -> ParamTree:
        p = {"w": _uniform(rng, (self.c_out, self.c_in, self.k, self.k),
                           self.c_in * self.k * self.k, dtype)}
        if self.bias:
            p["b"] = np.zeros(self.c_out, dtype=dtype)
        return p

    def __call__(self, p: ParamTree, x: Tensor) -> Tensor:
        return conv2d(x, p["w"], p.get("b"), stride=self.stride,
                      padding=self.pad, dilation=self.dilation)


class Dense:
    """Affine map on the last axis."""

    def __init__(self, c_in: int, c_out: int, bias: bool = True):
        self.c_in, self.c_out, self.bias = c_in, c_out, bias

    def init_params(self, rng, dtype=np.float32) -> ParamTree:
        p = {"w": _uniform(rng, (self.c_in, self.c_out), self.c_in, dtype)}
        if self.bias:
            p["b"] = np.zeros(self.c_out, dtype=dtype)
        return p

    def __call__(self, p: ParamTree, x: Tensor) -> Tensor:
        y = matmul(x, p["w"])
        if self.bias:
            y = y + p["b"]
        return y


class Norm:
    """Layer norm over the channel (last) axis of token tensors."""

    def __init__(self, channels: int):
        self.channels = channels

    def init_params(self, rng, dtype=np.float32) -> ParamTree:
        return {"g": np.ones(self.channels, dtype=dtype),
                "b": np.zeros(self.channels, dtype=dtype)}

    def __call__(self, p: ParamTree, x: Tensor) -> Tensor:
        return layernorm(x, p["g"], p["b"])


# -- window helpers ---------------------------------------------------------

def window_partition(x: Tensor, ws: int):
    """(N, C, H, W) -> (N*nh*nw, ws*ws, C) tokens, zero-padding to fit."""
    N, C, H, W = x.shape
    Hp = (H + ws - 1) // ws * ws
    Wp = (W + ws - 1) // ws * ws
    if (Hp, Wp) != (H, W):
        x = pad_hw(x, 0, Hp - H, 0, Wp - W)
    nh, nw = Hp // ws, Wp // ws
    t = x.reshape(N, C, nh, ws, nw, ws).transpose((0, 2, 4, 3, 5, 1))
    tokens = t.reshape(N * nh * nw, ws * ws, C)
    return tokens, (N, C, H, W, Hp, Wp)


def window_merge(tokens: Tensor, ws: int, meta) -> Tensor:
    N, C, H, W, Hp, Wp = meta
    nh, nw = Hp // ws, Wp // ws
    t = tokens.reshape(N, nh, nw, ws, ws, C).transpose((0, 5, 1, 3, 2, 4))
    x = t.reshape(N, C, Hp, Wp)
    if (Hp, Wp) != (H, W):
        x = narrow(narrow(x, 2, 0, H), 3, 0, W)
    return x


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    return x.mean(axis=(2, 3))
