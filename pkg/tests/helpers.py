"""Shared test utilities: tiny configs and block-level gradient checking."""

import numpy as np

from depthdehaze.gradcheck import check_gradients
from depthdehaze.layers import tree_flatten, tree_unflatten
from depthdehaze.trainer import TrainConfig


def tiny_config(**overrides) -> TrainConfig:
    base = dict(total_steps=2, batch_size=1, crop_size=24, holdout=2, seed=0,
                widths=(8, 16, 24), depth_widths=(8, 12, 16), depth_growth=4,
                eval_every=0)
    base.update(overrides)
    return TrainConfig(**base)


def block_gradcheck(block, call, input_shapes, *, seed=5, input_scale=0.5,
                    n_coords=6, param_dtype=np.float64):
    """Max relative FD error over a block's inputs and all its parameters.

    ``call(block, params, inputs)`` must return a scalar Tensor.
    """
    params = block.init_params(np.random.default_rng(seed), dtype=param_dtype)
    flat = tree_flatten(params)
    keymap = {"p_" + k.replace(".", "_"): k for k in flat}
    inputs = {alias: flat[k] for alias, k in keymap.items()}
    rng = np.random.default_rng(seed + 1)
    for name, shape in input_shapes.items():
        inputs[name] = rng.standard_normal(shape) * input_scale

    def loss(**kw):
        p = tree_unflatten({keymap[a]: v for a, v in kw.items() if a in keymap})
        xs = {n: kw[n] for n in input_shapes}
        return call(block, p, xs)

    return check_gradients(loss, inputs, n_coords=n_coords)


def flat_param_snapshot(tree) -> dict:
    return {k: v.copy() for k, v in tree_flatten(tree).items()}


def trees_equal_bitwise(a: dict, b: dict) -> bool:
    fa, fb = tree_flatten(a), tree_flatten(b)
    if fa.keys() != fb.keys():
        return False
    return all(np.array_equal(fa[k], fb[k]) for k in fa)
