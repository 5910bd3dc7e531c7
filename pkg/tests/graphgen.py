"""Randomized computation-graph generator for gradient checking.

Builds a random DAG over the full supported op set (matmul, add, multiply,
subtract, tanh, sigmoid, relu, exp, log, concat, slice, transpose, sum,
mean, softmax cross-entropy, bilinear) with domain guards: log only on
positive-valued nodes, exp only on bounded ones, and graphs whose relu
inputs land within 1e-3 of the kink are rejected (finite differences are
meaningless across a kink).
"""

from __future__ import annotations

import numpy as np

from pearl.tensor import Tensor, bilinear, concat, softmax_cross_entropy


def _leaf(rng, shape):
    mag = rng.uniform(0.2, 1.5, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return Tensor(mag * sign, requires_grad=True)


class _Node:
    def __init__(self, tensor, bounded=False, positive=False):
        self.tensor = tensor
        self.bounded = bounded
        self.positive = positive


def _build(rng, params):
    """Construct a scalar loss from the given leaf parameters."""
    pool = [_Node(p) for p in params]
    ops = ["matmul", "add", "sub", "mul", "tanh", "sigmoid", "relu", "exp", "log",
           "transpose", "slice", "concat", "bilinear"]
    n_ops = int(rng.integers(6, 12))
    for _ in range(n_ops):
        op = ops[int(rng.integers(0, len(ops)))]
        a = pool[int(rng.integers(0, len(pool)))]
        t = a.tensor
        try:
            if op == "matmul" and t.data.ndim == 2:
                partner = next((n for n in pool if n.tensor.data.ndim == 2
                                and n.tensor.data.shape[0] == t.data.shape[1]
                                and n.tensor is not t), None)
                if partner is None:
                    continue
                pool.append(_Node((t @ partner.tensor) * 0.3))
            elif op in ("add", "sub", "mul"):
                partner = next((n for n in pool if n.tensor.data.shape == t.data.shape
                                and n.tensor is not t), None)
                if partner is None:
                    continue
                result = {"add": t + partner.tensor, "sub": t - partner.tensor,
                          "mul": t * partner.tensor}[op]
                pool.append(_Node(result, positive=op == "mul" and a.positive and partner.positive))
            elif op == "tanh":
                pool.append(_Node(t.tanh(), bounded=True))
            elif op == "sigmoid":
                pool.append(_Node(t.sigmoid(), bounded=True, positive=True))
            elif op == "relu":
                pool.append(_Node(t.relu()))
            elif op == "exp" and a.bounded:
                pool.append(_Node(t.exp(), bounded=True, positive=True))
            elif op == "log" and a.positive:
                pool.append(_Node(t.log()))
            elif op == "transpose" and t.data.ndim == 2:
                pool.append(_Node(t.T, bounded=a.bounded, positive=a.positive))
            elif op == "slice" and t.data.ndim == 2 and t.data.shape[0] >= 2:
                k = int(rng.integers(1, t.data.shape[0]))
                pool.append(_Node(t[0:k, :], bounded=a.bounded, positive=a.positive))
            elif op == "concat":
                partner = next((n for n in pool if n.tensor.data.ndim == t.data.ndim == 2
                                and n.tensor.data.shape[1] == t.data.shape[1]), None)
                if partner is None:
                    continue
                pool.append(_Node(concat([t, partner.tensor], axis=0),
                                  bounded=a.bounded and partner.bounded,
                                  positive=a.positive and partner.positive))
            elif op == "bilinear" and t.data.ndim == 2:
                k, m = t.data.shape
                u = next((n for n in pool if n.tensor.data.shape == (1, k)), None)
                v = next((n for n in pool if n.tensor.data.shape == (m, 1)), None)
                if u is None or v is None:
                    continue
                pool.append(_Node(bilinear(u.tensor, t, v.tensor) * 0.3))
        except Exception:
            continue

    terms = []
    # reductions and cross-entropy close the graph to a scalar
    for node in pool[-3:]:
        t = node.tensor
        choice = int(rng.integers(0, 3))
        if choice == 0:
            terms.append(t.mean())
        elif choice == 1 and t.data.ndim == 2:
            terms.append(t.sum(axis=int(rng.integers(0, 2))).mean())
        else:
            terms.append((t * t).sum() * 0.1)
    wide = next((n.tensor for n in pool if n.tensor.data.ndim == 2 and n.tensor.data.shape[1] >= 2), None)
    if wide is not None:
        targets = rng.integers(0, wide.data.shape[1], size=wide.data.shape[0])
        terms.append(softmax_cross_entropy(wide * 0.5, targets))
    loss = terms[0]
    for term in terms[1:]:
        loss = loss + term
    return loss


def _relu_inputs_safe(loss, margin=1e-3) -> bool:
    seen, stack = set(), [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.op == "relu":
            if np.abs(node._parents[0].data).min() < margin:
                return False
        stack.extend(node._parents)
    return True


def random_graph_fn(seed: int):
    """Returns (fn, params) where fn(*params) is a scalar Tensor whose relu
    inputs are safely away from the kink at the given parameter values."""
    for attempt in range(50):
        rng = np.random.default_rng(seed * 1000 + attempt)
        shapes = []
        base = int(rng.integers(2, 5))
        mid = int(rng.integers(2, 5))
        shapes = [(base, mid), (mid, base), (base, mid), (1, base), (mid, 1)]
        params = [_leaf(rng, s) for s in shapes]
        build_seed = rng.integers(0, 2**31)

        def fn(*ps, _seed=build_seed):
            return _build(np.random.default_rng(_seed), list(ps))

        loss = fn(*params)
        if loss.data.size == 1 and np.isfinite(loss.data).all() and _relu_inputs_safe(loss):
            return fn, params
    raise RuntimeError(f"no safe random graph for seed {seed}")
