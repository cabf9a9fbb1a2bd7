"""Finite-difference checks for every primitive and for the full training loss (64-bit)."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .corpus import PairExample, collate
from .model import ModelConfig, SuperAE
from .numerics import Value
from .objective import LossConfig, total_loss

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tol: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tol


def _weights(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(0.5, 1.5, size=shape)


def _away_from_zero(rng: np.random.Generator, shape, lo: float = 0.3, hi: float = 2.0) -> np.ndarray:
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


# Probe points are drawn so that no gradient coordinate can cancel to ~0:
# central differences in float64 carry ~1e-11 absolute error, which would
# dominate a relative error measured against a vanishing gradient.
def _case(rng: np.random.Generator, name: str):
    """Return (inputs, op) for one random point of primitive ``name``."""
    n = lambda *s: rng.normal(size=s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 1.5, size=s)  # noqa: E731
    if name == "add":
        return [n(3, 4), n(4)], lambda a, b: nx.add(a, b)
    if name == "sub":
        return [n(3, 4), n(3, 1)], lambda a, b: nx.sub(a, b)
    if name == "mul":
        return [_away_from_zero(rng, (2, 3)), _away_from_zero(rng, (2, 3))], lambda a, b: nx.mul(a, b)
    if name == "scalar":
        return [n(5)], lambda a: nx.add(nx.mul(a, 2.5), -1.0)
    if name == "sigmoid":
        return [n(2, 5) * 2], nx.sigmoid
    if name == "tanh":
        return [n(2, 5)], nx.tanh
    if name == "exp":
        return [n(6) * 0.5], nx.exp
    if name == "log":
        return [rng.uniform(0.5, 3.0, size=(6,))], nx.log
    if name == "log_sigmoid":
        return [n(6) * 3], nx.log_sigmoid
    if name in ("softmax", "log_softmax"):
        # one-hot row weights: the gradient y_k * (delta_ik - y_i) has no cancellation
        w = np.eye(5)[rng.integers(0, 5, size=3)]
        return [n(3, 5)], getattr(nx, name), w
    if name == "matmul":
        return [pos(3, 4), pos(4, 2)], nx.matmul
    if name == "matmul_nd":
        return [pos(2, 3, 4), pos(4, 2)], nx.matmul
    if name == "bmm":
        return [pos(2, 3, 4), pos(2, 4, 2)], nx.matmul
    if name == "concat":
        return [n(2, 3), n(2, 2)], lambda a, b: nx.concat([a, b], axis=-1)
    if name == "stack":
        return [n(2, 3), n(2, 3)], lambda a, b: nx.stack([a, b], axis=1)
    if name == "getitem":
        return [n(3, 4)], lambda a: a[:, 1:3]
    if name == "reshape":
        return [n(2, 6)], lambda a: nx.reshape(a, (3, 4))
    if name == "embedding":
        ids = rng.integers(0, 5, size=(2, 3))
        return [n(5, 4)], lambda t: nx.embedding(t, ids)
    if name == "pick":
        ids = rng.integers(0, 5, size=(3,))
        return [n(3, 5)], lambda a: nx.pick(a, ids)
    if name == "sum":
        return [n(3, 4)], lambda a: nx.sum(a, axis=0)
    if name == "mean":
        return [n(3, 4)], lambda a: nx.mean(a, axis=1)
    if name == "masked_sum":
        mask = rng.integers(0, 2, size=(3, 4))
        return [n(3, 4)], lambda a: nx.masked_sum(a, mask, axis=1)
    if name == "masked_mean":
        mask = rng.integers(0, 2, size=(3, 4))
        mask[:, 0] = 1
        return [n(3, 4)], lambda a: nx.masked_mean(a, mask, axis=1)
    if name == "l2norm":
        return [_away_from_zero(rng, (3, 4))], lambda a: nx.l2norm(a, axis=-1)
    if name == "lstm_pointwise":
        mask = rng.integers(0, 2, size=(2,))
        gates = _away_from_zero(rng, (2, 12))
        c = _away_from_zero(rng, (2, 3))
        # candidate shares the sign of the old cell so the new cell stays away from 0
        gates[:, 9:] = np.abs(gates[:, 9:]) * np.sign(c)
        return [gates, c, n(2, 3)], lambda g, c_, h: nx.concat(list(nx.lstm_pointwise(g, c_, h, mask)), axis=-1)
    raise KeyError(name)


def _composite_case(rng: np.random.Generator, name: str):
    n = lambda *s: rng.normal(size=s)  # noqa: E731
    if name in ("lstm_cell", "lstm_cell_fused"):
        fused = name == "lstm_cell_fused"
        mask = rng.integers(0, 2, size=(2,))
        return ([n(2, 3), n(2, 4), n(2, 4), n(7, 16) * 0.5, n(16) * 0.5],
                lambda x, h, c, w, b: nx.concat(list(nx.lstm_cell(x, h, c, w, b, mask, fused=fused)), axis=-1))
    raise KeyError(name)


PRIMITIVES = ("add", "sub", "mul", "scalar", "sigmoid", "tanh", "exp", "log", "log_sigmoid", "softmax",
              "log_softmax", "matmul", "matmul_nd", "bmm", "concat", "stack", "getitem", "reshape",
              "embedding", "pick", "sum", "mean", "masked_sum", "masked_mean", "l2norm", "lstm_pointwise")
COMPOSITES = ("lstm_cell", "lstm_cell_fused")


def check_primitive(name: str, points: int = 100, seed: int = 0, eps: float = 1e-5) -> CheckResult:
    """Worst relative error of ``sum(w * op(x))`` over random probe points."""
    composite = name in COMPOSITES
    make = _composite_case if composite else _case
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    with nx.precision(np.float64):
        for _ in range(points):
            arrays, op, *given = make(rng, name)
            inputs = [Value(np.asarray(a, dtype=np.float64), requires_grad=True) for a in arrays]
            w = given[0] if given else _weights(rng, op(*[Value(v.data) for v in inputs]).shape)

            def f(inputs=inputs, op=op, w=w):
                return nx.sum(nx.mul(op(*inputs), Value(w)))

            worst = max(worst, nx.grad_check(f, inputs, eps))
    return CheckResult(name, worst, COMPOSITE_TOL if composite else PRIMITIVE_TOL, time.perf_counter() - t0)


def toy_batch(vocab_size: int, seed: int = 0) -> "Batch":  # noqa: F821
    rng = np.random.default_rng(seed)
    examples = [
        PairExample(tuple(rng.integers(4, vocab_size, size=5)), tuple(rng.integers(4, vocab_size, size=3))),
        PairExample(tuple(rng.integers(4, vocab_size, size=3)), tuple(rng.integers(4, vocab_size, size=2))),
    ]
    return collate(examples)


def loss_fn(model: SuperAE, batch, cfg: LossConfig | None = None) -> Callable[[], Value]:
    """Sum of every loss term (main and both adversarial parts) as one scalar."""
    cfg = cfg or LossConfig()

    def f():
        lb = total_loss(model, batch, cfg)
        out = lb.total_main
        for extra in (lb.l_d, lb.l_g):
            if extra is not None:
                out = nx.add(out, extra)
        return out

    return f


def check_total_loss(config: ModelConfig, seed: int = 0, eps: float = 1e-5, max_coords: int | None = None,
                     loss_cfg: LossConfig | None = None) -> CheckResult:
    t0 = time.perf_counter()
    with nx.precision(np.float64):
        model = SuperAE(config, seed=seed).astype(np.float64)
        batch = toy_batch(config.vocab_size, seed)
        params = [v for _, v in model.params.items()]
        err = nx.grad_check(loss_fn(model, batch, loss_cfg), params, eps, max_coords=max_coords,
                            rng=np.random.default_rng(seed))
    return CheckResult("total_loss", err, COMPOSITE_TOL, time.perf_counter() - t0)


# Probe point for the full loss. At small inits the attention-state gradients fall to ~1e-10,
# the same size as float64 central-difference roundoff, so their relative error is pure noise.
TOTAL_LOSS_CONFIG = ModelConfig(vocab_size=9, embed_size=3, hidden_size=4, layers=1, attn_size=3, init_scale=1.2)


def run_all(eps: float = 1e-5, points: int = 100, seed: int = 0, model_config: ModelConfig | None = None,
            max_coords: int | None = None) -> list[CheckResult]:
    results = [check_primitive(name, points, seed, eps) for name in PRIMITIVES + COMPOSITES]
    results.append(check_total_loss(model_config or TOTAL_LOSS_CONFIG, seed, eps, max_coords))
    return results
