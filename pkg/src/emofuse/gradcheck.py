"""Finite-difference gradient checks for every differentiable op and module.

Each registry entry builds a tiny float64 problem and returns a scalar loss
closure plus the tensors to check.  Analytic gradients come from the tape;
numeric ones from central differences on a sample of coordinates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .fusion import FusionExpert, GatingNetwork, gate_and_fuse
from .lm import LoRAConfig, TinyLM, assemble, lora_attach, mle_loss
from .projection import Adapter, QFormerBlock, TemporalQueries
from .tensor import Tensor

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_coords: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < TOLERANCE)


def _leaf(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(scale * rng.normal(size=shape), requires_grad=True)


def _projected(out: Tensor, rng) -> Tensor:
    """Random linear functional of ``out`` so every output coordinate matters."""
    r = Tensor(rng.normal(size=out.shape))
    return T.tsum(out * r)


def _module_params(module) -> list:
    return list(module.named_parameters().values())


def _perturb_module(module, rng, scale=0.3) -> None:
    """Move zero-initialised weights away from zero so their gradients are informative."""
    for p in module.named_parameters().values():
        if not np.any(p.data):
            p.data = scale * rng.normal(size=p.shape)


# -- registry ------------------------------------------------------------------

REGISTRY: dict = {}


def register(name: str):
    def deco(fn):
        REGISTRY[name] = fn
        return fn
    return deco


@register("linear")
def _linear(rng):
    x, w, b = _leaf(rng, 5, 6), _leaf(rng, 6, 4), _leaf(rng, 4)
    return (lambda: _projected(T.linear(x, w, b), rng_fixed(1))), [x, w, b]


@register("matmul")
def _matmul(rng):
    a, b = _leaf(rng, 4, 7), _leaf(rng, 7, 3)
    return (lambda: _projected(T.matmul(a, b), rng_fixed(2))), [a, b]


@register("gelu")
def _gelu(rng):
    x = _leaf(rng, 6, 5, scale=2.0)
    return (lambda: _projected(T.gelu(x), rng_fixed(3))), [x]


@register("layer_norm")
def _layer_norm(rng):
    x, g, b = _leaf(rng, 5, 8), _leaf(rng, 8), _leaf(rng, 8)
    return (lambda: _projected(T.layer_norm(x, g, b), rng_fixed(4))), [x, g, b]


@register("softmax_masked")
def _softmax(rng):
    x = _leaf(rng, 6, 6)
    mask = np.tril(np.ones((6, 6), dtype=bool))
    return (lambda: _projected(T.softmax(x, axis=-1, mask=mask), rng_fixed(5))), [x]


@register("log_softmax")
def _log_softmax(rng):
    x = _leaf(rng, 4, 9)
    return (lambda: _projected(T.log_softmax(x, axis=-1), rng_fixed(6))), [x]


@register("cross_entropy")
def _cross_entropy(rng):
    x = _leaf(rng, 5, 11)
    y = rng.integers(0, 11, size=5)
    return (lambda: T.cross_entropy(x, y)), [x]


@register("elementwise")
def _elementwise(rng):
    a, b = _leaf(rng, 4, 5), _leaf(rng, 1, 5)
    return (lambda: _projected(T.tanh(a * b + T.exp(a * 0.3) - b), rng_fixed(7))), [a, b]


@register("attention")
def _attention(rng):
    q, k, v = _leaf(rng, 5, 8), _leaf(rng, 7, 8), _leaf(rng, 7, 8)
    mask = rng.random((5, 7)) < 0.7
    mask[:, 0] = True
    return (lambda: _projected(T.scaled_dot_attention(q, k, v, 2, mask=mask), rng_fixed(8))), [q, k, v]


@register("qformer")
def _qformer(rng):
    blk = QFormerBlock(rng, num_queries=4, dim=16, d_features=12, heads=2, layers=2)
    feats = _leaf(rng, 8, 12)
    return (lambda: _projected(blk(feats), rng_fixed(9))), _module_params(blk) + [feats]


@register("temporal_modeling")
def _temporal(rng):
    tm = TemporalQueries(rng, num_queries=4, dim=16, heads=2)
    tm.queries.data = rng.normal(size=tm.queries.shape)
    e_f = _leaf(rng, 8, 16)
    return (lambda: _projected(tm(e_f), rng_fixed(10))), _module_params(tm) + [e_f]


@register("fusion_expert")
def _expert(rng):
    ex = FusionExpert(rng, d_speech=12, d_visual=10, dim=16, heads=2)
    s, v = _leaf(rng, 6, 12), _leaf(rng, 8, 10)
    return (lambda: _projected(ex(s, v), rng_fixed(11))), _module_params(ex) + [s, v]


@register("gating")
def _gating(rng):
    gate = GatingNetwork(rng, n_experts=3, dim=8, hidden=16)
    _perturb_module(gate, rng)
    outs = [_leaf(rng, 6, 8) for _ in range(3)]

    def loss():
        fused, w = gate_and_fuse(gate, outs)
        return _projected(fused, rng_fixed(12)) + _projected(w, rng_fixed(13))
    return loss, _module_params(gate) + outs


@register("adapter")
def _adapter(rng):
    ad = Adapter(rng, 12, 16)
    x = _leaf(rng, 8, 12)
    return (lambda: _projected(ad(x), rng_fixed(14))), _module_params(ad) + [x]


@register("lora_lm_loss")
def _lora_lm(rng):
    lm = TinyLM(rng, vocab=40, dim=16, layers=2, heads=2, max_len=16)
    lora_attach(lm, LoRAConfig(r=4, alpha=8, seed=3))
    for mod in lm.lora_modules():
        mod.B.data = 0.3 * rng.normal(size=mod.B.shape)
    prefix = _leaf(rng, 3, 16, scale=0.5)
    prompt = list(rng.integers(0, 40, size=2))
    target = list(rng.integers(0, 40, size=3))

    class _Block:
        tokens = prefix
        stream_tag = "probe"

    def loss():
        return mle_loss(lm, assemble(lm, [_Block()], prompt, target))
    return loss, _module_params(lm) + [prefix]


def rng_fixed(i: int) -> np.random.Generator:
    return np.random.default_rng([7777, i])


# -- checker ---------------------------------------------------------------------

def check(name: str, build: Callable, seed: int = 0, coords_per_tensor: int = 12) -> CheckResult:
    """``|g_a - g_n| / max(|g_a|, |g_n|)`` over all sampled coordinates of the problem.

    Pooling the coordinates keeps exactly-zero gradients (key biases under
    softmax shift invariance) from turning rounding noise into a ratio of 1.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    with T.default_dtype(np.float64):
        loss_fn, tensors = build(rng)
        for t in tensors:
            t.data = t.data.astype(np.float64)
            t.requires_grad = True
            t.grad = None
        loss = loss_fn()
        T.backward(loss)
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
        all_ana, all_num = [], []
        pick = np.random.default_rng([seed, 99])
        with T.no_grad():
            for t, g in zip(tensors, analytic):
                flat = t.data.reshape(-1)
                k = min(coords_per_tensor, flat.size)
                idx = pick.choice(flat.size, size=k, replace=False)
                num = np.empty(k)
                for j, i in enumerate(idx):
                    old = flat[i]
                    flat[i] = old + STEP
                    up = float(loss_fn().data)
                    flat[i] = old - STEP
                    down = float(loss_fn().data)
                    flat[i] = old
                    num[j] = (up - down) / (2 * STEP)
                all_ana.append(g.reshape(-1)[idx])
                all_num.append(num)
    ana, num = np.concatenate(all_ana), np.concatenate(all_num)
    denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-300)
    err = float(np.linalg.norm(ana - num) / denom)
    return CheckResult(name, err, ana.size, time.perf_counter() - t0)


def run_all(registry: dict | None = None, seed: int = 0) -> list:
    registry = REGISTRY if registry is None else registry
    return [check(name, build, seed) for name, build in registry.items()]


def format_table(results) -> str:
    lines = [f"{'module':<20} {'max_rel_err':>12} {'coords':>7} {'secs':>6}  status"]
    for r in results:
        lines.append(f"{r.name:<20} {r.max_rel_error:12.3e} {r.n_coords:7d} {r.seconds:6.2f}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
