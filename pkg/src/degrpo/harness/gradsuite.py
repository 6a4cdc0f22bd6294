"""Finite-difference checks for every tape primitive and the composed encoder loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .. import numerics as nx
from ..encoding import EncoderInput, HierarchicalEncoder, LayerFeatureStack
from ..numerics import GradCheckReport, ParamTensor, grad_check


def _p(name, rng, *shape):
    return ParamTensor(name, rng.normal(size=shape))


def _readout(out, rng):
    # random affine shift so sum-of-squares has a non-trivial gradient everywhere
    return nx.sum_squares(nx.add(out, rng.normal(size=out.shape)))


def _dims(rng, n=1):
    """Random row count L in 1..8 and widths in 2..16."""
    return (int(rng.integers(1, 9)),) + tuple(int(v) for v in rng.integers(2, 17, size=n))


def _case_matmul(rng):
    L, d, k = _dims(rng, 2)
    a, b = _p("a", rng, L, d), _p("b", rng, d, k)
    return lambda: _readout(nx.matmul(a, b), np.random.default_rng(1)), [a, b]


def _case_matvec(rng):
    L, d = _dims(rng)
    a, v = _p("a", rng, L, d), _p("v", rng, d)
    return lambda: _readout(nx.matmul(a, v), np.random.default_rng(1)), [a, v]


def _case_transpose(rng):
    a = _p("a", rng, *_dims(rng))
    return lambda: _readout(nx.transpose(a), np.random.default_rng(1)), [a]


def _case_add_broadcast(rng):
    L, d = _dims(rng)
    a, b = _p("a", rng, L, d), _p("b", rng, d)
    return lambda: _readout(nx.add(a, b), np.random.default_rng(1)), [a, b]


def _case_sub(rng):
    L, d = _dims(rng)
    a, b = _p("a", rng, L, d), _p("b", rng, L, d)
    return lambda: _readout(nx.sub(a, b), np.random.default_rng(1)), [a, b]


def _case_scale(rng):
    a = _p("a", rng, *_dims(rng))
    c = float(rng.normal())
    return lambda: _readout(nx.scale(a, c), np.random.default_rng(1)), [a]


def _case_mul(rng):
    s, m = _p("s", rng), _p("m", rng, *_dims(rng))
    return lambda: _readout(nx.mul(s, m), np.random.default_rng(1)), [s, m]


def _case_row_softmax(rng):
    a = _p("a", rng, *_dims(rng))
    return lambda: _readout(nx.row_softmax(a), np.random.default_rng(1)), [a]


def _case_layer_norm(rng):
    L, d = _dims(rng)
    x, g, b = _p("x", rng, L, d), _p("g", rng, d), _p("b", rng, d)
    return lambda: _readout(nx.layer_norm(x, g, b), np.random.default_rng(1)), [x, g, b]


def _case_gelu(rng):
    a = _p("a", rng, *_dims(rng))
    return lambda: _readout(nx.gelu(a), np.random.default_rng(1)), [a]


def _case_mean_pool(rng):
    a = _p("a", rng, *_dims(rng))
    return lambda: _readout(nx.mean_pool_rows(a), np.random.default_rng(1)), [a]


def _case_total(rng):
    a = _p("a", rng, *_dims(rng))
    return lambda: nx.scale(nx.total(nx.gelu(a)), 1.7), [a]


def _case_sum_squares(rng):
    a = _p("a", rng, *_dims(rng))
    return lambda: nx.sum_squares(a), [a]


def _case_softmax_pair(rng):
    a, b = _p("a", rng), _p("b", rng)

    def f():
        wa, wb = nx.softmax_pair(a, b)
        return nx.add(nx.scale(wa, 0.3), nx.scale(nx.mul(wb, wb), 1.9))
    return f, [a, b]


def _case_index(rng):
    v = _p("v", rng, int(rng.integers(5, 17)))
    return lambda: nx.scale(nx.mul(nx.index(v, 2), nx.index(v, 4)), 2.0), [v]


PRIMITIVE_CASES: dict[str, Callable] = {
    "matmul": _case_matmul, "matvec": _case_matvec, "transpose": _case_transpose,
    "add": _case_add_broadcast, "sub": _case_sub, "scale": _case_scale, "mul": _case_mul,
    "row_softmax": _case_row_softmax, "layer_norm": _case_layer_norm, "gelu": _case_gelu,
    "mean_pool_rows": _case_mean_pool, "total": _case_total, "sum_squares": _case_sum_squares,
    "softmax_pair": _case_softmax_pair, "index": _case_index,
}


def composed_case(rng: np.random.Generator, shared_kv: bool = False):
    """Sum of squares of fuse(adapter(qformer(ca2(...)))), over every encoder parameter."""
    dim, layer_dims = 4, (5, 3, 4)
    model = HierarchicalEncoder(layer_dims, dim, n_queries=3, rng=rng, shared_kv=shared_kv)
    x = EncoderInput(rng.normal(size=(2, dim)), LayerFeatureStack([rng.normal(size=(3, d)) for d in layer_dims]),
                     rng.normal(size=(4, dim)))
    return (lambda: model.loss(x)), model.parameters()


@dataclass
class CheckResult:
    name: str
    seed: int
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def run_suite(n_seeds: int = 20, n_composed: int = 10, tol: float = 1e-4) -> Iterator[CheckResult]:
    for name, case in PRIMITIVE_CASES.items():
        for seed in range(n_seeds):
            f, params = case(np.random.default_rng(seed))
            yield CheckResult(name, seed, grad_check(f, params, tol=tol))
    for seed in range(n_composed):
        f, params = composed_case(np.random.default_rng(1000 + seed), shared_kv=bool(seed % 2))
        yield CheckResult("composed", seed, grad_check(f, params, tol=tol))
