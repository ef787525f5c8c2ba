"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import ops
from .tensor import Tape, Tensor, backward, concat, exp, log, no_grad, sigmoid

REL_TOL = 1e-4
# denominators below this are treated as this; keeps near-zero
# coordinates from turning rounding noise into huge relative errors
REL_FLOOR = 1e-5


@dataclass
class GradReport:
    name: str
    max_rel_err: float
    worst: tuple  # (input position, flat coordinate)
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < REL_TOL

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<28s} max_rel_err={self.max_rel_err:.3e}  {status}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    name: str = "fn",
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradReport:
    """Compare tape gradients of ``fn()`` against central differences.

    ``fn`` must read ``inputs`` (which are perturbed in place).  With
    ``max_coords`` only a random subset of each input's coordinates is probed.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape():
        loss = fn()
    backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst, worst_at, checked = 0.0, (-1, -1), 0
    for pos, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        num = np.empty(len(coords))
        with no_grad():
            for n, c in enumerate(coords):
                orig = flat[c]
                flat[c] = orig + h
                up = fn().item()
                flat[c] = orig - h
                down = fn().item()
                flat[c] = orig
                num[n] = (up - down) / (2 * h)
        err = relative_error(analytic[pos].reshape(-1)[coords], num)
        checked += len(coords)
        if err.size and err.max() > worst:
            worst = float(err.max())
            worst_at = (pos, int(coords[int(err.argmax())]))
    return GradReport(name, worst, worst_at, checked)


def _weights(rng, shape):
    return rng.standard_normal(shape)


def _op_cases() -> dict[str, Callable[[np.random.Generator], tuple]]:
    """Each case builds (fn, inputs) from an rng; a random projection
    turns every output into a scalar so all output coordinates matter."""

    def c_matmul(rng):
        a, b = Tensor(_weights(rng, (4, 6))), Tensor(_weights(rng, (6, 3)))
        w = rng.standard_normal((4, 3))
        return (lambda: (ops.matmul(a, b) * Tensor(w)).sum()), [a, b]

    def c_softmax(rng):
        a = Tensor(_weights(rng, (4, 6)))
        w = rng.standard_normal((4, 6))
        return (lambda: (ops.softmax_rows(a) * Tensor(w)).sum()), [a]

    def c_matmul_softmax(rng):
        a, b = Tensor(_weights(rng, (4, 5))), Tensor(_weights(rng, (5, 6)))
        w = rng.standard_normal((4, 6))
        return (lambda: (ops.softmax_rows(ops.matmul(a, b)) * Tensor(w)).sum()), [a, b]

    def c_topk(rng):
        # distinct, well-separated entries keep the selection fixed under h
        a = Tensor(rng.permutation(24).reshape(4, 6) * 0.1 + rng.uniform(0, 0.01, (4, 6)))
        w = rng.standard_normal((4, 3))
        return (lambda: (ops.topk_rows(a, 3).values * Tensor(w)).sum()), [a]

    def c_scatter(rng):
        v = Tensor(_weights(rng, (3, 2)))
        idx = np.stack([rng.permutation(5)[:2] for _ in range(3)])
        w = rng.standard_normal((3, 5))
        return (lambda: (ops.scatter_rows(v, idx, 5) * Tensor(w)).sum()), [v]

    def c_sparse_softmax(rng):
        a = Tensor(rng.permutation(30).reshape(5, 6) * 0.2 + rng.uniform(0, 0.01, (5, 6)))
        w = rng.standard_normal((5, 6))

        def fn():
            top = ops.topk_rows(a, 3)
            return (ops.scatter_rows(ops.softmax_rows(top.values), top.indices, 6) * Tensor(w)).sum()

        return fn, [a]

    def c_layer_norm(rng):
        x = Tensor(_weights(rng, (3, 5)))
        g, b = Tensor(_weights(rng, (5,))), Tensor(_weights(rng, (5,)))
        w = rng.standard_normal((3, 5))
        return (lambda: (ops.layer_norm(x, g, b) * Tensor(w)).sum()), [x, g, b]

    def c_linear(rng):
        x, wt, b = Tensor(_weights(rng, (2, 3, 4))), Tensor(_weights(rng, (4, 5))), Tensor(_weights(rng, (5,)))
        w = rng.standard_normal((2, 3, 5))
        return (lambda: (ops.linear(x, wt, b) * Tensor(w)).sum()), [x, wt, b]

    def c_relu(rng):
        x = Tensor(rng.uniform(0.1, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)))
        w = rng.standard_normal((3, 4))
        return (lambda: (ops.relu(x) * Tensor(w)).sum()), [x]

    def c_conv2d(rng):
        x = Tensor(_weights(rng, (2, 3, 7, 6)))
        k, b = Tensor(_weights(rng, (4, 3, 3, 3))), Tensor(_weights(rng, (4,)))
        w = rng.standard_normal((2, 4, 4, 3))
        return (lambda: (ops.conv2d(x, k, b, stride=2, padding=1) * Tensor(w)).sum()), [x, k, b]

    def c_dropout(rng):
        x = Tensor(_weights(rng, (4, 5)))
        w = rng.standard_normal((4, 5))
        seed = int(rng.integers(1 << 31))
        return (lambda: (ops.dropout(x, 0.3, True, np.random.default_rng(seed)) * Tensor(w)).sum()), [x]

    def c_elementwise(rng):
        a = Tensor(rng.uniform(0.5, 2.0, (3, 4)))
        b = Tensor(rng.uniform(0.5, 2.0, (4,)))
        w = rng.standard_normal((3, 4))

        def fn():
            y = (a * b + a / b - b) * sigmoid(a) + exp(a * 0.3) + log(a + b)
            return (concat([y, a], axis=0)[1:5] * Tensor(np.vstack([w, w])[1:5])).sum()

        return fn, [a, b]

    return {
        "matmul": c_matmul,
        "softmax_rows": c_softmax,
        "matmul_softmax": c_matmul_softmax,
        "topk_rows": c_topk,
        "scatter_rows": c_scatter,
        "topk_softmax_scatter": c_sparse_softmax,
        "layer_norm": c_layer_norm,
        "linear": c_linear,
        "relu": c_relu,
        "conv2d": c_conv2d,
        "dropout": c_dropout,
        "elementwise": c_elementwise,
    }


def _loss_cases() -> dict[str, Callable[[np.random.Generator], tuple]]:
    from .losses import focal_loss, iou_loss

    def c_focal(rng):
        z = Tensor(rng.standard_normal((2, 5, 5)))
        y = (rng.random((2, 5, 5)) < 0.3).astype(float)
        return (lambda: focal_loss(z, y)), [z]

    def c_iou(rng):
        p = Tensor(rng.uniform(0.5, 3.0, (2, 4, 3, 3)))
        t = rng.uniform(0.5, 3.0, (2, 4, 3, 3))
        mask = rng.random((2, 3, 3)) < 0.6
        mask[0, 0, 0] = True
        return (lambda: iou_loss(p, t, mask)), [p]

    return {"focal_loss": c_focal, "iou_loss": c_iou}


def all_cases() -> dict[str, Callable[[np.random.Generator], tuple]]:
    cases = _op_cases()
    cases.update(_loss_cases())
    from .attention import gradcheck_cases as attention_cases
    from .model import gradcheck_cases as model_cases

    cases.update(attention_cases())
    cases.update(model_cases())
    return cases


def run_suite(seed: int = 0, pattern: Optional[str] = None, max_coords: Optional[int] = 40) -> list[GradReport]:
    """Run every registered case whose name contains ``pattern``."""
    reports = []
    for name, build in all_cases().items():
        if pattern and pattern not in name:
            continue
        rng = np.random.default_rng(seed)
        fn, inputs = build(rng)
        reports.append(check_gradients(fn, inputs, name=name, max_coords=max_coords, rng=rng))
    return reports


def format_report(reports: Iterable[GradReport]) -> str:
    return "\n".join(r.line() for r in reports)
