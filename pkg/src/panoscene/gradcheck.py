"""Central finite-difference verification of the analytic loss gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses
from .geometry import CameraModel, DepthMap, uniform_depth_bins

STEP = 1e-5
TOLERANCE = 1e-4


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def relative_error(analytic, numeric) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def _softmax(z):
    e = np.exp(z - z.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


# Each case builder returns (x, f, grad_f) for one random instance.

def _ce_case(rng):
    n, L = int(rng.integers(3, 12)), int(rng.integers(2, 6))
    x = rng.normal(0, 2, (n, L))
    y = rng.integers(0, L, n)
    y[rng.random(n) < 0.2] = losses.IGNORE_ID
    y[0] = int(rng.integers(0, L))
    return x, lambda v: losses.ce_loss(v, y), lambda v: losses.ce_grad(v, y)


def _scal_case(mode):
    def build(rng):
        n, L = int(rng.integers(6, 16)), int(rng.integers(2, 5))
        p = _softmax(rng.normal(0, 1, (n, L)))
        y = rng.integers(0, L, n)
        y[:2] = [0, 1]
        return (p, lambda v: losses.scal_loss(v, y, mode), lambda v: losses.scal_grad(v, y, mode))
    return build


def _dice_case(rng):
    n = int(rng.integers(4, 20))
    p = rng.uniform(0.05, 0.95, n)
    g = rng.random(n) < 0.5
    return p, lambda v: losses.dice_loss(v, g), lambda v: losses.dice_grad(v, g)


def _focal_case(rng):
    n = int(rng.integers(4, 20))
    x = rng.normal(0, 2, n)
    g = rng.random(n) < 0.4
    return x, lambda v: losses.focal_loss(v, g), lambda v: losses.focal_grad(v, g)


def _mask_ce_case(rng):
    n = int(rng.integers(4, 12))
    k = int(rng.integers(1, 4))
    x = rng.normal(0, 2, (k, n))
    g = rng.random((k, n)) < 0.5

    def f(v):
        return losses.mask_ce_loss(list(zip(v, g))).value

    def grad(v):
        return np.stack(losses.mask_ce_grad(list(zip(v, g))))
    return x, f, grad


def _depth_case(rng):
    H, W, D = int(rng.integers(2, 4)), int(rng.integers(2, 4)), int(rng.integers(4, 9))
    bins = uniform_depth_bins(D, 2.0, 20.0)
    cam = CameraModel(np.diag([50.0, 50.0, 1.0, 1.0]), (H, W), bins)
    depth = rng.uniform(2.0, 20.0, (H, W))
    valid = rng.random((H, W)) < 0.8
    valid[0, 0] = True
    dm = DepthMap(depth, valid)
    p = _softmax(rng.normal(0, 1, (H, W, D)))
    return p, lambda v: losses.depth_loss(v, dm, cam), lambda v: losses.depth_grad(v, dm, cam)


CASES: dict[str, Callable] = {
    "ce": _ce_case,
    "scal_semantic": _scal_case("semantic"),
    "scal_geometric": _scal_case("geometric"),
    "dice": _dice_case,
    "focal": _focal_case,
    "mask_ce": _mask_ce_case,
    "depth": _depth_case,
}


@dataclass
class GradCheckRow:
    loss: str
    trials: int
    max_rel_err: float
    passed: bool


def check_loss(name: str, trials: int = 100, seed: int = 0, step: float = STEP,
               tol: float = TOLERANCE) -> GradCheckRow:
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    worst = 0.0
    for _ in range(trials):
        x, f, grad = CASES[name](rng)
        worst = max(worst, relative_error(grad(x), numeric_grad(f, x, step)))
    return GradCheckRow(name, trials, worst, worst < tol)


def run_all(trials: int = 100, seed: int = 0) -> list[GradCheckRow]:
    return [check_loss(name, trials, seed) for name in CASES]


def format_table(rows: list[GradCheckRow]) -> str:
    lines = ["loss\ttrials\tmax_rel_err\tstatus"]
    for r in rows:
        lines.append(f"{r.loss}\t{r.trials}\t{r.max_rel_err:.3e}\t{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
