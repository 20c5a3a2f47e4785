"""Central finite-difference oracle shared by the gradient tests.

The oracle never touches the autodiff tape: it re-evaluates the forward
function at perturbed float64 inputs and compares difference quotients
against the recorded gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from tiva.nn import Tensor


def numerical_grad(f: Callable[[Sequence[np.ndarray]], float],
                   arrays: list[np.ndarray], step: float = 1e-4) -> list[np.ndarray]:
    grads = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = f(arrays)
            flat[j] = orig - step
            lo = f(arrays)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def check_gradients(build: Callable[[list[Tensor]], Tensor],
                    arrays: list[np.ndarray], rtol: float = 1e-4,
                    step: float = 1e-4) -> float:
    """Build the graph from float64 leaves, backprop, compare to the oracle.

    Returns the worst relative error (norm ratio) across the inputs.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(leaves)
    loss.backward()
    analytic = [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]

    def eval_loss(arrs: Sequence[np.ndarray]) -> float:
        ts = [Tensor(a.copy()) for a in arrs]
        return float(build(ts).data)

    numeric = numerical_grad(eval_loss, arrays, step=step)
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        denom = np.linalg.norm(gn) + 1e-12
        err = np.linalg.norm(ga - gn) / denom
        worst = max(worst, err)
        assert err <= rtol, f"gradient mismatch: rel err {err:.3e} > {rtol}"
    return worst
