"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from .tensor import Tensor, backward, zero_grads


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and numeric gradients.

    ``f`` is a zero-argument callable returning a scalar loss Tensor
    built from the current values of ``params`` (dict or sequence of
    leaf tensors).  Every parameter entry is perturbed by +/- eps and
    the central difference compared against the gradient produced by
    ``backward``.  Relative error is |analytic - numeric| / max(1, |analytic|).

    ``f`` is evaluated twice up front; a mismatch means it is not
    deterministic and the check would be meaningless.
    """
    if not (0.0 < eps <= 1e-3):
        raise ValueError(f"grad_check: eps must be in (0, 1e-3], got {eps}")
    tensors = list(params.values()) if isinstance(params, dict) else list(params)
    for t in tensors:
        if not isinstance(t, Tensor):
            raise TypeError("grad_check: params must contain Tensors")

    first = f().item()
    second = f().item()
    if first != second:
        raise ValueError(
            f"grad_check: f is not deterministic ({first!r} != {second!r})"
        )

    zero_grads(tensors)
    backward(f())

    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        analytic = t.grad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = f().item()
            flat[i] = saved - eps
            f_minus = f().item()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            if err > worst:
                worst = err
    return worst
