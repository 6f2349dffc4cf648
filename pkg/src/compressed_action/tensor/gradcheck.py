"""Finite-difference verification of analytic gradients."""

import logging
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from ..errors import NonDeterministicGraphError, PreconditionError
from .core import Tensor
from .params import ParamStore

logger = logging.getLogger(__name__)

Graph = Callable[[], Tensor]


ZERO_GRADIENT = 1e-7
REMEASURE_ABOVE = 1e-6
REMEASURE_STEPS = 2


def relative_error(analytic: float, numeric: float, atol: float = ZERO_GRADIENT) -> float:
    """|a - n| / max(|a|, |n|); 0 when both sides are below ``atol``.

    Parameters that cannot move the output (a key bias under a
    shift-invariant softmax) have an analytic gradient of exactly zero and a
    central difference at rounding-noise level; ``atol`` keeps that noise
    from counting as a relative error of order one.
    """
    scale = max(abs(analytic), abs(numeric))
    if scale < atol:
        return 0.0
    return abs(analytic - numeric) / scale


def _central_difference(graph: Graph, flat: np.ndarray, coord: int, step: float) -> float:
    original = flat[coord]
    flat[coord] = original + step
    f_plus = graph().item()
    flat[coord] = original - step
    f_minus = graph().item()
    flat[coord] = original
    return (f_plus - f_minus) / (2.0 * step)


def grad_check_by_path(
    graph: Graph,
    params: ParamStore,
    eps: float = 1e-5,
    samples_per_param: int = 6,
    seed: int = 0,
    paths: Optional[Iterable[str]] = None,
) -> Dict[str, float]:
    """Worst relative error per parameter path.

    ``graph`` must rebuild the scalar loss from the current parameter values
    on every call. A coordinate whose error at ``eps`` exceeds
    ``REMEASURE_ABOVE`` is measured again at ``eps/10`` and ``eps/100`` and
    keeps its smallest error: a step that straddles a ReLU or max-pool kink
    bends the central difference, while a wrong backward rule disagrees at
    every step.
    """
    if eps <= 0:
        raise PreconditionError(f"eps must be positive, got {eps}")
    selected = list(paths) if paths is not None else params.paths()

    first, second = graph().item(), graph().item()
    if first != second:
        raise NonDeterministicGraphError(
            f"graph returned {first!r} then {second!r} for identical parameters; gradient check aborted"
        )

    params.zero_grad()
    graph().backward()
    analytic = {path: params[path].grad.copy() for path in selected}

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for path in selected:
        tensor = params[path]
        flat = tensor.data.reshape(-1)
        count = min(samples_per_param, flat.size)
        coords = np.sort(rng.choice(flat.size, size=count, replace=False))
        worst = 0.0
        for coord in coords:
            exact = float(analytic[path].reshape(-1)[coord])
            step = eps
            error = relative_error(exact, _central_difference(graph, flat, coord, step))
            for _ in range(REMEASURE_STEPS):
                if error <= REMEASURE_ABOVE:
                    break
                step /= 10.0
                error = min(error, relative_error(exact, _central_difference(graph, flat, coord, step)))
            worst = max(worst, error)
        errors[path] = worst
        logger.debug("grad check %s: %.3e over %d coordinates", path, worst, count)
    return errors


def grad_check(
    graph: Graph,
    params: ParamStore,
    eps: float = 1e-5,
    samples_per_param: int = 6,
    seed: int = 0,
) -> float:
    """Max over sampled coordinates of ``relative_error(analytic, central difference)``."""
    errors = grad_check_by_path(graph, params, eps=eps, samples_per_param=samples_per_param, seed=seed)
    return max(errors.values()) if errors else 0.0
