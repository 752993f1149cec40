"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, backward, get_default_dtype, no_grad

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class ParameterCheck:
    name: str
    max_rel_error: float
    checked: int
    worst_index: Optional[tuple[int, ...]] = None
    analytic: float = 0.0
    numeric: float = 0.0


@dataclass(slots=True)
class GradCheckReport:
    """Outcome of one gradient check; a breach is reported, never raised."""

    tol: float
    h: float
    parameters: list[ParameterCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.parameters), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def summary(self) -> str:
        parts = [f"{p.name}={p.max_rel_error:.3e}" for p in self.parameters]
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} ({', '.join(parts)})"


def relative_error(analytic: np.ndarray | float, numeric: np.ndarray | float) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    *,
    h: float = 1e-3,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    exclude: Optional[Mapping[str, np.ndarray]] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare d(fn)/d(param) from :func:`backward` with central differences.

    ``fn`` must rebuild its graph from the current parameter values on each
    call. ``max_entries`` samples that many entries per parameter; ``exclude``
    maps a parameter name to a boolean mask of entries to skip (non-differentiable
    points such as relu at 0).
    """

    if get_default_dtype() != np.float64:
        raise ShapeError("grad_check needs 64-bit mode; wrap the call in default_dtype(np.float64)")
    named = dict(params) if isinstance(params, Mapping) else {f"param{i}": p for i, p in enumerate(params)}
    rng = rng or np.random.default_rng(0)

    for tensor in named.values():
        tensor.zero_grad()
    loss = fn()
    backward(loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros(t.shape)) for name, t in named.items()
    }

    report = GradCheckReport(tol=tol, h=h)
    for name, tensor in named.items():
        candidates = np.arange(tensor.size)
        if exclude and name in exclude:
            candidates = candidates[~np.asarray(exclude[name], dtype=bool).reshape(-1)]
        if max_entries is not None and candidates.size > max_entries:
            candidates = np.sort(rng.choice(candidates, size=max_entries, replace=False))
        original = tensor.data.copy()
        check = ParameterCheck(name=name, max_rel_error=0.0, checked=int(candidates.size))
        try:
            for flat in candidates:
                index = np.unravel_index(int(flat), tensor.shape)
                shifted = original.copy()
                shifted[index] = original[index] + h
                tensor.assign_(shifted)
                with no_grad():
                    plus = fn().item()
                shifted[index] = original[index] - h
                tensor.assign_(shifted)
                with no_grad():
                    minus = fn().item()
                numeric = (plus - minus) / (2.0 * h)
                exact = float(analytic[name][index])
                error = float(relative_error(exact, numeric))
                if error >= check.max_rel_error:
                    check.max_rel_error = error
                    check.worst_index = tuple(int(i) for i in index)
                    check.analytic, check.numeric = exact, numeric
        finally:
            tensor.assign_(original)
            tensor.zero_grad()
        report.parameters.append(check)
    logger.debug("grad_check %s", report.summary())
    return report


__all__ = ["GradCheckReport", "ParameterCheck", "grad_check", "relative_error"]
