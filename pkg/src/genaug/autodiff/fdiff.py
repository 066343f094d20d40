"""Central finite-difference gradient oracle used throughout testing."""

import numpy as np

from .tensor import NonFiniteValueError, ParameterSet


def finite_difference_oracle(f, params: ParameterSet, h: float) -> dict[str, np.ndarray]:
    """(f(p + h e_i) - f(p - h e_i)) / (2h) per trainable coordinate.

    ``f`` must be deterministic and evaluable at the perturbed points; the
    parameter set is restored before returning.
    """
    if not h > 0:
        raise ValueError("step size h must be positive")
    base = params.get_flat()
    slices = params.flat_slices()

    def coord_name(i):
        for n, s in slices.items():
            if s.start <= i < s.stop:
                return f"{n}[{i - s.start}]"
        return str(i)

    grad = np.zeros_like(base)
    try:
        for i in range(base.size):
            x = base.copy()
            x[i] = base[i] + h
            params.set_flat(x)
            fp = float(f(params))
            x[i] = base[i] - h
            params.set_flat(x)
            fm = float(f(params))
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteValueError(
                    f"objective non-finite at perturbed coordinate {coord_name(i)}"
                )
            grad[i] = (fp - fm) / (2.0 * h)
    finally:
        params.set_flat(base)
    return {n: grad[s].reshape(params[n].shape) for n, s in slices.items()}


def flatten_gradients(params: ParameterSet, grads: dict[str, np.ndarray]) -> np.ndarray:
    """Concatenate a gradient dict in the parameter set's trainable order."""
    parts = [np.asarray(grads[n]).ravel() for n in params.trainable_names()]
    return np.concatenate(parts) if parts else np.zeros(0)


def relative_error(approx: np.ndarray, ref: np.ndarray) -> float:
    """||approx - ref|| / max(||ref||, tiny) over flattened gradients."""
    approx = np.asarray(approx, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(ref)), 1e-300)
    return float(np.linalg.norm(approx - ref) / denom)
