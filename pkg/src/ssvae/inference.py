"""Exact filtering, backward decomposition of the smoothing law, and oracles.

The forward pass keeps filters in the linear domain with per-step
renormalization and accumulates the log of the normalizers, which is stable at
the horizon lengths this library targets.  The path-enumeration functions are
the independent oracles every recursive quantity is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import FiniteSSM, check_enum_size, _frozen_array


class ImpossibleObservationError(RuntimeError):
    """Some observation has zero probability under the model."""


@dataclass(frozen=True)
class InferenceResult:
    """Filters, backward kernels, and the log-likelihood for one sequence.

    ``backward[t]`` maps the state at time t+1 to the conditional law of the
    state at time t: ``backward[t][j, i] = P(X_t = i | X_{t+1} = j, y_{0:t})``.
    """

    filters: np.ndarray
    backward: np.ndarray
    loglik: float
    step_logliks: np.ndarray
    degenerate_rows: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "filters", _frozen_array(self.filters))
        object.__setattr__(self, "backward", _frozen_array(self.backward))
        object.__setattr__(self, "step_logliks", _frozen_array(self.step_logliks))

    @property
    def T(self) -> int:
        return self.filters.shape[0] - 1

    @property
    def K(self) -> int:
        return self.filters.shape[1]

    def to_dict(self) -> dict:
        return {
            "filters": self.filters.tolist(),
            "backward": self.backward.tolist(),
            "loglik": self.loglik,
            "step_logliks": self.step_logliks.tolist(),
            "degenerate_rows": list(self.degenerate_rows),
        }


@dataclass(frozen=True)
class PathPosterior:
    """Posterior over all K^(T+1) latent paths, lexicographic in (x_0..x_T)."""

    K: int
    T: int
    probs: np.ndarray
    log_normalizer: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen_array(self.probs))


def all_paths(K: int, T: int, cap: int | None = None) -> np.ndarray:
    """All latent paths as an integer array of shape (K^(T+1), T+1)."""
    count = K ** (T + 1)
    check_enum_size(count, "latent paths", cap)
    grids = np.indices((K,) * (T + 1)).reshape(T + 1, count).T
    return np.ascontiguousarray(grids.astype(np.int64))


def _validate_obs(model: FiniteSSM, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.size == 0:
        raise ValueError("observation sequence is empty")
    if y.min() < 0 or y.max() >= model.V:
        raise ValueError(f"observations must be symbols in [0, {model.V})")
    return y


def filter_forward(model: FiniteSSM, y) -> InferenceResult:
    """Normalized forward recursion producing filters, backward kernels, loglik."""
    y = _validate_obs(model, y)
    T = y.size - 1
    filters = np.empty((T + 1, model.K))
    steps = np.empty(T + 1)
    for t in range(T + 1):
        pred = model.initial if t == 0 else filters[t - 1] @ model.transition
        unnorm = pred * model.emission[:, y[t]]
        norm = unnorm.sum()
        if norm <= 0.0:
            raise ImpossibleObservationError(
                f"observation {y[t]} at time {t} has zero probability"
            )
        filters[t] = unnorm / norm
        steps[t] = np.log(norm)
    backward, degenerate = backward_kernels(model, filters, return_flags=True)
    return InferenceResult(
        filters=filters,
        backward=backward,
        loglik=float(steps.sum()),
        step_logliks=steps,
        degenerate_rows=degenerate,
    )


def backward_kernels(model: FiniteSSM, filters, return_flags: bool = False):
    """Backward decomposition kernels from the filtering laws.

    Row j of ``out[t]`` is proportional to ``filters[t] * transition[:, j]``.  A
    zero row (filter support disjoint from the transitions into j) is replaced
    by a uniform row and flagged rather than raising, so fuzz suites keep
    running on adversarial models.
    """
    filters = np.asarray(filters, dtype=float)
    T = filters.shape[0] - 1
    out = np.empty((T, model.K, model.K))
    flags = []
    for t in range(T):
        unnorm = filters[t][None, :] * model.transition.T  # (x_{t+1}, x_t)
        norms = unnorm.sum(axis=1, keepdims=True)
        zero = norms[:, 0] <= 0.0
        if np.any(zero):
            flags.extend((t, int(j)) for j in np.nonzero(zero)[0])
            unnorm[zero] = 1.0
            norms = unnorm.sum(axis=1, keepdims=True)
        out[t] = unnorm / norms
    if return_flags:
        return out, tuple(flags)
    return out


def smoothing_from_backward(result: InferenceResult, cap: int | None = None) -> PathPosterior:
    """Joint smoothing law evaluated through the terminal filter and backward kernels."""
    K, T = result.K, result.T
    paths = all_paths(K, T, cap)
    with np.errstate(divide="ignore"):
        logp = np.log(result.filters[T][paths[:, T]])
        for t in range(T):
            logp += np.log(result.backward[t][paths[:, t + 1], paths[:, t]])
    return PathPosterior(K=K, T=T, probs=np.exp(logp), log_normalizer=result.loglik)


def enumerate_posterior(model: FiniteSSM, y, cap: int | None = None) -> PathPosterior:
    """Brute-force smoothing oracle: normalize the joint density over all paths.

    The normalizer is the exact sequence likelihood, returned in log form.
    """
    y = _validate_obs(model, y)
    T = y.size - 1
    paths = all_paths(model.K, T, cap)
    with np.errstate(divide="ignore"):
        logjoint = np.log(model.initial[paths[:, 0]]) + np.log(model.emission[paths[:, 0], y[0]])
        for t in range(1, T + 1):
            logjoint += np.log(model.transition[paths[:, t - 1], paths[:, t]])
            logjoint += np.log(model.emission[paths[:, t], y[t]])
    mx = logjoint.max()
    if not np.isfinite(mx):
        raise ImpossibleObservationError("sequence has zero probability under the model")
    w = np.exp(logjoint - mx)
    total = w.sum()
    return PathPosterior(
        K=model.K, T=T, probs=w / total, log_normalizer=float(mx + np.log(total))
    )


def tv_distance(p, q) -> float:
    """Total variation distance with the 1/2 L1 convention, so values lie in [0, 1]."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())
