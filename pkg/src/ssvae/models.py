"""State space models on finite alphabets plus a scalar functional-autoregressive model.

Finite models are tabular: a row-stochastic transition matrix, a row-stochastic
emission matrix, and an initial law, all optionally produced from a real
parameter vector through a per-row softmax chart.  Reference measures are fixed
to counting measure on the finite spaces, so every integral below is a finite
sum.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_ENUM_CAP = 1_000_000
DEFAULT_CLIP_RADIUS = 10.0

ROW_SUM_TOL = 1e-12


class ParameterShapeError(ValueError):
    """Parameter vector does not match the declared table shapes."""


class EnumerationTooLargeError(RuntimeError):
    """An exhaustive enumeration would exceed the configured cap."""


def enum_cap() -> int:
    """Enumeration cap, overridable through the SSVAE_ENUM_CAP env var."""
    raw = os.environ.get("SSVAE_ENUM_CAP")
    return int(raw) if raw else DEFAULT_ENUM_CAP


def check_enum_size(count: int, what: str, cap: int | None = None) -> None:
    limit = enum_cap() if cap is None else cap
    if count > limit:
        raise EnumerationTooLargeError(
            f"{what}: {count} items exceeds enumeration cap {limit}"
        )


def theta_dim(K: int, V: int) -> int:
    """Dimension of the minimal softmax chart for a K-state, V-symbol model."""
    return K * (K - 1) + K * (V - 1) + (K - 1)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Rows of probabilities from free logits; a trailing zero logit is implicit.

    ``logits`` has shape (rows, cols-1) and the result has shape (rows, cols),
    so an all-zero input yields uniform rows.
    """
    logits = np.asarray(logits, dtype=float)
    full = np.concatenate([logits, np.zeros((logits.shape[0], 1))], axis=1)
    full = full - full.max(axis=1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=1, keepdims=True)


def row_logits(row: np.ndarray) -> np.ndarray:
    """Inverse of :func:`softmax_rows` for one strictly positive row."""
    row = np.asarray(row, dtype=float)
    if np.any(row <= 0):
        raise ValueError("softmax chart requires strictly positive entries")
    return np.log(row[:-1]) - np.log(row[-1])


def split_theta(theta: np.ndarray, K: int, V: int):
    """Split a flat parameter vector into (transition, emission, initial) logits."""
    theta = np.asarray(theta, dtype=float).ravel()
    d = theta_dim(K, V)
    if theta.size != d:
        raise ParameterShapeError(
            f"theta has {theta.size} coordinates, expected {d} for K={K}, V={V}"
        )
    a = K * (K - 1)
    b = a + K * (V - 1)
    trans = theta[:a].reshape(K, K - 1)
    emis = theta[a:b].reshape(K, V - 1)
    init = theta[b:].reshape(1, K - 1)
    return trans, emis, init


def _frozen_array(a, shape=None, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    if shape is not None and out.shape != shape:
        raise ParameterShapeError(f"expected shape {shape}, got {out.shape}")
    out.setflags(write=False)
    return out


def _check_stochastic(name: str, table: np.ndarray) -> None:
    if np.any(table < 0):
        raise ValueError(f"{name} has negative entries")
    sums = table.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
        raise ValueError(f"{name} rows must sum to 1 within {ROW_SUM_TOL}")


@dataclass(frozen=True)
class FiniteSSM:
    """Tabular state space model with K latent states and V observation symbols.

    ``theta`` is kept when the tables come from the softmax chart; models built
    directly from tables carry ``theta=None`` and act as frozen (parameter-free)
    models in every family-level computation.
    """

    K: int
    V: int
    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray
    theta: np.ndarray | None = None
    clip_radius: float = DEFAULT_CLIP_RADIUS

    def __post_init__(self):
        if self.K < 1 or self.V < 1:
            raise ValueError("K and V must be at least 1")
        object.__setattr__(self, "transition", _frozen_array(self.transition, (self.K, self.K)))
        object.__setattr__(self, "emission", _frozen_array(self.emission, (self.K, self.V)))
        object.__setattr__(self, "initial", _frozen_array(self.initial, (self.K,)))
        if self.theta is not None:
            object.__setattr__(self, "theta", _frozen_array(self.theta))
        _check_stochastic("transition", self.transition)
        _check_stochastic("emission", self.emission)
        _check_stochastic("initial", self.initial[None, :])

    @property
    def d_theta(self) -> int:
        return theta_dim(self.K, self.V)

    def to_dict(self) -> dict:
        out = {
            "kind": "finite",
            "K": self.K,
            "V": self.V,
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
            "initial": self.initial.tolist(),
            "clip_radius": self.clip_radius,
        }
        if self.theta is not None:
            out["theta"] = self.theta.tolist()
        return out

    @staticmethod
    def from_dict(d: dict) -> "FiniteSSM":
        if d.get("theta") is not None:
            return build_finite_ssm(
                np.asarray(d["theta"], dtype=float),
                int(d["K"]),
                int(d["V"]),
                clip_radius=float(d.get("clip_radius", DEFAULT_CLIP_RADIUS)),
            )
        return FiniteSSM(
            K=int(d["K"]),
            V=int(d["V"]),
            transition=np.asarray(d["transition"], dtype=float),
            emission=np.asarray(d["emission"], dtype=float),
            initial=np.asarray(d["initial"], dtype=float),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @staticmethod
    def load(path: str | Path) -> "FiniteSSM":
        return FiniteSSM.from_dict(json.loads(Path(path).read_text()))


def build_finite_ssm(theta, K: int, V: int, clip_radius: float = DEFAULT_CLIP_RADIUS) -> FiniteSSM:
    """Realize a finite model from a flat parameter vector.

    The chart is one softmax per row with the last logit pinned to zero, and the
    parameter space is kept compact by clipping every coordinate to
    ``[-clip_radius, clip_radius]``.
    """
    theta = np.clip(np.asarray(theta, dtype=float).ravel(), -clip_radius, clip_radius)
    trans_l, emis_l, init_l = split_theta(theta, K, V)
    return FiniteSSM(
        K=K,
        V=V,
        transition=softmax_rows(trans_l),
        emission=softmax_rows(emis_l),
        initial=softmax_rows(init_l)[0],
        theta=theta,
        clip_radius=clip_radius,
    )


def finite_ssm_from_tables(transition, emission, initial) -> FiniteSSM:
    """Frozen finite model built directly from its tables (no parameter chart)."""
    transition = np.asarray(transition, dtype=float)
    emission = np.asarray(emission, dtype=float)
    initial = np.asarray(initial, dtype=float)
    K, V = emission.shape
    return FiniteSSM(K=K, V=V, transition=transition, emission=emission, initial=initial)


@dataclass(frozen=True)
class FiniteFamily:
    """Compact parameter box {theta : |theta - center| <= radius} for finite models.

    ``radius`` may be a scalar or a per-coordinate vector; zero radius freezes
    the corresponding coordinates, and a model without theta is the degenerate
    all-frozen family.
    """

    K: int
    V: int
    center: np.ndarray
    radius: np.ndarray
    clip_radius: float = DEFAULT_CLIP_RADIUS

    def __post_init__(self):
        d = theta_dim(self.K, self.V)
        center = np.asarray(self.center, dtype=float).ravel()
        if center.size != d:
            raise ParameterShapeError(f"center has {center.size} coordinates, expected {d}")
        radius = np.asarray(self.radius, dtype=float)
        if radius.ndim == 0:
            radius = np.full(d, float(radius))
        if radius.size != d or np.any(radius < 0):
            raise ParameterShapeError("radius must be a nonnegative scalar or length-d vector")
        object.__setattr__(self, "center", _frozen_array(np.clip(center, -self.clip_radius, self.clip_radius)))
        object.__setattr__(self, "radius", _frozen_array(radius))

    @property
    def d_theta(self) -> int:
        return theta_dim(self.K, self.V)

    @property
    def lo(self) -> np.ndarray:
        return np.clip(self.center - self.radius, -self.clip_radius, self.clip_radius)

    @property
    def hi(self) -> np.ndarray:
        return np.clip(self.center + self.radius, -self.clip_radius, self.clip_radius)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def realize(self, theta) -> FiniteSSM:
        return build_finite_ssm(self.project(theta), self.K, self.V, self.clip_radius)

    def center_model(self) -> FiniteSSM:
        return self.realize(self.center)

    def project(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float).ravel(), self.lo, self.hi)

    def sample_theta(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = (self.d_theta,) if n is None else (n, self.d_theta)
        return self.lo + (self.hi - self.lo) * rng.random(shape)

    @staticmethod
    def around(model: FiniteSSM, radius) -> "FiniteFamily":
        if model.theta is None:
            raise ParameterShapeError("cannot build a family around a frozen model")
        return FiniteFamily(model.K, model.V, model.theta, radius, model.clip_radius)

    @staticmethod
    def frozen(model: FiniteSSM) -> "FiniteFamily | FrozenFiniteFamily":
        if model.theta is None:
            return FrozenFiniteFamily(model)
        return FiniteFamily(model.K, model.V, model.theta, 0.0, model.clip_radius)


@dataclass(frozen=True)
class FrozenFiniteFamily:
    """Degenerate one-point family wrapping a table-built model."""

    model: FiniteSSM

    @property
    def K(self) -> int:
        return self.model.K

    @property
    def V(self) -> int:
        return self.model.V

    @property
    def d_theta(self) -> int:
        return self.model.d_theta

    @property
    def diameter(self) -> float:
        return 0.0

    def center_model(self) -> FiniteSSM:
        return self.model

    def realize(self, theta=None) -> FiniteSSM:
        return self.model

    def sample_theta(self, rng: np.random.Generator, n: int | None = None):
        raise ParameterShapeError("frozen family has no parameter chart")


@dataclass(frozen=True)
class FunctionalARModel:
    """Scalar autoregressive model with bounded Gaussian transition and emission.

    The latent mean map is ``x -> amp * tanh(slope * x + shift)`` so its range
    is recorded exactly, the transition noise sd lies in
    ``[noise_sd_low, noise_sd_high]`` with a positive lower end, and the
    emission is the bounded map ``emit_amp * tanh(emit_slope * x + emit_shift)``
    plus Gaussian noise.
    """

    amp: float
    slope: float
    shift: float
    noise_sd: float
    noise_sd_low: float
    noise_sd_high: float
    emit_amp: float
    emit_slope: float
    emit_shift: float
    emit_sd: float

    def __post_init__(self):
        if not (0 < self.noise_sd_low <= self.noise_sd <= self.noise_sd_high):
            raise ValueError("noise sd must satisfy 0 < low <= sd <= high")
        if self.emit_sd <= 0:
            raise ValueError("emission sd must be positive")

    def mean_fn(self, x):
        return self.amp * np.tanh(self.slope * np.asarray(x, dtype=float) + self.shift)

    def emission_mean(self, x):
        return self.emit_amp * np.tanh(self.emit_slope * np.asarray(x, dtype=float) + self.emit_shift)

    @property
    def mean_range(self) -> tuple[float, float]:
        a = abs(self.amp)
        return (-a, a)

    def transition_envelope(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """(mean norm bounds, precision eigenvalue bounds) of the latent kernel."""
        mean_bounds = (0.0, abs(self.amp))
        prec = (1.0 / self.noise_sd_high**2, 1.0 / self.noise_sd_low**2)
        return mean_bounds, prec

    def to_dict(self) -> dict:
        return {
            "kind": "functional-ar",
            "amp": self.amp,
            "slope": self.slope,
            "shift": self.shift,
            "noise_sd": self.noise_sd,
            "noise_sd_low": self.noise_sd_low,
            "noise_sd_high": self.noise_sd_high,
            "emit_amp": self.emit_amp,
            "emit_slope": self.emit_slope,
            "emit_shift": self.emit_shift,
            "emit_sd": self.emit_sd,
        }

    @staticmethod
    def from_dict(d: dict) -> "FunctionalARModel":
        keys = (
            "amp slope shift noise_sd noise_sd_low noise_sd_high "
            "emit_amp emit_slope emit_shift emit_sd"
        ).split()
        return FunctionalARModel(**{k: float(d[k]) for k in keys})


@dataclass(frozen=True)
class Dataset:
    """n independent observation sequences of length T+1 plus provenance."""

    n: int
    T: int
    sequences: np.ndarray
    generator: dict = field(default_factory=dict)
    V: int | None = None

    def __post_init__(self):
        if self.n < 1 or self.T < 0:
            raise ValueError("need n >= 1 and T >= 0")
        seq = np.asarray(self.sequences)
        if seq.shape != (self.n, self.T + 1):
            raise ParameterShapeError(
                f"sequences must have shape ({self.n}, {self.T + 1}), got {seq.shape}"
            )
        if self.V is not None:
            if seq.dtype.kind not in "iu":
                raise ValueError("finite-alphabet sequences must be integers")
            if seq.size and (seq.min() < 0 or seq.max() >= self.V):
                raise ValueError(f"observations must lie in [0, {self.V})")
        object.__setattr__(self, "sequences", _frozen_array(seq, dtype=seq.dtype))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "T": self.T,
            "V": self.V,
            "seed": self.generator.get("seed"),
            "sequences": self.sequences.tolist(),
            "generator": self.generator,
        }

    @staticmethod
    def from_dict(d: dict) -> "Dataset":
        V = d.get("V")
        seq = np.asarray(d["sequences"], dtype=np.int64 if V is not None else float)
        return Dataset(
            n=int(d["n"]),
            T=int(d["T"]),
            sequences=seq,
            generator=d.get("generator", {"seed": d.get("seed")}),
            V=None if V is None else int(V),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "Dataset":
        return Dataset.from_dict(json.loads(Path(path).read_text()))


def _sample_rows(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-cdf draw per row: rows (n, m) stochastic, u (n,) uniforms."""
    cdf = np.cumsum(rows, axis=1)
    idx = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(idx, rows.shape[1] - 1).astype(np.int64)


def sample_sequences(model, n: int, T: int, seed: int) -> Dataset:
    """Draw n independent trajectories of observations y_{0:T} from the model.

    Deterministic for a fixed seed; every call owns its generator so parallel
    callers never share RNG state.
    """
    if n < 1 or T < 0:
        raise ValueError("need n >= 1 and T >= 0")
    rng = np.random.default_rng(seed)
    if isinstance(model, FiniteSSM):
        obs = np.empty((n, T + 1), dtype=np.int64)
        x = _sample_rows(np.broadcast_to(model.initial, (n, model.K)), rng.random(n))
        for t in range(T + 1):
            if t > 0:
                x = _sample_rows(model.transition[x], rng.random(n))
            obs[:, t] = _sample_rows(model.emission[x], rng.random(n))
        gen = {"model": model.to_dict(), "seed": int(seed)}
        return Dataset(n=n, T=T, sequences=obs, generator=gen, V=model.V)
    if isinstance(model, FunctionalARModel):
        obs = np.empty((n, T + 1), dtype=float)
        x = model.mean_fn(np.zeros(n)) + model.noise_sd * rng.standard_normal(n)
        for t in range(T + 1):
            if t > 0:
                x = model.mean_fn(x) + model.noise_sd * rng.standard_normal(n)
            obs[:, t] = model.emission_mean(x) + model.emit_sd * rng.standard_normal(n)
        gen = {"model": model.to_dict(), "seed": int(seed)}
        return Dataset(n=n, T=T, sequences=obs, generator=gen)
    raise TypeError(f"cannot sample from {type(model).__name__}")


def all_sequences(V: int, T: int, cap: int | None = None) -> np.ndarray:
    """All V^(T+1) observation sequences in lexicographic order, shape (S, T+1)."""
    count = V ** (T + 1)
    check_enum_size(count, "observation sequences", cap)
    grids = np.indices((V,) * (T + 1)).reshape(T + 1, count).T
    return np.ascontiguousarray(grids.astype(np.int64))


def sequence_index(y: np.ndarray, V: int) -> np.ndarray:
    """Lexicographic index of sequences under :func:`all_sequences` ordering."""
    y = np.asarray(y, dtype=np.int64)
    T1 = y.shape[-1]
    weights = V ** np.arange(T1 - 1, -1, -1, dtype=np.int64)
    return y @ weights


def exact_sequence_law(model: FiniteSSM, T: int, cap: int | None = None) -> np.ndarray:
    """Exact law of y_{0:T} as a length V^(T+1) table in lexicographic order.

    Computed by propagating the joint (prefix, state) mass, so the result sums
    to 1 up to accumulated rounding.
    """
    check_enum_size(model.V ** (T + 1), "observation sequences", cap)
    # alpha has shape (prefixes, K); appending a symbol multiplies prefixes by V
    alpha = model.initial[None, :] * model.emission.T[:, :]  # (V, K) after t=0
    for _ in range(T):
        pred = alpha @ model.transition  # (P, K)
        alpha = (pred[:, None, :] * model.emission.T[None, :, :]).reshape(-1, model.K)
    return alpha.sum(axis=1)
