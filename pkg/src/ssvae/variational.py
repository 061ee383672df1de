"""Backward-factorized variational families and the per-sequence loss.

A variational law over latent paths is a terminal distribution together with
one backward kernel per time step, each produced from a flat parameter vector
through per-row softmax blocks.  The observation context a block may depend on
is controlled by ``context_mode``:

* ``full-prefix``: the kernel toward time t-1 sees the whole prefix y_{0:t-1}
  and the terminal law sees y_{0:T}; this family contains the exact backward
  decomposition of the smoothing law.
* ``window``: only the last w+1 symbols of the same context are visible.
* ``shared``: a single kernel and terminal law, blind to time and data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inference import InferenceResult, filter_forward
from .models import (
    FiniteSSM,
    ParameterShapeError,
    check_enum_size,
    softmax_rows,
    row_logits,
    _frozen_array,
)
from .optimize import minimize_box

CONTEXT_MODES = ("full-prefix", "window", "shared")


def _parse_mode(context_mode: str, w: int | None):
    if context_mode.startswith("window-"):
        return "window", int(context_mode.split("-", 1)[1])
    if context_mode not in CONTEXT_MODES:
        raise ValueError(f"unknown context mode {context_mode!r}")
    if context_mode == "window":
        if w is None:
            raise ValueError("window mode needs w")
        return "window", int(w)
    return context_mode, 0


class BackwardFamily:
    """Coordinate layout of a backward variational family for a fixed horizon."""

    def __init__(
        self,
        K: int,
        V: int,
        T: int,
        context_mode: str = "full-prefix",
        w: int | None = None,
        floor: float = 0.0,
        phi_clip: float = 10.0,
    ):
        if K < 1 or V < 1 or T < 0:
            raise ValueError("need K >= 1, V >= 1, T >= 0")
        if not 0.0 <= floor < 1.0:
            raise ValueError("floor must lie in [0, 1)")
        self.K = K
        self.V = V
        self.T = T
        self.context_mode, self.w = _parse_mode(context_mode, w)
        self.floor = float(floor)
        self.phi_clip = float(phi_clip)
        self._build_layout()

    def _ctx_len_kernel(self, t: int) -> int:
        # prefix available to the kernel toward time t-1 is y_{0:t-1}
        if self.context_mode == "full-prefix":
            return t
        if self.context_mode == "window":
            return min(self.w + 1, t)
        return 0

    def _ctx_len_terminal(self) -> int:
        if self.context_mode == "full-prefix":
            return self.T + 1
        if self.context_mode == "window":
            return min(self.w + 1, self.T + 1)
        return 0

    def _build_layout(self):
        K, V, T = self.K, self.V, self.T
        if self.context_mode == "shared":
            self._kernel_offsets = np.zeros(max(T, 1), dtype=np.int64)
            self.n_kernel_blocks = 1 if T >= 1 else 0
        else:
            offsets = []
            total = 0
            for t in range(1, T + 1):
                offsets.append(total)
                total += V ** self._ctx_len_kernel(t)
                check_enum_size(total, "variational kernel blocks")
            self._kernel_offsets = np.asarray(offsets, dtype=np.int64)
            self.n_kernel_blocks = total
        self.n_terminal_blocks = 1 if self.context_mode == "shared" else V ** self._ctx_len_terminal()
        check_enum_size(self.n_terminal_blocks, "variational terminal blocks")
        self._kernel_coords = self.n_kernel_blocks * K * (K - 1)
        self.d_phi = self._kernel_coords + self.n_terminal_blocks * (K - 1)

    # -- block addressing -------------------------------------------------

    def _encode(self, symbols: np.ndarray) -> np.ndarray:
        if symbols.shape[-1] == 0:
            return np.zeros(symbols.shape[:-1], dtype=np.int64)
        weights = self.V ** np.arange(symbols.shape[-1] - 1, -1, -1, dtype=np.int64)
        return symbols @ weights

    def kernel_block_index(self, t: int, y: np.ndarray) -> int:
        """Block used by the kernel toward time t-1 (1 <= t <= T) for sequence y."""
        if self.context_mode == "shared":
            return 0
        L = self._ctx_len_kernel(t)
        ctx = np.asarray(y, dtype=np.int64)[t - L : t]
        return int(self._kernel_offsets[t - 1] + self._encode(ctx))

    def terminal_block_index(self, y: np.ndarray) -> int:
        if self.context_mode == "shared":
            return 0
        L = self._ctx_len_terminal()
        ctx = np.asarray(y, dtype=np.int64)[self.T + 1 - L :]
        return int(self._encode(ctx))

    def sequence_block_indices(self, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Kernel and terminal block indices for a batch of sequences (S, T+1)."""
        Y = np.asarray(Y, dtype=np.int64)
        S = Y.shape[0]
        kern = np.zeros((S, self.T), dtype=np.int64)
        for t in range(1, self.T + 1):
            if self.context_mode != "shared":
                L = self._ctx_len_kernel(t)
                kern[:, t - 1] = self._kernel_offsets[t - 1] + self._encode(Y[:, t - L : t])
        if self.context_mode == "shared":
            term = np.zeros(S, dtype=np.int64)
        else:
            L = self._ctx_len_terminal()
            term = self._encode(Y[:, self.T + 1 - L :])
        return kern, term

    # -- coordinates ------------------------------------------------------

    def kernel_coord_slice(self, block: int, row: int) -> slice:
        start = (block * self.K + row) * (self.K - 1)
        return slice(start, start + self.K - 1)

    def terminal_coord_slice(self, block: int) -> slice:
        start = self._kernel_coords + block * (self.K - 1)
        return slice(start, start + self.K - 1)

    def _mix(self, rows: np.ndarray) -> np.ndarray:
        if self.floor == 0.0:
            return rows
        return (1.0 - self.floor) * rows + self.floor / self.K

    def kernel_tables(self, phi: np.ndarray) -> np.ndarray:
        """All kernel blocks as an array (n_kernel_blocks, K, K)."""
        if self.n_kernel_blocks == 0:
            return np.zeros((0, self.K, self.K))
        coords = phi[: self._kernel_coords].reshape(self.n_kernel_blocks * self.K, self.K - 1)
        return self._mix(softmax_rows(coords)).reshape(self.n_kernel_blocks, self.K, self.K)

    def terminal_tables(self, phi: np.ndarray) -> np.ndarray:
        coords = phi[self._kernel_coords :].reshape(self.n_terminal_blocks, self.K - 1)
        return self._mix(softmax_rows(coords))

    def check_phi(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float).ravel()
        if phi.size != self.d_phi:
            raise ParameterShapeError(f"phi has {phi.size} coordinates, expected {self.d_phi}")
        return np.clip(phi, -self.phi_clip, self.phi_clip)

    def covers_exact(self) -> bool:
        """Whether the family can represent the exact backward decomposition."""
        if self.context_mode == "full-prefix":
            return True
        if self.context_mode == "window":
            return self.w >= self.T
        return self.T == 0 and self.V == 1

    def spec_dict(self) -> dict:
        mode = self.context_mode if self.context_mode != "window" else f"window-{self.w}"
        return {
            "context_mode": mode,
            "w": self.w,
            "K": self.K,
            "V": self.V,
            "T": self.T,
            "floor": self.floor,
            "phi_clip": self.phi_clip,
        }

    @staticmethod
    def from_spec(d: dict) -> "BackwardFamily":
        return BackwardFamily(
            K=int(d["K"]),
            V=int(d["V"]),
            T=int(d["T"]),
            context_mode=d.get("context_mode", "full-prefix"),
            w=d.get("w"),
            floor=float(d.get("floor", 0.0)),
            phi_clip=float(d.get("phi_clip", 10.0)),
        )


@dataclass(frozen=True)
class BackwardVariational:
    """A backward variational law: a family layout plus one parameter vector."""

    family: BackwardFamily
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", _frozen_array(self.family.check_phi(self.phi)))

    def tables(self, y) -> tuple[np.ndarray, np.ndarray]:
        """(terminal law (K,), kernels (T, K, K)) for one observation sequence."""
        fam = self.family
        y = np.asarray(y, dtype=np.int64).ravel()
        if y.size != fam.T + 1:
            raise ParameterShapeError(f"sequence length {y.size} != T+1 = {fam.T + 1}")
        kern_blocks = fam.kernel_tables(self.phi)
        term_blocks = fam.terminal_tables(self.phi)
        kern_idx, term_idx = fam.sequence_block_indices(y[None, :])
        kernels = (
            kern_blocks[kern_idx[0]] if fam.T >= 1 else np.zeros((0, fam.K, fam.K))
        )
        return term_blocks[term_idx[0]], kernels

    def terminal(self, y) -> np.ndarray:
        return self.tables(y)[0]

    def kernel(self, t: int, y) -> np.ndarray:
        term, kernels = self.tables(y)
        if not 1 <= t <= self.family.T:
            raise ValueError(f"kernel index t must lie in [1, {self.family.T}]")
        return kernels[t - 1]

    def to_dict(self) -> dict:
        out = self.family.spec_dict()
        out["phi"] = self.phi.tolist()
        return out

    @staticmethod
    def from_dict(d: dict) -> "BackwardVariational":
        return BackwardVariational(BackwardFamily.from_spec(d), np.asarray(d["phi"], dtype=float))


@dataclass(frozen=True)
class VariationalFamily:
    """Compact box in phi-space around a backward family layout."""

    structure: BackwardFamily
    center: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        d = self.structure.d_phi
        center = np.asarray(self.center, dtype=float).ravel()
        if center.size != d:
            raise ParameterShapeError(f"center has {center.size} coordinates, expected {d}")
        radius = np.asarray(self.radius, dtype=float)
        if radius.ndim == 0:
            radius = np.full(d, float(radius))
        if radius.size != d or np.any(radius < 0):
            raise ParameterShapeError("radius must be nonnegative, scalar or length-d")
        clip = self.structure.phi_clip
        object.__setattr__(self, "center", _frozen_array(np.clip(center, -clip, clip)))
        object.__setattr__(self, "radius", _frozen_array(radius))

    @property
    def d_phi(self) -> int:
        return self.structure.d_phi

    @property
    def lo(self) -> np.ndarray:
        return np.clip(self.center - self.radius, -self.structure.phi_clip, self.structure.phi_clip)

    @property
    def hi(self) -> np.ndarray:
        return np.clip(self.center + self.radius, -self.structure.phi_clip, self.structure.phi_clip)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def realize(self, phi) -> BackwardVariational:
        return BackwardVariational(self.structure, np.clip(phi, self.lo, self.hi))

    def sample_phi(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = (self.d_phi,) if n is None else (n, self.d_phi)
        return self.lo + (self.hi - self.lo) * rng.random(shape)

    @staticmethod
    def boxed(structure: BackwardFamily, radius) -> "VariationalFamily":
        return VariationalFamily(structure, np.zeros(structure.d_phi), radius)


# -- KL chain and losses ----------------------------------------------------


def kl_rows(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Row-wise KL(q || p) with the 0 log 0 = 0 convention; +inf on support gaps."""
    q = np.atleast_2d(q)
    p = np.atleast_2d(p)
    out = np.zeros(q.shape[0])
    for i in range(q.shape[0]):
        pos = q[i] > 0
        if np.any(p[i][pos] <= 0):
            out[i] = np.inf
        else:
            out[i] = float(np.sum(q[i][pos] * (np.log(q[i][pos]) - np.log(p[i][pos]))))
    return out


@dataclass(frozen=True)
class KLChain:
    """Chain-rule decomposition of KL(Q || posterior) for one sequence."""

    total: float
    terminal: float
    steps: np.ndarray
    marginals: np.ndarray

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.total))


def q_marginals(terminal: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Time marginals of the backward-factorized law, shape (T+1, K)."""
    T = kernels.shape[0]
    K = terminal.shape[0]
    out = np.empty((T + 1, K))
    out[T] = terminal
    for t in range(T, 0, -1):
        out[t - 1] = out[t] @ kernels[t - 1]
    return out


def kl_backward_chain(q: BackwardVariational, inference: InferenceResult, y) -> KLChain:
    """Exact chain rule: terminal KL plus marginal-weighted per-step kernel KLs.

    Support gaps produce an infinite, flagged total rather than an exception.
    """
    term, kernels = q.tables(y)
    T = inference.T
    marg = q_marginals(term, kernels)
    terminal_kl = float(kl_rows(term[None, :], inference.filters[T][None, :])[0])
    steps = np.zeros(T)
    for t in range(1, T + 1):
        rows = kl_rows(kernels[t - 1], inference.backward[t - 1])
        if np.any((marg[t] > 0) & ~np.isfinite(rows)):
            steps[t - 1] = np.inf
        else:
            steps[t - 1] = float(np.dot(marg[t], np.where(marg[t] > 0, rows, 0.0)))
    total = terminal_kl + steps.sum()
    return KLChain(total=float(total), terminal=terminal_kl, steps=steps, marginals=marg)


@dataclass(frozen=True)
class LossValue:
    """ELBO-related quantities for one sequence; loss fields need a data law."""

    loglik: float
    kl: float
    elbo: float
    loglik_gap: float | None = None
    loss: float | None = None


def elbo(model: FiniteSSM, q: BackwardVariational, y) -> LossValue:
    """Evidence lower bound: log-likelihood minus the variational KL."""
    inf_res = filter_forward(model, y)
    chain = kl_backward_chain(q, inf_res, y)
    return LossValue(loglik=inf_res.loglik, kl=chain.total, elbo=inf_res.loglik - chain.total)


def loss_m(model: FiniteSSM, q: BackwardVariational, y, logp_data: float) -> LossValue:
    """Per-sequence loss: data-vs-model log ratio plus the variational KL."""
    inf_res = filter_forward(model, y)
    chain = kl_backward_chain(q, inf_res, y)
    gap = float(logp_data) - inf_res.loglik
    return LossValue(
        loglik=inf_res.loglik,
        kl=chain.total,
        elbo=inf_res.loglik - chain.total,
        loglik_gap=gap,
        loss=gap + chain.total,
    )


def _logp_data_fn(data_law, model_V: int):
    from .models import sequence_index

    if isinstance(data_law, FiniteSSM):
        return lambda y: filter_forward(data_law, y).loglik
    if callable(data_law):
        return data_law
    table = np.asarray(data_law, dtype=float)

    def lookup(y):
        return float(np.log(table[int(sequence_index(np.asarray(y), model_V))]))

    return lookup


def empirical_loss(model, q, dataset, data_law, weights=None) -> float:
    """Mean per-sequence loss over a dataset (or a weighted sequence set).

    ``dataset`` may be a Dataset or a plain (S, T+1) array; ``weights`` default
    to uniform 1/n, and a full enumeration weighted by the exact law turns this
    into the exact risk integral.
    """
    seqs = dataset.sequences if hasattr(dataset, "sequences") else np.asarray(dataset)
    if seqs.ndim == 1:
        seqs = seqs[None, :]
    n = seqs.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    if weights is None:
        weights = np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=float)
    logp = _logp_data_fn(data_law, model.V)
    uniq, inv = np.unique(seqs, axis=0, return_inverse=True)
    w_uniq = np.bincount(inv, weights=weights, minlength=uniq.shape[0])
    total = 0.0
    for i in range(uniq.shape[0]):
        if w_uniq[i] == 0:
            continue
        lv = loss_m(model, q, uniq[i], logp(uniq[i]))
        total += w_uniq[i] * lv.loss
    return float(total)


# -- exact decomposition and projections -------------------------------------


def prefix_filters(model: FiniteSSM, t: int, cap: int | None = None) -> np.ndarray:
    """Filter at time t-1 for every prefix y_{0:t-1}, shape (V^t, K); t >= 1."""
    check_enum_size(model.V**t, "observation prefixes", cap)
    alpha = model.initial[None, :] * model.emission.T
    for _ in range(t - 1):
        pred = alpha @ model.transition
        alpha = (pred[:, None, :] * model.emission.T[None, :, :]).reshape(-1, model.K)
    return alpha / alpha.sum(axis=1, keepdims=True)


def exact_posterior_phi(model: FiniteSSM, family: BackwardFamily) -> np.ndarray:
    """Parameters reproducing the exact backward decomposition of the posterior.

    Only available when the family's context covers the full prefix at every
    step (and the model tables are strictly positive, so the softmax chart can
    hit the target rows exactly).
    """
    if not family.covers_exact():
        raise ParameterShapeError("family context cannot represent the exact posterior")
    phi = np.zeros(family.d_phi)
    K, T = family.K, family.T
    if K == 1:
        return phi

    def logits_for(row):
        if family.floor:
            row = (row - family.floor / K) / (1.0 - family.floor)
            if np.any(row <= 0):
                raise ParameterShapeError("positivity floor excludes the exact posterior")
        return row_logits(row)

    for t in range(1, T + 1):
        filt = prefix_filters(model, t)
        for ctx_code in range(model.V**t):
            block = int(family._kernel_offsets[t - 1]) + ctx_code
            unnorm = filt[ctx_code][None, :] * model.transition.T
            rows = unnorm / unnorm.sum(axis=1, keepdims=True)
            for i in range(K):
                phi[family.kernel_coord_slice(block, i)] = logits_for(rows[i])
    filt_T = prefix_filters(model, T + 1)
    for ctx_code in range(model.V ** (T + 1)):
        phi[family.terminal_coord_slice(ctx_code)] = logits_for(filt_T[ctx_code])
    return np.clip(phi, -family.phi_clip, family.phi_clip)


def projected_posterior_phi(
    model: FiniteSSM, family: BackwardFamily, cap: int | None = None
) -> np.ndarray:
    """Best-effort start: per block, the probability-weighted geometric mean of
    the exact backward rows whose contexts collapse onto that block."""
    K, V, T = family.K, family.V, family.T
    phi = np.zeros(family.d_phi)
    if K == 1:
        return phi
    klog = np.zeros((max(family.n_kernel_blocks, 1), K, K))
    kw = np.zeros(max(family.n_kernel_blocks, 1))
    for t in range(1, T + 1):
        check_enum_size(V**t, "observation prefixes", cap)
        alpha = model.initial[None, :] * model.emission.T
        for _ in range(t - 1):
            pred = alpha @ model.transition
            alpha = (pred[:, None, :] * model.emission.T[None, :, :]).reshape(-1, K)
        mass = alpha.sum(axis=1)
        filt = alpha / mass[:, None]
        prefixes = np.indices((V,) * t).reshape(t, -1).T
        for code in range(V**t):
            block = family.kernel_block_index(t, np.concatenate([prefixes[code], np.zeros(T + 1 - t, np.int64)]))
            unnorm = filt[code][None, :] * model.transition.T
            rows = unnorm / unnorm.sum(axis=1, keepdims=True)
            klog[block] += mass[code] * np.log(rows)
            kw[block] += mass[code]
    tlog = np.zeros((family.n_terminal_blocks, K))
    tw = np.zeros(family.n_terminal_blocks)
    check_enum_size(V ** (T + 1), "observation sequences", cap)
    alpha = model.initial[None, :] * model.emission.T
    for _ in range(T):
        pred = alpha @ model.transition
        alpha = (pred[:, None, :] * model.emission.T[None, :, :]).reshape(-1, K)
    mass = alpha.sum(axis=1)
    filt = alpha / mass[:, None]
    seqs = np.indices((V,) * (T + 1)).reshape(T + 1, -1).T
    for code in range(V ** (T + 1)):
        block = family.terminal_block_index(seqs[code])
        tlog[block] += mass[code] * np.log(filt[code])
        tw[block] += mass[code]
    for b in range(family.n_kernel_blocks):
        if kw[b] > 0:
            lm = klog[b] / kw[b]
            for i in range(K):
                phi[family.kernel_coord_slice(b, i)] = lm[i, :-1] - lm[i, -1]
    for b in range(family.n_terminal_blocks):
        if tw[b] > 0:
            lm = tlog[b] / tw[b]
            phi[family.terminal_coord_slice(b)] = lm[:-1] - lm[-1]
    return np.clip(phi, -family.phi_clip, family.phi_clip)


# -- worst-step approximation quality ----------------------------------------


@dataclass
class ApproxResult:
    """Minimizer of the worst per-step backward KL over a sequence set.

    ``epsilon_hat`` is the worst chain-rule step term (terminal KL or a
    marginal-weighted kernel KL) at the returned parameters, the quantity the
    reconstruction bound multiplies by T+1; ``epsilon_rowmax`` is the stricter
    per-conditioning-state variant.
    """

    phi: np.ndarray
    epsilon_hat: float
    epsilon_rowmax: float
    per_sequence: np.ndarray
    converged: bool
    restart_values: np.ndarray

    @property
    def epsilon_lower_ci(self) -> float:
        return float(np.min(self.restart_values))


def _chain_terms(model, family, phi, y_set, inferences):
    """(n_seq, T+1) per-step KL terms and the overall row-max."""
    q = BackwardVariational(family, phi)
    T = family.T
    terms = np.zeros((len(y_set), T + 1))
    rowmax = 0.0
    for i, (y, res) in enumerate(zip(y_set, inferences)):
        chain = kl_backward_chain(q, res, y)
        terms[i, 0] = chain.terminal
        terms[i, 1:] = chain.steps
        term, kernels = q.tables(y)
        rowmax = max(rowmax, float(kl_rows(term[None, :], res.filters[T][None, :])[0]))
        for t in range(T):
            rowmax = max(rowmax, float(kl_rows(kernels[t], res.backward[t]).max()))
    return terms, rowmax


def best_backward_approximation(
    model: FiniteSSM,
    family: BackwardFamily,
    y_set: np.ndarray | None = None,
    seed: int = 0,
    starts: int = 6,
    max_iter: int = 400,
    betas=(8.0, 32.0, 128.0),
    weight_rounds: int = 3,
) -> ApproxResult:
    """Minimize the worst chain-rule KL term against the exact decomposition.

    The marginal weights inside each kernel term depend on the parameters, so
    the solver alternates analytic-gradient descent on a log-sum-exp softened
    max (with frozen weights) with weight refreshes; the reported value is the
    exact worst term at the final point.
    """
    from .models import all_sequences

    if y_set is None:
        y_set = all_sequences(model.V, family.T)
    y_set = np.asarray(y_set, dtype=np.int64)
    inferences = [filter_forward(model, y) for y in y_set]
    K, T = model.K, family.T
    lam = family.floor
    lo = np.full(family.d_phi, -family.phi_clip)
    hi = np.full(family.d_phi, family.phi_clip)
    # per (sequence, step): the block and target rows of that step
    kern_meta = [
        [(family.kernel_block_index(t, y), res.backward[t - 1]) for t in range(1, T + 1)]
        for y, res in zip(y_set, inferences)
    ]
    term_meta = [
        (family.terminal_block_index(y), res.filters[T]) for y, res in zip(y_set, inferences)
    ]

    def objective(beta, weights):
        # weights: (n_seq, T) frozen marginals of X_t for the kernel terms
        def fg(phi):
            kb = family.kernel_tables(phi)
            tb = family.terminal_tables(phi)
            n = len(y_set)
            vals = np.zeros((n, T + 1))
            for i in range(n):
                blk, target = term_meta[i]
                vals[i, 0] = kl_rows(tb[blk][None, :], target[None, :])[0]
                for t in range(1, T + 1):
                    b, rows = kern_meta[i][t - 1]
                    vals[i, t] = float(weights[i, t - 1] @ kl_rows(kb[b], rows))
            flat = vals.ravel()
            mx = flat.max()
            wts = np.exp(beta * (flat - mx))
            wts /= wts.sum()
            value = mx + np.log(np.sum(np.exp(beta * (flat - mx)))) / beta
            wts = wts.reshape(n, T + 1)
            grad = np.zeros(family.d_phi)

            def kl_row_grad(qrow, target):
                r = np.log(qrow) - np.log(target)
                s = (qrow - lam / K) / (1.0 - lam) if lam else qrow
                inner = s * r
                return (1.0 - lam) * (inner - s * inner.sum())[: K - 1]

            for i in range(n):
                blk, target = term_meta[i]
                grad[family.terminal_coord_slice(blk)] += wts[i, 0] * kl_row_grad(tb[blk], target)
                for t in range(1, T + 1):
                    b, rows = kern_meta[i][t - 1]
                    for j in range(K):
                        if weights[i, t - 1][j] == 0.0:
                            continue
                        grad[family.kernel_coord_slice(b, j)] += (
                            wts[i, t] * weights[i, t - 1][j] * kl_row_grad(kb[b, j], rows[j])
                        )
            return value, grad

        return fg

    def marginal_weights(phi):
        q = BackwardVariational(family, phi)
        out = np.zeros((len(y_set), T, K))
        for i, y in enumerate(y_set):
            term, kernels = q.tables(y)
            out[i] = q_marginals(term, kernels)[1:]
        return out

    rng = np.random.default_rng(seed)
    start_points = [projected_posterior_phi(model, family)]
    start_points += [rng.uniform(-1.5, 1.5, family.d_phi) for _ in range(max(0, starts - 1))]
    best_phi = None
    best_val = np.inf
    restart_values = []
    converged = True
    for x0 in start_points:
        x = np.asarray(x0, dtype=float)
        ok = True
        if family.d_phi:
            for _ in range(weight_rounds):
                weights = marginal_weights(x)
                for beta in betas:
                    res = minimize_box(objective(beta, weights), x, lo, hi, max_iter=max_iter, tol=1e-12)
                    x = res.x
                    ok = ok and res.converged
        terms, _ = _chain_terms(model, family, x, y_set, inferences)
        val = float(terms.max())
        restart_values.append(val)
        if val < best_val:
            best_val, best_phi = val, x
            converged = ok
    terms, rowmax = _chain_terms(model, family, best_phi, y_set, inferences)
    return ApproxResult(
        phi=best_phi,
        epsilon_hat=best_val,
        epsilon_rowmax=rowmax,
        per_sequence=terms,
        converged=converged,
        restart_values=np.asarray(restart_values),
    )
