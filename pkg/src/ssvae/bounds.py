"""Mixing certificates, Lipschitz envelopes, explicit risk-bound constants, and
the numerical falsification suites that try to break each bound.

Conventions used throughout (fixed once, documented here):

* The minorizing/majorizing reference measures on the state space are uniform,
  so ``sigma_minus = K * min`` and ``sigma_plus = K * max`` over the transition
  and initial entries of the whole parameter box, and the variational bounds
  ``theta_minus(y) / theta_plus(y)`` are the analogous scaled extremes of the
  kernel and terminal tables a sequence touches.
* ``c_minus(y) / c_plus(y)`` are emission mass bounds in the counting-measure
  convention (plain sums over states); formulas that need the normalized
  variant divide by K explicitly.
* Total variation uses the 1/2 L1 convention, so contraction coefficients lie
  in [0, 1].
* Every check returns a verdict in {holds, violated, inapplicable} with a
  witness instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .inference import filter_forward, tv_distance
from .models import (
    FiniteFamily,
    FiniteSSM,
    FrozenFiniteFamily,
    split_theta,
)
from .variational import (
    BackwardFamily,
    BackwardVariational,
    VariationalFamily,
    kl_backward_chain,
)

GRID_POINTS = 33
ENVELOPE_INFLATION = 1.05


# -- verdicts -----------------------------------------------------------------


@dataclass
class Verdict:
    """Machine-checkable outcome of one bound suite."""

    name: str
    status: str  # "holds" | "violated" | "inapplicable"
    n_trials: int = 0
    worst_slack: float | None = None
    witness: dict | None = None
    reason: str | None = None
    details: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.status == "holds"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "n_trials": self.n_trials,
            "worst_slack": self.worst_slack,
            "witness": self.witness,
            "reason": self.reason,
            "details": self.details,
        }


def _verdict_from_slacks(name: str, slacks: np.ndarray, witness_fn, details=None) -> Verdict:
    slacks = np.asarray(slacks, dtype=float)
    worst = float(slacks.min()) if slacks.size else float("nan")
    if slacks.size and worst < 0:
        return Verdict(
            name=name,
            status="violated",
            n_trials=slacks.size,
            worst_slack=worst,
            witness=witness_fn(int(slacks.argmin())),
            details=details or {},
        )
    return Verdict(
        name=name,
        status="holds",
        n_trials=slacks.size,
        worst_slack=worst,
        details=details or {},
    )


# -- softmax entry bounds over a logits box -----------------------------------


def softmax_entry_bounds(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-entry min/max of softmax rows over a per-coordinate logit box.

    ``lo`` and ``hi`` have shape (rows, K-1); the trailing zero logit is
    implicit.  Each entry is monotone in every free logit, so the extremes sit
    at box corners and come out in closed form.
    """
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    elo = np.exp(lo)
    ehi = np.exp(hi)
    s_lo = elo.sum(axis=1, keepdims=True)
    s_hi = ehi.sum(axis=1, keepdims=True)
    mins_free = elo / (elo + (s_hi - ehi) + 1.0)
    maxs_free = ehi / (ehi + (s_lo - elo) + 1.0)
    mins_last = 1.0 / (s_hi + 1.0)
    maxs_last = 1.0 / (s_lo + 1.0)
    return (
        np.concatenate([mins_free, mins_last], axis=1),
        np.concatenate([maxs_free, maxs_last], axis=1),
    )


def _mix_bounds(mins, maxs, floor, K):
    if floor:
        mins = (1.0 - floor) * mins + floor / K
        maxs = (1.0 - floor) * maxs + floor / K
    return mins, maxs


def _as_finite_family(model_or_family):
    if isinstance(model_or_family, FiniteSSM):
        return FiniteFamily.frozen(model_or_family)
    return model_or_family


def _as_variational_family(q) -> VariationalFamily:
    if isinstance(q, BackwardVariational):
        return VariationalFamily(q.family, q.phi, 0.0)
    return q


def _finite_table_bounds(family):
    """(min, max) tables for transition (K,K), emission (K,V), initial (K,)."""
    if isinstance(family, FrozenFiniteFamily):
        m = family.model
        return (
            (m.transition, m.transition),
            (m.emission, m.emission),
            (m.initial, m.initial),
        )
    lo_t, lo_e, lo_i = split_theta(family.lo, family.K, family.V)
    hi_t, hi_e, hi_i = split_theta(family.hi, family.K, family.V)
    tmin, tmax = softmax_entry_bounds(lo_t, hi_t)
    emin, emax = softmax_entry_bounds(lo_e, hi_e)
    imin, imax = softmax_entry_bounds(lo_i, hi_i)
    return (tmin, tmax), (emin, emax), (imin[0], imax[0])


def _variational_table_bounds(qfam: VariationalFamily):
    st = qfam.structure
    K = st.K
    nk = st.n_kernel_blocks
    kmin = np.zeros((nk, K, K))
    kmax = np.zeros((nk, K, K))
    if nk:
        lo = qfam.lo[: nk * K * (K - 1)].reshape(nk * K, K - 1)
        hi = qfam.hi[: nk * K * (K - 1)].reshape(nk * K, K - 1)
        mins, maxs = softmax_entry_bounds(lo, hi)
        mins, maxs = _mix_bounds(mins, maxs, st.floor, K)
        kmin = mins.reshape(nk, K, K)
        kmax = maxs.reshape(nk, K, K)
    lo = qfam.lo[nk * K * (K - 1) :].reshape(st.n_terminal_blocks, K - 1)
    hi = qfam.hi[nk * K * (K - 1) :].reshape(st.n_terminal_blocks, K - 1)
    tmin, tmax = softmax_entry_bounds(lo, hi)
    tmin, tmax = _mix_bounds(tmin, tmax, st.floor, K)
    return kmin, kmax, tmin, tmax


# -- mixing certificate --------------------------------------------------------


@dataclass
class MixingCertificate:
    """Two-sided minorization constants for a model family and a variational box."""

    K: int
    V: int
    sigma_minus: float
    sigma_plus: float
    epsilon: float
    gbar: np.ndarray  # (V, K) sup of emission over the box
    gunder: np.ndarray  # (V, K) inf
    zbar: np.ndarray  # (K,) sup of the initial law
    zunder: np.ndarray
    c_minus: np.ndarray  # (V,) counting-measure emission mass lower bounds
    c_plus: np.ndarray
    q_structure: BackwardFamily | None
    kernel_min: np.ndarray | None
    kernel_max: np.ndarray | None
    terminal_min: np.ndarray | None
    terminal_max: np.ndarray | None
    verdict: Verdict = field(default_factory=lambda: Verdict("mixing-positivity", "holds"))

    @property
    def holds(self) -> bool:
        return self.verdict.holds

    def c_minus_eta(self, sym: int) -> float:
        return float(self.c_minus[sym]) / self.K

    def c_plus_eta(self, sym: int) -> float:
        return float(self.c_plus[sym]) / self.K

    def _q_entry_extremes(self, y) -> tuple[float, float]:
        st = self.q_structure
        if st is None:
            raise ValueError("certificate has no variational part")
        y = np.asarray(y, dtype=np.int64).ravel()
        vals_min = [self.terminal_min[st.terminal_block_index(y)].min()]
        vals_max = [self.terminal_max[st.terminal_block_index(y)].max()]
        for t in range(1, st.T + 1):
            b = st.kernel_block_index(t, y)
            vals_min.append(self.kernel_min[b].min())
            vals_max.append(self.kernel_max[b].max())
        return float(min(vals_min)), float(max(vals_max))

    def theta_minus(self, y) -> float:
        return self.K * self._q_entry_extremes(y)[0]

    def theta_plus(self, y) -> float:
        return self.K * self._q_entry_extremes(y)[1]

    def rho(self, y) -> float:
        return 1.0 - self.theta_minus(y)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "V": self.V,
            "sigma_minus": self.sigma_minus,
            "sigma_plus": self.sigma_plus,
            "epsilon": self.epsilon,
            "c_minus": self.c_minus.tolist(),
            "c_plus": self.c_plus.tolist(),
            "verdict": self.verdict.to_dict(),
        }


def certify_mixing(model_or_family, q=None) -> MixingCertificate:
    """Compute the mixing certificate, or a positivity-violation report.

    A single model (or a zero-radius box) certifies itself; a family certifies
    every parameter in its box because the per-entry extremes over the box are
    exact for the softmax chart.
    """
    family = _as_finite_family(model_or_family)
    K, V = family.K, family.V
    (tmin, tmax), (emin, emax), (imin, imax) = _finite_table_bounds(family)
    sig_lo = K * float(min(tmin.min(), imin.min()))
    sig_hi = K * float(max(tmax.max(), imax.max()))
    violations = []
    if sig_lo <= 0.0:
        loc = "transition" if tmin.min() <= imin.min() else "initial"
        violations.append({"bound": "sigma_minus", "table": loc, "value": sig_lo})
    q_structure = kernel_min = kernel_max = terminal_min = terminal_max = None
    if q is not None:
        qfam = _as_variational_family(q)
        q_structure = qfam.structure
        kernel_min, kernel_max, terminal_min, terminal_max = _variational_table_bounds(qfam)
        q_lo = min(
            kernel_min.min() if kernel_min.size else 1.0, terminal_min.min()
        )
        if q_lo <= 0.0:
            violations.append({"bound": "theta_minus", "table": "variational", "value": K * q_lo})
    verdict = Verdict(
        name="mixing-positivity",
        status="violated" if violations else "holds",
        n_trials=1,
        witness=violations[0] if violations else None,
        details={"violations": violations},
    )
    return MixingCertificate(
        K=K,
        V=V,
        sigma_minus=sig_lo,
        sigma_plus=sig_hi,
        epsilon=1.0 - sig_lo / sig_hi if sig_hi > 0 else 1.0,
        gbar=emax.T.copy(),
        gunder=emin.T.copy(),
        zbar=imax.copy(),
        zunder=imin.copy(),
        c_minus=emin.sum(axis=0),
        c_plus=emax.sum(axis=0),
        q_structure=q_structure,
        kernel_min=kernel_min,
        kernel_max=kernel_max,
        terminal_min=terminal_min,
        terminal_max=terminal_max,
        verdict=verdict,
    )


# -- Lipschitz envelopes -------------------------------------------------------


def _row_gradnorm_envelope(lo, hi, free_mask, floor=0.0, grid=GRID_POINTS):
    """Max over a logit box of the entrywise softmax gradient norms.

    Returns one envelope per entry (length K).  Only coordinates marked free
    contribute to the norm; frozen rows yield exact zeros.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.size
    K = d + 1
    if not np.any(free_mask):
        return np.zeros(K)
    axes = [
        np.linspace(lo[i], hi[i], grid) if free_mask[i] else np.array([lo[i]])
        for i in range(d)
    ]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    full = np.concatenate([pts, np.zeros((pts.shape[0], 1))], axis=1)
    full -= full.max(axis=1, keepdims=True)
    p = np.exp(full)
    p /= p.sum(axis=1, keepdims=True)
    base = (p[:, :d][:, free_mask] ** 2).sum(axis=1)
    out = np.empty(K)
    for j in range(K):
        adj = base + ((1.0 - 2.0 * p[:, j]) if (j < d and free_mask[j]) else 0.0)
        out[j] = float(np.max(p[:, j] * np.sqrt(np.maximum(adj, 0.0))))
    return (1.0 - floor) * out


@dataclass
class LipschitzEnvelopes:
    """Variable-dependent Lipschitz coefficients of all table entries.

    ``M[x, x']`` bounds the transition sensitivity, ``G[y, x]`` the emission,
    ``Z[x]`` the initial law, and the variational arrays are indexed by block.
    Envelopes come from gradient-norm maximization on a grid over the parameter
    box, inflated by a safety margin.
    """

    M: np.ndarray  # (K, K)
    G: np.ndarray  # (V, K)
    Z: np.ndarray  # (K,)
    K_kernel: np.ndarray  # (n_kernel_blocks, K, K)
    K_terminal: np.ndarray  # (n_terminal_blocks, K)
    q_structure: BackwardFamily | None

    def eta_G(self, sym: int) -> float:
        return float(self.G[sym].sum()) / self.G.shape[1]

    def mu_G(self, sym: int) -> float:
        return float(self.G[sym].sum())

    def eta_mu_M_gg(self, cert: MixingCertificate, sym_prev: int, sym: int) -> float:
        """(1/K) sum_{x,x'} M(x,x') gbar^{prev}(x) gbar^{cur}(x')."""
        K = self.M.shape[0]
        return float(cert.gbar[sym_prev] @ self.M @ cert.gbar[sym]) / K

    def mu_Z_gbar(self, cert: MixingCertificate, sym: int) -> float:
        return float(self.Z @ cert.gbar[sym])

    def lamlam_K(self, t: int, y) -> float:
        """(1/K^2) double sum of the kernel envelope used at step t for y."""
        st = self.q_structure
        b = st.kernel_block_index(t, y)
        K = st.K
        return float(self.K_kernel[b].sum()) / (K * K)

    def lam_K_terminal(self, y) -> float:
        st = self.q_structure
        return float(self.K_terminal[st.terminal_block_index(y)].sum()) / st.K


def compute_envelopes(
    model_or_family,
    q=None,
    grid: int = GRID_POINTS,
    inflation: float = ENVELOPE_INFLATION,
) -> LipschitzEnvelopes:
    family = _as_finite_family(model_or_family)
    K, V = family.K, family.V
    if isinstance(family, FrozenFiniteFamily):
        M = np.zeros((K, K))
        G = np.zeros((V, K))
        Z = np.zeros(K)
    else:
        lo_t, lo_e, lo_i = split_theta(family.lo, K, V)
        hi_t, hi_e, hi_i = split_theta(family.hi, K, V)
        r_t, r_e, r_i = split_theta(family.radius, K, V)
        M = np.stack(
            [
                _row_gradnorm_envelope(lo_t[i], hi_t[i], r_t[i] > 0, grid=grid)
                for i in range(K)
            ]
        )
        G = np.stack(
            [
                _row_gradnorm_envelope(lo_e[i], hi_e[i], r_e[i] > 0, grid=grid)
                for i in range(K)
            ]
        ).T  # (V, K): G[y, x]
        Z = _row_gradnorm_envelope(lo_i[0], hi_i[0], r_i[0] > 0, grid=grid)
        M, G, Z = inflation * M, inflation * G, inflation * Z
    q_structure = None
    Kk = np.zeros((0, K, K))
    Kt = np.zeros((0, K))
    if q is not None:
        qfam = _as_variational_family(q)
        st = qfam.structure
        q_structure = st
        nk = st.n_kernel_blocks
        Kk = np.zeros((nk, K, K))
        for b in range(nk):
            for i in range(K):
                sl = st.kernel_coord_slice(b, i)
                Kk[b, i] = _row_gradnorm_envelope(
                    qfam.lo[sl], qfam.hi[sl], qfam.radius[sl] > 0, st.floor, grid
                )
        Kt = np.zeros((st.n_terminal_blocks, K))
        for b in range(st.n_terminal_blocks):
            sl = st.terminal_coord_slice(b)
            Kt[b] = _row_gradnorm_envelope(
                qfam.lo[sl], qfam.hi[sl], qfam.radius[sl] > 0, st.floor, grid
            )
        Kk *= inflation
        Kt *= inflation
    return LipschitzEnvelopes(M=M, G=G, Z=Z, K_kernel=Kk, K_terminal=Kt, q_structure=q_structure)


def envelope_check(
    family, env: LipschitzEnvelopes, q=None, n_pairs: int = 1000, seed: int = 0, slack: float = 1e-8
) -> Verdict:
    """Fuzz the envelope inequality on random parameter pairs from the box."""
    family = _as_finite_family(family)
    rng = np.random.default_rng(seed)
    slacks = []
    witnesses = []
    frozen_model = isinstance(family, FrozenFiniteFamily)
    qfam = _as_variational_family(q) if q is not None else None
    for _ in range(n_pairs):
        if not frozen_model:
            th1 = family.sample_theta(rng)
            th2 = family.sample_theta(rng)
            m1, m2 = family.realize(th1), family.realize(th2)
            dist = np.linalg.norm(th1 - th2)
            if dist > 0:
                for diff, envt in (
                    (np.abs(m1.transition - m2.transition), env.M),
                    (np.abs(m1.emission - m2.emission), env.G.T),
                    (np.abs(m1.initial - m2.initial), env.Z),
                ):
                    gap = float((envt * dist + slack - diff).min())
                    slacks.append(gap)
                    witnesses.append({"part": "model", "theta": th1.tolist()})
        if qfam is not None:
            p1, p2 = qfam.sample_phi(rng), qfam.sample_phi(rng)
            dist = np.linalg.norm(p1 - p2)
            if dist > 0:
                st = qfam.structure
                k1, k2 = st.kernel_tables(p1), st.kernel_tables(p2)
                t1, t2 = st.terminal_tables(p1), st.terminal_tables(p2)
                gap = float((env.K_kernel * dist + slack - np.abs(k1 - k2)).min()) if k1.size else slack
                slacks.append(gap)
                witnesses.append({"part": "q-kernels"})
                gap = float((env.K_terminal * dist + slack - np.abs(t1 - t2)).min())
                slacks.append(gap)
                witnesses.append({"part": "q-terminal"})
    return _verdict_from_slacks("envelope-inequality", np.asarray(slacks), lambda i: witnesses[i])


# -- filter and backward-kernel bounds (compact-space forms) -------------------


def filter_bound_check(family, y, n_models: int = 20, seed: int = 0) -> Verdict:
    """Two-sided filter envelope: (r g)/c_+ <= filter <= (g/r)/c_- with r = sigma ratio."""
    family = _as_finite_family(family)
    cert = certify_mixing(family)
    if not cert.holds:
        return Verdict("filter-bound", "inapplicable", reason="positivity fails", details=cert.verdict.to_dict())
    rng = np.random.default_rng(seed)
    ratio = cert.sigma_minus / cert.sigma_plus
    y = np.asarray(y, dtype=np.int64)
    slacks = []
    wits = []
    frozen = isinstance(family, FrozenFiniteFamily)
    for _ in range(1 if frozen else n_models):
        model = family.center_model() if frozen else family.realize(family.sample_theta(rng))
        filt = filter_forward(model, y).filters
        for t in range(y.size):
            g = model.emission[:, y[t]]
            lo = ratio * g / cert.c_plus[y[t]]
            hi = g / (ratio * cert.c_minus[y[t]])
            s = float(min((filt[t] - lo).min(), (hi - filt[t]).min()))
            slacks.append(s)
            wits.append({"t": t, "filter": filt[t].tolist(), "lo": lo.tolist(), "hi": hi.tolist()})
    return _verdict_from_slacks("filter-bound", np.asarray(slacks) + 1e-13, lambda i: wits[i])


def backward_bound_check(family, y, n_models: int = 20, seed: int = 0) -> Verdict:
    """Two-sided backward-kernel envelope.

    Two envelope variants exist, differing by emission-mass factors; neither
    dominates for all models, so the check asserts their union and records
    which variant binds on each side."""
    family = _as_finite_family(family)
    cert = certify_mixing(family)
    if not cert.holds:
        return Verdict("backward-bound", "inapplicable", reason="positivity fails")
    rng = np.random.default_rng(seed)
    r2 = (cert.sigma_minus / cert.sigma_plus) ** 2
    y = np.asarray(y, dtype=np.int64)
    slacks = []
    wits = []
    binding = {"lower-proof": 0, "lower-statement": 0, "upper-proof": 0, "upper-statement": 0}
    frozen = isinstance(family, FrozenFiniteFamily)
    for _ in range(1 if frozen else n_models):
        model = family.center_model() if frozen else family.realize(family.sample_theta(rng))
        res = filter_forward(model, y)
        for t in range(1, y.size):
            sym = y[t - 1]
            g = model.emission[:, sym]
            cp, cm = cert.c_plus[sym], cert.c_minus[sym]
            lo_proof = r2 * g / cp
            lo_stmt = r2 * cm * g / cp
            hi_proof = g / (r2 * cm)
            hi_stmt = cp * g / (r2 * cm)
            lo = np.minimum(lo_proof, lo_stmt)
            hi = np.maximum(hi_proof, hi_stmt)
            binding["lower-proof" if lo_proof.max() >= lo_stmt.max() else "lower-statement"] += 1
            binding["upper-proof" if hi_proof.min() <= hi_stmt.min() else "upper-statement"] += 1
            b = res.backward[t - 1]  # rows: conditioning state, cols: earlier state
            s = float(min((b - lo[None, :]).min(), (hi[None, :] - b).min()))
            slacks.append(s)
            wits.append({"t": t, "kernel": b.tolist(), "lo": lo.tolist(), "hi": hi.tolist()})
    return _verdict_from_slacks(
        "backward-bound", np.asarray(slacks) + 1e-13, lambda i: wits[i], details={"binding": binding}
    )


# -- Doeblin contraction -------------------------------------------------------


def doeblin_contraction_check(
    q: BackwardVariational, y, trials: int = 100, seed: int = 0, rho: float | None = None
) -> Verdict:
    """Geometric total-variation contraction of backward-kernel products."""
    term, kernels = q.tables(y)
    K = q.family.K
    T = kernels.shape[0]
    if rho is None:
        entries = [kernels.min()] if T else []
        entries.append(term.min())
        rho = 1.0 - K * float(min(entries))
    if rho >= 1.0:
        return Verdict("doeblin-contraction", "inapplicable", reason="positivity floor fails (rho >= 1)")
    if T == 0:
        return Verdict("doeblin-contraction", "inapplicable", reason="no kernels at T=0")
    rng = np.random.default_rng(seed)
    slacks = []
    wits = []
    worst_ratio = 0.0
    for _ in range(trials):
        s = int(rng.integers(0, T))
        t = int(rng.integers(s, T))
        mu = rng.dirichlet(np.ones(K))
        nu = rng.dirichlet(np.ones(K))
        d0 = tv_distance(mu, nu)
        a, b = mu.copy(), nu.copy()
        for step in range(t, s - 1, -1):
            a = a @ kernels[step]
            b = b @ kernels[step]
        steps = t - s + 1
        d1 = tv_distance(a, b)
        bound = (rho**steps) * d0
        slacks.append(bound + 1e-12 - d1)
        if d0 > 0:
            worst_ratio = max(worst_ratio, d1 / (d0 * rho**steps) if rho > 0 else (0.0 if d1 == 0 else np.inf))
        wits.append({"s": s, "t": t, "tv": d1, "bound": bound})
    return _verdict_from_slacks(
        "doeblin-contraction",
        np.asarray(slacks),
        lambda i: wits[i],
        details={"rho": rho, "worst_ratio": worst_ratio},
    )


# -- filter TV-Lipschitz constants ---------------------------------------------


def filter_lipschitz_L(cert: MixingCertificate, env: LipschitzEnvelopes, y, t: int) -> float:
    """Explicit TV-Lipschitz constant of the filter at time t in the parameters.

    Geometric sum of per-step sensitivities; the s = 0 bracket carries the
    initial-law envelope because the initial law is parameterized here.
    """
    y = np.asarray(y, dtype=np.int64)
    sm, sp, eps = cert.sigma_minus, cert.sigma_plus, cert.epsilon
    total = 0.0
    for s in range(t + 1):
        if s == 0:
            bracket = env.mu_Z_gbar(cert, y[0]) / sp + env.eta_G(y[0])
        else:
            bracket = env.eta_mu_M_gg(cert, y[s - 1], y[s]) / (sm * cert.c_minus_eta(y[s - 1]))
            bracket += env.eta_G(y[s])
        total += eps ** (t - s) * bracket / cert.c_minus_eta(y[s])
    return float(4.0 * sp**2 / sm**2 * total)


def filter_lipschitz_check(
    family, y, n_pairs: int = 50, seed: int = 0, cert=None, env=None
) -> Verdict:
    family = _as_finite_family(family)
    if isinstance(family, FrozenFiniteFamily):
        return Verdict("filter-tv-lipschitz", "inapplicable", reason="frozen family")
    cert = cert or certify_mixing(family)
    if not cert.holds:
        return Verdict("filter-tv-lipschitz", "inapplicable", reason="positivity fails")
    env = env or compute_envelopes(family)
    y = np.asarray(y, dtype=np.int64)
    L = np.array([filter_lipschitz_L(cert, env, y, t) for t in range(y.size)])
    rng = np.random.default_rng(seed)
    slacks = []
    wits = []
    for _ in range(n_pairs):
        th1, th2 = family.sample_theta(rng), family.sample_theta(rng)
        dist = float(np.linalg.norm(th1 - th2))
        if dist == 0:
            continue
        f1 = filter_forward(family.realize(th1), y).filters
        f2 = filter_forward(family.realize(th2), y).filters
        for t in range(y.size):
            tv = tv_distance(f1[t], f2[t])
            slacks.append(L[t] * dist + 1e-12 - tv)
            wits.append({"t": t, "tv": tv, "bound": L[t] * dist})
    return _verdict_from_slacks(
        "filter-tv-lipschitz", np.asarray(slacks), lambda i: wits[i], details={"L": L.tolist()}
    )


# -- h functions and their integral bounds --------------------------------------


def upsilon_bounds(cert: MixingCertificate, y) -> np.ndarray:
    """Family-level upper bounds on the integrated log-ratio functions h_t.

    Uses the certified kernel and filter envelopes, so the values are valid for
    every parameter pair in the boxes; the terminal step carries the extra
    terminal-law terms.
    """
    y = np.asarray(y, dtype=np.int64)
    T = y.size - 1
    K = cert.K
    r = cert.sigma_plus / cert.sigma_minus
    t_lo, t_hi = cert._q_entry_extremes(y)
    qpart = max(abs(math.log(t_lo)), abs(math.log(t_hi)))
    out = np.zeros(T)
    for t in range(1, T + 1):
        sym = y[t - 1]
        b_lo = cert.gunder[sym] / (r**2 * cert.c_plus[sym])
        b_hi = r**2 * cert.gbar[sym] / cert.c_minus[sym]
        bpart = np.maximum(np.abs(np.log(b_lo)), np.abs(np.log(b_hi)))
        val = qpart + float(bpart.mean())
        if t == T:
            symT = y[T]
            f_lo = cert.gunder[symT] / (r * cert.c_plus[symT])
            f_hi = r * cert.gbar[symT] / cert.c_minus[symT]
            fpart = np.maximum(np.abs(np.log(f_lo)), np.abs(np.log(f_hi)))
            val += qpart + float(fpart.max())
        out[t - 1] = val
    return out


@dataclass
class HFunctionReport:
    h_tables: list
    upsilon: np.ndarray
    upsilon_bound: np.ndarray
    sup_norms: np.ndarray
    verdict: Verdict


def compute_h_functions(
    model: FiniteSSM, q: BackwardVariational, y, cert: MixingCertificate | None = None
) -> HFunctionReport:
    """Pointwise log-ratio functions h_t plus their integrated magnitudes.

    ``h_t(x_{t-1}, x_t)`` compares the variational kernel with the exact
    backward kernel; the final step adds the terminal-law comparison.  Zero
    densities yield flagged infinities rather than exceptions.
    """
    y = np.asarray(y, dtype=np.int64)
    T = y.size - 1
    res = filter_forward(model, y)
    term, kernels = q.tables(y)
    tables = []
    ups = np.zeros(T)
    sups = np.zeros(T)
    with np.errstate(divide="ignore"):
        for t in range(1, T + 1):
            h = np.log(kernels[t - 1].T) - np.log(res.backward[t - 1].T)  # (x_{t-1}, x_t)
            if t == T:
                h = h + (np.log(term) - np.log(res.filters[T]))[None, :]
            tables.append(h)
            ups[t - 1] = float(np.abs(h).mean(axis=0).max())
            sups[t - 1] = float(np.abs(h).max())
    if cert is not None:
        bound = upsilon_bounds(cert, y)
        slack = bound - ups
        verdict = _verdict_from_slacks(
            "h-integral-bound", slack, lambda i: {"t": i + 1, "upsilon": ups[i], "bound": bound[i]}
        )
    else:
        bound = np.full(T, np.nan)
        verdict = Verdict("h-integral-bound", "inapplicable", reason="no certificate")
    return HFunctionReport(
        h_tables=tables, upsilon=ups, upsilon_bound=bound, sup_norms=sups, verdict=verdict
    )


# -- integrated log-Lipschitz constants -----------------------------------------


@dataclass
class LogLipschitzConstants:
    """Integrated log-Lipschitz constants for normalized reference integrals.

    ``c2`` certifies the backward-kernel log sensitivity in the decoder
    parameters with all three shift terms (filter, kernel, normalizer); the
    filter-shift-only value is kept as ``c2_nominal`` for comparison."""

    c1: np.ndarray  # (T,) kernel log-Lipschitz in phi
    c2: np.ndarray  # (T,) backward log-Lipschitz in theta (certified)
    c2_nominal: np.ndarray
    c3: float  # terminal law log-Lipschitz in phi
    c4: float  # terminal filter log-Lipschitz in theta
    L: np.ndarray  # (T+1,) filter TV-Lipschitz constants


def compute_log_lipschitz_constants(cert: MixingCertificate, env: LipschitzEnvelopes, y) -> LogLipschitzConstants:
    y = np.asarray(y, dtype=np.int64)
    T = y.size - 1
    K = cert.K
    r = cert.sigma_plus / cert.sigma_minus
    m_lo_pt = cert.sigma_minus / K
    m_hi_pt = cert.sigma_plus / K
    t_lo, _ = cert._q_entry_extremes(y)
    L = np.array([filter_lipschitz_L(cert, env, y, t) for t in range(T + 1)])
    c1 = np.zeros(T)
    c2 = np.zeros(T)
    c2_nom = np.zeros(T)
    for t in range(1, T + 1):
        c1[t - 1] = env.lamlam_K(t, y) / t_lo
        sym = y[t - 1]
        w = r**2 * cert.c_plus[sym] / cert.gunder[sym]  # 1 / lower kernel envelope, per x_{t-1}
        phicap = np.minimum(1.0, r * cert.gbar[sym] / cert.c_minus[sym])
        bcap = np.minimum(1.0, r**2 * cert.gbar[sym] / cert.c_minus[sym])
        A = r * w.max() * L[t - 1] / K
        B = float((w * phicap) @ env.M.sum(axis=1)) / (K * K * m_lo_pt)
        D = m_hi_pt * L[t - 1] + phicap @ env.M  # (K,) over x_t
        C = float(np.sum(w[None, :] * bcap[None, :] * D[:, None])) / (K * K * m_lo_pt)
        c2[t - 1] = A + B + C
        infg = float(cert.gunder[sym].min())
        c2_nom[t - 1] = 2.0 * r * L[t - 1] / infg / K**2 if infg > 0 else np.inf
    c3 = env.lam_K_terminal(y) / t_lo
    symT = y[T]
    infgT = float(cert.gunder[symT].min())
    c4 = 2.0 * r * cert.c_plus[symT] * L[T] / infgT / K if infgT > 0 else np.inf
    return LogLipschitzConstants(c1=c1, c2=c2, c2_nominal=c2_nom, c3=c3, c4=c4, L=L)


def log_lipschitz_check(
    model_family, q_family, y, n_pairs: int = 50, seed: int = 0, cert=None, env=None
) -> Verdict:
    """Fuzz each integrated log-Lipschitz inequality against exact differences."""
    family = _as_finite_family(model_family)
    qfam = _as_variational_family(q_family)
    cert = cert or certify_mixing(family, qfam)
    if not cert.holds:
        return Verdict("log-lipschitz", "inapplicable", reason="positivity fails")
    env = env or compute_envelopes(family, qfam)
    llc = compute_log_lipschitz_constants(cert, env, y)
    y = np.asarray(y, dtype=np.int64)
    T = y.size - 1
    K = cert.K
    st = qfam.structure
    rng = np.random.default_rng(seed)
    slacks = []
    wits = []
    frozen_model = isinstance(family, FrozenFiniteFamily)
    for _ in range(n_pairs):
        p1, p2 = qfam.sample_phi(rng), qfam.sample_phi(rng)
        dphi = float(np.linalg.norm(p1 - p2))
        k1, k2 = st.kernel_tables(p1), st.kernel_tables(p2)
        t1, t2 = st.terminal_tables(p1), st.terminal_tables(p2)
        if dphi > 0:
            for t in range(1, T + 1):
                b = st.kernel_block_index(t, y)
                lhs = float(np.abs(np.log(k1[b]) - np.log(k2[b])).mean())
                slacks.append(llc.c1[t - 1] * dphi - lhs)
                wits.append({"ineq": "c1", "t": t, "lhs": lhs})
            bT = st.terminal_block_index(y)
            lhs = float(np.abs(np.log(t1[bT]) - np.log(t2[bT])).mean())
            slacks.append(llc.c3 * dphi - lhs)
            wits.append({"ineq": "c3", "lhs": lhs})
        if not frozen_model:
            th1, th2 = family.sample_theta(rng), family.sample_theta(rng)
            dth = float(np.linalg.norm(th1 - th2))
            if dth > 0:
                r1 = filter_forward(family.realize(th1), y)
                r2 = filter_forward(family.realize(th2), y)
                for t in range(1, T + 1):
                    lhs = float(np.abs(np.log(r1.backward[t - 1]) - np.log(r2.backward[t - 1])).mean())
                    slacks.append(llc.c2[t - 1] * dth - lhs)
                    wits.append({"ineq": "c2", "t": t, "lhs": lhs})
                lhs = float(np.abs(np.log(r1.filters[T]) - np.log(r2.filters[T])).mean())
                slacks.append(llc.c4 * dth - lhs)
                wits.append({"ineq": "c4", "lhs": lhs})
    return _verdict_from_slacks("log-lipschitz", np.asarray(slacks) + 1e-12, lambda i: wits[i])


# -- loss Lipschitz constants (the kappa inequality) ----------------------------


@dataclass
class Kappas:
    """Certified Lipschitz coefficients of the per-sequence loss.

    ``kappa1 + kappa4`` multiplies the decoder-parameter distance and
    ``kappa2 + kappa3`` the variational-parameter distance.  Nominal values of
    the two corrected constants are kept for reporting.
    """

    kappa1: float
    kappa2: float
    kappa3: float
    kappa4: float
    kappa2_nominal: float
    upsilon: np.ndarray
    log_lipschitz: LogLipschitzConstants

    @property
    def theta_coefficient(self) -> float:
        return self.kappa1 + self.kappa4

    @property
    def phi_coefficient(self) -> float:
        return self.kappa2 + self.kappa3


def compute_kappas(cert: MixingCertificate, env: LipschitzEnvelopes, y) -> Kappas:
    y = np.asarray(y, dtype=np.int64)
    T = y.size - 1
    K = cert.K
    sm, sp = cert.sigma_minus, cert.sigma_plus
    llc = compute_log_lipschitz_constants(cert, env, y)
    ups = upsilon_bounds(cert, y)
    th_plus = cert.theta_plus(y)
    rho = cert.rho(y)

    kappa1 = (sp * env.eta_G(y[0]) + env.mu_Z_gbar(cert, y[0])) / (sm * cert.c_minus_eta(y[0]))
    for t in range(1, T + 1):
        brace = cert.c_plus_eta(y[t]) * llc.L[t - 1]
        brace += env.eta_mu_M_gg(cert, y[t - 1], y[t]) / (sm * cert.c_minus_eta(y[t - 1]))
        brace += env.eta_G(y[t])
        kappa1 += sp * brace / (sm * cert.c_minus_eta(y[t]))

    # Variation of the expected log-ratio sum in phi: the swap at the step the
    # ratio lives on is bounded directly (no contraction is available there),
    # later swaps contract geometrically down to it, and the terminal swap
    # carries a single kernel-mass factor instead of two.
    kappa2 = 0.0
    kappa2_nom = 0.0
    for t in range(1, T + 1):
        own_block = env.q_structure.kernel_block_index(t, y)
        own = th_plus * float(env.K_kernel[own_block].max(axis=1).sum())
        tail = 0.0
        for s in range(t, T):
            tail += th_plus**2 * K * env.lamlam_K(s + 1, y) * rho ** (s - t)
        tail += th_plus * K * env.lam_K_terminal(y) * rho ** (T - t)
        kappa2 += ups[t - 1] * (own + tail)
        inv_rho = np.inf if rho == 0.0 else 1.0 / rho
        nom_tail = env.lamlam_K(t, y) * inv_rho
        nom_tail += sum(env.lamlam_K(s + 1, y) * rho ** (s - t) for s in range(t, T))
        nom_tail += env.lam_K_terminal(y) * rho ** (T - t)
        kappa2_nom += th_plus**3 * ups[t - 1] * nom_tail

    kappa3 = th_plus * (th_plus * float(llc.c1.sum()) + llc.c3)
    kappa4 = th_plus * (th_plus * float(llc.c2.sum()) + llc.c4)
    return Kappas(
        kappa1=float(kappa1),
        kappa2=float(kappa2),
        kappa3=float(kappa3),
        kappa4=float(kappa4),
        kappa2_nominal=float(kappa2_nom),
        upsilon=ups,
        log_lipschitz=llc,
    )


def _loss_core(model: FiniteSSM, q: BackwardVariational, y) -> float:
    """Data-law-free part of the per-sequence loss: KL(Q||posterior) - loglik."""
    res = filter_forward(model, y)
    chain = kl_backward_chain(q, res, y)
    return chain.total - res.loglik


def kappa_inequality_check(
    model_family, q_family, y, n_tuples: int = 50, seed: int = 0, cert=None, env=None
) -> Verdict:
    """Exact loss differences against the certified Lipschitz coefficients."""
    family = _as_finite_family(model_family)
    qfam = _as_variational_family(q_family)
    cert = cert or certify_mixing(family, qfam)
    if not cert.holds:
        return Verdict("kappa-lipschitz", "inapplicable", reason="positivity fails")
    env = env or compute_envelopes(family, qfam)
    kap = compute_kappas(cert, env, y)
    rng = np.random.default_rng(seed)
    frozen_model = isinstance(family, FrozenFiniteFamily)
    slacks = []
    rel = []
    wits = []
    for _ in range(n_tuples):
        if frozen_model:
            th1 = th2 = None
            m1 = m2 = family.center_model()
            dth = 0.0
        else:
            th1, th2 = family.sample_theta(rng), family.sample_theta(rng)
            m1, m2 = family.realize(th1), family.realize(th2)
            dth = float(np.linalg.norm(th1 - th2))
        p1, p2 = qfam.sample_phi(rng), qfam.sample_phi(rng)
        q1, q2 = qfam.realize(p1), qfam.realize(p2)
        dphi = float(np.linalg.norm(p1 - p2))
        delta = abs(_loss_core(m1, q1, y) - _loss_core(m2, q2, y))
        rhs = kap.theta_coefficient * dth + kap.phi_coefficient * dphi
        slacks.append(rhs + 1e-12 - delta)
        rel.append((rhs - delta) / rhs if rhs > 0 else 0.0)
        wits.append({"delta": delta, "rhs": rhs, "dtheta": dth, "dphi": dphi})
    details = {
        "kappa1": kap.kappa1,
        "kappa2": kap.kappa2,
        "kappa3": kap.kappa3,
        "kappa4": kap.kappa4,
        "kappa2_nominal": kap.kappa2_nominal,
        "relative_slack_median": float(np.median(rel)) if rel else None,
        "slacks": [float(s) for s in slacks],
    }
    return _verdict_from_slacks("kappa-lipschitz", np.asarray(slacks), lambda i: wits[i], details)


# -- Orlicz norms ----------------------------------------------------------------


def orlicz_norm_estimate(
    samples, alpha: float, tol: float = 1e-10, bracket=(1e-12, 1e12)
) -> float:
    """Empirical Orlicz norm of order alpha by bisection.

    The criterion mean(exp((|x|/lam)^alpha)) - 1 <= 1 is monotone in lam, so
    bisection is exact up to tolerance.  Inputs are normalized by their max so
    the estimate is exactly homogeneous of degree 1.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x = np.abs(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    scale = float(x.max())
    if scale == 0.0:
        return 0.0
    z = x / scale

    def ok(lam: float) -> bool:
        with np.errstate(over="ignore"):
            vals = np.expm1((z / lam) ** alpha)
        return bool(np.mean(vals) <= 1.0)

    lo, hi = bracket
    if ok(lo):
        return scale * lo
    if not ok(hi):
        return scale * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol:
            break
    return scale * hi


# -- growth diagnostics -----------------------------------------------------------


def fit_power_growth(x, y) -> float:
    """Least-squares exponent of y ~ c * x^p on a log-log scale."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(coef[0])


@dataclass
class AssumptionAReport:
    T_grid: list
    orlicz_norms: list
    growth_exponent: float
    alpha: float
    n_samples: int


def assumption_a_diagnostic(
    data_model: FiniteSSM,
    model_family,
    q_structure_fn,
    T_grid,
    alpha: float = 1.0,
    n_samples: int = 200,
    grid_size: int = 4,
    seed: int = 0,
) -> AssumptionAReport:
    """Orlicz-norm growth in T of the parameter-grid sup of |loglik| + KL.

    This is the measurable surrogate for the concentration envelope: for each
    horizon, sample sequences from the data model, take the sup over a small
    parameter grid of |log-likelihood| plus the variational KL, and estimate
    the Orlicz norm of the result.
    """
    from .models import sample_sequences

    family = _as_finite_family(model_family)
    rng = np.random.default_rng(seed)
    norms = []
    for T in T_grid:
        st = q_structure_fn(int(T))
        thetas = (
            [None] * 1
            if isinstance(family, FrozenFiniteFamily)
            else [family.sample_theta(rng) for _ in range(grid_size)]
        )
        phis = [rng.uniform(-1.0, 1.0, st.d_phi) for _ in range(grid_size)]
        ds = sample_sequences(data_model, n_samples, int(T), seed=int(rng.integers(2**31)))
        vals = np.zeros(n_samples)
        models = [family.realize(th) if th is not None else family.center_model() for th in thetas]
        qs = [BackwardVariational(st, p) for p in phis]
        for i, y in enumerate(ds.sequences):
            best = -np.inf
            for m in models:
                res = filter_forward(m, y)
                for qv in qs:
                    chain = kl_backward_chain(qv, res, y)
                    best = max(best, abs(res.loglik) + chain.total)
            vals[i] = best
        norms.append(orlicz_norm_estimate(vals, alpha))
    growth = fit_power_growth(np.asarray(T_grid, dtype=float), np.asarray(norms))
    return AssumptionAReport(
        T_grid=list(T_grid),
        orlicz_norms=[float(v) for v in norms],
        growth_exponent=growth,
        alpha=alpha,
        n_samples=n_samples,
    )


# -- Gaussian density envelopes ----------------------------------------------------


def gaussian_annulus_gap(x, m: float, M: float) -> float:
    """Squared distance from x to the centered annulus of radii [m, M], halved.

    This is the exact infimum of ||x - mu||^2 / 2 over means with norm in
    [m, M]: zero inside the annulus, a one-sided quadratic outside.
    """
    nx = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if nx >= M:
        return 0.5 * (nx - M) ** 2
    if nx <= m:
        return 0.5 * (nx - m) ** 2
    return 0.0


def annulus_gap_displayed(x, m: float, M: float) -> float:
    """Three-case variant with a positive middle plateau (M - m)^2 / 2.

    Kept for reporting only: the plateau overstates the gap for points inside
    the annulus (a mean equal to x is admissible there), so the valid envelope
    uses :func:`gaussian_annulus_gap` instead.
    """
    nx = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if nx >= M:
        return 0.5 * (nx - M) ** 2
    if nx <= m:
        return 0.5 * (nx - m) ** 2
    return 0.5 * (M - m) ** 2


def gaussian_envelope(mean_bounds, precision_eigs, x) -> tuple[float, float]:
    """Two-sided envelope for Gaussian densities with bounded mean norm and
    precision spectrum.

    Any density with mean norm in ``mean_bounds`` and precision eigenvalues in
    ``precision_eigs`` is squeezed between the returned values at ``x``.
    """
    m, M = map(float, mean_bounds)
    lam_lo, lam_hi = map(float, precision_eigs)
    if not (0 <= m <= M) or not (0 < lam_lo <= lam_hi):
        raise ValueError("need 0 <= m <= M and 0 < lam_lo <= lam_hi")
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    nx2 = float(x @ x)
    lower = (lam_lo / (2 * math.pi)) ** (d / 2) * math.exp(-lam_hi * (nx2 + M * M))
    upper = (lam_hi / (2 * math.pi)) ** (d / 2) * math.exp(
        -lam_lo * gaussian_annulus_gap(x, m, M)
    )
    return lower, upper


def gaussian_envelope_check(
    mean_bounds, precision_eigs, dim: int, trials: int = 10_000, seed: int = 0
) -> Verdict:
    """Sampled verification of the Gaussian envelope in the given dimension."""
    m, M = map(float, mean_bounds)
    lam_lo, lam_hi = map(float, precision_eigs)
    rng = np.random.default_rng(seed)
    slacks = []
    wits = []
    for _ in range(trials):
        if dim == 1:
            Q = np.array([[1.0]])
        else:
            Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        eigs = lam_lo + (lam_hi - lam_lo) * rng.random(dim)
        P = Q @ np.diag(eigs) @ Q.T
        direction = rng.standard_normal(dim)
        direction /= max(np.linalg.norm(direction), 1e-300)
        mu = direction * (m + (M - m) * rng.random())
        x = rng.standard_normal(dim) * (1.0 + 2.0 * rng.random())
        diff = x - mu
        dens = (2 * math.pi) ** (-dim / 2) * math.sqrt(np.linalg.det(P)) * math.exp(
            -0.5 * float(diff @ P @ diff)
        )
        lo, hi = gaussian_envelope((m, M), (lam_lo, lam_hi), x)
        slacks.append(min(dens - lo, hi - dens))
        wits.append({"x": x.tolist(), "density": dens, "lo": lo, "hi": hi})
    return _verdict_from_slacks("gaussian-envelope", np.asarray(slacks) + 1e-15, lambda i: wits[i])


# -- randomized falsification suites ----------------------------------------------


@dataclass
class BoundInstance:
    family: FiniteFamily
    q_family: VariationalFamily
    y: np.ndarray
    seed: int


def sample_instance(
    rng: np.random.Generator,
    K_range=(2, 4),
    V_range=(2, 3),
    T_range=(2, 5),
    theta_scale: float = 1.2,
    theta_radius: float = 0.25,
    phi_scale: float = 0.8,
    phi_radius: float = 0.3,
    context_mode: str = "window",
    w: int = 1,
) -> BoundInstance:
    """Random admissible instance: model box, variational box, one sequence."""
    from .models import theta_dim

    K = int(rng.integers(K_range[0], K_range[1] + 1))
    V = int(rng.integers(V_range[0], V_range[1] + 1))
    T = int(rng.integers(T_range[0], T_range[1] + 1))
    center = rng.uniform(-theta_scale, theta_scale, theta_dim(K, V))
    family = FiniteFamily(K, V, center, theta_radius)
    st = BackwardFamily(K, V, T, context_mode, w)
    qc = rng.uniform(-phi_scale, phi_scale, st.d_phi)
    qfam = VariationalFamily(st, qc, phi_radius)
    y = rng.integers(0, V, T + 1)
    return BoundInstance(family=family, q_family=qfam, y=y, seed=int(rng.integers(2**31)))


SUITE_NAMES = (
    "filter-bound",
    "backward-bound",
    "doeblin-contraction",
    "filter-tv-lipschitz",
    "kappa-lipschitz",
    "log-lipschitz",
    "h-integral-bound",
    "envelope-inequality",
)


@dataclass
class BoundReport:
    """Aggregated verdicts of the falsification suites over many instances."""

    n_instances: int
    seed: int
    verdicts: dict
    slack_samples: dict
    kappa_values: list
    instance_meta: list

    @property
    def violated(self) -> list:
        return [name for name, v in self.verdicts.items() if v.status == "violated"]

    def to_dict(self) -> dict:
        return {
            "n_instances": self.n_instances,
            "seed": self.seed,
            "violated": self.violated,
            "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
        }


def _merge_verdicts(name: str, parts: list[Verdict]) -> Verdict:
    applicable = [p for p in parts if p.status != "inapplicable"]
    if not applicable:
        return Verdict(name, "inapplicable", reason="no applicable instances")
    bad = [p for p in applicable if p.status == "violated"]
    worst = min(
        (p.worst_slack for p in applicable if p.worst_slack is not None), default=None
    )
    if bad:
        return Verdict(
            name,
            "violated",
            n_trials=sum(p.n_trials for p in applicable),
            worst_slack=worst,
            witness=bad[0].witness,
            details={"violated_instances": len(bad)},
        )
    return Verdict(
        name,
        "holds",
        n_trials=sum(p.n_trials for p in applicable),
        worst_slack=worst,
        details={"instances": len(applicable)},
    )


def run_bound_suites(
    n_instances: int = 50,
    seed: int = 0,
    K_range=(2, 4),
    V_range=(2, 3),
    T_range=(2, 5),
    pairs_per_instance: int = 6,
    doeblin_trials: int = 20,
    envelope_pairs: int = 20,
    suites=SUITE_NAMES,
) -> BoundReport:
    """Run every requested falsification suite over random admissible instances."""
    rng = np.random.default_rng(seed)
    parts: dict[str, list] = {name: [] for name in suites}
    slack_samples: dict[str, list] = {name: [] for name in suites}
    kappa_values = []
    meta = []
    for i in range(n_instances):
        inst = sample_instance(rng, K_range, V_range, T_range)
        fam, qfam, y = inst.family, inst.q_family, inst.y
        meta.append({"K": fam.K, "V": fam.V, "T": int(y.size - 1), "seed": inst.seed})
        cert = certify_mixing(fam, qfam)
        need_env = any(
            s in suites for s in ("filter-tv-lipschitz", "kappa-lipschitz", "log-lipschitz", "envelope-inequality")
        )
        env = compute_envelopes(fam, qfam) if need_env else None

        def record(name, verdict):
            parts[name].append(verdict)
            if verdict.worst_slack is not None:
                slack_samples[name].append(verdict.worst_slack)

        if "filter-bound" in suites:
            record("filter-bound", filter_bound_check(fam, y, n_models=pairs_per_instance, seed=inst.seed))
        if "backward-bound" in suites:
            record("backward-bound", backward_bound_check(fam, y, n_models=pairs_per_instance, seed=inst.seed + 1))
        if "doeblin-contraction" in suites:
            phi = qfam.sample_phi(rng)
            q = qfam.realize(phi)
            record(
                "doeblin-contraction",
                doeblin_contraction_check(q, y, trials=doeblin_trials, seed=inst.seed + 2, rho=cert.rho(y)),
            )
        if "filter-tv-lipschitz" in suites:
            record(
                "filter-tv-lipschitz",
                filter_lipschitz_check(fam, y, n_pairs=pairs_per_instance, seed=inst.seed + 3, cert=cert, env=env),
            )
        if "kappa-lipschitz" in suites:
            v = kappa_inequality_check(
                fam, qfam, y, n_tuples=pairs_per_instance, seed=inst.seed + 4, cert=cert, env=env
            )
            record("kappa-lipschitz", v)
            if v.status != "inapplicable":
                kappa_values.append({k: v.details[k] for k in ("kappa1", "kappa2", "kappa3", "kappa4")})
        if "log-lipschitz" in suites:
            record(
                "log-lipschitz",
                log_lipschitz_check(fam, qfam, y, n_pairs=pairs_per_instance, seed=inst.seed + 5, cert=cert, env=env),
            )
        if "h-integral-bound" in suites:
            model = fam.realize(fam.sample_theta(rng))
            q = qfam.realize(qfam.sample_phi(rng))
            record("h-integral-bound", compute_h_functions(model, q, y, cert=cert).verdict)
        if "envelope-inequality" in suites:
            record("envelope-inequality", envelope_check(fam, env, qfam, n_pairs=envelope_pairs, seed=inst.seed + 6))
    verdicts = {name: _merge_verdicts(name, parts[name]) for name in suites}
    return BoundReport(
        n_instances=n_instances,
        seed=seed,
        verdicts=verdicts,
        slack_samples={k: [float(x) for x in v] for k, v in slack_samples.items()},
        kappa_values=kappa_values,
        instance_meta=meta,
    )


# -- moment measurements -------------------------------------------------------


@dataclass
class MomentReport:
    """Data-law moments of the per-sequence constants entering the variance side.

    ``A_hat`` is the largest of all listed second-moment expectations; each row
    of ``table`` records one family of moments (maxed over its time indices).
    Expectations are exact under full enumeration and seeded Monte Carlo with a
    normal-approximation half width otherwise.
    """

    A_hat: float
    table: dict
    exact: bool
    half_width: float | None
    n_samples: int


def moment_bound_report(
    model_family,
    q_family,
    data_model: FiniteSSM,
    T: int,
    n_mc: int = 10_000,
    seed: int = 0,
) -> MomentReport:
    from .models import EnumerationTooLargeError, all_sequences, exact_sequence_law, sample_sequences

    family = _as_finite_family(model_family)
    qfam = _as_variational_family(q_family)
    cert = certify_mixing(family, qfam)
    env = compute_envelopes(family, qfam)
    try:
        Y = all_sequences(data_model.V, T)
        weights = exact_sequence_law(data_model, T)
        exact = True
    except EnumerationTooLargeError:
        ds = sample_sequences(data_model, n_mc, T, seed)
        Y, counts = np.unique(ds.sequences, axis=0, return_counts=True)
        weights = counts / ds.n
        exact = False

    names = (
        "terminal_kernel_phi",
        "terminal_filter_theta",
        "emission_envelope",
        "kernel_phi",
        "backward_theta",
        "transition_envelope",
        "kernel_mass_tail",
        "emission_cross",
        "transition_cross",
    )
    per_seq = {name: np.zeros(len(Y)) for name in names}
    for i, y in enumerate(Y):
        llc = compute_log_lipschitz_constants(cert, env, y)
        th_plus = cert.theta_plus(y)
        rho = cert.rho(y)
        cm = np.array([cert.c_minus_eta(s) for s in y])
        cp = np.array([cert.c_plus_eta(s) for s in y])
        muG = np.array([env.mu_G(s) for s in y])
        mgg = np.array(
            [env.eta_mu_M_gg(cert, y[t - 1], y[t]) for t in range(1, T + 1)]
        )
        per_seq["terminal_kernel_phi"][i] = (th_plus * llc.c3) ** 2
        per_seq["terminal_filter_theta"][i] = (th_plus * llc.c4) ** 2
        per_seq["emission_envelope"][i] = np.max(muG**2 / cm**2)
        per_seq["kernel_phi"][i] = np.max((th_plus**2 * llc.c1) ** 2) if T else 0.0
        per_seq["backward_theta"][i] = np.max((th_plus**2 * llc.c2) ** 2) if T else 0.0
        per_seq["transition_envelope"][i] = (
            np.max(mgg**2 / (cm[:-1] ** 2 * cm[1:] ** 2)) if T else 0.0
        )
        inv_rho = np.inf if rho == 0.0 else 1.0 / rho
        tails = []
        for t in range(T + 1):
            tail = 0.0
            for s in range(max(t - 1, 0), T):
                tail += env.lamlam_K(s + 1, y) * (rho ** (s - t) if s >= t else inv_rho)
            tail += env.lam_K_terminal(y) * rho ** max(T - t, 0)
            tails.append((th_plus * tail) ** 2)
        per_seq["kernel_mass_tail"][i] = max(tails)
        cross = np.max(cp[:, None] ** 2 * muG[None, :] ** 2 / (cm[:, None] ** 2 * cm[None, :] ** 2))
        per_seq["emission_cross"][i] = cross
        if T:
            tc = np.max(
                (cp[:, None] * mgg[None, :] / (cm[None, 0:T] * cm[None, 1:] * cm[:, None])) ** 2
            )
            per_seq["transition_cross"][i] = tc
    table = {name: float(weights @ vals) for name, vals in per_seq.items()}
    A_hat = max(table.values())
    half_width = None
    if not exact:
        worst = max(per_seq, key=lambda n: table[n])
        vals = per_seq[worst]
        mean = weights @ vals
        var = weights @ (vals - mean) ** 2
        half_width = float(1.96 * np.sqrt(var / n_mc))
    return MomentReport(
        A_hat=float(A_hat), table=table, exact=exact, half_width=half_width, n_samples=len(Y)
    )
