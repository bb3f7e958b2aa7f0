"""Demand-dispatch control layer.

A fleet of small loads is steered by broadcasting one scalar signal zeta.
Each load runs a local randomized controller: its controllable transition
kernel is the nominal one exponentially tilted toward high (zeta > 0) or low
(zeta < 0) power, while the uncontrollable part (internal temperature) keeps
its physical dynamics. The aggregator closes the loop with a PI rule on the
deviation of fleet power from its nominal baseline.

States factor as x = (x_u, x_n): controllable mode times internal state.
Power and error signals at the aggregator level are per load (fleet mean),
so fitted gains do not depend on fleet size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .distributions import assert_simplex


# ---------------------------------------------------------------------------
# the nominal model and its tilted kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NominalLoadModel:
    """Product-form load model over an explicit retained state list.

    Row x factorizes as P0(x, x') = R0(x, x'_u) * Q0(x, x'_n); the retained
    list (xu_of, xn_of) must be closed under that product support, which the
    constructor checks by row mass.
    """

    R0: np.ndarray      # (S, nu) controllable kernel rows
    Q0: np.ndarray      # (S, nn) uncontrollable kernel rows
    U: np.ndarray       # (nu,) power per controllable mode
    xu_of: np.ndarray   # (S,) controllable mode of each retained state
    xn_of: np.ndarray   # (S,) internal index of each retained state
    meta: dict | None = None

    def __post_init__(self):
        R0 = np.asarray(self.R0, dtype=float)
        Q0 = np.asarray(self.Q0, dtype=float)
        U = np.asarray(self.U, dtype=float)
        xu = np.asarray(self.xu_of, dtype=np.int64)
        xn = np.asarray(self.xn_of, dtype=np.int64)
        S = R0.shape[0]
        if Q0.shape[0] != S or xu.shape != (S,) or xn.shape != (S,):
            raise ValueError("inconsistent state list")
        if len(U) != R0.shape[1]:
            raise ValueError("one power value per controllable mode")
        for row in R0:
            assert_simplex(row, atol=1e-9)
        for row in Q0:
            assert_simplex(row, atol=1e-9)
        P = R0[:, xu] * Q0[:, xn]
        if not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("retained state list is not closed under P0")
        object.__setattr__(self, "R0", R0)
        object.__setattr__(self, "Q0", Q0)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "xu_of", xu)
        object.__setattr__(self, "xn_of", xn)

    @property
    def S(self) -> int:
        return self.R0.shape[0]

    @property
    def power_of_state(self) -> np.ndarray:
        """(S,) power when sitting in each retained state."""
        return self.U[self.xu_of]


def product_model(R0, Q0, U, meta=None) -> NominalLoadModel:
    """Full product enumeration, x = iu * nn + i_n; no trimming."""
    R0 = np.asarray(R0, dtype=float)
    Q0 = np.asarray(Q0, dtype=float)
    nu = R0.shape[1]
    nn = Q0.shape[1]
    if R0.shape[0] != nu * nn or Q0.shape[0] != nu * nn:
        raise ValueError("rows must enumerate the full product")
    xu = np.repeat(np.arange(nu), nn)
    xn = np.tile(np.arange(nn), nu)
    return NominalLoadModel(R0=R0, Q0=Q0, U=U, xu_of=xu, xn_of=xn, meta=meta)


def tilted_controllable(model: NominalLoadModel, zeta: float) -> np.ndarray:
    """R_zeta rows: R0 * exp(zeta * U - Lambda), normalized by log-sum-exp
    per row. Adding a constant to U cancels in Lambda exactly."""
    with np.errstate(divide="ignore"):
        logR = np.log(model.R0)
    tilted = logR + zeta * model.U[None, :]
    mx = tilted.max(axis=1, keepdims=True)
    w = np.exp(tilted - mx)
    return w / w.sum(axis=1, keepdims=True)


def controlled_kernel(model: NominalLoadModel, zeta: float) -> np.ndarray:
    """P_zeta over the retained states."""
    R = tilted_controllable(model, zeta)
    return R[:, model.xu_of] * model.Q0[:, model.xn_of]


def kernel_derivative(model: NominalLoadModel, zeta: float) -> np.ndarray:
    """d/dzeta of P_zeta in closed form:
    E(x, x') = P_zeta(x, x') * (U(x'_u) - sum_u R_zeta(x, u) U(u)).
    Rows sum to zero exactly up to roundoff."""
    R = tilted_controllable(model, zeta)
    P = R[:, model.xu_of] * model.Q0[:, model.xn_of]
    mean_u = R @ model.U
    return P * (model.U[model.xu_of][None, :] - mean_u[:, None])


def invariant_pmf(P: np.ndarray) -> np.ndarray:
    """Stationary pmf by dense solve of pi (P - I) = 0 with sum pi = 1.

    Requires a single communicating class over the positive entries;
    reducible kernels raise.
    """
    P = np.asarray(P, dtype=float)
    S = P.shape[0]
    if P.shape != (S, S):
        raise ValueError("P must be square")
    ncomp, _ = connected_components(csr_matrix(P > 0), directed=True, connection="strong")
    if ncomp != 1:
        raise ValueError("kernel is reducible; no unique invariant pmf")
    # replace one balance equation with the normalization constraint
    A = P.T - np.eye(S)
    A[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.maximum(pi, 0.0)
    pi = pi / pi.sum()
    resid = np.abs(pi @ P - pi).max()
    if resid > 1e-12:
        raise ValueError(f"invariant solve residual {resid:.2e}")
    return pi


# ---------------------------------------------------------------------------
# mean-field model and its linearization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanFieldState:
    mu: np.ndarray
    y: float
    zeta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mu", assert_simplex(np.asarray(self.mu, dtype=float), atol=1e-9))


def mean_field_init(model: NominalLoadModel, mu=None) -> MeanFieldState:
    mu = invariant_pmf(controlled_kernel(model, 0.0)) if mu is None else np.asarray(mu, dtype=float)
    return MeanFieldState(mu=mu, y=float(mu @ model.power_of_state), zeta=0.0)


def mean_field_step(state: MeanFieldState, model: NominalLoadModel,
                    zeta: float) -> MeanFieldState:
    """mu' = mu P_zeta, y' = mu' . U."""
    P = controlled_kernel(model, zeta)
    mu = state.mu @ P
    mu = mu / mu.sum()
    return MeanFieldState(mu=mu, y=float(mu @ model.power_of_state), zeta=zeta)


@dataclass(frozen=True)
class Linearization:
    """G(z) = C (I z - A)^{-1} B around a fixed zeta."""

    A: np.ndarray  # P_zeta transposed
    B: np.ndarray  # E_zeta^T pi_zeta
    C: np.ndarray  # centered power map


def linearize(model: NominalLoadModel, zeta: float) -> Linearization:
    P = controlled_kernel(model, zeta)
    pi = invariant_pmf(P)
    E = kernel_derivative(model, zeta)
    u = model.power_of_state
    return Linearization(A=P.T, B=E.T @ pi, C=u - float(pi @ u))


def _gain_at(lin: Linearization, z: complex) -> complex:
    S = lin.A.shape[0]
    Mz = z * np.eye(S) - lin.A
    w, *_ = np.linalg.lstsq(Mz, lin.B.astype(complex), rcond=None)
    resid = np.abs(Mz @ w - lin.B).max()
    if not np.isfinite(resid) or resid > 1e-8 * (1.0 + np.abs(lin.B).max()):
        raise ValueError(f"z = {z} is a pole of the linearized system")
    return complex(lin.C @ w)


def transfer_function(model: NominalLoadModel, zeta: float, z: complex) -> complex:
    """Complex gain of the linearized mean-field response at z.

    At z = 1 the unit eigenvalue of A is quotiented out by the centering of
    C and the zero row sums of E, so the DC gain is finite; genuine poles
    raise.
    """
    return _gain_at(linearize(model, zeta), z)


def bode_points(model: NominalLoadModel, zeta: float, freqs) -> np.ndarray:
    """(F, 3) array of (rad/sample, magnitude dB, phase deg) on z = e^{iw}.

    A constant power map has zero gain everywhere; magnitude is reported as
    -inf dB in that case.
    """
    lin = linearize(model, zeta)
    out = np.empty((len(freqs), 3))
    for i, w in enumerate(freqs):
        g = _gain_at(lin, complex(math.cos(w), math.sin(w)))
        mag = abs(g)
        out[i, 0] = w
        out[i, 1] = 20.0 * math.log10(mag) if mag > 0 else -np.inf
        out[i, 2] = math.degrees(math.atan2(g.imag, g.real))
    return out


# ---------------------------------------------------------------------------
# PI feedback
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PiController:
    kp: float
    ki: float
    integ: float = 0.0


def pi_step(ctrl: PiController, e: float) -> tuple[float, PiController]:
    """zeta_t = K_P e_t + K_I * (running sum including e_t)."""
    integ = ctrl.integ + e
    return ctrl.kp * e + ctrl.ki * integ, replace(ctrl, integ=integ)


def fit_pi_gains(bode_data: np.ndarray) -> tuple[float, float]:
    """Gains from bode data: K_P = m / 20 with m the flat-band magnitude in
    dB (longest window varying < 1 dB), K_I = w_c * K_P / 5 with w_c the
    first -45 degree phase crossing in rad/sample.

    Stated against 1-minute samples the integral gain reads
    60 * (w_c[rad/s] / 5) * K_P; the 60 is exactly the rad/s to rad/sample
    conversion, so the sample-domain form above is the same rule.
    """
    data = np.asarray(bode_data, dtype=float)
    freqs, mags, phases = data[:, 0], data[:, 1], data[:, 2]
    if not np.all(np.isfinite(mags)):
        raise ValueError("bode magnitude is degenerate (constant power map)")

    # longest contiguous window with < 1 dB spread
    best = (0, 0)
    lo = 0
    for hi in range(len(mags)):
        while mags[lo:hi + 1].max() - mags[lo:hi + 1].min() >= 1.0:
            lo += 1
        if hi - lo > best[1] - best[0]:
            best = (lo, hi)
    m = float(mags[best[0]:best[1] + 1].mean())

    # first -45 degree crossing, interpolated in log frequency
    wc = None
    for i in range(1, len(phases)):
        if phases[i - 1] > -45.0 >= phases[i]:
            f = (-45.0 - phases[i - 1]) / (phases[i] - phases[i - 1])
            wc = math.exp(math.log(freqs[i - 1]) + f * (math.log(freqs[i]) - math.log(freqs[i - 1])))
            break
    if wc is None:
        raise ValueError("phase never crosses -45 degrees in the given band")

    kp = m / 20.0
    return kp, wc * kp / 5.0


# ---------------------------------------------------------------------------
# thermostatic load construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TclConfig:
    """Thermostatically controlled load on a discretized temperature grid.

    Defaults describe an oversized cooling unit in mild weather on 1-minute
    samples: the warming step stalls (rounds to the same grid cell) in the
    upper deadband, so cycling is paced by the epsilon switching noise
    rather than a deterministic thermostat orbit. That choice removes the
    sharp limit-cycle resonance from the linearized response, which is what
    lets the literal flat-band/cutoff gain recipe produce a stable loop.
    Power is in the unit the control layer sees (fleet math is per load);
    the default puts the flat band near +14 dB so the recipe's K_P lands in
    the stable range.
    """

    deadband: tuple[float, float] = (19.0, 21.0)
    grid_step: float = 0.25
    time_constant: float = 30.0     # minutes
    cooling_rate: float = 0.35      # degrees C per minute when ON
    ambient: float = 24.2           # degrees C
    power_on: float = 9.0           # fleet-math power when ON
    epsilon: float = 0.01           # in-band switching noise
    grid_margin: float = 1.0        # grid extends this far past the deadband

    def __post_init__(self):
        lo, hi = self.deadband
        if not lo < hi:
            raise ValueError("deadband must have positive width")
        if self.grid_step <= 0 or self.grid_margin < 2 * self.grid_step:
            raise ValueError("grid must cover the deadband with margin")


def tcl_nominal_model(config: TclConfig) -> NominalLoadModel:
    """Build the two-mode TCL: Q0 is the deterministic Euler step of
    theta' = theta + (ambient - theta)/tau - c * 1{ON}, rounded to the grid;
    R0 is a thermostat with hysteresis, deterministic outside the deadband
    (hard quality-of-service bound at zeta = 0) and epsilon-noisy inside
    (keeps every tilted kernel irreducible). The returned model is trimmed
    to the largest closed communicating class.
    """
    lo, hi = config.deadband
    temps = np.round(np.arange(lo - config.grid_margin,
                               hi + config.grid_margin + 1e-9,
                               config.grid_step), 10)
    nn = len(temps)
    nu = 2  # 0 = OFF, 1 = ON
    S_full = nu * nn
    xu = np.repeat(np.arange(nu), nn)
    xn = np.tile(np.arange(nn), nu)

    Q0 = np.zeros((S_full, nn))
    R0 = np.zeros((S_full, nu))
    for x in range(S_full):
        on = xu[x] == 1
        th = temps[xn[x]]
        th_next = th + (config.ambient - th) / config.time_constant
        if on:
            th_next -= config.cooling_rate
        j = int(np.clip(round((th_next - temps[0]) / config.grid_step), 0, nn - 1))
        Q0[x, j] = 1.0
        if th > hi:
            R0[x, 1] = 1.0
        elif th < lo:
            R0[x, 0] = 1.0
        else:
            keep = xu[x]
            R0[x, keep] = 1.0 - config.epsilon
            R0[x, 1 - keep] = config.epsilon

    # trim to the largest closed communicating class of P0
    P0 = R0[:, xu] * Q0[:, xn]
    ncomp, labels = connected_components(csr_matrix(P0 > 0), directed=True,
                                         connection="strong")
    best, best_size = None, -1
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        mass = P0[np.ix_(members, members)].sum(axis=1)
        if np.allclose(mass, 1.0, atol=1e-12) and len(members) > best_size:
            best, best_size = members, len(members)
    if best is None:
        raise ValueError("no closed communicating class found")
    keep = best
    return NominalLoadModel(
        R0=R0[keep], Q0=Q0[keep], U=np.array([0.0, config.power_on]),
        xu_of=xu[keep], xn_of=xn[keep],
        meta={"temps": temps, "config": config},
    )


# ---------------------------------------------------------------------------
# fleet simulation and the closed loop
# ---------------------------------------------------------------------------


def fleet_counts_step(counts: np.ndarray, P: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """Advance per-state occupancy counts one step: a multinomial draw from
    each occupied row."""
    S = len(counts)
    out = np.zeros(S, dtype=np.int64)
    for x in np.flatnonzero(counts):
        out += rng.multinomial(counts[x], P[x])
    return out


def sample_fleet(model: NominalLoadModel, n_loads: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Initial occupancy counts drawn from the nominal invariant pmf."""
    pi0 = invariant_pmf(controlled_kernel(model, 0.0))
    return rng.multinomial(n_loads, pi0)


def closed_loop_simulate(n_loads: int, model: NominalLoadModel, reference,
                         gains: tuple[float, float], rng: np.random.Generator,
                         disagg_hook=None, init_counts=None,
                         init_states=None) -> dict:
    """Track a per-load power deviation reference with PI feedback.

    Per step: measure fleet mean power y_t, subtract the nominal baseline
    ybar_t (a deterministic mean-field twin run at zeta = 0 from the same
    initial distribution), form e_t = r_t - (y_t - ybar_t), compute zeta_t,
    then every load draws its next state from its tilted kernel.

    Without a hook the fleet evolves as occupancy counts (exact, fast).
    With ``disagg_hook(t, states) -> (xu_est, u_on_est)`` loads are tracked
    individually: the hook's estimated mode and power map drive each load's
    tilt decision while the true state drives the physics.
    """
    reference = np.asarray(reference, dtype=float)
    T = len(reference)
    u_state = model.power_of_state
    ctrl = PiController(kp=gains[0], ki=gains[1])

    per_load = disagg_hook is not None
    if per_load:
        if init_states is None:
            pi0 = invariant_pmf(controlled_kernel(model, 0.0))
            states = rng.choice(model.S, size=n_loads, p=pi0)
        else:
            states = np.asarray(init_states, dtype=np.int64).copy()
        mu = np.bincount(states, minlength=model.S) / n_loads
    else:
        counts = sample_fleet(model, n_loads, rng) if init_counts is None \
            else np.asarray(init_counts, dtype=np.int64).copy()
        mu = counts / n_loads

    twin = MeanFieldState(mu=mu, y=float(mu @ u_state))
    P0 = controlled_kernel(model, 0.0)

    traces = {k: np.empty(T) for k in ("y", "ybar", "ytilde", "e", "zeta")}
    for t in range(T):
        if per_load:
            y = float(u_state[states].sum()) / n_loads
        else:
            y = float(counts @ u_state) / n_loads
        ybar = twin.y
        e = reference[t] - (y - ybar)
        zeta, ctrl = pi_step(ctrl, e)
        traces["y"][t] = y
        traces["ybar"][t] = ybar
        traces["ytilde"][t] = y - ybar
        traces["e"][t] = e
        traces["zeta"][t] = zeta

        if per_load:
            xu_est, u_on_est = disagg_hook(t, states)
            states = _per_load_step(model, states, xu_est, u_on_est, zeta, rng)
        else:
            counts = fleet_counts_step(counts, controlled_kernel(model, zeta), rng)
        mu_next = twin.mu @ P0
        twin = MeanFieldState(mu=mu_next, y=float(mu_next @ u_state))
    return traces


def _per_load_step(model: NominalLoadModel, states, xu_est, u_on_est,
                   zeta: float, rng: np.random.Generator) -> np.ndarray:
    """One per-load transition: the tilt row is computed from the estimated
    mode and estimated ON power, the thermal row from the true state.

    Estimation only reweights the mode decision; it cannot move mass onto
    modes the true row forbids (outside the deadband both rows force the
    same mode), so the landed pair is always a retained state. If a custom
    model breaks that, the controller falls back to its true row.
    """
    n = len(states)
    new_states = np.empty(n, dtype=np.int64)
    lookup = {(int(model.xu_of[s]), int(model.xn_of[s])): s for s in range(model.S)}
    u = rng.random(n)
    v = rng.random(n)
    for i in range(n):
        s_true = int(states[i])
        s_ctrl = lookup.get((int(xu_est[i]), int(model.xn_of[s_true])), s_true)
        U_hat = np.array([0.0, float(u_on_est[i])])
        logr = np.where(model.R0[s_ctrl] > 0,
                        np.log(np.maximum(model.R0[s_ctrl], 1e-300)) + zeta * U_hat,
                        -np.inf)
        r = np.exp(logr - logr.max())
        r /= r.sum()
        xu_next = min(int(np.searchsorted(np.cumsum(r), u[i])), len(r) - 1)
        q = model.Q0[s_true]
        xn_next = min(int(np.searchsorted(np.cumsum(q), v[i], side="right")), len(q) - 1)
        key = (xu_next, xn_next)
        if key not in lookup:
            xu_next = min(int(np.searchsorted(np.cumsum(model.R0[s_true]), u[i])),
                          len(r) - 1)
        new_states[i] = lookup[(xu_next, xn_next)]
    return new_states
