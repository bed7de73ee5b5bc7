"""EM fitting of near-far field channel parameters.

The per-path near/far label is a hidden binary variable, so a channel with
L paths has 2^L label hypotheses.  The E-step computes the exact posterior
over all hypotheses in the log domain; the M-step runs projected gradient
ascent with a backtracking Armijo rule on the expected complete-data
log-likelihood Q.  Per-path gains are complex; their gradient is handled
with Wirtinger calculus (the ascent direction for beta is the conjugate of
dQ/dbeta).

Because the per-sample likelihood is Gaussian with a shared mean, every
quantity here depends on the data only through sum_s h_s and sum_s ||h_s||^2;
all E/M computations use those sufficient statistics, which keeps the cost
per evaluation independent of the sample count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .channel import (ChannelModelParams, ChannelSampleSet, FieldHypothesis,
                      PathParams)
from .steering import (FAR, NEAR, ArrayGeometry, far_field_steering,
                       near_field_steering, rayleigh_distance, steering,
                       steering_gradients)

MAX_ENUM_PATHS = 12


@dataclass
class PosteriorZ:
    """Log posterior over all 2^L label hypotheses, canonical bit order.

    Entry i is the log probability of the hypothesis whose l-th bit
    (least significant = path 0) gives the label of path l.
    """

    log_probs: np.ndarray

    def __post_init__(self):
        self.log_probs = np.minimum(np.asarray(self.log_probs, dtype=float), 0.0)
        size = self.log_probs.shape[0]
        if size < 1 or (size & (size - 1)) != 0:
            raise ValueError(f"posterior length must be a power of two, got {size}")
        total = np.exp(logsumexp(self.log_probs))
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"posterior not normalized: sums to {total}")

    @property
    def num_paths(self) -> int:
        return int(self.log_probs.shape[0]).bit_length() - 1

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def map_labels(self) -> FieldHypothesis:
        return FieldHypothesis.from_index(int(np.argmax(self.log_probs)), self.num_paths)


@dataclass
class EMConfig:
    """Knobs for the EM loop, the Armijo line search and the restart draws."""

    delta: float = 1e-4
    max_em_iters: int = 60
    max_grad_iters: int = 40
    armijo_c: float = 1e-4
    armijo_rho: float = 0.5
    step0: float = 1.0
    max_backtracks: int = 60
    grad_tol: float = 1e-9
    restarts: int = 4
    init_probes: int = 64
    seed: int = 0
    theta_bounds: tuple[float, float] = (np.pi / 3, 2 * np.pi / 3)
    phi_bounds: tuple[float, float] = (-np.pi / 6, np.pi / 6)
    r_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.armijo_rho < 1:
            raise ValueError("armijo_rho must lie in (0, 1)")
        if self.step0 <= 0:
            raise ValueError("step0 must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    def resolved_r_bounds(self, geom: ArrayGeometry) -> tuple[float, float]:
        # Default cap at the Rayleigh distance: beyond it the near kernel can
        # mimic the planar one and the field label stops being identifiable.
        if self.r_bounds is not None:
            lo, hi = self.r_bounds
        else:
            r_rd = rayleigh_distance(geom)
            lo, hi = 0.05 * r_rd, r_rd
        if not 0 < lo < hi:
            raise ValueError(f"invalid distance bounds ({lo}, {hi})")
        return lo, hi


@dataclass
class QGradient:
    """Gradient of Q per path.

    dbeta holds dQ/dbeta (the Wirtinger derivative treating conj(beta) as
    constant); the steepest-ascent direction for beta is conj(dbeta), and
    the realified axis derivatives are dQ/dRe(beta) = 2*Re(dbeta),
    dQ/dIm(beta) = -2*Im(dbeta).
    """

    dtheta: np.ndarray
    dphi: np.ndarray
    dr: np.ndarray
    dbeta: np.ndarray


@dataclass
class TraceRow:
    iteration: int
    q_value: float
    loglik: float
    param_change: float


@dataclass
class MStepInfo:
    n_iters: int
    q_in: float
    q_out: float
    line_search_failed: bool = False


@dataclass
class EMResult:
    theta_hat: ChannelModelParams
    posterior: PosteriorZ
    map_labels: FieldHypothesis
    trace: list[TraceRow]
    loglik: float
    restart: int
    flags: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Sufficient statistics and hypothesis enumeration
# ---------------------------------------------------------------------------

@dataclass
class _Stats:
    h_sum: np.ndarray
    h_sq: float
    s_count: int
    n_elements: int

    @classmethod
    def from_samples(cls, samples: ChannelSampleSet) -> "_Stats":
        data = samples.samples
        return cls(h_sum=data.sum(axis=0),
                   h_sq=float(np.real(np.vdot(data, data))),
                   s_count=samples.num_samples,
                   n_elements=samples.num_elements)


def _check_enum_cap(num_paths: int):
    if num_paths > MAX_ENUM_PATHS:
        raise ValueError(
            f"hypothesis enumeration over 2^{num_paths} label vectors exceeds the "
            f"cap of {MAX_ENUM_PATHS} paths")


def _bit_matrix(num_paths: int) -> np.ndarray:
    idx = np.arange(1 << num_paths)
    return (idx[:, None] >> np.arange(num_paths)[None, :]) & 1


def _kernel_table(geom: ArrayGeometry, theta, phi, r) -> np.ndarray:
    "Both kernels per path, shape (L, 2, N); slot 0 near, slot 1 far."
    L = len(theta)
    table = np.empty((L, 2, geom.n_elements), dtype=complex)
    for l in range(L):
        table[l, NEAR] = near_field_steering(geom, theta[l], phi[l], r[l])
        table[l, FAR] = far_field_steering(geom, theta[l], phi[l])
    return table


def _hypothesis_means(table: np.ndarray, beta: np.ndarray) -> np.ndarray:
    "Deterministic mean for every hypothesis, shape (2^L, N)."
    L = table.shape[0]
    bits = _bit_matrix(L)
    means = np.zeros((bits.shape[0], table.shape[2]), dtype=complex)
    for l in range(L):
        means += beta[l] * table[l, bits[:, l], :]
    return means


def _rss_per_hypothesis(means: np.ndarray, stats: _Stats) -> np.ndarray:
    "sum_s ||h_s - mean_z||^2 for every hypothesis, via the sufficient stats."
    cross = np.real(means.conj() @ stats.h_sum)
    mean_pow = np.real(np.einsum("ij,ij->i", means.conj(), means))
    return stats.h_sq - 2.0 * cross + stats.s_count * mean_pow


def _loglik_per_hypothesis(geom, params: ChannelModelParams, stats: _Stats) -> np.ndarray:
    theta, phi, r, beta = _path_arrays(params)
    table = _kernel_table(geom, theta, phi, r)
    means = _hypothesis_means(table, beta)
    rss = _rss_per_hypothesis(means, stats)
    const = -stats.s_count * stats.n_elements * np.log(np.pi * params.sigma2)
    return const - rss / params.sigma2


def _path_arrays(params: ChannelModelParams):
    theta = np.array([p.theta for p in params.paths])
    phi = np.array([p.phi for p in params.paths])
    r = np.array([p.r for p in params.paths])
    beta = np.array([p.beta for p in params.paths], dtype=complex)
    return theta, phi, r, beta


def _params_from_arrays(theta, phi, r, beta, sigma2) -> ChannelModelParams:
    paths = [PathParams(beta=complex(beta[l]), theta=float(theta[l]),
                        phi=float(phi[l]), r=float(r[l])) for l in range(len(theta))]
    return ChannelModelParams(paths=paths, sigma2=sigma2)


# ---------------------------------------------------------------------------
# Spec surface: likelihoods, posterior, Q and its gradient
# ---------------------------------------------------------------------------

def log_likelihood_given_z(geom: ArrayGeometry, samples: ChannelSampleSet,
                           params: ChannelModelParams, z: FieldHypothesis) -> float:
    """log p(H | z, params): Gaussian log density summed over samples."""
    if len(z) != params.num_paths:
        raise ValueError("label count does not match path count")
    if samples.num_elements != geom.n_elements:
        raise ValueError("sample length does not match array size")
    stats = _Stats.from_samples(samples)
    theta, phi, r, beta = _path_arrays(params)
    table = _kernel_table(geom, theta, phi, r)
    mean = np.zeros(geom.n_elements, dtype=complex)
    for l, label in enumerate(z.labels):
        mean += beta[l] * table[l, label]
    rss = float(_rss_per_hypothesis(mean[None, :], stats)[0])
    return -stats.s_count * stats.n_elements * np.log(np.pi * params.sigma2) - rss / params.sigma2


def posterior_z(geom: ArrayGeometry, samples: ChannelSampleSet,
                params: ChannelModelParams) -> PosteriorZ:
    """Posterior over all label hypotheses at the given parameters.

    The label prior is uniform over the 2^L hypotheses, so it cancels in
    the normalization; everything stays in the log domain.
    """
    _check_enum_cap(params.num_paths)
    stats = _Stats.from_samples(samples)
    ll = _loglik_per_hypothesis(geom, params, stats)
    return PosteriorZ(ll - logsumexp(ll))


def observed_log_likelihood(geom: ArrayGeometry, samples: ChannelSampleSet,
                            params: ChannelModelParams) -> float:
    "log p(H | params) marginalized over labels under the uniform prior."
    _check_enum_cap(params.num_paths)
    stats = _Stats.from_samples(samples)
    ll = _loglik_per_hypothesis(geom, params, stats)
    return float(logsumexp(ll) - params.num_paths * np.log(2.0))


def q_function(geom: ArrayGeometry, params: ChannelModelParams,
               posterior: PosteriorZ, samples: ChannelSampleSet) -> float:
    "Expected complete-data log-likelihood under the (fixed) posterior."
    stats = _Stats.from_samples(samples)
    theta, phi, r, beta = _path_arrays(params)
    return _q_value(geom, theta, phi, r, beta, params.sigma2, posterior.probs(), stats)


def _q_value(geom, theta, phi, r, beta, sigma2, probs, stats: _Stats) -> float:
    table = _kernel_table(geom, theta, phi, r)
    means = _hypothesis_means(table, beta)
    rss = _rss_per_hypothesis(means, stats)
    const = -stats.s_count * stats.n_elements * np.log(np.pi * sigma2)
    ll = const - rss / sigma2
    L = len(theta)
    return float(probs @ ll - L * np.log(2.0))


def q_gradient(geom: ArrayGeometry, params: ChannelModelParams,
               posterior: PosteriorZ, samples: ChannelSampleSet) -> QGradient:
    """Analytic gradient of Q w.r.t. every path parameter.

    Real parameters: dQ/dx = E_z{ (2/sigma2) * Re[ conj(beta_l) *
    (ds_l/dx)^H * sum_s r_s ] }.  Complex gains: dQ/dbeta_l =
    E_z{ (1/sigma2) * (sum_s r_s)^H s_l }.
    """
    stats = _Stats.from_samples(samples)
    theta, phi, r, beta = _path_arrays(params)
    return _q_grad(geom, theta, phi, r, beta, params.sigma2, posterior.probs(), stats)


def _q_grad(geom, theta, phi, r, beta, sigma2, probs, stats: _Stats,
            with_curvature: bool = False):
    L = len(theta)
    table = _kernel_table(geom, theta, phi, r)
    grads = np.empty((L, 2, 3, geom.n_elements), dtype=complex)
    for l in range(L):
        grads[l, NEAR] = steering_gradients(geom, theta[l], phi[l], r[l], NEAR)
        grads[l, FAR] = steering_gradients(geom, theta[l], phi[l], r[l], FAR)
    means = _hypothesis_means(table, beta)
    resid_sums = stats.h_sum[None, :] - stats.s_count * means  # (2^L, N)
    bits = _bit_matrix(L)

    dtheta = np.zeros(L)
    dphi = np.zeros(L)
    dr = np.zeros(L)
    dbeta = np.zeros(L, dtype=complex)
    label_mass = np.zeros((L, 2))
    for z_idx in range(bits.shape[0]):
        p = probs[z_idx]
        if p == 0.0:
            continue
        resid = resid_sums[z_idx]
        for l in range(L):
            label = bits[z_idx, l]
            ds = grads[l, label]
            coeff = np.conj(beta[l])
            dtheta[l] += p * (2.0 / sigma2) * np.real(coeff * np.vdot(ds[0], resid))
            dphi[l] += p * (2.0 / sigma2) * np.real(coeff * np.vdot(ds[1], resid))
            dr[l] += p * (2.0 / sigma2) * np.real(coeff * np.vdot(ds[2], resid))
            dbeta[l] += p * (1.0 / sigma2) * np.vdot(resid, table[l, label])
            label_mass[l, label] += p
    grad = QGradient(dtheta=dtheta, dphi=dphi, dr=dr, dbeta=dbeta)
    if not with_curvature:
        return grad

    # Gauss-Newton diagonal of -Q: exact 2S/sigma2 for each gain axis,
    # (2S/sigma2)|beta|^2 E_z||ds/dx||^2 for the geometry axes.  Used as a
    # diagonal preconditioner; the raw gradient above is what tests check.
    grad_norms = np.real(np.einsum("lkpn,lkpn->lkp", grads.conj(), grads))
    scale = 2.0 * stats.s_count / sigma2
    curv_geo = scale * (np.abs(beta) ** 2)[:, None] * np.einsum(
        "lk,lkp->lp", label_mass, grad_norms)  # (L, 3)
    curv_beta = np.full(L, scale)
    curvature = np.concatenate([curv_geo[:, 0], curv_geo[:, 1], curv_geo[:, 2],
                                curv_beta, curv_beta])
    return grad, curvature


# ---------------------------------------------------------------------------
# M-step: projected gradient ascent with backtracking Armijo
# ---------------------------------------------------------------------------

def _pack(theta, phi, r, beta) -> np.ndarray:
    return np.concatenate([theta, phi, r, beta.real, beta.imag])

def _unpack(x: np.ndarray, L: int):
    return (x[:L], x[L:2 * L], x[2 * L:3 * L], x[3 * L:4 * L] + 1j * x[4 * L:])


def _realified_gradient(grad: QGradient) -> np.ndarray:
    return np.concatenate([grad.dtheta, grad.dphi, grad.dr,
                           2.0 * grad.dbeta.real, -2.0 * grad.dbeta.imag])


def _make_projector(L: int, cfg: EMConfig, geom: ArrayGeometry):
    r_lo, r_hi = cfg.resolved_r_bounds(geom)
    th_lo, th_hi = cfg.theta_bounds
    ph_lo, ph_hi = cfg.phi_bounds

    def project(x: np.ndarray) -> np.ndarray:
        out = x.copy()
        out[:L] = np.clip(out[:L], th_lo, th_hi)
        out[L:2 * L] = np.clip(out[L:2 * L], ph_lo, ph_hi)
        out[2 * L:3 * L] = np.clip(out[2 * L:3 * L], r_lo, r_hi)
        return out

    return project


def m_step(geom: ArrayGeometry, params: ChannelModelParams, posterior: PosteriorZ,
           samples: ChannelSampleSet, cfg: EMConfig) -> tuple[ChannelModelParams, MStepInfo]:
    """Improve Q by projected ascent at a fixed posterior.

    The ascent direction is the gradient preconditioned by the Gauss-Newton
    diagonal (plain gradient ascent stalls badly here: gain and angle axes
    differ in curvature by orders of magnitude).  Steps are accepted only
    when they satisfy the Armijo sufficient-increase condition, so the
    returned parameters never decrease Q.  A line search that cannot find
    an improving step stops the M-step and is reported in the returned info.
    """
    stats = _Stats.from_samples(samples)
    theta, phi, r, beta = _path_arrays(params)
    L = params.num_paths
    probs = posterior.probs()
    sigma2 = params.sigma2
    project = _make_projector(L, cfg, geom)

    x = project(_pack(theta, phi, r, beta))
    q_cur = _q_value(geom, *_unpack(x, L), sigma2, probs, stats)
    q_in = q_cur
    ls_failed = False
    last_t = None
    iters = 0
    for _ in range(cfg.max_grad_iters):
        grad, curvature = _q_grad(geom, *_unpack(x, L), sigma2, probs, stats,
                                  with_curvature=True)
        g = _realified_gradient(grad)
        if not np.all(np.isfinite(g)):
            break
        # diagonal-preconditioned ascent direction; the floor only guards
        # coordinates with vanishing curvature (their gradient vanishes too)
        floor = 1e-12 * float(curvature.max()) + 1e-300
        direction = g / np.maximum(curvature, floor)
        decrement = float(g @ direction)
        if decrement <= cfg.grad_tol * (1.0 + abs(q_cur)):
            break
        iters += 1
        t = cfg.step0
        if last_t is not None:
            t = min(t, 4.0 * last_t)
        accepted = False
        moved = False
        for _ in range(cfg.max_backtracks):
            x_new = project(x + t * direction)
            step = x_new - x
            ascent = float(g @ step)
            if ascent > 0.0:
                moved = True
                q_new = _q_value(geom, *_unpack(x_new, L), sigma2, probs, stats)
                if np.isfinite(q_new) and q_new >= q_cur + cfg.armijo_c * ascent:
                    x, q_cur = x_new, q_new
                    last_t = t
                    accepted = True
                    break
            t *= cfg.armijo_rho
        if not accepted:
            # All movement blocked by the bounds means a boundary-stationary
            # point; otherwise the search genuinely failed.
            ls_failed = moved
            break

    out = _params_from_arrays(*_unpack(x, L), sigma2)
    return out, MStepInfo(n_iters=iters, q_in=q_in, q_out=q_cur, line_search_failed=ls_failed)


# ---------------------------------------------------------------------------
# Full EM with restarts
# ---------------------------------------------------------------------------

def _param_change(prev, cur, r_hi: float) -> float:
    "Max relative parameter change; angles scale by pi, r by r_max, beta by itself."
    th0, ph0, r0, b0 = prev
    th1, ph1, r1, b1 = cur
    change = np.max(np.abs(th1 - th0)) / np.pi
    change = max(change, np.max(np.abs(ph1 - ph0)) / np.pi)
    change = max(change, np.max(np.abs(r1 - r0)) / r_hi)
    beta_scale = np.maximum(np.abs(b0), 1e-6)
    change = max(change, float(np.max(np.abs(b1 - b0) / beta_scale)))
    return float(change)


def _polish_probe(geom: ArrayGeometry, point, label: int, resid: np.ndarray,
                  cfg: EMConfig, r_bounds) -> tuple[float, float, float]:
    """Local derivative-free polish of one probe against the residual.

    Without this, the leftover mismatch of a strong path after a coarse
    probe match buries any much weaker path, and the greedy picks pile onto
    the same basin."""
    from scipy.optimize import minimize

    th_lo, th_hi = cfg.theta_bounds
    ph_lo, ph_hi = cfg.phi_bounds
    r_lo, r_hi = r_bounds

    def neg_corr(x):
        th = float(np.clip(x[0], th_lo, th_hi))
        ph = float(np.clip(x[1], ph_lo, ph_hi))
        rr = float(np.clip(x[2], r_lo, r_hi)) if label == NEAR else point[2]
        s = steering(geom, th, ph, rr, label)
        return -abs(np.vdot(s, resid))

    x0 = np.array(point)
    res = minimize(neg_corr, x0, method="Nelder-Mead",
                   options={"maxiter": 150, "xatol": 1e-7, "fatol": 1e-14})
    th = float(np.clip(res.x[0], th_lo, th_hi))
    ph = float(np.clip(res.x[1], ph_lo, ph_hi))
    rr = float(np.clip(res.x[2], r_lo, r_hi)) if label == NEAR else point[2]
    return th, ph, rr


def _greedy_init(geom: ArrayGeometry, stats: _Stats, num_paths: int, cfg: EMConfig,
                 rng: np.random.Generator):
    """Random-probe initialization: per path, draw candidate locations,
    score both kernels against the current residual of the sample mean,
    polish the best match locally, then least-squares refit all gains."""
    h_bar = stats.h_sum / stats.s_count
    r_lo, r_hi = cfg.resolved_r_bounds(geom)
    chosen = []
    atoms = []
    resid = h_bar.copy()
    for _ in range(num_paths):
        cand_theta = rng.uniform(*cfg.theta_bounds, size=cfg.init_probes)
        cand_phi = rng.uniform(*cfg.phi_bounds, size=cfg.init_probes)
        cand_r = rng.uniform(r_lo, r_hi, size=cfg.init_probes)
        best_score, best, best_label = -1.0, None, NEAR
        for j in range(cfg.init_probes):
            for label in (NEAR, FAR):
                s = steering(geom, cand_theta[j], cand_phi[j], cand_r[j], label)
                score = abs(np.vdot(s, resid))
                if score > best_score:
                    best_score = score
                    best = (cand_theta[j], cand_phi[j], cand_r[j])
                    best_label = label
        point = _polish_probe(geom, best, best_label, resid, cfg, (r_lo, r_hi))
        chosen.append(point)
        atoms.append(steering(geom, point[0], point[1], point[2], best_label))
        basis = np.stack(atoms, axis=1)
        coef, _, _, _ = np.linalg.lstsq(basis, h_bar, rcond=None)
        resid = h_bar - basis @ coef
    theta = np.array([c[0] for c in chosen])
    phi = np.array([c[1] for c in chosen])
    r = np.array([c[2] for c in chosen])
    return theta, phi, r, coef.astype(complex)


def em_fit(geom: ArrayGeometry, samples: ChannelSampleSet, num_paths: int,
           cfg: EMConfig, sigma2: float | None = None,
           init_params: ChannelModelParams | None = None) -> EMResult:
    """Alternate E- and M-steps until the parameter change drops below delta.

    sigma2 is the known diffuse variance; when None it is estimated from the
    residual power around the sample mean (needs at least two samples).
    With several restarts the run with the highest observed-data
    log-likelihood wins; restart 0 starts from init_params when provided,
    all others from random-probe draws.
    """
    _check_enum_cap(num_paths)
    if samples.num_elements != geom.n_elements:
        raise ValueError("sample length does not match array size")
    stats = _Stats.from_samples(samples)
    if sigma2 is None:
        if stats.s_count < 2:
            raise ValueError("sigma2 estimation needs at least two samples")
        h_bar = stats.h_sum / stats.s_count
        resid_power = stats.h_sq - stats.s_count * float(np.real(np.vdot(h_bar, h_bar)))
        sigma2 = max(resid_power / ((stats.s_count - 1) * stats.n_elements), 1e-300)
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")

    _, r_hi = cfg.resolved_r_bounds(geom)
    project = _make_projector(num_paths, cfg, geom)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)

    best = None
    for restart in range(cfg.restarts):
        rng = np.random.default_rng(seeds[restart])
        if restart == 0 and init_params is not None:
            if init_params.num_paths != num_paths:
                raise ValueError("init_params path count mismatch")
            theta, phi, r, beta = _path_arrays(init_params)
        else:
            theta, phi, r, beta = _greedy_init(geom, stats, num_paths, cfg, rng)
        x = project(_pack(theta, phi, r, beta))
        params = _params_from_arrays(*_unpack(x, num_paths), sigma2)

        trace: list[TraceRow] = []
        flags: list[str] = []
        posterior = None
        for iteration in range(1, cfg.max_em_iters + 1):
            posterior = posterior_z(geom, samples, params)
            prev_arrays = _path_arrays(params)
            params, info = m_step(geom, params, posterior, samples, cfg)
            if info.line_search_failed:
                flags.append(f"iter {iteration}: line search failed after max backtracks")
            change = _param_change(prev_arrays[:4], _path_arrays(params)[:4], r_hi)
            loglik = observed_log_likelihood(geom, samples, params)
            trace.append(TraceRow(iteration=iteration, q_value=info.q_out,
                                  loglik=loglik, param_change=change))
            if change <= cfg.delta:
                break

        final_arrays = _path_arrays(params)
        if not all(np.all(np.isfinite(a)) for a in final_arrays[:3]) or \
                not np.all(np.isfinite(final_arrays[3].view(float))):
            continue
        posterior = posterior_z(geom, samples, params)
        loglik = observed_log_likelihood(geom, samples, params)
        candidate = EMResult(theta_hat=params, posterior=posterior,
                             map_labels=posterior.map_labels(), trace=trace,
                             loglik=loglik, restart=restart, flags=flags)
        if best is None or candidate.loglik > best.loglik:
            best = candidate
    if best is None:
        raise RuntimeError("every EM restart produced non-finite parameters")
    return best


# ---------------------------------------------------------------------------
# Result serialization
# ---------------------------------------------------------------------------

def write_em_report(path, result: EMResult, provenance: dict | None = None):
    "Human-readable fit report: per-path estimates, MAP labels, posterior table."
    params = result.theta_hat
    lines = []
    for key, value in (provenance or {}).items():
        lines.append(f"# {key}={value}")
    lines.append(f"paths={params.num_paths} sigma2={params.sigma2!r} "
                 f"loglik={result.loglik!r} restart={result.restart}")
    lines.append("path,label,beta_real,beta_imag,theta,phi,r")
    for l, (p, z) in enumerate(zip(params.paths, result.map_labels.labels)):
        name = "near" if z == NEAR else "far"
        lines.append(f"{l},{name},{p.beta.real!r},{p.beta.imag!r},{p.theta!r},{p.phi!r},{p.r!r}")
    lines.append("hypothesis,labels,prob")
    probs = result.posterior.probs()
    for idx in range(probs.shape[0]):
        labels = FieldHypothesis.from_index(idx, params.num_paths).labels
        bits = "".join(str(b) for b in labels)
        lines.append(f"{idx},{bits},{probs[idx]!r}")
    for flag in result.flags:
        lines.append(f"# flag: {flag}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_em_trace(path, result: EMResult, provenance: dict | None = None):
    "Iteration trace as CSV: iter, Q, loglik, param_change."
    with open(path, "w", newline="") as fh:
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["iter", "Q", "loglik", "param_change"])
        for row in result.trace:
            writer.writerow([row.iteration, repr(row.q_value), repr(row.loglik),
                             repr(row.param_change)])
