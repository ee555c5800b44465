"""Counting-process Cox engine with strata, frailty, and the PERR estimators.

The partial likelihood uses the Breslow convention for ties on
counting-process risk sets: a row is at risk at event time t iff
start < t <= stop and it shares the stratum.  Writing eta_r for the
linear predictor (X beta + offset) of row r and, at each distinct event
time t_j of a stratum,

    S0_j = sum of exp(eta_r) over rows at risk,
    S1_j, S2_j = the matching first and second moments of the covariates,

the log likelihood, gradient and Hessian are

    ll = sum_events eta_i - sum_j d_j log S0_j,
    g  = sum_events x_i   - sum_j d_j S1_j / S0_j,
    H  = -sum_j d_j (S2_j / S0_j - (S1_j/S0_j)(S1_j/S0_j)^T),

with d_j the tie count.  Risk-set sums are computed by sorting rows by
start and stop once and reusing prefix sums at every evaluation, so an
evaluation costs O(n p^2) after an O(n log n) setup.

The shared gamma frailty model multiplies each cluster's hazard by a
gamma variate with mean 1 and variance theta.  For fixed theta the fit is
an EM iteration: the E-step poses the posterior frailty mean

    w_c = (1/theta + d_c) / (1/theta + Lambda_c),

with d_c the cluster's event count and Lambda_c its accumulated
cumulative hazard, and the M-step refits the Cox model with offsets
log w_c.  theta itself is chosen by profiling the marginal likelihood
over a grid and refining with golden-section search.  The reported
variance is the observed information of the final M-step with theta
fixed, which ignores theta-estimation uncertainty.

estimate_perr_ag / estimate_perr_cf wrap the two fits for designs
[treated, post, treated x post]: the interaction coefficient is the log
prior event rate ratio.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .types import ConvergenceError, CountingRow, FitResult, PerrEstimate

logger = logging.getLogger(__name__)

_Z95 = 1.96


class MonotoneLikelihoodError(ConvergenceError):
    """A coefficient diverged (|beta| > 50): the likelihood has no finite optimum."""


@dataclass(frozen=True)
class FitOptions:
    """Optimizer and frailty-profile settings."""

    max_iterations: int = 100
    convergence_tolerance: float = 1e-9
    theta_grid: tuple[float, ...] = field(
        default_factory=lambda: tuple(np.geomspace(0.001, 10.0, 40)))
    frailty_inner_tolerance: float = 1e-7
    max_em_iterations: int = 200

    def __post_init__(self):
        if self.convergence_tolerance <= 0 or self.frailty_inner_tolerance <= 0:
            raise ValueError("tolerances must be > 0")


class _CoxData:
    """Preprocessed counting-process dataset for repeated likelihood evaluations.

    Rows are laid out in stratum blocks with per-block sort orders by stop
    and by start; event times are concatenated per block in ascending
    order.  Because every gather subtracts two positions inside the same
    block, a single global cumulative sum serves all strata at once and an
    evaluation needs no per-stratum Python loop.
    """

    def __init__(self, rows: list[CountingRow]):
        if not rows:
            raise ValueError("no rows")
        n = len(rows)
        p = len(rows[0].covariates)
        if any(len(r.covariates) != p for r in rows):
            raise ValueError("ragged covariate vectors")
        self.n, self.p = n, p
        self.X = np.array([r.covariates for r in rows], dtype=float)
        self.start = np.array([r.start for r in rows], dtype=float)
        self.stop = np.array([r.stop for r in rows], dtype=float)
        self.status = np.array([r.status for r in rows], dtype=np.int64)

        self.cluster_labels: list[str] = []
        cluster_index: dict[str, int] = {}
        codes = np.empty(n, dtype=np.int64)
        for i, r in enumerate(rows):
            code = cluster_index.get(r.cluster_id)
            if code is None:
                code = len(self.cluster_labels)
                cluster_index[r.cluster_id] = code
                self.cluster_labels.append(r.cluster_id)
            codes[i] = code
        self.cluster = codes
        self.n_clusters = len(self.cluster_labels)
        self.cluster_events = np.bincount(self.cluster, weights=self.status,
                                          minlength=self.n_clusters)

        self.total_events = int(self.status.sum())
        if self.total_events == 0:
            raise ValueError("no events in any stratum")

        strata = np.array([r.stratum_id for r in rows], dtype=np.int64)
        self._tri = [(a, b) for a in range(p) for b in range(a, p)]

        perm_stop, perm_start = [], []          # global row permutations
        ev_d, ev_rows, ev_slot = [], [], []
        pos_stop, end_stop, pos_start, end_start = [], [], [], []
        row_hi = np.zeros(n, dtype=np.int64)
        row_lo = np.zeros(n, dtype=np.int64)
        n_sorted = 0
        n_times = 0
        for s in np.unique(strata):
            idx = np.flatnonzero(strata == s)
            ev = idx[self.status[idx] == 1]
            if ev.size == 0:
                # an event-free stratum contributes nothing anywhere
                continue
            times, inv = np.unique(self.stop[ev], return_inverse=True)
            d = np.bincount(inv).astype(float)
            order_stop = idx[np.argsort(self.stop[idx], kind="stable")]
            order_start = idx[np.argsort(self.start[idx], kind="stable")]
            stops_sorted = self.stop[order_stop]
            starts_sorted = self.start[order_start]
            k = idx.size
            m = times.size
            perm_stop.append(order_stop)
            perm_start.append(order_start)
            ev_d.append(d)
            ev_rows.append(ev)
            ev_slot.append(inv + n_times)
            pos_stop.append(n_sorted + np.searchsorted(stops_sorted, times, "left"))
            end_stop.append(np.full(m, n_sorted + k, dtype=np.int64))
            pos_start.append(n_sorted + np.searchsorted(starts_sorted, times, "left"))
            end_start.append(np.full(m, n_sorted + k, dtype=np.int64))
            row_hi[idx] = n_times + np.searchsorted(times, self.stop[idx], "right")
            row_lo[idx] = n_times + np.searchsorted(times, self.start[idx], "right")
            n_sorted += k
            n_times += m

        self.perm_stop = np.concatenate(perm_stop)
        self.perm_start = np.concatenate(perm_start)
        self.in_model = np.zeros(n, dtype=bool)
        self.in_model[self.perm_stop] = True
        self.d = np.concatenate(ev_d)
        self.event_rows = np.concatenate(ev_rows)
        self.event_slot = np.concatenate(ev_slot)
        self.pos_stop = np.concatenate(pos_stop)
        self.end_stop = np.concatenate(end_stop)
        self.pos_start = np.concatenate(pos_start)
        self.end_start = np.concatenate(end_start)
        self.row_hi = row_hi     # meaningful only for rows with in_model
        self.row_lo = row_lo

    def eta(self, beta: np.ndarray, offsets: np.ndarray | None) -> np.ndarray:
        eta = self.X @ beta
        if offsets is not None:
            eta = eta + offsets
        return eta

    def _risk_sums(self, vals: np.ndarray) -> np.ndarray:
        """Sum vals (n, m) over the risk set of every event time, all strata at once."""
        c_stop = np.vstack([np.zeros((1, vals.shape[1])),
                            np.cumsum(vals[self.perm_stop], axis=0)])
        c_start = np.vstack([np.zeros((1, vals.shape[1])),
                             np.cumsum(vals[self.perm_start], axis=0)])
        return ((c_stop[self.end_stop] - c_stop[self.pos_stop])
                - (c_start[self.end_start] - c_start[self.pos_start]))

    def loglik_grad_hess(self, beta: np.ndarray, offsets: np.ndarray | None = None):
        """Breslow partial log likelihood with exact gradient and Hessian."""
        eta = self.eta(beta, offsets)
        center = float(np.max(eta))
        r = np.exp(eta - center)
        p = self.p
        packed = np.empty((self.n, 1 + p + len(self._tri)))
        packed[:, 0] = r
        packed[:, 1:1 + p] = r[:, None] * self.X
        for c, (a, b) in enumerate(self._tri):
            packed[:, 1 + p + c] = r * self.X[:, a] * self.X[:, b]
        sums = self._risk_sums(packed)
        s0 = sums[:, 0]
        ev = self.event_rows
        hess = np.zeros((p, p))
        # an extreme trial step can underflow a whole risk set; the -inf
        # log likelihood makes step-halving reject it, so the stray NaNs
        # in the derivatives never survive
        with np.errstate(divide="ignore", invalid="ignore"):
            xbar = sums[:, 1:1 + p] / s0[:, None]
            ll = float(np.sum(eta[ev] - center)) - float(self.d @ np.log(s0))
            grad = self.X[ev].sum(axis=0) - self.d @ xbar
            for c, (a, b) in enumerate(self._tri):
                h = float(self.d @ (sums[:, 1 + p + c] / s0 - xbar[:, a] * xbar[:, b]))
                hess[a, b] -= h
                if a != b:
                    hess[b, a] -= h
        return ll, grad, hess

    def baseline_cluster_hazard(self, beta: np.ndarray,
                                offsets: np.ndarray | None = None) -> np.ndarray:
        """Accumulated cumulative hazard per cluster, excluding any offset factor.

        Baseline increments are d_j / S0_j with S0 evaluated at the full
        linear predictor (offsets included); each row then contributes
        exp(x beta) times the increments falling inside its interval.
        """
        eta = self.eta(beta, offsets)
        center = float(np.max(eta))
        r = np.exp(eta - center)[:, None]
        s0 = self._risk_sums(r)[:, 0]
        cum = np.concatenate([[0.0], np.cumsum(self.d / s0)]) * math.exp(-center)
        keep = self.in_model
        exb = np.exp(self.X[keep] @ beta)
        per_row = (cum[self.row_hi[keep]] - cum[self.row_lo[keep]]) * exb
        return np.bincount(self.cluster[keep], weights=per_row,
                           minlength=self.n_clusters)

    def breslow_profile_terms(self, beta: np.ndarray,
                              offsets: np.ndarray | None = None) -> float:
        """sum_j d_j log(d_j / S0_j) + sum_events x_i beta, for marginal likelihoods."""
        eta = self.eta(beta, offsets)
        center = float(np.max(eta))
        r = np.exp(eta - center)[:, None]
        s0 = self._risk_sums(r)[:, 0]
        out = float(self.d @ (np.log(self.d) - np.log(s0) - center))
        out += float(np.sum(self.X[self.event_rows] @ beta))
        return out

    def cluster_scores(self, beta: np.ndarray,
                       offsets: np.ndarray | None = None) -> np.ndarray:
        """Summed score residuals per cluster (for the sandwich variance)."""
        eta = self.eta(beta, offsets)
        center = float(np.max(eta))
        r = np.exp(eta - center)
        packed = np.empty((self.n, 1 + self.p))
        packed[:, 0] = r
        packed[:, 1:] = r[:, None] * self.X
        sums = self._risk_sums(packed)
        s0 = sums[:, 0]
        xbar = sums[:, 1:] / s0[:, None]
        hj = self.d / s0                 # shifted increments: d_j / (S0 e^{-c})
        cum_h = np.concatenate([[0.0], np.cumsum(hj)])
        cum_hx = np.vstack([np.zeros(self.p), np.cumsum(hj[:, None] * xbar, axis=0)])
        keep = self.in_model
        a = cum_h[self.row_hi[keep]] - cum_h[self.row_lo[keep]]
        b = cum_hx[self.row_hi[keep]] - cum_hx[self.row_lo[keep]]
        u = -r[keep, None] * (self.X[keep] * a[:, None] - b)
        pos_in_keep = np.cumsum(keep) - 1        # global row index -> row of u
        u[pos_in_keep[self.event_rows]] += self.X[self.event_rows] - xbar[self.event_slot]
        scores = np.zeros((self.n_clusters, self.p))
        for j in range(self.p):
            scores[:, j] += np.bincount(self.cluster[keep], weights=u[:, j],
                                        minlength=self.n_clusters)
        return scores


def partial_loglik(rows: list[CountingRow], beta, offsets=None):
    """Stratified Breslow partial log likelihood with analytic derivatives.

    Returns (loglik, gradient, hessian) at the given coefficient vector;
    offsets, when present, are added to each row's linear predictor.
    """
    data = _CoxData(rows)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.p,):
        raise ValueError(f"beta must have shape ({data.p},), got {beta.shape}")
    off = None if offsets is None else np.asarray(offsets, dtype=float)
    if off is not None and off.shape != (data.n,):
        raise ValueError("offsets must align with rows")
    return data.loglik_grad_hess(beta, off)


def _check_identifiable(data: _CoxData, hess0: np.ndarray):
    scale = max(1.0, float(data.total_events))
    bad = np.flatnonzero(np.diag(-hess0) <= 1e-12 * scale)
    if bad.size:
        raise ValueError(
            f"covariate column(s) {bad.tolist()} constant within all risk sets"
            " (non-identifiable)")


def _newton(data: _CoxData, options: FitOptions, offsets=None, init=None,
            max_iter=None):
    """Newton-Raphson with step-halving; returns (beta, ll, hess, iterations, converged)."""
    beta = np.zeros(data.p) if init is None else np.array(init, dtype=float)
    ll, grad, hess = data.loglik_grad_hess(beta, offsets)
    if init is None:
        _check_identifiable(data, hess)
    converged = False
    iterations = 0
    for _ in range(max_iter if max_iter is not None else options.max_iterations):
        iterations += 1
        slack = 1e-12 * (1.0 + abs(ll))   # tolerate float jitter at stationarity
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        new_beta = beta + step
        new_ll, new_grad, new_hess = data.loglik_grad_hess(new_beta, offsets)
        halvings = 0
        while not np.isfinite(new_ll) or new_ll < ll - slack:
            halvings += 1
            if halvings > 20:
                break
            step = step / 2.0
            new_beta = beta + step
            new_ll, new_grad, new_hess = data.loglik_grad_hess(new_beta, offsets)
        if not np.isfinite(new_ll) or new_ll < ll - slack:
            # no uphill step found; at a numerically flat optimum that means done
            converged = bool(np.max(np.abs(grad)) < 1e-6 * (1.0 + abs(ll)))
            break
        delta = abs(new_ll - ll)
        beta, ll, grad, hess = new_beta, new_ll, new_grad, new_hess
        if np.max(np.abs(beta)) > 50.0:
            raise MonotoneLikelihoodError(
                f"coefficient diverged beyond 50 (beta = {beta})")
        if delta < options.convergence_tolerance * (1.0 + abs(ll)):
            converged = True
            break
    # Polish to gradient stationarity so exact reparametrization identities
    # (label swaps, offset shifts) hold to near machine precision.
    if converged:
        for _ in range(4):
            if np.max(np.abs(grad)) <= 1e-9:
                break
            try:
                step = np.linalg.solve(-hess, grad)
            except np.linalg.LinAlgError:
                break
            cand = beta + step
            cand_ll, cand_grad, cand_hess = data.loglik_grad_hess(cand, offsets)
            if not np.isfinite(cand_ll) or cand_ll < ll - 1e-8 * (1.0 + abs(ll)):
                break
            beta, ll, grad, hess = cand, cand_ll, cand_grad, cand_hess
            iterations += 1
    return beta, ll, hess, iterations, converged


def _variance_from_hessian(hess: np.ndarray) -> np.ndarray:
    return np.linalg.inv(-hess)


def _default_names(p: int) -> tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(p))


def fit_cox(rows: list[CountingRow], options: FitOptions | None = None,
            offsets=None, names: tuple[str, ...] | None = None) -> FitResult:
    """Fit the stratified Cox model by Newton-Raphson from beta = 0."""
    options = options or FitOptions()
    data = _CoxData(rows)
    off = None if offsets is None else np.asarray(offsets, dtype=float)
    beta, ll, hess, iterations, converged = _newton(data, options, off)
    if not converged:
        logger.warning("Cox fit did not converge in %d iterations", iterations)
    return FitResult(
        names=names or _default_names(data.p),
        coefficients=beta,
        model_variance=_variance_from_hessian(hess),
        log_likelihood=ll,
        iterations=iterations,
        converged=converged,
    )


def robust_variance(rows: list[CountingRow], fit: FitResult, offsets=None) -> np.ndarray:
    """Cluster-grouped sandwich variance at the fitted coefficients."""
    if not fit.converged:
        raise ConvergenceError("robust variance requires a converged fit")
    data = _CoxData(rows)
    if data.n_clusters < 2:
        raise ValueError("robust variance needs at least 2 clusters")
    off = None if offsets is None else np.asarray(offsets, dtype=float)
    beta = np.asarray(fit.coefficients, dtype=float)
    scores = data.cluster_scores(beta, off)
    meat = scores.T @ scores
    bread = np.asarray(fit.model_variance, dtype=float)
    return bread @ meat @ bread


def _gamma_marginal_loglik(data: _CoxData, beta, offsets, theta, lam_c) -> float:
    """Observed-data log likelihood with the baseline profiled at the EM point."""
    base = data.breslow_profile_terms(beta, offsets)
    d_c = data.cluster_events
    if theta == 0.0:
        return base - float(np.sum(lam_c))
    a = 1.0 / theta
    terms = (a * math.log(a) - math.lgamma(a)
             + gammaln(a + d_c)
             - (a + d_c) * np.log(a + lam_c))
    return base + float(np.sum(terms))


def _frailty_em(data: _CoxData, theta: float, options: FitOptions,
                beta_init, log_w_init):
    """EM for fixed theta; returns (marginal ll, beta, log_w, hess, iters, converged).

    Each cycle takes at most two Newton steps (a partial M-step still
    increases the objective, and full inner convergence is wasted while
    the frailties keep moving); the fixed point is unchanged.  Pairs of
    cycles are extrapolated squared-secant style on log w with a
    likelihood safeguard, which collapses the long geometric tail the
    plain iteration develops when heterogeneity is strong.  A full Newton
    polish runs at the end.
    """
    beta = np.array(beta_init, dtype=float)
    log_w = (np.zeros(data.n_clusters) if theta == 0.0
             else np.array(log_w_init, dtype=float))
    a = 1.0 / theta if theta > 0 else math.inf
    counter = {"iters": 0}

    def cycle(w, b):
        offsets = w[data.cluster]
        b, _, _, iters, _ = _newton(data, options, offsets, init=b, max_iter=2)
        counter["iters"] += iters
        lam = data.baseline_cluster_hazard(b, offsets)
        ll = _gamma_marginal_loglik(data, b, offsets, theta, lam)
        new_w = np.log(a + data.cluster_events) - np.log(a + lam)
        return new_w, b, ll

    prev_ll = -np.inf
    converged = False
    cycles = 0
    if theta == 0.0:
        converged = True
    while not converged and cycles < options.max_em_iterations:
        w1, beta, ll0 = cycle(log_w, beta)
        cycles += 1
        if abs(ll0 - prev_ll) < options.frailty_inner_tolerance * (1.0 + abs(ll0)):
            converged = True
            log_w = w1
            break
        prev_ll = ll0
        w2, beta, ll1 = cycle(w1, beta)
        cycles += 1
        r = w1 - log_w
        v = (w2 - w1) - r
        vv = float(v @ v)
        if vv > 1e-30:
            alpha = -max(1.0, math.sqrt(float(r @ r) / vv))
            w_acc = log_w - 2.0 * alpha * r + alpha * alpha * v
            w3, beta_acc, ll_acc = cycle(w_acc, beta)
            cycles += 1
            if np.isfinite(ll_acc) and ll_acc >= ll1:
                log_w, beta = w3, beta_acc
                prev_ll = ll_acc
                continue
        log_w = w2
        prev_ll = ll1

    offsets = log_w[data.cluster]
    beta, _, hess, iters, fit_ok = _newton(data, options, offsets, init=beta)
    counter["iters"] += iters
    if not fit_ok:
        raise ConvergenceError("frailty M-step failed to converge")
    lam_c = data.baseline_cluster_hazard(beta, offsets)
    ll = _gamma_marginal_loglik(data, beta, offsets, theta, lam_c)
    return ll, beta, log_w, hess, counter["iters"], converged


def fit_gamma_frailty(rows: list[CountingRow], options: FitOptions | None = None,
                      names: tuple[str, ...] | None = None) -> FitResult:
    """Shared gamma frailty Cox fit with theta profiled over options.theta_grid.

    Clusters come from the rows' cluster ids.  A theta estimate at the
    grid boundary is reported with a warning; theta = 0 (allowed in the
    grid) collapses to the plain stratified Cox fit.
    """
    options = options or FitOptions()
    data = _CoxData(rows)
    grid = sorted(options.theta_grid)
    if not grid:
        raise ValueError("theta_grid must be nonempty")

    beta = np.zeros(data.p)
    log_w = np.zeros(data.n_clusters)
    evals: dict[float, tuple] = {}
    total_iters = 0
    all_converged = True
    em_failures = 0

    def profile(theta, warm):
        nonlocal total_iters, all_converged, em_failures
        if theta in evals:
            return evals[theta]
        b0, w0 = warm
        res = _frailty_em(data, theta, options, b0, w0)
        total_iters += res[4]
        if not res[5]:
            em_failures += 1
            all_converged = False
            if em_failures >= 3:
                raise ConvergenceError(
                    "frailty EM failed to converge at three or more"
                    " frailty-variance values; fit abandoned")
        evals[theta] = res
        return res

    warm = (beta, log_w)
    best_theta, best = None, None
    decreases = 0
    for theta in grid:
        res = profile(theta, warm)
        warm = (res[1], res[2])
        if best is None or res[0] > best[0]:
            best_theta, best = theta, res
            decreases = 0
        else:
            decreases += 1
            # the profile is unimodal in theta (golden-section relies on
            # this too): once it has fallen well below the maximum the
            # remaining, larger thetas cannot contain it
            if decreases >= 3 and best[0] - res[0] > 1.0:
                break

    i = grid.index(best_theta)
    if 0 < i < len(grid) - 1 and best_theta > 0:
        # Golden-section refinement on log(theta) between the flanking grid points.
        lo, hi = math.log(grid[i - 1]), math.log(grid[i + 1])
        phi = (math.sqrt(5.0) - 1.0) / 2.0
        x1 = hi - phi * (hi - lo)
        x2 = lo + phi * (hi - lo)
        warm = (best[1], best[2])
        f1 = profile(math.exp(x1), warm)
        f2 = profile(math.exp(x2), warm)
        for _ in range(30):
            if hi - lo < 1e-3:
                break
            if f1[0] >= f2[0]:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - phi * (hi - lo)
                f1 = profile(math.exp(x1), (f2[1], f2[2]))
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + phi * (hi - lo)
                f2 = profile(math.exp(x2), (f1[1], f1[2]))
        for theta, res in evals.items():
            if res[0] > best[0]:
                best_theta, best = theta, res
    elif len(grid) > 1:
        # the bottom of the grid just means "no detectable heterogeneity";
        # truncation at the top is worth a louder flag
        level = logging.WARNING if i == len(grid) - 1 else logging.INFO
        logger.log(level, "frailty variance estimate %g at the grid boundary",
                   best_theta)

    ll, beta_hat, log_w, hess, _, em_ok = best
    return FitResult(
        names=names or _default_names(data.p),
        coefficients=beta_hat,
        model_variance=_variance_from_hessian(hess),
        log_likelihood=ll,
        iterations=total_iters,
        converged=bool(all_converged and em_ok),
        theta=float(best_theta),
    )


def _wald(log_hr: float, se: float) -> tuple[float, float, float]:
    ci_low = math.exp(log_hr - _Z95 * se)
    ci_high = math.exp(log_hr + _Z95 * se)
    p = math.erfc(abs(log_hr / se) / math.sqrt(2.0)) if se > 0 else 0.0
    return ci_low, ci_high, p


_PERR_NAMES = ("trt", "post", "trt_post")


def estimate_perr_ag(rows: list[CountingRow], options: FitOptions | None = None,
                     variance: str = "robust") -> PerrEstimate:
    """Recurrent-event PERR estimate from unstratified rows.

    Fits the Cox model on [treated, post, treated x post] and reads the
    rate ratio off the interaction; the CI uses the cluster-robust
    variance by default ("model" selects the inverse information).
    """
    if variance not in ("robust", "model"):
        raise ValueError("variance must be 'robust' or 'model'")
    fit = fit_cox(rows, options, names=_PERR_NAMES)
    if not fit.converged:
        raise ConvergenceError("PERR fit did not converge")
    fit = replace(fit, robust_variance=robust_variance(rows, fit))
    se = fit.se("trt_post", robust=(variance == "robust"))
    b1, b3 = fit.coef("trt"), fit.coef("trt_post")
    ci_low, ci_high, p = _wald(b3, se)
    return PerrEstimate(hr_prior=math.exp(b1), hr_post=math.exp(b1 + b3),
                        perr_hr=math.exp(b3), ci_low=ci_low, ci_high=ci_high,
                        p_value=p, method="AG")


def estimate_perr_cf(rows: list[CountingRow],
                     options: FitOptions | None = None) -> PerrEstimate:
    """Event-dependence-corrected PERR estimate from event-number-stratified rows.

    Fits the stratified gamma-frailty model; the CI is model-based (the
    frailty absorbs within-subject correlation).
    """
    fit = fit_gamma_frailty(rows, options, names=_PERR_NAMES)
    if not fit.converged:
        raise ConvergenceError("frailty PERR fit did not converge")
    se = fit.se("trt_post")
    b1, b3 = fit.coef("trt"), fit.coef("trt_post")
    ci_low, ci_high, p = _wald(b3, se)
    return PerrEstimate(hr_prior=math.exp(b1), hr_post=math.exp(b1 + b3),
                        perr_hr=math.exp(b3), ci_low=ci_low, ci_high=ci_high,
                        p_value=p, method="CF")
