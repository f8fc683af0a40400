"""Without-replacement SGD instrumented around memorizing global minima.

The perturbation xi = theta - theta* splits into xi_par, inside the span of
the per-point output gradients nu_i at the minimum, and xi_perp orthogonal to
it.  Near a differentiable memorizing minimum the per-epoch norm of xi_par
contracts geometrically while xi barely grows, until xi_par falls below
tau * |xi|^2; the empirical risk at that first violation scales like the
fourth power of the initial perturbation.  This module runs the experiments
that check those scaling laws on constructed minima.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .activations import HARD_TANH, Activation
from .data import REGRESSION, Dataset, rng_for
from .errors import NonDifferentiableError
from .networks import (
    FnnParams,
    activation_pattern,
    fnn_forward_batch,
    fnn_gradient_batch,
    flatten_params,
    hidden_breakpoint_margin,
    same_pattern,
    unflatten_params,
)

MU_DIFF = 1e-9
RANK_CUTOFF = 1e-10


@dataclass(frozen=True)
class SquaredLoss:
    """l(z; y) = (z - y)^2 / 2: strictly convex, smooth, minimized at z = y."""

    kind: str = "squared_error"

    def value(self, z, y):
        return 0.5 * (np.asarray(z) - np.asarray(y)) ** 2

    def d1(self, z, y):
        return np.asarray(z) - np.asarray(y)

    def d2(self, z, y):
        return np.ones_like(np.asarray(z, dtype=float))


SQUARED = SquaredLoss()


def _scalar_targets(dataset: Dataset) -> np.ndarray:
    if dataset.task != REGRESSION or dataset.d_y != 1:
        raise ValueError("the SGD lab runs on scalar regression datasets")
    return dataset.y[:, 0]


def empirical_risk(params: FnnParams, dataset: Dataset, loss=SQUARED) -> float:
    """Mean per-point loss; 0.0 on an empty dataset."""
    if dataset.n == 0:
        return 0.0
    y = _scalar_targets(dataset)
    z = fnn_forward_batch(params, dataset.X)[:, 0]
    return float(np.mean(loss.value(z, y)))


def is_memorizing_min(params: FnnParams, dataset: Dataset, loss=SQUARED,
                      tol: float = 1e-9, margin: float = MU_DIFF) -> bool:
    """l'(f(x_i); y_i) vanishes at every point and the risk is differentiable."""
    if dataset.n == 0:
        return True
    y = _scalar_targets(dataset)
    z = fnn_forward_batch(params, dataset.X)[:, 0]
    if np.abs(loss.d1(z, y)).max() > tol:
        return False
    return hidden_breakpoint_margin(params, dataset.X) >= margin


@dataclass(frozen=True)
class TangentBasis:
    """Per-point output gradients nu_i at the minimum and an orthonormal basis
    Q of their span (rank r, Q is (n_params, r))."""

    nu: np.ndarray
    Q: np.ndarray
    rank: int


def tangent_basis(params: FnnParams, dataset: Dataset, cutoff: float = RANK_CUTOFF) -> TangentBasis:
    nu = fnn_gradient_batch(params, dataset.X)
    if dataset.n == 0 or not np.any(nu):
        return TangentBasis(nu, np.zeros((nu.shape[1] if nu.ndim == 2 else 0, 0)), 0)
    _, s, vt = np.linalg.svd(nu, full_matrices=False)
    rank = int(np.count_nonzero(s > cutoff * s[0])) if s[0] > 0 else 0
    return TangentBasis(nu, vt[:rank].T.copy(), rank)


def xi_decompose(theta, theta_star, basis: TangentBasis):
    """Norms of the components of theta - theta* inside/orthogonal to the span."""
    xi = np.asarray(theta, dtype=float) - np.asarray(theta_star, dtype=float)
    if basis.rank == 0:
        return 0.0, float(np.linalg.norm(xi))
    xi_par = basis.Q @ (basis.Q.T @ xi)
    return float(np.linalg.norm(xi_par)), float(np.linalg.norm(xi - xi_par))


def epoch_partition(rng: np.random.Generator, n: int, batch: int) -> list:
    """Fresh uniform partition of [n] into disjoint blocks of size ``batch``."""
    perm = rng.permutation(n)
    return [perm[i : i + batch] for i in range(0, n, batch)]


def _theta_hash(theta: np.ndarray) -> str:
    return hashlib.sha256(theta.tobytes()).hexdigest()[:16]


@dataclass
class SgdTrace:
    """Per-step record of a without-replacement SGD run.

    Arrays cover steps 0..n_steps (state *before* each update; the last entry
    is the final state).  ``t_star`` is the first step at which the supplied
    stop rule fired; ``stopped`` explains any early exit.
    """

    eta: float
    batch_size: int
    epoch_len: int
    seed: int
    risk: np.ndarray
    xi_par: np.ndarray
    xi_perp: np.ndarray
    theta_hashes: list
    batches: list
    theta_final: np.ndarray
    t_star: int | None = None
    stopped: str | None = None

    @property
    def n_steps(self) -> int:
        return len(self.risk) - 1


def sgd_run(theta0: FnnParams, dataset: Dataset, loss, eta: float, batch_size: int,
            epochs: int, seed: int, *, theta_star: FnnParams | None = None,
            basis: TangentBasis | None = None, stop_rule=None,
            reference_pattern=None, diff_margin: float = MU_DIFF) -> SgdTrace:
    """Constant-step without-replacement mini-batch SGD.

    Each epoch draws a fresh uniform partition into blocks of ``batch_size``
    (which must divide N; batch_size = N is plain gradient descent).  The
    trace records risk and, when ``theta_star``/``basis`` are given, the
    perturbation norms at every step.  ``stop_rule(xi_par, xi_norm)`` ends
    the run at the first step where it returns True; ``reference_pattern``
    aborts it if any hidden node changes linear region relative to that
    pattern.  Hitting an activation kink within ``diff_margin`` raises
    NonDifferentiableError.
    """
    n = dataset.n
    if n == 0 or n % batch_size:
        raise ValueError(f"batch size {batch_size} must divide the dataset size {n}")
    if eta < 0:
        raise ValueError("step size must be nonnegative")
    y = _scalar_targets(dataset)
    epoch_len = n // batch_size
    theta = flatten_params(theta0)
    theta_star_vec = flatten_params(theta_star) if theta_star is not None else None
    rng = np.random.default_rng(seed)

    risk, xi_par_l, xi_perp_l, hashes, batches = [], [], [], [], []
    t_star = None
    stopped = None
    total_steps = epochs * epoch_len
    pending: list = []
    for t in range(total_steps + 1):
        params_t = unflatten_params(theta, theta0)
        if hidden_breakpoint_margin(params_t, dataset.X) < diff_margin:
            raise NonDifferentiableError(t, diff_margin)
        if reference_pattern is not None and not same_pattern(
            activation_pattern(params_t, dataset.X), reference_pattern
        ):
            stopped = f"activation pattern changed at step {t}"
            break
        risk.append(empirical_risk(params_t, dataset, loss))
        hashes.append(_theta_hash(theta))
        if theta_star_vec is not None and basis is not None:
            par, perp = xi_decompose(theta, theta_star_vec, basis)
            xi_par_l.append(par)
            xi_perp_l.append(perp)
        if stop_rule is not None and theta_star_vec is not None:
            if stop_rule(xi_par_l[-1], np.hypot(xi_par_l[-1], xi_perp_l[-1])):
                t_star = t
                break
        if t == total_steps:
            break
        if not pending:
            pending = epoch_partition(rng, n, batch_size)
        idx = pending.pop(0)
        batches.append(np.array(idx))
        z = fnn_forward_batch(params_t, dataset.X[idx])[:, 0]
        grads = fnn_gradient_batch(params_t, dataset.X[idx])
        g = loss.d1(z, y[idx]) @ grads / batch_size
        if eta != 0.0:
            theta = theta - eta * g
    return SgdTrace(
        eta=eta,
        batch_size=batch_size,
        epoch_len=epoch_len,
        seed=seed,
        risk=np.array(risk),
        xi_par=np.array(xi_par_l),
        xi_perp=np.array(xi_perp_l),
        theta_hashes=hashes,
        batches=batches,
        theta_final=theta,
        t_star=t_star,
        stopped=stopped,
    )


def empirical_H_spectrum(params_star: FnnParams, dataset: Dataset, loss=SQUARED,
                         cutoff: float = RANK_CUTOFF):
    """Extreme strictly-positive eigenvalues of H = sum_i l''_i nu_i nu_i^T
    restricted to the gradient span; None when the span is trivial.

    The stable step-size range is eta < B / lambda_max and the per-epoch
    contraction scale is eta * lambda_min / (4 B).
    """
    y = _scalar_targets(dataset)
    z = fnn_forward_batch(params_star, dataset.X)[:, 0]
    nu = fnn_gradient_batch(params_star, dataset.X)
    weighted = np.sqrt(loss.d2(z, y))[:, None] * nu
    s = np.linalg.svd(weighted, compute_uv=False)
    if s.size == 0 or s[0] <= 0:
        return None
    pos = s[s > cutoff * s[0]]
    if pos.size == 0:
        return None
    return float(pos[-1] ** 2), float(pos[0] ** 2)


def first_order_residual(params_star: FnnParams, dataset: Dataset, loss,
                         basis: TangentBasis, xi: np.ndarray) -> float:
    """max_i |l'_i(theta* + xi) - l''_i(theta*) nu_i . xi_par|.

    This is quadratic in |xi|: halving xi must shrink it about fourfold,
    which is the Taylor structure behind the contraction argument.
    """
    y = _scalar_targets(dataset)
    theta_star = flatten_params(params_star)
    params_pert = unflatten_params(theta_star + xi, params_star)
    z_star = fnn_forward_batch(params_star, dataset.X)[:, 0]
    z_pert = fnn_forward_batch(params_pert, dataset.X)[:, 0]
    xi_par_vec = basis.Q @ (basis.Q.T @ xi) if basis.rank else np.zeros_like(xi)
    predicted = loss.d2(z_star, y) * (basis.nu @ xi_par_vec)
    return float(np.abs(loss.d1(z_pert, y) - predicted).max())


def decay_experiment_setup(n: int = 64, seed: int = 0, *, group_size: int = 4,
                           pattern_scale: float = 1.5, span: float = 2.0,
                           target_scale: float = 0.7, clip_margin: float = 0.35):
    """A memorizing minimum engineered for stable constant-step runs.

    Inputs cycle through ``group_size`` orthogonal pattern coordinates along
    an equally spaced axis, so consecutive projection windows are affinely
    independent and the per-point gradients stay well conditioned: the
    positive spectrum of H lands where eta = 1e-3, B = n/8 is stable and the
    decay completes in a few hundred epochs.  Returns (theta_star, dataset).
    """
    from .construct_fnn import construct_3layer

    t = np.linspace(span / n, span, n)
    X = np.zeros((n, 1 + group_size))
    X[:, 0] = t
    X[np.arange(n), 1 + np.arange(n) % group_size] = pattern_scale
    rng = rng_for(seed, "targets")
    y = rng.uniform(-target_scale, target_scale, size=(n, 1))
    dataset = Dataset(X, y, REGRESSION, 1)
    u = np.zeros(1 + group_size)
    u[0] = 1.0
    p = n // group_size
    params, _ = construct_3layer(dataset, p, group_size, Activation(HARD_TANH), seed,
                                 mu_clip=clip_margin, u=u, delta=span / n)
    return params, dataset


def probe_contraction_law(theta_star: FnnParams, dataset: Dataset, loss, epsilons,
                          eta: float, batch_size: int, max_epochs: int,
                          tau_emp: float, seed: int, keep_traces: bool = False) -> dict:
    """Per-epsilon decay runs plus the log-log risk-vs-epsilon slope.

    For each epsilon the start point is theta* + epsilon * (shared unit
    direction); the run continues while xi_par >= tau_emp * |xi|^2 and within
    the minimum's activation pattern.  Reports per-epoch contraction factors
    of xi_par before the first violation step t*, the perturbation growth
    |xi(t*)| / |xi(0)|, the risk at t*, and the slope of log risk against
    log epsilon (4 for a quartic law).
    """
    if not is_memorizing_min(theta_star, dataset, loss):
        raise ValueError("theta_star is not a differentiable memorizing minimum")
    basis = tangent_basis(theta_star, dataset)
    theta_star_vec = flatten_params(theta_star)
    pattern = activation_pattern(theta_star, dataset.X)
    spectrum = empirical_H_spectrum(theta_star, dataset, loss)
    risk_star = empirical_risk(theta_star, dataset, loss)
    direction = rng_for(seed, "perturbation-direction").standard_normal(len(theta_star_vec))
    direction /= np.linalg.norm(direction)

    runs = []
    traces = []
    for i, eps in enumerate(epsilons):
        theta0 = unflatten_params(theta_star_vec + eps * direction, theta_star)
        trace = sgd_run(
            theta0, dataset, loss, eta, batch_size, max_epochs,
            int(rng_for(seed, f"partitions-{i}").integers(2**63)),
            theta_star=theta_star, basis=basis,
            stop_rule=lambda par, norm: par < tau_emp * norm * norm,
            reference_pattern=pattern,
        )
        if keep_traces:
            traces.append((float(eps), trace))
        run = {"epsilon": float(eps), "excluded": trace.stopped is not None,
               "reason": trace.stopped}
        if trace.stopped is None and trace.t_star is not None:
            E = trace.epoch_len
            n_full = trace.t_star // E
            factors = [
                float(trace.xi_par[(k + 1) * E] / trace.xi_par[k * E])
                for k in range(n_full)
                if trace.xi_par[k * E] > 0
            ]
            xi0 = float(np.hypot(trace.xi_par[0], trace.xi_perp[0]))
            xit = float(np.hypot(trace.xi_par[trace.t_star], trace.xi_perp[trace.t_star]))
            run.update({
                "t_star": trace.t_star,
                "epochs_before_t_star": n_full,
                "contraction_factors": factors,
                "xi_ratio": xit / xi0,
                "risk_at_t_star": float(trace.risk[trace.t_star]),
                "excess_risk_at_t_star": float(trace.risk[trace.t_star] - risk_star),
            })
        elif trace.stopped is None:
            run.update({"t_star": None, "note": f"no violation within {max_epochs} epochs"})
        runs.append(run)

    good = [r for r in runs if not r["excluded"] and r.get("t_star") is not None]
    slope = None
    if len(good) >= 2:
        logs_eps = np.log([r["epsilon"] for r in good])
        logs_risk = np.log([max(r["excess_risk_at_t_star"], 1e-300) for r in good])
        slope = float(np.polyfit(logs_eps, logs_risk, 1)[0])
    return {
        "theorem": "thm5",
        "eta": eta,
        "batch_size": batch_size,
        "tau_emp": tau_emp,
        "seed": seed,
        "gradient_span_rank": basis.rank,
        "spectrum": None if spectrum is None else
            {"lambda_min_pos": spectrum[0], "lambda_max": spectrum[1],
             "eta_stable_max": batch_size / spectrum[1]},
        "risk_at_minimum": risk_star,
        "runs": runs,
        "slope_fit": slope,
        **({"_traces": traces} if keep_traces else {}),
    }
