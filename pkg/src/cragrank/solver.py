"""Coordinate Newton optimizer for the dynamic paired-comparison model.

Each outer iteration updates every climber (one block Newton step over the
climber's whole rating history, using the tridiagonal Hessian induced by the
random-walk coupling between consecutive periods) and then every route (a
scalar Newton step).  Within a pass the updates are independent of each
other — climber blocks never read other climbers, route updates never read
other routes — so update order cannot change the result and passes can be
chunked across threads without affecting output.

The Bradley-Terry marginal log-likelihood is recorded after every outer
iteration; the fit stops once the last nine recorded values span at most one
unit (or at ``max_iterations``).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TypeVar

import numpy as np

from .errors import EmptyDatasetError
from .ingest import CleanDataset
from .model import (
    RATING_DIFF_CLAMP,
    AscentOutcome,
    Hyperparameters,
    route_prior_mean,
    win_probabilities,
)

# A single Newton update may move a rating by at most this much; wildly
# overshooting steps early in the fit would otherwise saturate the clamped
# logistic and stall progress.
MAX_NEWTON_STEP = 10.0

# Floor on the drift variance between adjacent periods.  Only reachable with
# w_sq == 0 (weeks within a climber are strictly increasing); the near-rigid
# coupling then pins the climber's periods to a common value.
MIN_WIENER_VARIANCE = 1e-12

_T = TypeVar("_T")
_R = TypeVar("_R")


@dataclass
class ClimberHistory:
    """One climber's periods, ratings, and ascent references.

    ``weeks`` is strictly increasing and every period contains at least one
    ascent.  The ascent arrays are parallel: ``ascent_period[k]`` is the local
    period index of ascent ``k``, ``ascent_route[k]`` the route index, and
    ``ascent_success[k]`` its outcome.
    """

    climber_id: str
    weeks: np.ndarray
    ratings: np.ndarray
    ascent_period: np.ndarray
    ascent_route: np.ndarray
    ascent_success: np.ndarray


@dataclass
class RouteNode:
    """One route's static rating plus its ascent references.

    ``ascent_flat_period[k]`` indexes the concatenation of all climbers'
    period arrays (see ``ModelState.period_offsets``), giving O(1) lookup of
    the opposing climber's rating at the right period.
    """

    route_id: str
    grade: int
    prior_mean: float
    rating: float
    ascent_climber: np.ndarray
    ascent_period: np.ndarray
    ascent_success: np.ndarray
    ascent_flat_period: np.ndarray


@dataclass(frozen=True)
class FitReport:
    iterations: int
    converged: bool
    final_bt_log_likelihood: float


@dataclass
class ModelState:
    """All ratings plus both per-climber and per-route views of the ascents.

    The flat ascent arrays (``asc_*``) hold every ascent once, in a canonical
    order, for vectorized likelihood evaluation.
    """

    hyper: Hyperparameters
    climbers: list[ClimberHistory]
    routes: list[RouteNode]
    period_offsets: np.ndarray
    asc_flat_period: np.ndarray
    asc_route: np.ndarray
    asc_success: np.ndarray
    bt_log_likelihood_history: list[float] = field(default_factory=list)

    def flat_climber_ratings(self) -> np.ndarray:
        """Concatenation of every climber's rating array, in climber order."""
        if not self.climbers:
            return np.empty(0)
        return np.concatenate([c.ratings for c in self.climbers])

    def route_rating_array(self) -> np.ndarray:
        return np.array([r.rating for r in self.routes], dtype=float)

    def check_consistency(self) -> None:
        """Verify the climber and route views describe the same ascents."""
        from_climbers = []
        for ci, climber in enumerate(self.climbers):
            flat = self.period_offsets[ci] + climber.ascent_period
            for k in range(len(climber.ascent_route)):
                from_climbers.append(
                    (ci, int(flat[k]), int(climber.ascent_route[k]), bool(climber.ascent_success[k]))
                )
        from_routes = []
        for ri, route in enumerate(self.routes):
            for k in range(len(route.ascent_climber)):
                from_routes.append(
                    (int(route.ascent_climber[k]), int(route.ascent_flat_period[k]), ri,
                     bool(route.ascent_success[k]))
                )
        if sorted(from_climbers) != sorted(from_routes):
            raise ValueError("climber and route ascent views disagree")
        if len(from_climbers) != len(self.asc_route):
            raise ValueError("flat ascent arrays disagree with the views")


def solve_tridiagonal(diag, off_diag, rhs) -> np.ndarray:
    """Solve a symmetric tridiagonal system by Thomas elimination.

    ``diag`` is the main diagonal (length n), ``off_diag`` the shared
    super/sub diagonal (length n-1).  Linear time, no pivoting: intended for
    the definite systems produced by the climber updates, where elimination
    without pivoting is stable.
    """
    d = np.array(diag, dtype=float)
    off = np.asarray(off_diag, dtype=float)
    b = np.array(rhs, dtype=float)
    n = d.shape[0]
    if n == 0:
        raise ValueError("empty system")
    if off.shape[0] != n - 1 or b.shape[0] != n:
        raise ValueError("inconsistent system dimensions")
    for i in range(1, n):
        if d[i - 1] == 0.0:
            raise np.linalg.LinAlgError("singular tridiagonal system")
        m = off[i - 1] / d[i - 1]
        d[i] -= m * off[i - 1]
        b[i] -= m * b[i - 1]
    if d[n - 1] == 0.0:
        raise np.linalg.LinAlgError("singular tridiagonal system")
    x = np.empty(n)
    x[n - 1] = b[n - 1] / d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = (b[i] - off[i] * x[i + 1]) / d[i]
    return x


def initialize_state(dataset: CleanDataset, hyper: Hyperparameters | None = None) -> ModelState:
    """Build the optimizer state: climbers at 0, routes at their prior means.

    Ascents are put into a canonical (climber, week, route) order so the
    result is independent of input row order.
    """
    if hyper is None:
        hyper = Hyperparameters()
    n_asc = len(dataset.ascents)
    if n_asc == 0:
        raise EmptyDatasetError("dataset contains no ascents")

    climber_idx = np.fromiter((a.climber for a in dataset.ascents), np.int64, n_asc)
    route_idx = np.fromiter((a.route for a in dataset.ascents), np.int64, n_asc)
    week = np.fromiter((a.week for a in dataset.ascents), np.int64, n_asc)
    success = np.fromiter(
        (a.outcome is AscentOutcome.SUCCESS for a in dataset.ascents), bool, n_asc
    )
    order = np.lexsort((success, route_idx, week, climber_idx))
    climber_idx, route_idx, week, success = (
        climber_idx[order], route_idx[order], week[order], success[order]
    )

    n_climbers = len(dataset.climbers)
    n_routes = len(dataset.routes)
    if n_asc and (climber_idx.max() >= n_climbers or route_idx.max() >= n_routes):
        raise ValueError("ascent indexes out of range of the entity tables")

    bounds = np.searchsorted(climber_idx, np.arange(n_climbers + 1))
    climbers: list[ClimberHistory] = []
    period_offsets = np.zeros(n_climbers + 1, dtype=np.int64)
    local_period = np.empty(n_asc, dtype=np.int64)
    for c in range(n_climbers):
        lo, hi = bounds[c], bounds[c + 1]
        weeks_c, inverse = np.unique(week[lo:hi], return_inverse=True)
        local_period[lo:hi] = inverse
        climbers.append(
            ClimberHistory(
                climber_id=dataset.climbers[c],
                weeks=weeks_c,
                ratings=np.zeros(weeks_c.shape[0]),
                ascent_period=inverse.astype(np.int64),
                ascent_route=route_idx[lo:hi].copy(),
                ascent_success=success[lo:hi].copy(),
            )
        )
        period_offsets[c + 1] = period_offsets[c] + weeks_c.shape[0]

    flat_period = period_offsets[climber_idx] + local_period

    by_route = np.argsort(route_idx, kind="stable")
    route_bounds = np.searchsorted(route_idx[by_route], np.arange(n_routes + 1))
    routes: list[RouteNode] = []
    for ri in range(n_routes):
        sel = by_route[route_bounds[ri]:route_bounds[ri + 1]]
        info = dataset.routes[ri]
        mean = route_prior_mean(info.grade, hyper)
        routes.append(
            RouteNode(
                route_id=info.route_id,
                grade=info.grade,
                prior_mean=mean,
                rating=mean,
                ascent_climber=climber_idx[sel].copy(),
                ascent_period=local_period[sel].copy(),
                ascent_success=success[sel].copy(),
                ascent_flat_period=flat_period[sel].copy(),
            )
        )

    return ModelState(
        hyper=hyper,
        climbers=climbers,
        routes=routes,
        period_offsets=period_offsets,
        asc_flat_period=flat_period,
        asc_route=route_idx,
        asc_success=success,
    )


def _climber_newton_step(
    climber: ClimberHistory, route_ratings: np.ndarray, hyper: Hyperparameters
) -> np.ndarray:
    """One whole-history Newton step for a climber; returns the new ratings."""
    r = climber.ratings
    n = r.shape[0]
    p = win_probabilities(r[climber.ascent_period], route_ratings[climber.ascent_route])
    wins = np.bincount(
        climber.ascent_period, weights=climber.ascent_success.astype(float), minlength=n
    )
    grad = wins - np.bincount(climber.ascent_period, weights=p, minlength=n)
    hess_diag = -np.bincount(climber.ascent_period, weights=p * (1.0 - p), minlength=n)

    # Initial-rating prior applies to the first period only.
    grad[0] -= r[0] / hyper.sigma_c_sq
    hess_diag[0] -= 1.0 / hyper.sigma_c_sq

    if n > 1:
        var = np.maximum(np.diff(climber.weeks) * hyper.w_sq, MIN_WIENER_VARIANCE)
        inv_var = 1.0 / var
        dr = np.diff(r)
        grad[:-1] += dr * inv_var
        grad[1:] -= dr * inv_var
        hess_diag[:-1] -= inv_var
        hess_diag[1:] -= inv_var
        hess_off = inv_var
    else:
        hess_off = np.empty(0)

    delta = solve_tridiagonal(hess_diag, hess_off, grad)
    return r + np.clip(-delta, -MAX_NEWTON_STEP, MAX_NEWTON_STEP)


def _route_newton_step(
    route: RouteNode, climber_ratings_flat: np.ndarray, hyper: Hyperparameters
) -> float:
    """One scalar Newton step for a route; returns the new rating."""
    opponents = climber_ratings_flat[route.ascent_flat_period]
    p = win_probabilities(route.rating, opponents)  # route "wins" a failed ascent
    wins = float(np.count_nonzero(~route.ascent_success))
    d1 = wins - float(p.sum()) - (route.rating - route.prior_mean) / hyper.sigma_r_sq
    d2 = -float((p * (1.0 - p)).sum()) - 1.0 / hyper.sigma_r_sq
    step = -d1 / d2
    if step > MAX_NEWTON_STEP:
        step = MAX_NEWTON_STEP
    elif step < -MAX_NEWTON_STEP:
        step = -MAX_NEWTON_STEP
    return route.rating + step


def update_climber(climber: ClimberHistory, state: ModelState) -> np.ndarray:
    """Newton-update one climber's whole history; returns the new ratings.

    Pure: reads the current state, returns the stepped ratings without
    mutating anything.
    """
    if climber.weeks.shape[0] == 0:
        raise ValueError(f"climber {climber.climber_id!r} has no periods")
    return _climber_newton_step(climber, state.route_rating_array(), state.hyper)


def update_route(route: RouteNode, state: ModelState) -> float:
    """Newton-update one route; returns the new rating without mutating."""
    if route.ascent_success.shape[0] == 0:
        raise ValueError(f"route {route.route_id!r} has no ascents")
    return _route_newton_step(route, state.flat_climber_ratings(), state.hyper)


def bt_marginal_log_likelihood(state: ModelState) -> float:
    """Sum of log probabilities the model assigns to the observed outcomes.

    Uses the same clamped rating differences as the probability function, so
    the result is always finite.  Excludes all prior terms.
    """
    if state.asc_route.shape[0] == 0:
        return 0.0
    climber_r = state.flat_climber_ratings()[state.asc_flat_period]
    route_r = state.route_rating_array()[state.asc_route]
    z = np.clip(climber_r - route_r, -RATING_DIFF_CLAMP, RATING_DIFF_CLAMP)
    z = np.where(state.asc_success, z, -z)
    return float(-np.logaddexp(0.0, -z).sum())


def _map_in_chunks(
    pool: ThreadPoolExecutor | None,
    threads: int,
    items: Sequence[_T],
    fn: Callable[[_T], _R],
) -> list[_R]:
    """Apply ``fn`` to every item, optionally fanning out over a thread pool.

    ``fn`` must be pure, so the result is identical for any thread count.
    """
    if pool is None or len(items) < 2 * threads:
        return [fn(item) for item in items]
    chunks = np.array_split(np.arange(len(items)), threads)
    futures = [pool.submit(lambda idx=idx: [fn(items[i]) for i in idx]) for idx in chunks]
    results: list[_R] = []
    for future in futures:
        results.extend(future.result())
    return results


def fit(
    dataset: CleanDataset,
    hyper: Hyperparameters | None = None,
    max_iterations: int = 1000,
    *,
    threads: int = 1,
    convergence_window: int = 8,
    convergence_span: float = 1.0,
) -> tuple[ModelState, FitReport]:
    """Fit climber and route ratings by coordinate Newton ascent.

    Every outer iteration updates all climbers (one whole-history step each,
    against the route ratings from the previous iteration), then all routes
    (against the just-updated climber ratings), then records the
    Bradley-Terry marginal log-likelihood.  The fit is converged once the
    likelihood has not moved by more than ``convergence_span`` over the last
    ``convergence_window`` iterations, i.e. the last
    ``convergence_window + 1`` recorded values span at most
    ``convergence_span``.

    The derivative sums shared by every entity in a pass are reduced in one
    ``bincount`` over the flat ascent arrays instead of once per entity; the
    steps taken are the same as ``update_climber``/``update_route`` would
    produce.  Entities that have no ascents (possible in cross-validation
    subsets) are left at their prior means.  ``threads`` only chunks the
    per-climber solves; any thread count produces bit-identical ratings.

    Returns the final state and a report (iterations run, convergence flag,
    final likelihood).
    """
    if max_iterations < 8:
        raise ValueError(f"max_iterations must be at least 8, got {max_iterations}")
    if threads < 1:
        raise ValueError(f"threads must be at least 1, got {threads}")
    if convergence_window < 1:
        raise ValueError("convergence_window must be at least 1")

    state = initialize_state(dataset, hyper)
    hyp = state.hyper
    offsets = state.period_offsets
    flat_idx = state.asc_flat_period
    route_idx = state.asc_route
    success = state.asc_success
    n_flat = int(offsets[-1])
    n_routes = len(state.routes)
    history = state.bt_log_likelihood_history

    # Win counts never change across iterations: successes per climber-period,
    # failures per route.  The route-side view is sorted by route so each
    # route's ascents accumulate in the same order as its RouteNode arrays.
    wins_flat = np.bincount(flat_idx, weights=success.astype(float), minlength=n_flat)
    by_route = np.argsort(route_idx, kind="stable")
    rs_route = route_idx[by_route]
    rs_flat = flat_idx[by_route]
    route_wins = np.bincount(
        rs_route, weights=(~success[by_route]).astype(float), minlength=n_routes
    )
    route_prior = np.array([r.prior_mean for r in state.routes], dtype=float)

    active = [ci for ci, c in enumerate(state.climbers) if c.weeks.shape[0] > 0]
    empty = np.empty(0)
    drift_precision: list[np.ndarray | None] = [None] * len(state.climbers)
    for ci in active:
        weeks = state.climbers[ci].weeks
        if weeks.shape[0] > 1:
            drift_precision[ci] = 1.0 / np.maximum(
                np.diff(weeks) * hyp.w_sq, MIN_WIENER_VARIANCE
            )

    flat = state.flat_climber_ratings()
    route_arr = state.route_rating_array()

    def climber_solve(ci: int, grad_flat: np.ndarray, hess_flat: np.ndarray) -> None:
        lo, hi = int(offsets[ci]), int(offsets[ci + 1])
        r = flat[lo:hi]
        grad = grad_flat[lo:hi]
        hess = hess_flat[lo:hi]
        grad[0] -= r[0] / hyp.sigma_c_sq
        hess[0] -= 1.0 / hyp.sigma_c_sq
        precision = drift_precision[ci]
        if precision is not None:
            dr = np.diff(r)
            grad[:-1] += dr * precision
            grad[1:] -= dr * precision
            hess[:-1] -= precision
            hess[1:] -= precision
            off = precision
        else:
            off = empty
        delta = solve_tridiagonal(hess, off, grad)
        flat[lo:hi] = r + np.clip(-delta, -MAX_NEWTON_STEP, MAX_NEWTON_STEP)

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    converged = False
    iterations = 0
    try:
        for iterations in range(1, max_iterations + 1):
            p = win_probabilities(flat[flat_idx], route_arr[route_idx])
            grad_flat = wins_flat - np.bincount(flat_idx, weights=p, minlength=n_flat)
            hess_flat = -np.bincount(flat_idx, weights=p * (1.0 - p), minlength=n_flat)
            _map_in_chunks(
                pool, threads, active,
                lambda ci: climber_solve(ci, grad_flat, hess_flat),
            )

            q = win_probabilities(route_arr[rs_route], flat[rs_flat])
            d1 = (
                route_wins
                - np.bincount(rs_route, weights=q, minlength=n_routes)
                - (route_arr - route_prior) / hyp.sigma_r_sq
            )
            d2 = -np.bincount(rs_route, weights=q * (1.0 - q), minlength=n_routes)
            d2 -= 1.0 / hyp.sigma_r_sq
            route_arr = route_arr + np.clip(-d1 / d2, -MAX_NEWTON_STEP, MAX_NEWTON_STEP)

            z = np.clip(flat[flat_idx] - route_arr[route_idx],
                        -RATING_DIFF_CLAMP, RATING_DIFF_CLAMP)
            z = np.where(success, z, -z)
            history.append(float(-np.logaddexp(0.0, -z).sum()))
            if len(history) > convergence_window:
                recent = history[-(convergence_window + 1):]
                if max(recent) - min(recent) <= convergence_span:
                    converged = True
                    break
    finally:
        if pool is not None:
            pool.shutdown()

    for ci, climber in enumerate(state.climbers):
        climber.ratings = flat[int(offsets[ci]):int(offsets[ci + 1])].copy()
    for ri, route in enumerate(state.routes):
        route.rating = float(route_arr[ri])

    return state, FitReport(iterations, converged, history[-1])
