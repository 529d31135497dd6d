"""Synthetic worlds with known ratings, for end-to-end model validation.

All randomness comes from numpy's seeded ``default_rng`` (PCG64), so the same
seed reproduces the same world and ascent log on any machine.  Draw order is
fixed: route grades, route ratings, initial climber ratings, then the
per-period rating increments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError
from .ingest import CleanDataset, RawAscentRow, assemble_clean_dataset, week_start_date
from .model import Hyperparameters, win_probabilities
from .solver import ModelState


@dataclass(frozen=True)
class SyntheticWorld:
    """True ratings for a simulated population of climbers and routes.

    ``climber_ratings[i, k]`` is climber ``i``'s true rating at
    ``weeks[k]``; ``route_ratings`` are static.
    """

    hyper: Hyperparameters
    seed: int
    route_ids: list[str]
    route_grades: np.ndarray
    route_ratings: np.ndarray
    climber_ids: list[str]
    weeks: np.ndarray
    climber_ratings: np.ndarray

    def standardized_increments(self) -> np.ndarray:
        """Per-step rating increments divided by their prior standard deviation."""
        if self.weeks.shape[0] < 2 or self.hyper.w_sq == 0.0:
            return np.empty((len(self.climber_ids), 0))
        sd = np.sqrt(np.diff(self.weeks) * self.hyper.w_sq)
        return np.diff(self.climber_ratings, axis=1) / sd


@dataclass(frozen=True)
class RecoveryReport:
    """Agreement between a world's true ratings and a fitted state."""

    route_correlation: float
    climber_correlation: float
    route_rmse: float


def generate_world(
    n_climbers: int,
    n_routes: int,
    n_periods: int,
    grade_range: tuple[int, int],
    hyper: Hyperparameters | None = None,
    seed: int = 0,
) -> SyntheticWorld:
    """Draw a world from the model's own priors.

    Routes get uniform grades from ``grade_range`` (inclusive) and ratings
    from the grade-anchored normal prior.  Climbers start from the
    initial-rating prior and drift by independent normal increments with
    variance ``w_sq`` per week across ``n_periods`` consecutive weeks.
    """
    if hyper is None:
        hyper = Hyperparameters()
    if n_climbers < 1 or n_routes < 1 or n_periods < 1:
        raise ValueError("n_climbers, n_routes and n_periods must all be at least 1")
    lo, hi = grade_range
    if lo > hi:
        raise ValueError(f"empty grade_range {grade_range}")

    rng = np.random.default_rng(seed)
    grades = rng.integers(lo, hi + 1, size=n_routes)
    prior_means = hyper.b * (grades - hyper.g0)
    route_ratings = rng.normal(prior_means, np.sqrt(hyper.sigma_r_sq))
    initial = rng.normal(0.0, np.sqrt(hyper.sigma_c_sq), size=n_climbers)
    weeks = np.arange(n_periods, dtype=np.int64)
    trajectories = np.empty((n_climbers, n_periods))
    trajectories[:, 0] = initial
    if n_periods > 1:
        increments = rng.normal(
            0.0, np.sqrt(hyper.w_sq), size=(n_climbers, n_periods - 1)
        )
        trajectories[:, 1:] = initial[:, None] + np.cumsum(increments, axis=1)

    width = max(5, len(str(max(n_climbers, n_routes) - 1)))
    return SyntheticWorld(
        hyper=hyper,
        seed=seed,
        route_ids=[f"r{i:0{width}d}" for i in range(n_routes)],
        route_grades=grades,
        route_ratings=route_ratings,
        climber_ids=[f"c{i:0{width}d}" for i in range(n_climbers)],
        weeks=weeks,
        climber_ratings=trajectories,
    )


def simulate_trials(
    world: SyntheticWorld, ascents_per_climber_period: int, seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Simulate raw ascent attempts before any filtering.

    Every climber attempts ``ascents_per_climber_period`` uniformly chosen
    routes in every period; each attempt succeeds with the model probability
    of the true ratings.  Returns parallel arrays
    ``(climber_idx, period_idx, route_idx, success)``.
    """
    if ascents_per_climber_period < 1:
        raise ValueError("ascents_per_climber_period must be at least 1")
    n_climbers = len(world.climber_ids)
    n_periods = world.weeks.shape[0]
    total = n_climbers * n_periods * ascents_per_climber_period

    rng = np.random.default_rng(seed)
    climber_idx = np.repeat(np.arange(n_climbers), n_periods * ascents_per_climber_period)
    period_idx = np.tile(
        np.repeat(np.arange(n_periods), ascents_per_climber_period), n_climbers
    )
    route_idx = rng.integers(0, len(world.route_ids), size=total)
    p = win_probabilities(
        world.climber_ratings[climber_idx, period_idx], world.route_ratings[route_idx]
    )
    success = rng.random(total) < p
    return climber_idx, period_idx, route_idx, success


def simulate_ascents(
    world: SyntheticWorld, ascents_per_climber_period: int, seed: int = 0
) -> CleanDataset:
    """Simulate an ascent log and run it through the ingest activity filters.

    The returned dataset satisfies the CleanDataset guarantees (every route
    has at least two ascents, every climber at least one failure); raises
    EmptyDatasetError when nothing survives, e.g. if every simulated ascent
    succeeded.
    """
    climber_idx, period_idx, route_idx, success = simulate_trials(
        world, ascents_per_climber_period, seed
    )
    records = [
        (
            world.climber_ids[c],
            world.route_ids[r],
            int(world.weeks[k]),
            bool(s),
        )
        for c, k, r, s in zip(climber_idx, period_idx, route_idx, success)
    ]
    grades = {rid: int(g) for rid, g in zip(world.route_ids, world.route_grades)}
    return assemble_clean_dataset(records, grades)


def trials_to_raw_rows(
    world: SyntheticWorld,
    trials: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
) -> list[RawAscentRow]:
    """Express simulated trials as raw ascent-log rows (no filtering)."""
    climber_idx, period_idx, route_idx, success = trials
    rows = []
    for c, k, r, s in zip(climber_idx, period_idx, route_idx, success):
        rows.append(
            RawAscentRow(
                climber_id=world.climber_ids[c],
                route_id=world.route_ids[r],
                tick_type="redpoint" if s else "attempt",
                date=week_start_date(int(world.weeks[k])),
                grade_label=str(int(world.route_grades[r])),
                grade_system="ewbank",
            )
        )
    return rows


def recovery_report(world: SyntheticWorld, fitted: ModelState) -> RecoveryReport:
    """Compare fitted ratings against the true ones, joined by entity id.

    Climber ratings are compared at every (climber, week) the fit produced.
    Requires at least two comparable routes and two comparable climber
    rating points.
    """
    true_route = dict(zip(world.route_ids, world.route_ratings))
    fitted_r = []
    actual_r = []
    for node in fitted.routes:
        if node.route_id in true_route:
            fitted_r.append(node.rating)
            actual_r.append(true_route[node.route_id])
    if len(fitted_r) < 2:
        raise ValueError("fewer than two routes to compare")

    climber_row = {cid: i for i, cid in enumerate(world.climber_ids)}
    fitted_c = []
    actual_c = []
    for climber in fitted.climbers:
        row = climber_row.get(climber.climber_id)
        if row is None:
            continue
        positions = np.searchsorted(world.weeks, climber.weeks)
        for pos, rating in zip(positions, climber.ratings):
            fitted_c.append(float(rating))
            actual_c.append(float(world.climber_ratings[row, pos]))
    if len(fitted_c) < 2:
        raise ValueError("fewer than two climber rating points to compare")

    fitted_r = np.asarray(fitted_r)
    actual_r = np.asarray(actual_r)
    return RecoveryReport(
        route_correlation=float(np.corrcoef(actual_r, fitted_r)[0, 1]),
        climber_correlation=float(np.corrcoef(np.asarray(actual_c), np.asarray(fitted_c))[0, 1]),
        route_rmse=float(np.sqrt(np.mean((fitted_r - actual_r) ** 2))),
    )


def write_truth_csv(world: SyntheticWorld, path) -> None:
    """Write true ratings: route rows have an empty week column."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity_type", "entity_idx", "week", "true_rating"])
        for i, rating in enumerate(world.route_ratings):
            writer.writerow(["route", i, "", f"{rating:.9g}"])
        for i in range(len(world.climber_ids)):
            for k, week in enumerate(world.weeks):
                writer.writerow(
                    ["climber", i, int(week), f"{world.climber_ratings[i, k]:.9g}"]
                )
