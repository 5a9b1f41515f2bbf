"""Estimation on the unit sphere and the replication harness.

With two covariates the unit sphere is a circle, so the criterion is scanned
over an angle grid and the estimate is reported as the arc of near-minimal
angles (the criterion is set-identified in general, not point-identified).
With more covariates, projected subgradient descent over the sphere does the
minimizing. The replication harness repeats compression + estimation over
independent projection draws and aggregates interval statistics.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._seeds import STREAM_PROJECTION, STREAM_RESTARTS, derive_rng, derive_seed
from .criterion import CriterionEvaluator, CycleSet, ParamPoint, enumerate_cycles
from .data import Dataset
from .errors import DimensionError, NumericalError, ParameterError
from .projection import ProjectionSpec, apply, generate, resolve_sparsity
from .simulate import SimConfig, simulate_dataset

TWO_PI = 2.0 * math.pi

# level-set tolerance: floor for exactly-zero criteria, relative band otherwise
_TOL_FLOOR = 1e-12
_TOL_RELATIVE = 1e-6
_CONTAIN_SLACK = 1e-12


@dataclass(frozen=True)
class AngleGrid:
    """Criterion values over a uniform angle grid on [0, 2pi)."""

    thetas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if thetas.ndim != 1 or thetas.shape != values.shape:
            raise DimensionError("thetas and values must be equal-length vectors")
        if thetas.size < 8:
            raise ParameterError(f"grid needs at least 8 points, got {thetas.size}")
        if not np.isfinite(values).all() or (values < 0).any():
            raise ParameterError("grid values must be finite and nonnegative")
        thetas.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.thetas.size


def interval_width(interval) -> float:
    lb, ub = interval
    return (ub - lb) if ub >= lb else (ub - lb + TWO_PI)


def interval_contains_point(interval, theta: float, slack: float = _CONTAIN_SLACK) -> bool:
    lb, _ = interval
    offset = (theta - lb) % TWO_PI
    if offset >= TWO_PI - slack:
        offset = 0.0
    return offset <= interval_width(interval) + slack


def interval_contains_interval(outer, inner, slack: float = _CONTAIN_SLACK) -> bool:
    offset = (inner[0] - outer[0]) % TWO_PI
    if offset >= TWO_PI - slack:
        offset = 0.0
    outer_w = interval_width(outer)
    return offset <= outer_w + slack and offset + interval_width(inner) <= outer_w + slack


def interval_midpoint(interval) -> float:
    return (interval[0] + 0.5 * interval_width(interval)) % TWO_PI


@dataclass(frozen=True)
class IdentifiedSet:
    """Level set {theta : Q(theta) <= q_min + tolerance} as angle intervals.

    Intervals are closed, disjoint, and sorted by lower bound; an interval
    with ub < lb wraps through 2pi. interval_estimate is the (refined) arc
    containing the global minimizer, the quantity replications report.
    """

    intervals: tuple[tuple[float, float], ...]
    q_min: float
    tolerance: float
    argmin: float
    interval_estimate: tuple[float, float]
    full_circle: bool = False

    def contains(self, theta: float, slack: float = _CONTAIN_SLACK) -> bool:
        if self.full_circle:
            return True
        return any(interval_contains_point(iv, theta, slack) for iv in self.intervals)

    def covers_interval(self, interval, slack: float = _CONTAIN_SLACK) -> bool:
        if self.full_circle:
            return True
        return any(
            interval_contains_interval(iv, interval, slack) for iv in self.intervals
        )

    def to_dict(self) -> dict:
        return {
            "intervals": [[float(a), float(b)] for a, b in self.intervals],
            "q_min": float(self.q_min),
            "tolerance": float(self.tolerance),
            "argmin": float(self.argmin),
            "interval_estimate": [float(x) for x in self.interval_estimate],
            "full_circle": self.full_circle,
        }


def _circular_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True on a circular index set, as inclusive (start, stop)."""
    hits = np.flatnonzero(mask)
    if hits.size == 0:
        return []
    if hits.size == mask.size:
        return [(0, mask.size - 1)]
    breaks = np.flatnonzero(np.diff(hits) > 1)
    starts = [int(hits[0])] + [int(hits[i + 1]) for i in breaks]
    stops = [int(hits[i]) for i in breaks] + [int(hits[-1])]
    runs = list(zip(starts, stops))
    if mask[0] and mask[-1] and len(runs) > 1:
        first = runs.pop(0)
        last = runs.pop()
        runs.append((last[0], first[1]))  # wrapped run
    return runs


def _run_contains(run: tuple[int, int], idx: int) -> bool:
    start, stop = run
    if start <= stop:
        return start <= idx <= stop
    return idx >= start or idx <= stop


def estimate_polar_grid(
    data, cycles: CycleSet, grid_size: int = 2000, refine: int = 10
) -> tuple[AngleGrid, IdentifiedSet]:
    """Scan the criterion over the circle and extract the identified set.

    The arc containing the global minimizer is re-scanned on a refine-times
    finer local grid (one coarse step of margin each side), which sharpens
    the reported interval estimate and the argmin without paying for a fine
    grid everywhere. Tolerance is max(1e-12, 1e-6 * max grid value).
    """
    if getattr(data, "b") != 2:
        raise DimensionError(
            "polar grid search needs exactly 2 covariates; use estimate_subgradient"
        )
    if grid_size < 8:
        raise ParameterError(f"grid_size must be at least 8, got {grid_size}")
    if refine < 1:
        raise ParameterError(f"refine must be at least 1, got {refine}")

    evaluator = CriterionEvaluator(data, cycles)
    step = TWO_PI / grid_size
    thetas = np.arange(grid_size) * step
    values = evaluator.value_grid(thetas)
    grid = AngleGrid(thetas, values)

    tolerance = max(_TOL_FLOOR, _TOL_RELATIVE * float(values.max()))
    coarse_min = float(values.min())
    coarse_argmin = int(values.argmin())

    if bool(np.all(values <= coarse_min + tolerance)):
        # flat criterion: every direction is as good as any other
        full = (0.0, float(thetas[-1]))
        return grid, IdentifiedSet(
            intervals=(full,),
            q_min=coarse_min,
            tolerance=tolerance,
            argmin=0.0,
            interval_estimate=full,
            full_circle=True,
        )

    # locate the coarse arc around the minimizer using a provisional level set
    provisional = values <= coarse_min + tolerance
    runs = _circular_runs(provisional)
    argmin_run = next(run for run in runs if _run_contains(run, coarse_argmin))

    start_idx, stop_idx = argmin_run
    lo = thetas[start_idx] - step
    hi = (thetas[stop_idx] if stop_idx >= start_idx else thetas[stop_idx] + TWO_PI) + step
    fine_step = step / refine
    count = int(round((hi - lo) / fine_step)) + 1
    fine_thetas = np.linspace(lo, hi, count)
    fine_values = evaluator.value_grid(fine_thetas % TWO_PI)

    q_min = min(coarse_min, float(fine_values.min()))
    threshold = q_min + tolerance

    # refined arc: contiguous fine points around the fine argmin under threshold
    fine_argmin = int(fine_values.argmin())
    inside = fine_values <= threshold
    left = fine_argmin
    while left > 0 and inside[left - 1]:
        left -= 1
    right = fine_argmin
    while right < count - 1 and inside[right + 1]:
        right += 1
    est_lb = float(fine_thetas[left] % TWO_PI)
    est_ub = float(fine_thetas[right] % TWO_PI)
    argmin_theta = float(fine_thetas[fine_argmin] % TWO_PI)

    # the final mask is a subset of the provisional one (threshold can only
    # tighten), so the run holding the coarse argmin, when it survives, sits
    # inside the refinement window; merge it with the refined arc there
    final_mask = values <= threshold
    anchor = float(thetas[start_idx])
    intervals: list[tuple[float, float]] = []
    estimate: tuple[float, float] | None = None
    for run in _circular_runs(final_mask):
        lb = float(thetas[run[0]])
        ub = float(thetas[run[1]])
        if _run_contains(run, coarse_argmin):
            clb = anchor + ((run[0] - start_idx) % grid_size) * step
            cub = anchor + ((run[1] - start_idx) % grid_size) * step
            merged_lb = min(clb, float(fine_thetas[left]))
            merged_ub = max(cub, float(fine_thetas[right]))
            lb, ub = merged_lb % TWO_PI, merged_ub % TWO_PI
            estimate = (lb, ub)
        intervals.append((lb, ub))
    if estimate is None:
        # the fine pass dug more than `tolerance` below every coarse point
        # near the minimizer, so the coarse arc vanished; report the fine arc
        estimate = (est_lb, est_ub)
        intervals.append(estimate)
    intervals.sort(key=lambda iv: iv[0])

    idset = IdentifiedSet(
        intervals=tuple(intervals),
        q_min=q_min,
        tolerance=tolerance,
        argmin=argmin_theta,
        interval_estimate=estimate,
        full_circle=False,
    )
    return grid, idset


@dataclass(frozen=True)
class SphereDescentResult:
    point: ParamPoint
    value: float
    restart_values: tuple[float, ...]

    @property
    def beta(self) -> np.ndarray:
        return self.point.beta


def estimate_subgradient(
    data,
    cycles: CycleSet,
    restarts: int = 20,
    steps: int = 5000,
    tolerance: float = 0.0,
    seed: int = 0,
    initial=None,
    step_scale: float = 0.1,
) -> SphereDescentResult:
    """Minimize the criterion over the unit sphere by projected subgradient descent.

    Each restart draws a uniform sphere start (the first uses `initial` when
    given), sets the step constant to c = step_scale * Q0 / ||g0||^2, and walks
    beta <- normalize(beta - (c/sqrt(t)) g) for t = 1..steps, keeping the best
    iterate seen anywhere. Stops early once the best value is <= tolerance.

    The default step_scale of 0.1 is conservative: because the displacement per
    step is proportional to the current subgradient norm, it self-throttles on
    problems with many cycles (where ||g||^2 grows with the cycle count while
    the minimum stays put) and can stall far above the minimum within the step
    budget. Raising step_scale by two to three orders of magnitude fixes the
    stall on compressed problems with thousands of cycles; the iteration is
    normalized every step, so large values degrade into a random search rather
    than diverging.
    """
    if restarts < 1 or steps < 1:
        raise ParameterError("restarts and steps must be positive")
    if tolerance < 0:
        raise ParameterError("tolerance must be nonnegative")
    if not (math.isfinite(step_scale) and step_scale > 0):
        raise ParameterError("step_scale must be a positive finite number")
    evaluator = CriterionEvaluator(data, cycles)
    b = evaluator.b
    rng = derive_rng(seed, STREAM_RESTARTS)

    def random_start() -> np.ndarray:
        while True:
            v = rng.standard_normal(b)
            norm = float(np.linalg.norm(v))
            if norm > 1e-12:
                return v / norm

    best_value = math.inf
    best_beta: np.ndarray | None = None
    restart_values: list[float] = []

    for restart in range(restarts):
        if initial is not None and restart == 0:
            beta = np.asarray(initial, dtype=np.float64)
            norm = float(np.linalg.norm(beta))
            if beta.shape != (b,) or norm == 0.0:
                raise ParameterError(f"initial point must be a nonzero vector of length {b}")
            beta = beta / norm
        else:
            beta = random_start()

        value, grad = evaluator.value_and_subgradient(beta)
        restart_best = value
        if value < best_value:
            best_value, best_beta = value, beta.copy()
        if best_value <= tolerance:
            restart_values.append(restart_best)
            break
        gsq = float(grad @ grad)
        if gsq == 0.0:
            restart_values.append(restart_best)
            continue
        c = step_scale * value / gsq

        for t in range(1, steps + 1):
            candidate = beta - (c / math.sqrt(t)) * grad
            norm = float(np.linalg.norm(candidate))
            if norm <= 1e-300:
                candidate, norm = random_start(), 1.0
            beta = candidate / norm
            value, grad = evaluator.value_and_subgradient(beta)
            if not math.isfinite(value):
                raise NumericalError(
                    f"non-finite criterion at restart {restart}, step {t}, beta={beta}"
                )
            restart_best = min(restart_best, value)
            if value < best_value:
                best_value, best_beta = value, beta.copy()
            if best_value <= tolerance:
                break
        restart_values.append(restart_best)
        if best_value <= tolerance:
            break

    assert best_beta is not None
    return SphereDescentResult(
        point=ParamPoint(best_beta),
        value=best_value,
        restart_values=tuple(restart_values),
    )


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    lb: float = math.nan
    ub: float = math.nan
    theta_hat: float = math.nan
    q_min: float = math.nan
    wrapped: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "lb": self.lb,
            "ub": self.ub,
            "theta_hat": self.theta_hat,
            "q_min": self.q_min,
            "wrapped": self.wrapped,
            "error": self.error,
        }


@dataclass(frozen=True)
class ReplicationSummary:
    """Interval statistics across projection replications.

    Quantiles use linear interpolation on order statistics (numpy's default,
    quantile type 7); dispersion is the population standard deviation, which
    degrades gracefully to 0 for a single replication.
    """

    design_label: str
    k: int
    s: float
    replications: int
    records: tuple[ReplicationRecord, ...]
    unprojected_set: IdentifiedSet
    unprojected_grid: AngleGrid = field(repr=False)
    mean_lb: float = math.nan
    sd_lb: float = math.nan
    mean_ub: float = math.nan
    sd_ub: float = math.nan
    q25_lb: float = math.nan
    q75_ub: float = math.nan
    min_lb: float = math.nan
    max_ub: float = math.nan
    mean_theta: float = math.nan
    sd_theta: float = math.nan
    nested_count: int = 0
    failures: int = 0

    @property
    def lb(self) -> np.ndarray:
        return np.array([r.lb for r in self.records if r.ok])

    @property
    def ub(self) -> np.ndarray:
        return np.array([r.ub for r in self.records if r.ok])

    @property
    def theta_hat(self) -> np.ndarray:
        return np.array([r.theta_hat for r in self.records if r.ok])

    @property
    def successes(self) -> int:
        return sum(1 for r in self.records if r.ok)

    @property
    def nested_fraction(self) -> float:
        good = self.successes
        return self.nested_count / good if good else math.nan

    def to_dict(self) -> dict:
        return {
            "design": self.design_label,
            "k": self.k,
            "s": self.s,
            "replications": self.replications,
            "summary": {
                "mean_lb": self.mean_lb,
                "sd_lb": self.sd_lb,
                "mean_ub": self.mean_ub,
                "sd_ub": self.sd_ub,
                "q25_lb": self.q25_lb,
                "q75_ub": self.q75_ub,
                "min_lb": self.min_lb,
                "max_ub": self.max_ub,
                "mean_theta": self.mean_theta,
                "sd_theta": self.sd_theta,
                "nested_count": self.nested_count,
                "nested_fraction": self.nested_fraction,
                "failures": self.failures,
            },
            "unprojected": self.unprojected_set.to_dict(),
            "records": [r.to_dict() for r in self.records],
        }


def run_replications(
    data,
    k: int,
    s,
    replications: int,
    master_seed: int,
    cycle_lengths=(2, 3),
    grid_size: int = 2000,
    refine: int = 10,
    threads: int = 1,
    design_label: str = "",
) -> ReplicationSummary:
    """Repeat (draw projection, compress, scan the circle) and summarize.

    `data` may be a Dataset or a SimConfig to simulate first. Replication r
    derives its projection seed from (master_seed, r) alone, so results are
    identical whatever the thread count. A replication that raises is marked
    failed and excluded from the statistics rather than aborting the run.
    """
    if isinstance(data, SimConfig):
        data = simulate_dataset(data)
    if data.b != 2:
        raise DimensionError("run_replications reports angle intervals; needs b = 2")
    if replications < 1:
        raise ParameterError("replications must be at least 1")
    s_resolved = resolve_sparsity(s, data.d)
    # fail fast on structurally impossible specs instead of logging R failures
    ProjectionSpec(k=k, d=data.d, s=s_resolved, seed=0)
    cycles = enumerate_cycles(data.n, cycle_lengths)

    grid0, unprojected = estimate_polar_grid(data, cycles, grid_size, refine)

    def one(r: int) -> ReplicationRecord:
        try:
            spec = ProjectionSpec(
                k=k, d=data.d, s=s_resolved, seed=derive_seed(master_seed, STREAM_PROJECTION, r)
            )
            compressed = apply(generate(spec), data)
            _, idset = estimate_polar_grid(compressed, cycles, grid_size, refine)
            lb, ub = idset.interval_estimate
            return ReplicationRecord(
                index=r,
                lb=lb,
                ub=ub,
                theta_hat=interval_midpoint((lb, ub)),
                q_min=idset.q_min,
                wrapped=ub < lb,
            )
        except Exception as exc:  # noqa: BLE001 - recorded, not swallowed
            return ReplicationRecord(index=r, error=f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = tuple(pool.map(one, range(replications)))
    else:
        records = tuple(one(r) for r in range(replications))

    good = [r for r in records if r.ok]
    lbs = np.array([r.lb for r in good])
    ubs = np.array([r.ub for r in good])
    thetas = np.array([r.theta_hat for r in good])
    nested = sum(
        1 for r in good if unprojected.covers_interval((r.lb, r.ub))
    )

    def _stat(fn, arr):
        return float(fn(arr)) if arr.size else math.nan

    return ReplicationSummary(
        design_label=design_label or f"d{data.d}k{k}",
        k=k,
        s=s_resolved,
        replications=replications,
        records=records,
        unprojected_set=unprojected,
        unprojected_grid=grid0,
        mean_lb=_stat(np.mean, lbs),
        sd_lb=_stat(np.std, lbs),
        mean_ub=_stat(np.mean, ubs),
        sd_ub=_stat(np.std, ubs),
        q25_lb=_stat(lambda a: np.quantile(a, 0.25, method="linear"), lbs),
        q75_ub=_stat(lambda a: np.quantile(a, 0.75, method="linear"), ubs),
        min_lb=_stat(np.min, lbs),
        max_ub=_stat(np.max, ubs),
        mean_theta=_stat(np.mean, thetas),
        sd_theta=_stat(np.std, thetas),
        nested_count=nested,
        failures=len(records) - len(good),
    )


@dataclass(frozen=True)
class CoefficientReplicationSummary:
    """Per-coefficient spread across projection replications (b != 2 path)."""

    design_label: str
    k: int
    s: float
    replications: int
    betas: np.ndarray
    values: np.ndarray
    failures: tuple[tuple[int, str], ...]

    def to_dict(self) -> dict:
        med = np.median(self.betas, axis=0) if self.betas.size else np.array([])
        q25 = (
            np.quantile(self.betas, 0.25, axis=0, method="linear")
            if self.betas.size
            else np.array([])
        )
        q75 = (
            np.quantile(self.betas, 0.75, axis=0, method="linear")
            if self.betas.size
            else np.array([])
        )
        return {
            "design": self.design_label,
            "k": self.k,
            "s": self.s,
            "replications": self.replications,
            "summary": {
                "median": med.tolist(),
                "q25": q25.tolist(),
                "q75": q75.tolist(),
                "mean_value": float(self.values.mean()) if self.values.size else math.nan,
                "failures": len(self.failures),
            },
            "betas": self.betas.tolist(),
            "errors": [list(f) for f in self.failures],
        }


def run_coefficient_replications(
    data: Dataset,
    k: int,
    s,
    replications: int,
    master_seed: int,
    cycle_lengths=(2, 3),
    restarts: int = 20,
    steps: int = 5000,
    threads: int = 1,
    design_label: str = "",
    step_scale: float = 0.1,
) -> CoefficientReplicationSummary:
    """Replication harness for b != 2: sphere descent instead of a grid."""
    if replications < 1:
        raise ParameterError("replications must be at least 1")
    s_resolved = resolve_sparsity(s, data.d)
    ProjectionSpec(k=k, d=data.d, s=s_resolved, seed=0)
    cycles = enumerate_cycles(data.n, cycle_lengths)

    def one(r: int):
        try:
            spec = ProjectionSpec(
                k=k, d=data.d, s=s_resolved, seed=derive_seed(master_seed, STREAM_PROJECTION, r)
            )
            compressed = apply(generate(spec), data)
            result = estimate_subgradient(
                compressed,
                cycles,
                restarts=restarts,
                steps=steps,
                seed=derive_seed(master_seed, STREAM_RESTARTS, r),
                step_scale=step_scale,
            )
            return result.beta, result.value, None
        except Exception as exc:  # noqa: BLE001
            return None, math.nan, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replications)))
    else:
        results = [one(r) for r in range(replications)]

    betas = [b for b, _, err in results if err is None]
    values = [v for _, v, err in results if err is None]
    failures = tuple((i, err) for i, (_, _, err) in enumerate(results) if err is not None)
    return CoefficientReplicationSummary(
        design_label=design_label or f"d{data.d}k{k}",
        k=k,
        s=s_resolved,
        replications=replications,
        betas=np.array(betas) if betas else np.empty((0, data.b)),
        values=np.array(values),
        failures=failures,
    )


@dataclass(frozen=True)
class ConvergenceDiagnostic:
    """Sup-gap between compressed and uncompressed criteria as k grows.

    Gaps compare per-cycle-normalized criteria over a shared angle grid:
    gap = max_theta |Qtilde(theta) - Q(theta)| / (number of cycles).
    """

    k_values: tuple[int, ...]
    mean_gaps: tuple[float, ...]
    gaps: np.ndarray
    strictly_decreasing: bool
    decreasing_pairs: int

    def to_dict(self) -> dict:
        return {
            "k_values": list(self.k_values),
            "mean_gaps": list(self.mean_gaps),
            "gaps": self.gaps.tolist(),
            "strictly_decreasing": self.strictly_decreasing,
            "decreasing_pairs": self.decreasing_pairs,
        }


def convergence_diagnostic(
    data: Dataset,
    k_values,
    s,
    draws: int,
    master_seed: int,
    cycle_lengths=(2, 3),
    grid_size: int = 1024,
) -> ConvergenceDiagnostic:
    """Average sup-grid criterion gap per k, over independent projection draws."""
    if data.b != 2:
        raise DimensionError("the diagnostic compares angle grids; needs b = 2")
    if draws < 1:
        raise ParameterError("draws must be at least 1")
    k_values = tuple(int(k) for k in k_values)
    if not k_values:
        raise ParameterError("no k values given")
    s_resolved = resolve_sparsity(s, data.d)
    cycles = enumerate_cycles(data.n, cycle_lengths)
    m = len(cycles)
    step = TWO_PI / grid_size
    thetas = np.arange(grid_size) * step
    base = CriterionEvaluator(data, cycles).value_grid(thetas) / m

    gaps = np.empty((len(k_values), draws))
    for ki, k in enumerate(k_values):
        for draw in range(draws):
            spec = ProjectionSpec(
                k=k,
                d=data.d,
                s=s_resolved,
                seed=derive_seed(master_seed, STREAM_PROJECTION, ki, draw),
            )
            compressed = apply(generate(spec), data)
            projected = CriterionEvaluator(compressed, cycles).value_grid(thetas) / m
            gaps[ki, draw] = float(np.abs(projected - base).max())

    means = gaps.mean(axis=1)
    decreasing = sum(
        1 for i in range(len(k_values) - 1) if means[i + 1] < means[i]
    )
    return ConvergenceDiagnostic(
        k_values=k_values,
        mean_gaps=tuple(float(g) for g in means),
        gaps=gaps,
        strictly_decreasing=(decreasing == len(k_values) - 1),
        decreasing_pairs=decreasing,
    )


def write_grid_csv(grid: AngleGrid, path: str) -> None:
    """Angle grid as two-column CSV for plotting."""
    with open(path, "w") as fh:
        fh.write("theta,value\n")
        for theta, value in zip(grid.thetas, grid.values):
            fh.write(f"{float(theta)!r},{float(value)!r}\n")
