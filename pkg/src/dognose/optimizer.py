"""Grid sweeps and bounded Nelder-Mead over scenario parameters.

Both drivers take a :class:`ParamSpace` (named dotted paths into a
``ScenarioSpec`` with bounds) and an :class:`Objective` computed from the run's
sensor trace. Evaluations are independent simulations, so they can be farmed
out to worker processes; results are always collected in a fixed order.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import BudgetExceeded
from .metrics import compute_metrics
from .scenarios import ScenarioSpec, run_scenario

SHORTCUTS = {
    "exhale_angle": "geometry.exhale_angle",
    "snout_height": "geometry.snout_height",
    "inhale_duty": "inhale_schedule.duty",
    "pulse_period": "inhale_schedule.period",
    "elevation": "pose.elevation",
    "inhale_v_max": "inhale_motor.v_max",
    "exhale_v_max": "exhale_motor.v_max",
}


@dataclass(frozen=True)
class Param:
    name: str
    lower: float
    upper: float
    step: float | None = None
    path: str | None = None

    @property
    def target(self) -> str:
        return self.path or SHORTCUTS.get(self.name, self.name)

    def validate(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower bound must be below upper bound")
        if self.step is not None and self.step <= 0:
            raise ValueError(f"{self.name}: grid step must be positive")

    def grid(self) -> list[float]:
        if self.step is None:
            return [self.lower, self.upper]
        n = int(math.floor((self.upper - self.lower) / self.step + 1e-9))
        return [round(self.lower + k * self.step, 12) for k in range(n + 1)]


@dataclass(frozen=True)
class ParamSpace:
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))

    @property
    def names(self):
        return [p.name for p in self.params]

    @property
    def dim(self):
        return len(self.params)

    def validate(self):
        if not self.params:
            raise ValueError("parameter space is empty")
        if len(set(self.names)) != self.dim:
            raise ValueError("parameter names must be unique")
        for p in self.params:
            p.validate()

    def apply(self, base: ScenarioSpec, values: dict) -> ScenarioSpec:
        spec = base
        for p in self.params:
            spec = spec.replace(p.target, float(values[p.name]))
        return spec

    def to_unit(self, values: dict) -> np.ndarray:
        return np.array([(values[p.name] - p.lower) / (p.upper - p.lower) for p in self.params])

    def from_unit(self, x) -> dict:
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return {p.name: float(p.lower + xi * (p.upper - p.lower)) for p, xi in zip(self.params, x)}


class ObjectiveKind(str, Enum):
    PEAK = "PeakConcentration"
    AUC = "Auc"
    DURATION_ABOVE = "DurationAbove"


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind = ObjectiveKind.PEAK
    maximize: bool = True
    threshold: float | None = None

    def validate(self):
        if self.kind is ObjectiveKind.DURATION_ABOVE:
            if self.threshold is None or self.threshold < 0:
                raise ValueError("DurationAbove needs a threshold >= 0")

    def score(self, result) -> float:
        rep = compute_metrics(result.trace, threshold=self.threshold,
                              background=result.config["transport"]["background"])
        return {ObjectiveKind.PEAK: rep.peak, ObjectiveKind.AUC: rep.auc,
                ObjectiveKind.DURATION_ABOVE: rep.duration_above}[self.kind]


def evaluate(spec: ScenarioSpec, objective: Objective):
    """Objective value and run metadata for one scenario."""
    result = run_scenario(spec)
    meta = {"wall_time": result.stats["wall_time"], "steps": result.stats["steps"],
            "ledger_residual": result.ledger.relative_residual()}
    return objective.score(result), meta


def _eval_point(args):
    space, base, objective, values = args
    return evaluate(space.apply(base, values), objective)


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


@dataclass
class SweepRow:
    values: dict
    objective: float
    meta: dict = field(default_factory=dict)


@dataclass
class SweepResult:
    names: list
    rows: list
    objective: Objective

    def best(self) -> SweepRow:
        key = (lambda r: r.objective) if self.objective.maximize else (lambda r: -r.objective)
        return max(self.rows, key=key)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*self.names, "objective"])
            for r in self.rows:
                w.writerow([repr(float(r.values[n])) for n in self.names] + [repr(float(r.objective))])

    def to_json(self, path):
        best = self.best()
        data = {"objective": {"kind": self.objective.kind.value,
                              "maximize": self.objective.maximize,
                              "threshold": self.objective.threshold},
                "rows": [{"values": r.values, "objective": r.objective} for r in self.rows],
                "best": {"values": best.values, "objective": best.objective}}
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def grid_sweep(space: ParamSpace, base: ScenarioSpec, objective: Objective,
               budget: int = 1000, workers: int = 1) -> SweepResult:
    """Evaluate every grid point, rows in lexicographic parameter order."""
    space.validate()
    objective.validate()
    axes = [p.grid() for p in space.params]
    total = math.prod(len(a) for a in axes)
    if total > budget:
        raise BudgetExceeded(f"grid has {total} points, budget is {budget}")
    points = [dict(zip(space.names, combo)) for combo in itertools.product(*axes)]
    out = _map(_eval_point, [(space, base, objective, pt) for pt in points], workers)
    rows = [SweepRow(pt, float(val), meta) for pt, (val, meta) in zip(points, out)]
    return SweepResult(space.names, rows, objective)


@dataclass
class OptimizeResult:
    best_params: dict
    best_value: float
    log: list
    converged: bool
    evaluations: int

    def to_json(self, path):
        data = {"best_params": self.best_params, "best_value": self.best_value,
                "converged": self.converged, "evaluations": self.evaluations, "log": self.log}
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


class _Evaluator:
    """Counts evaluations, replays a resume log, and appends to the live log."""

    def __init__(self, space, fn, workers, budget, log_path, maximize):
        self.space = space
        self.fn = fn
        self.workers = workers
        self.budget = budget
        self.log_path = Path(log_path) if log_path else None
        self.sign = -1.0 if maximize else 1.0
        self.log = []
        self.replay = []
        if self.log_path and self.log_path.exists():
            for line in self.log_path.read_text().splitlines():
                if line.strip():
                    self.replay.append(json.loads(line))

    def __call__(self, points):
        """Minimization values of unit-cube points; raises BudgetExceeded first."""
        if len(self.log) + len(points) > self.budget:
            raise BudgetExceeded("evaluation budget exhausted")
        todo = []
        vals = [None] * len(points)
        for k, x in enumerate(points):
            params = self.space.from_unit(x)
            i = len(self.log) + k
            if i < len(self.replay) and self.replay[i]["params"] == params:
                vals[k] = self.replay[i]["value"]
            else:
                todo.append((k, params))
        if todo:
            got = _map(self.fn, [p for _, p in todo], self.workers)
            for (k, _), v in zip(todo, got):
                vals[k] = float(v)
        for x, v in zip(points, vals):
            entry = {"params": self.space.from_unit(x), "value": v}
            self.log.append(entry)
            if self.log_path:
                with open(self.log_path, "a") as fh:
                    fh.write(json.dumps(entry) + "\n")
        return [self.sign * v for v in vals]


class _SimObjective:
    def __init__(self, space, base, objective):
        self.space, self.base, self.objective = space, base, objective

    def __call__(self, params):
        return evaluate(self.space.apply(self.base, params), self.objective)[0]


def nelder_mead(space: ParamSpace, base: ScenarioSpec | None = None,
                objective: Objective | None = None, budget: int = 100, seed: int = 0,
                fn: Callable[[dict], float] | None = None, workers: int = 1,
                log_path=None, xtol: float = 1e-3, maximize: bool | None = None) -> OptimizeResult:
    """Bounded Nelder-Mead in the unit cube spanned by ``space``.

    ``fn`` replaces the simulation with a direct callable of the parameter
    dict. Points are clamped to the bounds. Stops when the simplex diameter
    falls below ``xtol`` (as a fraction of each range) or when the budget is
    spent, in which case the best point so far is returned unconverged.
    """
    space.validate()
    d = space.dim
    if budget < 3 * (d + 1):
        raise ValueError(f"budget must be at least {3 * (d + 1)}")
    if fn is None:
        if base is None or objective is None:
            raise ValueError("need either fn or both base and objective")
        objective.validate()
        fn = _SimObjective(space, base, objective)
    if maximize is None:
        maximize = objective.maximize if objective is not None else True
    ev = _Evaluator(space, fn, workers, budget, log_path, maximize)

    rng = np.random.default_rng(seed)
    x0 = 0.5 + rng.uniform(-0.15, 0.15, size=d)
    simplex = [x0]
    for k in range(d):
        x = x0.copy()
        x[k] += 0.25 if rng.random() < 0.5 else -0.25
        simplex.append(x)
    simplex = np.clip(np.array(simplex), 0.0, 1.0)
    converged = False
    try:
        fvals = np.array(ev(list(simplex)))
        while True:
            order = np.argsort(fvals, kind="stable")
            simplex, fvals = simplex[order], fvals[order]
            diam = max(np.max(np.abs(simplex[i] - simplex[j]))
                       for i in range(d + 1) for j in range(i + 1, d + 1))
            if diam < xtol:
                converged = True
                break
            centroid = simplex[:-1].mean(axis=0)
            worst = simplex[-1]
            xr = np.clip(centroid + (centroid - worst), 0, 1)
            (fr,) = ev([xr])
            if fr < fvals[0]:
                xe = np.clip(centroid + 2.0 * (centroid - worst), 0, 1)
                (fe,) = ev([xe])
                simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
                continue
            if fr < fvals[-2]:
                simplex[-1], fvals[-1] = xr, fr
                continue
            if fr < fvals[-1]:
                xc = np.clip(centroid + 0.5 * (xr - centroid), 0, 1)
            else:
                xc = np.clip(centroid + 0.5 * (worst - centroid), 0, 1)
            (fc,) = ev([xc])
            if fc < min(fr, fvals[-1]):
                simplex[-1], fvals[-1] = xc, fc
                continue
            shrunk = [simplex[0] + 0.5 * (x - simplex[0]) for x in simplex[1:]]
            simplex[1:] = shrunk
            fvals[1:] = ev(shrunk)
    except BudgetExceeded:
        converged = False
    best = min(ev.log, key=lambda e: ev.sign * e["value"])
    return OptimizeResult(best["params"], best["value"], ev.log, converged, len(ev.log))
