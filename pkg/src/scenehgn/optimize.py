"""Layout refinement by adaptive first-order descent on the relational energy.

The optimizer is monotone: every proposed step is backtracked until the
energy strictly decreases, so the recorded trace never increases and the
final energy cannot exceed the initial one. It runs in two phases, both
gradient-only. An Adam phase with the configured moment parameters handles
the early landscape where Chamfer pairings and hinge branches still switch;
once progress stalls or the exploration budget is spent, a gradient-memory
(L-BFGS style) polish phase finishes the smooth quadratic tail, which plain
Adam traverses too slowly for the refinement time budget.

Pinned fields from edit constraints are set to their targets up front and
never touched, so they are bit-exact in the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scenehgn import energy as en
from scenehgn.floor import points_in_polygon
from scenehgn.scene import (
    ObjectNode,
    PlacementParams,
    SceneHierarchy,
    unit_box_surface_points,
    wrap_angle,
)

MIN_SCALE = 0.01
REFINE_SAMPLES = 64  # surface samples per object inside the optimizer
_ADAM_PHASE_ITERS = 15
_LBFGS_MEMORY = 10
_TINY_STREAK = 3  # consecutive below-tolerance improvements before stopping


class OptimizerError(RuntimeError):
    """Raised when the energy turns non-finite during descent."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass
class EditConstraint:
    """Pins some placement fields of one object to target values."""

    object_id: str
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    orientation: float | None = None

    def __post_init__(self):
        if self.center is None and self.scale is None and self.orientation is None:
            raise ValueError("edit constraint must pin at least one field")
        if self.center is not None:
            self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if self.scale is not None:
            self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
            if np.any(self.scale <= 0.0):
                raise ValueError("pinned scale must be positive")
        if self.orientation is not None:
            self.orientation = float(self.orientation)


@dataclass
class OptimizerConfig:
    step_size: float = 1e-2
    max_iterations: int = 2000
    tolerance: float = 1e-9
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.step_size <= 0.0:
            raise ValueError("step size must be positive")
        if self.max_iterations < 1:
            raise ValueError("iteration cap must be positive")


@dataclass
class RefineTrace:
    columns: list
    rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def energies(self):
        return np.array([r[-1] for r in self.rows])


def _apply_params(scene, ids, params):
    objects = {}
    for k, oid in enumerate(ids):
        obj = scene.objects[oid]
        objects[oid] = ObjectNode(
            id=obj.id,
            category=obj.category,
            placement=PlacementParams(params[k, 0:3], params[k, 3:6], params[k, 6]),
            feature=obj.feature,
        )
    return SceneHierarchy(
        room_id=scene.room_id,
        floor=scene.floor,
        regions=scene.regions,
        objects=objects,
        edges=scene.edges,
        room_type=scene.room_type,
    )


class _Problem:
    """Energy evaluations over the free placement coordinates."""

    def __init__(self, scene, ids, pinned, weights, samples, local_points):
        self.scene = scene
        self.ids = ids
        self.pinned = pinned
        self.weights = weights
        self.samples = samples
        self.local_points = local_points

    def project(self, p):
        # leave already-valid values bit-identical so a zero step is a no-op
        p[:, 3:6] = np.maximum(p[:, 3:6], MIN_SCALE)
        yaw = p[:, 6]
        outside = (yaw <= -np.pi) | (yaw > np.pi)
        if np.any(outside):
            p[outside, 6] = [wrap_angle(t) for t in yaw[outside]]
        return p

    def evaluate(self, params, need_grad):
        report = en.total_energy(
            _apply_params(self.scene, self.ids, params),
            self.weights,
            samples=self.samples,
            local_points=self.local_points,
            need_grad=need_grad,
        )
        grad = None
        if need_grad:
            grad = np.stack([report.gradient[oid] for oid in self.ids])
            grad[self.pinned] = 0.0
        return report, grad

    def backtrack(self, params, current, direction, step, iteration, trials=24):
        """Shrink `step` until the energy strictly decreases."""
        for trial in range(trials):
            candidate = self.project(params - step * direction)
            candidate[self.pinned] = params[self.pinned]
            report, _ = self.evaluate(candidate, need_grad=False)
            if not np.isfinite(report.total):
                raise OptimizerError("energy diverged", iteration)
            if report.total < current:
                return candidate, report, trial
            step *= 0.5
        return None, None, trials


def refine(
    scene: SceneHierarchy,
    constraints=(),
    config: OptimizerConfig | None = None,
    weights: en.EnergyWeights | None = None,
    samples: int = REFINE_SAMPLES,
):
    """Minimize the scene's relational energy over free placement parameters.

    Returns (refined scene, trace). Each object's local sample pattern is
    frozen at entry so the objective stays smooth while scales move.
    """
    config = config or OptimizerConfig()
    weights = weights or en.EnergyWeights()
    ids = sorted(scene.objects)
    index = {oid: k for k, oid in enumerate(ids)}

    params = np.stack([scene.objects[oid].placement.as_vector() for oid in ids])
    pinned = np.zeros_like(params, dtype=bool)
    trace = RefineTrace(
        columns=["iteration", "room_object", "containment", "hyper_rotation",
                 "hyper_center", "hyper_parallel", "binary", "total"]
    )

    for con in constraints:
        if con.object_id not in index:
            raise ValueError(f"constraint references unknown object {con.object_id!r}")
        k = index[con.object_id]
        if con.center is not None:
            params[k, 0:3] = con.center
            pinned[k, 0:3] = True
            if not bool(points_in_polygon(con.center[[0, 2]], scene.floor.vertices)[0]):
                trace.warnings.append(
                    f"edit target for {con.object_id} lies outside the floor"
                )
        if con.scale is not None:
            params[k, 3:6] = con.scale
            pinned[k, 3:6] = True
        if con.orientation is not None:
            params[k, 6] = con.orientation
            pinned[k, 6] = True

    local_points = {
        oid: unit_box_surface_points(samples, scale=params[index[oid], 3:6])
        for oid in ids
    }
    problem = _Problem(scene, ids, pinned, weights, samples, local_points)

    report, grad = problem.evaluate(params, need_grad=True)
    if not np.isfinite(report.total):
        raise OptimizerError("initial energy is not finite", 0)

    def record(iteration, rep):
        trace.rows.append(
            [iteration] + [rep.terms[c] for c in trace.columns[1:-1]] + [rep.total]
        )

    record(0, report)
    current = report.total
    floor_energy = 10.0 * config.tolerance
    tiny_streak = 0
    iteration = 0

    # phase 1: Adam with monotone backtracking
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    eps = 1e-8
    adam_budget = min(_ADAM_PHASE_ITERS, config.max_iterations)
    for t in range(1, adam_budget + 1):
        if current <= floor_energy:
            break
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        m_hat = m / (1.0 - config.beta1**t)
        v_hat = v / (1.0 - config.beta2**t)
        direction = m_hat / (np.sqrt(v_hat) + eps)
        direction[pinned] = 0.0
        iteration += 1
        candidate, cand_report, _ = problem.backtrack(
            params, current, direction, config.step_size, iteration
        )
        if candidate is None:
            break
        params = candidate
        report, grad = problem.evaluate(params, need_grad=True)
        record(iteration, report)
        current = report.total

    # phase 2: gradient-memory polish with the same monotone backtracking
    history_s, history_y = [], []
    flat_grad = grad.reshape(-1)
    while iteration < config.max_iterations:
        if current <= floor_energy or tiny_streak >= _TINY_STREAK:
            break
        q = flat_grad.copy()
        alphas = []
        for s_vec, y_vec in reversed(list(zip(history_s, history_y))):
            rho = 1.0 / (y_vec @ s_vec)
            a = rho * (s_vec @ q)
            alphas.append(a)
            q -= a * y_vec
        if history_y:
            s_vec, y_vec = history_s[-1], history_y[-1]
            q *= (s_vec @ y_vec) / (y_vec @ y_vec)
        for (s_vec, y_vec), a in zip(zip(history_s, history_y), reversed(alphas)):
            rho = 1.0 / (y_vec @ s_vec)
            q += (a - rho * (y_vec @ q)) * s_vec
        direction = q.reshape(params.shape)
        if flat_grad @ q <= 0.0:
            direction = grad.copy()
            history_s.clear()
            history_y.clear()
        direction[pinned] = 0.0

        iteration += 1
        candidate, cand_report, _ = problem.backtrack(
            params, current, direction, 1.0, iteration, trials=30
        )
        if candidate is None:
            if not history_s:
                break  # even steepest descent cannot improve: stationary
            history_s.clear()
            history_y.clear()
            iteration -= 1
            continue
        new_report, new_grad = problem.evaluate(candidate, need_grad=True)
        s_vec = (candidate - params).reshape(-1)
        y_vec = (new_grad - grad).reshape(-1)
        if s_vec @ y_vec > 1e-18:
            history_s.append(s_vec)
            history_y.append(y_vec)
            if len(history_s) > _LBFGS_MEMORY:
                history_s.pop(0)
                history_y.pop(0)
        params, report, grad = candidate, new_report, new_grad
        flat_grad = grad.reshape(-1)
        record(iteration, report)
        if abs(current - report.total) <= config.tolerance:
            tiny_streak += 1
        else:
            tiny_streak = 0
        current = report.total

    refined = _apply_params(scene, ids, params)
    return refined, trace


def edit_propagate(scene: SceneHierarchy, edits, config=None, weights=None):
    """Apply pin edits and let the relational energy move everything else."""
    refined, _ = refine(scene, edits, config, weights)
    return refined
