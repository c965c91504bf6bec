"""Sampling-based MPC: Gaussian action sampling, group-tournament elite
selection by a critic, CEM refit over iterations, and the subgoal-driven
episode loop with step/time budgets."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cameras import CameraRig
from .critic import (Critic, CriticQuery, CriticVerdict, RemoteCriticFailed,
                     SubtaskPlan, UnsupportedCriticOp, scripted_plan_from_task,
                     template_hash)
from .geometry import Pose, canonical_rotvec, quat_chordal_mean, quat_to_rotvec, rotvec_to_quat
from .render import render_composite, render_views
from .scene import SceneTwin, Subtask, apply_transforms
from .sim import (Action, GripperState, SimConfig, canonicalize_action,
                  check_success, eval_predicate, initial_gripper_state,
                  simulate_step)
from . import trace as trace_mod

DEFAULT_STD_FLOOR = (0.005, 0.005, 0.005, 0.02, 0.02, 0.02, 0.02)
DEFAULT_INIT_STD = (0.10, 0.10, 0.10, 0.4, 0.4, 0.4, 0.5)
FROZEN_STD = 1e-6

# seed-stream tags, keeping parallel draws independent of evaluation order
_TAG_SAMPLE = 0
_TAG_GROUP = 1
_TAG_VIEW = 2


@dataclass(frozen=True)
class ActionDistribution:
    mean: np.ndarray  # 7-vector: position, axis-angle, finger
    std: np.ndarray  # 7-vector, elementwise > 0

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(7))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float).reshape(7))
        if np.any(self.std <= 0):
            raise ValueError("distribution std must be positive elementwise")


@dataclass(frozen=True)
class PlannerConfig:
    n_samples: int = 90
    group_size: int = 5
    iterations: int = 3
    step_budget: int = 30
    time_budget: float = 300.0
    use_views: bool = True
    use_subtasks: bool = True
    use_cem: bool = True
    std_floor: Tuple[float, ...] = DEFAULT_STD_FLOOR
    init_std: Tuple[float, ...] = DEFAULT_INIT_STD
    episode_seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.group_size < 1 or self.iterations < 1:
            raise ValueError("n_samples, group_size and iterations must be >= 1")
        if self.n_samples % self.group_size != 0:
            raise ValueError(
                f"n_samples ({self.n_samples}) must be divisible by "
                f"group_size ({self.group_size})")
        if self.step_budget < 1:
            raise ValueError("step_budget must be >= 1")

    @property
    def n_groups(self) -> int:
        return self.n_samples // self.group_size


@dataclass
class PlanStepResult:
    chosen_action: Action
    chosen_view: str
    view_fallback: bool
    active_subtask: int
    distributions: List[ActionDistribution]  # one per CEM iteration sampled from
    elite_indices: List[List[int]]
    verdicts: List[List[CriticVerdict]]
    n_simulations: int
    n_queries: int


def action_to_vec(action: Action) -> np.ndarray:
    return np.concatenate([action.position, action.rotvec, [action.finger]])


def vec_to_action(vec: np.ndarray) -> Action:
    vec = np.asarray(vec, dtype=float).reshape(7)
    return Action(vec[:3], vec[3:6], vec[6])


def _stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def init_distribution(gripper: GripperState, plan: SubtaskPlan,
                      config: PlannerConfig) -> ActionDistribution:
    """Mean at the current gripper state; frozen dims get a negligible std."""
    mean = np.concatenate([
        gripper.pose.position,
        canonical_rotvec(quat_to_rotvec(gripper.pose.orientation)),
        [1.0 if gripper.fingers == "closed" else 0.0],
    ])
    std = np.asarray(config.init_std, dtype=float).copy()
    if not plan.needs_rotation:
        std[3:6] = FROZEN_STD
    if not plan.needs_fingers:
        std[6] = FROZEN_STD
    return ActionDistribution(mean, std)


def sample_actions(dist: ActionDistribution, n: int, ws_min: np.ndarray,
                   ws_max: np.ndarray, seed: int, step: int,
                   iteration: int) -> List[Action]:
    """n seed-deterministic Gaussian draws, clamped and canonicalized."""
    actions = []
    for k in range(n):
        rng = _stream_rng(seed, step, iteration, _TAG_SAMPLE, k)
        vec = dist.mean + dist.std * rng.standard_normal(7)
        actions.append(canonicalize_action(vec_to_action(vec), ws_min, ws_max))
    return actions


@dataclass
class OracleContext:
    """Ground-truth scoring context the planner feeds the oracle critic."""

    task: "object"
    active_index: int
    scoring: str = "distance_to_goal"

    def _goal_point(self, subtask: Optional[Subtask], poses) -> Optional[np.ndarray]:
        goal = subtask.goal if subtask is not None else None
        if goal is None:
            g = self.task.oracle_goal
            return None if g is None else np.asarray(g, dtype=float)
        if isinstance(goal, dict):
            base = poses[goal["body"]].position
            return base + np.asarray(goal.get("offset", (0, 0, 0)), dtype=float)
        return np.asarray(goal, dtype=float)

    def _ref_point(self, subtask: Optional[Subtask], poses, gripper) -> np.ndarray:
        body = subtask.goal_body if subtask is not None else self.task.goal_body
        if body == "gripper" or body not in poses:
            return gripper.tool_point
        return poses[body].position

    def score(self, scene_after: SceneTwin, gripper_after: GripperState) -> float:
        poses = {b.id: b.pose for b in scene_after.bodies}
        subtasks = self.task.subtasks
        if self.scoring == "progress" and subtasks:
            # credit already-advanced subtasks plus any now-completed prefix,
            # then pull toward the next outstanding goal
            eff = self.active_index
            while eff < len(subtasks):
                st = subtasks[eff]
                if st.done is not None and eval_predicate(st.done, poses, gripper_after):
                    eff += 1
                else:
                    break
            bonus = 10.0 * eff
            if eval_predicate(self.task.success, poses, gripper_after):
                bonus += 100.0
            target = subtasks[min(eff, len(subtasks) - 1)]
            goal = self._goal_point(target, poses)
            dist = 0.0
            if goal is not None:
                dist = float(np.linalg.norm(self._ref_point(target, poses, gripper_after) - goal))
            return bonus - dist
        subtask = subtasks[self.active_index] if subtasks and self.active_index < len(subtasks) else None
        goal = self._goal_point(subtask, poses)
        if goal is None:
            return 0.0
        return -float(np.linalg.norm(self._ref_point(subtask, poses, gripper_after) - goal))


def evaluate_candidates(scene: SceneTwin, gripper: GripperState,
                        actions: Sequence[Action], camera, subgoal: str,
                        critic: Critic, sim_config: SimConfig,
                        config: PlannerConfig, step: int, iteration: int,
                        oracle_ctx: Optional[OracleContext] = None,
                        context: str = ""
                        ) -> Tuple[List[int], List[CriticVerdict], int]:
    """Simulate every candidate, group them, and collect one winner per group."""
    if len(actions) != config.n_samples:
        raise ValueError("candidate count must equal n_samples")
    outcomes = []
    for action in actions:
        deltas, g_after, _events = simulate_step(scene, gripper, action, sim_config)
        s_after = apply_transforms(scene, deltas)
        outcomes.append((s_after, g_after))
    images = None
    if critic.needs_images:
        images = [render_composite(s, g, camera).color for s, g in outcomes]
    scores = None
    if oracle_ctx is not None:
        scores = [oracle_ctx.score(s, g) for s, g in outcomes]

    elites: List[int] = []
    verdicts: List[CriticVerdict] = []
    m = config.n_groups
    for g in range(m):
        lo = g * config.group_size
        hi = lo + config.group_size
        group_images = images[lo:hi] if images is not None else None
        query = CriticQuery(subgoal=subgoal, images=group_images, context=context,
                            n_candidates=hi - lo)
        rng = _stream_rng(config.episode_seed, step, iteration, _TAG_GROUP, g)
        verdict = critic.select_best(
            query,
            scores=None if scores is None else scores[lo:hi],
            rng=rng)
        verdicts.append(verdict)
        elites.append(lo + verdict.chosen_index)
    return elites, verdicts, len(actions)


def refit(elite_vectors: np.ndarray, config: PlannerConfig) -> ActionDistribution:
    """Elementwise mean/std of the elites (chordal mean for the rotation block)."""
    vecs = np.asarray(elite_vectors, dtype=float).reshape(-1, 7)
    if len(vecs) < 2:
        raise ValueError("refit requires at least 2 elites")
    mean = vecs.mean(axis=0)
    quats = np.array([rotvec_to_quat(v[3:6]) for v in vecs])
    mean[3:6] = canonical_rotvec(quat_to_rotvec(quat_chordal_mean(quats)))
    std = vecs.std(axis=0)
    std = np.maximum(std, np.asarray(config.std_floor, dtype=float))
    return ActionDistribution(mean, std)


def elite_mean_action(elite_vectors: np.ndarray, ws_min, ws_max) -> Action:
    vecs = np.asarray(elite_vectors, dtype=float).reshape(-1, 7)
    mean = vecs.mean(axis=0)
    quats = np.array([rotvec_to_quat(v[3:6]) for v in vecs])
    mean[3:6] = canonical_rotvec(quat_to_rotvec(quat_chordal_mean(quats)))
    return canonicalize_action(vec_to_action(mean), ws_min, ws_max)


def cem_step(scene: SceneTwin, gripper: GripperState, subgoal: str, camera,
             critic: Critic, config: PlannerConfig, sim_config: SimConfig,
             step: int, plan: SubtaskPlan,
             oracle_ctx: Optional[OracleContext] = None,
             context: str = "") -> Tuple[Action, PlanStepResult]:
    """One MPC planning step: iterate sample -> evaluate -> refit, then take
    the final distribution mean (or, without CEM, the elite mean directly)."""
    ws_min, ws_max = scene.workspace_min, scene.workspace_max
    dist = init_distribution(gripper, plan, config)
    dists: List[ActionDistribution] = []
    all_elites: List[List[int]] = []
    all_verdicts: List[List[CriticVerdict]] = []
    n_sims = 0
    n_queries = 0
    iterations = config.iterations if config.use_cem else 1
    chosen: Optional[Action] = None
    for it in range(iterations):
        dists.append(dist)
        actions = sample_actions(dist, config.n_samples, ws_min, ws_max,
                                 config.episode_seed, step, it)
        elites, verdicts, sims = evaluate_candidates(
            scene, gripper, actions, camera, subgoal, critic, sim_config,
            config, step, it, oracle_ctx=oracle_ctx, context=context)
        n_sims += sims
        n_queries += len(verdicts)
        all_elites.append(elites)
        all_verdicts.append(verdicts)
        elite_vecs = np.array([action_to_vec(actions[i]) for i in elites])
        if config.use_cem:
            dist = refit(elite_vecs, config)
        else:
            chosen = elite_mean_action(elite_vecs, ws_min, ws_max)
    if config.use_cem:
        chosen = canonicalize_action(vec_to_action(dist.mean), ws_min, ws_max)
    result = PlanStepResult(
        chosen_action=chosen, chosen_view="", view_fallback=False,
        active_subtask=0, distributions=dists, elite_indices=all_elites,
        verdicts=all_verdicts, n_simulations=n_sims, n_queries=n_queries)
    return chosen, result


def _build_plan(scene: SceneTwin, instruction: str, critic: Critic,
                config: PlannerConfig, views0) -> SubtaskPlan:
    task = scene.task
    if not config.use_subtasks:
        # ablation: the raw instruction is the single goal
        return SubtaskPlan((instruction,),
                           needs_fingers=task.needs_fingers,
                           needs_rotation=task.needs_rotation)
    try:
        return critic.decompose(instruction, views0, task=task)
    except UnsupportedCriticOp:
        plan = scripted_plan_from_task(task)
        if plan is not None:
            return plan
        return SubtaskPlan((instruction,),
                           needs_fingers=task.needs_fingers,
                           needs_rotation=task.needs_rotation)


def _completion_flags(scene: SceneTwin, gripper: GripperState) -> List[bool]:
    poses = {b.id: b.pose for b in scene.bodies}
    flags = []
    for st in scene.task.subtasks:
        if st.done is None:
            flags.append(False)
        else:
            flags.append(eval_predicate(st.done, poses, gripper))
    return flags


def plan_episode(scene: SceneTwin, critic: Critic, config: PlannerConfig,
                 sim_config: Optional[SimConfig] = None,
                 instruction: Optional[str] = None,
                 trace_path=None, scene_path=None) -> "trace_mod.EpisodeTrace":
    """Run the full receding-horizon loop; returns (and optionally records) a trace."""
    sim_config = sim_config or SimConfig()
    instruction = instruction if instruction is not None else scene.task.instruction
    gripper = initial_gripper_state(scene)
    rig = scene.cameras
    start_time = time.monotonic()

    writer = trace_mod.TraceWriter(
        path=trace_path,
        header=trace_mod.make_header(scene, config, sim_config, critic,
                                     scene_path=scene_path,
                                     template_hash_value=template_hash()))

    views0 = None
    if critic.needs_images:
        views0 = [render_views(scene, gripper, rig)[name]
                  for name in ("front", "left", "right", "top_down")]
    status = None
    try:
        plan = _build_plan(scene, instruction, critic, config, views0)
        active = 0
        prev_view: Optional[str] = None
        for step in range(config.step_budget):
            if check_success(scene, gripper):
                status = "SUCCESS"
                break
            if time.monotonic() - start_time > config.time_budget:
                status = "FAILED_BUDGET"
                break

            # subtask selection
            if len(plan.subtasks) > 1 and config.use_subtasks:
                if critic.needs_images:
                    step_views = render_views(scene, gripper, rig)
                    imgs = [step_views[n] for n in ("front", "left", "right", "top_down")]
                    active = critic.select_active(imgs, plan, active,
                                                  context=instruction)
                else:
                    completed = _completion_flags(scene, gripper)
                    # pad in case the scripted predicate list is shorter
                    completed += [False] * (len(plan.subtasks) - len(completed))
                    nxt = active
                    while nxt < len(plan.subtasks) - 1 and completed[nxt]:
                        nxt += 1
                    active = nxt
            subgoal = plan.subtasks[active]

            # viewpoint selection
            idist = init_distribution(gripper, plan, config)
            fallback = False
            if not config.use_views:
                view = "top_down"
            else:
                imgs = None
                if critic.needs_images:
                    step_views = render_views(scene, gripper, rig)
                    imgs = [step_views[n] for n in ("front", "left", "right", "top_down")]
                rng = _stream_rng(config.episode_seed, step, 0, _TAG_VIEW)
                view, fallback = critic.choose_view(
                    imgs, subgoal, prev_view,
                    uncertainty_axis=idist.std[:3], rng=rng)
            prev_view = view

            oracle_ctx = None
            if getattr(critic, "kind", "") == "oracle":
                oracle_ctx = OracleContext(scene.task, active,
                                           scoring=getattr(critic, "scoring",
                                                           "distance_to_goal"))
            elif getattr(critic, "kind", "") == "random":
                pass
            action, result = cem_step(
                scene, gripper, subgoal, rig[view], critic, config, sim_config,
                step, plan, oracle_ctx=oracle_ctx, context=instruction)
            result.chosen_view = view
            result.view_fallback = fallback
            result.active_subtask = active

            deltas, gripper, events = simulate_step(scene, gripper, action,
                                                    sim_config)
            scene = apply_transforms(scene, deltas)
            success = check_success(scene, gripper)
            writer.append_step(trace_mod.step_record(
                step, result, events, scene, gripper, success))
            if success:
                status = "SUCCESS"
                break
        if status is None:
            status = "FAILED_BUDGET"
    except RemoteCriticFailed as exc:
        writer.finalize("ABORTED_CRITIC", success=False, error=str(exc))
        return writer.trace()
    writer.finalize(status, success=(status == "SUCCESS"))
    return writer.trace()
