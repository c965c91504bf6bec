"""twinplan: sampling-based MPC for a robot gripper in a rigid-body digital
twin, with point-splat rendering and pluggable outcome critics."""

from .cameras import Camera, CameraRig, default_rig, project
from .critic import (CriticQuery, CriticVerdict, OracleCritic, RandomCritic,
                     RemoteConfig, RemoteCritic, SubtaskPlan, make_critic)
from .geometry import Pose
from .planner import (ActionDistribution, PlannerConfig, cem_step,
                      plan_episode, refit, sample_actions)
from .render import RenderOutput, composite, render_gripper, render_splats, render_views
from .scene import (RigidBody, SceneTwin, SplatCloud, SplatPoint, TaskSpec,
                    anchor_splats, apply_transforms, load_scene, save_scene)
from .sim import (Action, ContactEvent, GripperState, SimConfig, check_success,
                  initial_gripper_state, rollout, simulate_step)
from .trace import EpisodeTrace, dump_frames, read_trace, replay, trace_lint

__version__ = "0.1.0"
