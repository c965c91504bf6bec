"""Pluggable outcome critics: geometric oracle, seeded random, remote vision chat."""
from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests

from .cameras import VIEW_DIRECTIONS, VIEW_NAMES
from .render import encode_png
from .scene import TaskSpec

API_KEY_ENV = "PWF_API_KEY"

VIEW_TIE_ORDER = ("front", "left", "right", "top_down")


class CriticError(Exception):
    pass


class RemoteCriticFailed(CriticError):
    """Raised after retries are exhausted; code REMOTE_CRITIC_FAILED."""


class UnsupportedCriticOp(CriticError):
    """Raised when a critic kind cannot perform the requested operation."""


@dataclass(frozen=True)
class CriticQuery:
    subgoal: str
    images: Optional[Sequence[np.ndarray]]  # None for critics that ignore pixels
    context: str = ""
    n_candidates: Optional[int] = None  # candidate count when images are skipped

    def __post_init__(self):
        if self.images is not None and not (1 <= len(self.images) <= 8):
            raise ValueError("query must carry between 1 and 8 images")

    @property
    def count(self) -> int:
        if self.images is not None:
            return len(self.images)
        if self.n_candidates is None:
            raise ValueError("query carries neither images nor a candidate count")
        return self.n_candidates


@dataclass(frozen=True)
class CriticVerdict:
    chosen_index: int
    rationale: str = ""


@dataclass(frozen=True)
class SubtaskPlan:
    subtasks: Tuple[str, ...]
    needs_fingers: bool = True
    needs_rotation: bool = True

    def __post_init__(self):
        if not self.subtasks:
            raise ValueError("subtask plan must contain at least one subtask")


def _load_template(name: str) -> str:
    return resources.files("twinplan.prompts").joinpath(f"{name}.txt").read_text(
        encoding="utf-8")


def template_hash() -> str:
    """Stable hash over all shipped prompt templates."""
    h = hashlib.sha256()
    for name in ("choose_view", "decompose", "select_active", "select_best"):
        h.update(name.encode())
        h.update(_load_template(name).encode("utf-8"))
    return h.hexdigest()


def parse_last_int(text: str) -> Optional[int]:
    """Last integer on the last nonempty line, or None."""
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        return None
    found = re.findall(r"-?\d+", lines[-1])
    return int(found[-1]) if found else None


def parse_view_name(text: str) -> Optional[str]:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        return None
    last = lines[-1].lower().replace("-", "_")
    hits = [(last.rfind(v), v) for v in VIEW_NAMES if v in last]
    if not hits:
        return None
    return max(hits)[1]


def parse_subtask_plan(text: str) -> Optional[SubtaskPlan]:
    items: List[str] = []
    fingers = None
    rotation = None
    for line in text.splitlines():
        m = re.match(r"\s*(\d+)[.)]\s*(.+)", line)
        if m:
            items.append(m.group(2).strip())
            continue
        m = re.match(r"\s*fingers\s*:\s*(yes|no)", line, re.IGNORECASE)
        if m:
            fingers = m.group(1).lower() == "yes"
            continue
        m = re.match(r"\s*rotation\s*:\s*(yes|no)", line, re.IGNORECASE)
        if m:
            rotation = m.group(1).lower() == "yes"
    if not items:
        return None
    return SubtaskPlan(tuple(items),
                       needs_fingers=bool(fingers),
                       needs_rotation=bool(rotation))


def fallback_view(previous: Optional[str]) -> str:
    for v in VIEW_TIE_ORDER:
        if v != previous:
            return v
    raise AssertionError("unreachable")


class Critic:
    """Common surface; concrete kinds override the operations they support."""

    kind = "base"
    needs_images = False

    def select_best(self, query: CriticQuery,
                    scores: Optional[Sequence[float]] = None,
                    rng: Optional[np.random.Generator] = None) -> CriticVerdict:
        raise NotImplementedError

    def decompose(self, instruction: str, images, task: Optional[TaskSpec] = None
                  ) -> SubtaskPlan:
        raise UnsupportedCriticOp(
            f"UNSUPPORTED_CRITIC_OP: {self.kind} cannot decompose")

    def select_active(self, images, plan: SubtaskPlan, last_active: int,
                      completed: Optional[Sequence[bool]] = None,
                      context: str = "") -> int:
        raise UnsupportedCriticOp(
            f"UNSUPPORTED_CRITIC_OP: {self.kind} cannot select_active")

    def choose_view(self, images, subgoal: str, previous: Optional[str],
                    uncertainty_axis: Optional[np.ndarray] = None,
                    rng: Optional[np.random.Generator] = None
                    ) -> Tuple[str, bool]:
        raise UnsupportedCriticOp(
            f"UNSUPPORTED_CRITIC_OP: {self.kind} cannot choose_view")


def scripted_plan_from_task(task: TaskSpec) -> Optional[SubtaskPlan]:
    if not task.subtasks:
        return None
    return SubtaskPlan(tuple(st.text for st in task.subtasks),
                       needs_fingers=task.needs_fingers,
                       needs_rotation=task.needs_rotation)


class OracleCritic(Critic):
    """Geometric oracle driven by simulator-ground-truth side channels."""

    kind = "oracle"

    def __init__(self, scoring: str = "distance_to_goal"):
        if scoring not in ("distance_to_goal", "progress"):
            raise ValueError(f"unknown oracle scoring mode '{scoring}'")
        self.scoring = scoring

    def select_best(self, query, scores=None, rng=None) -> CriticVerdict:
        if scores is None:
            raise CriticError("oracle critic requires side-channel scores")
        best = int(np.argmax(scores))  # argmax keeps the lowest index on ties
        return CriticVerdict(best)

    def decompose(self, instruction, images, task=None) -> SubtaskPlan:
        plan = scripted_plan_from_task(task) if task is not None else None
        if plan is None:
            raise CriticError(
                "oracle decompose requires scripted subtasks in the task spec")
        return plan

    def select_active(self, images, plan, last_active, completed=None,
                      context="") -> int:
        if completed is None:
            raise CriticError("oracle select_active requires completion flags")
        active = last_active
        while active < len(plan.subtasks) - 1 and completed[active]:
            active += 1
        return active

    def choose_view(self, images, subgoal, previous, uncertainty_axis=None,
                    rng=None) -> Tuple[str, bool]:
        allowed = [v for v in VIEW_TIE_ORDER if v != previous]
        if uncertainty_axis is None:
            return allowed[0], False
        axis = np.asarray(uncertainty_axis, dtype=float)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            return allowed[0], False
        axis = axis / n
        # prefer the view whose optical axis is most orthogonal to the
        # dominant uncertainty direction; ties keep the fixed order
        best = min(allowed,
                   key=lambda v: (round(abs(float(VIEW_DIRECTIONS[v] @ axis)), 12),
                                  allowed.index(v)))
        return best, False


class RandomCritic(Critic):
    """Uniform-random baseline; deterministic under the planner's seed stream."""

    kind = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _rng(self, rng: Optional[np.random.Generator]) -> np.random.Generator:
        if rng is None:
            rng = np.random.default_rng(self.seed)
        return rng

    def select_best(self, query, scores=None, rng=None) -> CriticVerdict:
        return CriticVerdict(int(self._rng(rng).integers(query.count)))

    def choose_view(self, images, subgoal, previous, uncertainty_axis=None,
                    rng=None) -> Tuple[str, bool]:
        allowed = [v for v in VIEW_TIE_ORDER if v != previous]
        return allowed[int(self._rng(rng).integers(len(allowed)))], False


@dataclass
class RemoteConfig:
    endpoint: str
    model: str
    api_key_env: str = API_KEY_ENV
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.5
    temperature: float = 0.0

    def __post_init__(self):
        if not self.endpoint:
            raise ValueError("remote critic requires a nonempty endpoint")


class RemoteCritic(Critic):
    """Chat-completions client sending base64 PNG image parts; fail-fast policy."""

    kind = "remote"
    needs_images = True

    SYSTEM_PROMPT = ("You are a careful robot manipulation planner. "
                     "Always finish with the exact final ANSWER line you are asked for.")

    def __init__(self, config: RemoteConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.session = session or requests.Session()

    # -- wire format -------------------------------------------------------

    def build_payload(self, prompt: str, images) -> dict:
        parts: List[dict] = [{"type": "text", "text": prompt}]
        for img in images or []:
            b64 = base64.b64encode(encode_png(img)).decode("ascii")
            parts.append({
                "type": "image_url",
                "image_url": {"url": f"data:image/png;base64,{b64}"},
            })
        return {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": self.SYSTEM_PROMPT},
                {"role": "user", "content": parts},
            ],
        }

    def _post_once(self, payload: dict) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        resp = self.session.post(self.config.endpoint, headers=headers,
                                 data=json.dumps(payload, sort_keys=True),
                                 timeout=self.config.timeout)
        if resp.status_code // 100 != 2:
            raise CriticError(f"status {resp.status_code}")
        body = resp.json()
        return body["choices"][0]["message"]["content"]

    def _ask(self, payload: dict, parser):
        """POST with retries + exponential backoff; parser returning None retries."""
        last = None
        for attempt in range(self.config.retries + 1):
            if attempt and self.config.backoff > 0:
                time.sleep(self.config.backoff * (2 ** (attempt - 1)))
            try:
                reply = self._post_once(payload)
            except (requests.RequestException, CriticError, KeyError,
                    ValueError) as exc:
                last = f"transport/protocol failure: {exc}"
                continue
            parsed = parser(reply)
            if parsed is not None:
                return parsed, reply
            last = f"unparsable reply: {reply[:200]!r}"
        raise RemoteCriticFailed(f"REMOTE_CRITIC_FAILED: {last}")

    # -- operations --------------------------------------------------------

    def select_best(self, query, scores=None, rng=None) -> CriticVerdict:
        count = len(query.images)
        prompt = _load_template("select_best").format(
            context=query.context, subgoal=query.subgoal,
            count=count, last=count - 1)
        payload = self.build_payload(prompt, query.images)

        def parse(reply):
            idx = parse_last_int(reply)
            return idx if idx is not None and 0 <= idx < count else None

        idx, reply = self._ask(payload, parse)
        return CriticVerdict(idx, rationale=reply)

    def decompose(self, instruction, images, task=None) -> SubtaskPlan:
        prompt = _load_template("decompose").format(
            instruction=instruction, count=len(images or []))
        payload = self.build_payload(prompt, images)
        plan, _ = self._ask(payload, parse_subtask_plan)
        return plan

    def select_active(self, images, plan, last_active, completed=None,
                      context="") -> int:
        listing = "\n".join(f"{i}. {t}" for i, t in enumerate(plan.subtasks))
        prompt = _load_template("select_active").format(
            context=context, subtasks=listing, last_active=last_active,
            count=len(images or []))
        payload = self.build_payload(prompt, images)

        def parse(reply):
            idx = parse_last_int(reply)
            return idx if idx is not None and 0 <= idx < len(plan.subtasks) else None

        idx, _ = self._ask(payload, parse)
        return idx

    def choose_view(self, images, subgoal, previous, uncertainty_axis=None,
                    rng=None) -> Tuple[str, bool]:
        prompt = _load_template("choose_view").format(
            subgoal=subgoal, previous=previous or "none")
        payload = self.build_payload(prompt, images)
        view, _ = self._ask(payload, parse_view_name)
        if view != previous:
            return view, False
        # one reprompt, then deterministic fallback (recorded as VIEW_FALLBACK)
        reprompt = (prompt + f"\nYour previous answer '{previous}' is forbidden. "
                    "Choose a different view.")
        payload2 = self.build_payload(reprompt, images)
        try:
            view2, _ = self._ask(payload2, parse_view_name)
        except RemoteCriticFailed:
            view2 = previous
        if view2 != previous:
            return view2, False
        return fallback_view(previous), True


def make_critic(kind: str, scoring: str = "distance_to_goal", seed: int = 0,
                endpoint: str = "", model: str = "",
                **remote_kwargs) -> Critic:
    if kind == "oracle":
        return OracleCritic(scoring=scoring)
    if kind == "random":
        return RandomCritic(seed=seed)
    if kind == "remote":
        return RemoteCritic(RemoteConfig(endpoint=endpoint, model=model,
                                         **remote_kwargs))
    raise ValueError(f"unknown critic kind '{kind}'")
