"""Episode dynamics: zoom and refinement steps, history vectors and step limits."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    REFINE_ACTIONS,
    BoundingBox,
    ImageSize,
    ModelVariant,
    RefineAction,
    ZoomAction,
    apply_refine,
    apply_zoom,
)
from .features import FeatureExtractor, build_state_vector
from .metrics import iou

MAX_ZOOM_STEPS = 10
REFINE_STEPS = 5
HISTORY_LENGTH = 4
FORCED_TERMINATION_IOU = 0.5


class EpisodeError(RuntimeError):
    """A transition was requested that the episode does not allow."""


@dataclass(frozen=True)
class HistoryVector:
    """Shift register of the last four action indices, newest first."""

    n_actions: int
    actions: tuple[int, ...] = ()

    def push(self, index: int) -> "HistoryVector":
        if not 0 <= index < self.n_actions:
            raise ValueError(f"action index {index} out of range for {self.n_actions} actions")
        return replace(self, actions=((int(index),) + self.actions)[:HISTORY_LENGTH])

    def cleared(self) -> "HistoryVector":
        return HistoryVector(self.n_actions)

    def encode(self) -> np.ndarray:
        out = np.zeros((HISTORY_LENGTH, self.n_actions))
        for slot, index in enumerate(self.actions):
            out[slot, index] = 1.0
        return out.reshape(-1)

    @property
    def size(self) -> int:
        return HISTORY_LENGTH * self.n_actions


@dataclass(frozen=True)
class EpisodeState:
    variant: ModelVariant
    image: ImageSize
    box: BoundingBox
    zoom_history: HistoryVector
    refine_history: HistoryVector
    zoom_step: int = 0
    refine_step: int = 0
    terminated: bool = False
    # set when a zoom shrank the box below the minimum feature size
    degenerate: bool = False
    last_zoom: ZoomAction | None = field(default=None)

    @property
    def done(self) -> bool:
        return self.terminated or self.degenerate or self.zoom_step >= MAX_ZOOM_STEPS

    @property
    def zoom_actions(self) -> tuple[ZoomAction, ...]:
        return self.variant.zoom_actions

    def zoom_index(self, action: ZoomAction) -> int:
        return self.zoom_actions.index(ZoomAction(action))


def reset(image: ImageSize, variant: ModelVariant) -> EpisodeState:
    """Start an episode with the box covering the full image."""
    return EpisodeState(
        variant=variant,
        image=image,
        box=BoundingBox.full(image),
        zoom_history=HistoryVector(len(variant.zoom_actions)),
        refine_history=HistoryVector(len(REFINE_ACTIONS)),
    )


def step_zoom(state: EpisodeState, action: ZoomAction) -> EpisodeState:
    action = ZoomAction(action)
    if state.terminated:
        raise EpisodeError("episode already terminated")
    if state.degenerate:
        raise EpisodeError("box fell below the minimum size; episode cannot continue")
    if state.zoom_step >= MAX_ZOOM_STEPS:
        raise EpisodeError(f"zoom step limit of {MAX_ZOOM_STEPS} reached")
    if action not in state.zoom_actions:
        raise EpisodeError(f"{action.name} is not available in the {state.variant.value} model")

    history = state.zoom_history.push(state.zoom_index(action))
    if action is ZoomAction.TERMINAL:
        return replace(
            state,
            zoom_history=history,
            zoom_step=state.zoom_step + 1,
            terminated=True,
            last_zoom=action,
        )
    box = apply_zoom(state.box, action, state.image)
    return replace(
        state,
        box=box,
        zoom_history=history,
        refine_history=state.refine_history.cleared(),
        zoom_step=state.zoom_step + 1,
        refine_step=0,
        degenerate=box.below_floor(),
        last_zoom=action,
    )


def step_refine(state: EpisodeState, action: RefineAction) -> EpisodeState:
    action = RefineAction(action)
    if not state.variant.two_stage:
        raise EpisodeError(f"the {state.variant.value} model has no refinement stage")
    if state.terminated:
        raise EpisodeError("episode already terminated")
    if state.last_zoom is None or state.last_zoom is ZoomAction.TERMINAL:
        raise EpisodeError("refinement is only allowed after a zoom action")
    if state.degenerate:
        raise EpisodeError("box fell below the minimum size; no refinement possible")
    if state.refine_step >= REFINE_STEPS:
        raise EpisodeError(f"all {REFINE_STEPS} refinement steps of this zoom are used")
    return replace(
        state,
        box=apply_refine(state.box, action, state.image),
        refine_history=state.refine_history.push(int(action)),
        refine_step=state.refine_step + 1,
    )


def forced_terminal_override(
    state: EpisodeState, g: BoundingBox, chosen: ZoomAction
) -> ZoomAction:
    """Training-time rule: take the terminal action once the IoU exceeds 0.5."""
    if iou(state.box, g) > FORCED_TERMINATION_IOU:
        return ZoomAction.TERMINAL
    return ZoomAction(chosen)


def observe(
    state: EpisodeState, image: np.ndarray, extractor: FeatureExtractor, stage: str = "zoom"
) -> np.ndarray:
    """State vector of the zoom or refinement network for the current box."""
    history = state.zoom_history if stage == "zoom" else state.refine_history
    features = extractor.extract(image, state.box)
    return build_state_vector(features, history.encode(), history.n_actions)


def state_dim(extractor: FeatureExtractor, n_actions: int) -> int:
    return extractor.output_dim + HISTORY_LENGTH * n_actions


@dataclass(frozen=True)
class Transition:
    """One line of a trajectory log."""

    kind: str  # "Z" zoom, "R" refinement, "T" terminal
    action: str
    box: BoundingBox
    reward: float | None = None

    def format(self) -> str:
        reward = "" if self.reward is None else repr(float(self.reward))
        return f"{self.kind} {self.action} {self.box.serialize()} {reward}".rstrip()

    @classmethod
    def parse(cls, line: str) -> "Transition":
        parts = line.split()
        if len(parts) not in (3, 4) or parts[0] not in ("Z", "R", "T"):
            raise ValueError(f"malformed trajectory line: {line!r}")
        reward = float(parts[3]) if len(parts) == 4 else None
        return cls(parts[0], parts[1], BoundingBox.parse(parts[2]), reward)


def write_trajectory(transitions, path) -> None:
    with open(path, "w") as fh:
        for t in transitions:
            fh.write(t.format() + "\n")
