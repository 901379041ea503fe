"""Greedy-policy evaluation: TP/FP/FN accounting and convergence curves."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import env
from .features import FeatureExtractor, image_size
from .geometry import REFINE_ACTIONS, BoundingBox, ModelVariant, ZoomAction
from .learning import QNetwork
from .metrics import iou

DETECTION_IOU = 0.5


class Outcome(Enum):
    TP = "TP"
    FP = "FP"
    FN = "FN"


@dataclass(frozen=True)
class DetectionOutcome:
    outcome: Outcome
    box: BoundingBox
    iou: float
    zoom_count: int
    terminated: bool


@dataclass(frozen=True)
class EvalRecord:
    epoch: int
    tp: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn

    @property
    def tp_rate(self) -> float:
        return self.tp / self.total if self.total else 0.0


@dataclass
class EvalEpisode:
    box: BoundingBox
    terminated: bool
    zoom_count: int
    transitions: list[env.Transition] = field(default_factory=list)


# a policy maps (stage, state vector, n_actions) to an action index
Policy = Callable[[str, np.ndarray | None, int], int]


def greedy_policy(zoom_net: QNetwork, refine_net: QNetwork | None = None) -> Policy:
    def choose(stage, vec, n_actions):
        net = zoom_net if stage == "zoom" else refine_net
        return int(np.argmax(net.forward(vec, train=False)))

    return choose


def random_policy(rng: np.random.Generator) -> Policy:
    def choose(stage, vec, n_actions):
        return int(rng.integers(n_actions))

    return choose


def rollout(
    image: np.ndarray,
    variant: ModelVariant,
    policy: Policy,
    extractor: FeatureExtractor | None,
) -> EvalEpisode:
    """Run one episode without exploration or forced termination.

    ``extractor`` may be None only for policies that ignore the state vector.
    """
    state = env.reset(image_size(image), variant)
    n_zoom = len(variant.zoom_actions)
    n_refine = len(REFINE_ACTIONS)

    def look(stage):
        return None if extractor is None else env.observe(state, image, extractor, stage)

    transitions = []
    while not state.done:
        action = variant.zoom_actions[policy("zoom", look("zoom"), n_zoom)]
        state = env.step_zoom(state, action)
        kind = "T" if action is ZoomAction.TERMINAL else "Z"
        transitions.append(env.Transition(kind, action.name, state.box))
        if kind == "Z" and variant.two_stage and not state.degenerate:
            for _ in range(env.REFINE_STEPS):
                move = REFINE_ACTIONS[policy("refine", look("refine"), n_refine)]
                state = env.step_refine(state, move)
                transitions.append(env.Transition("R", move.name, state.box))
    zooms = sum(t.kind == "Z" for t in transitions)
    return EvalEpisode(state.box, state.terminated, zooms, transitions)


def run_episode_eval(
    image: np.ndarray,
    nets: tuple[QNetwork, QNetwork | None],
    variant: ModelVariant,
    extractor: FeatureExtractor,
) -> EvalEpisode:
    zoom_net, refine_net = nets
    if variant.two_stage and refine_net is None:
        raise ValueError(f"the {variant.value} model needs a refinement network")
    return rollout(image, variant, greedy_policy(zoom_net, refine_net), extractor)


def classify(box: BoundingBox, terminated: bool, g: BoundingBox, zoom_count: int = 0) -> DetectionOutcome:
    """TP when IoU exceeds 0.5; otherwise FP for a voluntary stop, FN for a step-cap exit."""
    value = iou(box, g)
    if value > DETECTION_IOU:
        outcome = Outcome.TP
    elif terminated:
        outcome = Outcome.FP
    else:
        outcome = Outcome.FN
    return DetectionOutcome(outcome, box, value, zoom_count, terminated)


def evaluate_policy(
    dataset: Sequence,
    variant: ModelVariant,
    policy: Policy,
    extractor: FeatureExtractor | None,
    epoch: int = 0,
    outcome_log: str | os.PathLike | None = None,
) -> EvalRecord:
    if not dataset:
        raise ValueError("evaluation dataset is empty")
    counts = {o: 0 for o in Outcome}
    rows = []
    for sample in dataset:
        ep = rollout(sample.image, variant, policy, extractor)
        result = classify(ep.box, ep.terminated, sample.box, ep.zoom_count)
        counts[result.outcome] += 1
        rows.append(
            {
                "id": sample.id,
                "outcome": result.outcome.value,
                "iou": result.iou,
                "steps": len(ep.transitions),
                "zooms": ep.zoom_count,
                "box": ep.box.serialize(),
            }
        )
    if outcome_log is not None:
        with open(outcome_log, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return EvalRecord(epoch, counts[Outcome.TP], counts[Outcome.FP], counts[Outcome.FN])


def evaluate(
    dataset: Sequence,
    nets: tuple[QNetwork, QNetwork | None],
    variant: ModelVariant,
    extractor: FeatureExtractor,
    epoch: int = 0,
    outcome_log: str | os.PathLike | None = None,
) -> EvalRecord:
    zoom_net, refine_net = nets
    if variant.two_stage and refine_net is None:
        raise ValueError(f"the {variant.value} model needs a refinement network")
    return evaluate_policy(
        dataset, variant, greedy_policy(zoom_net, refine_net), extractor, epoch, outcome_log
    )


def random_baseline(
    dataset: Sequence, variant: ModelVariant, seed: int = 0, repeats: int = 5
) -> float:
    """Mean TP rate of a uniformly random policy over ``repeats`` passes."""
    rng = np.random.default_rng(seed)
    rates = [
        evaluate_policy(dataset, variant, random_policy(rng), None).tp_rate for _ in range(repeats)
    ]
    return float(np.mean(rates))


CURVE_FIELDS = ("epoch", "tp", "fp", "fn")


def write_curves(records: Sequence[EvalRecord], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_FIELDS)
        for r in records:
            writer.writerow([r.epoch, r.tp, r.fp, r.fn])


def read_curves(path: str | os.PathLike) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(CURVE_FIELDS)}")
        return [EvalRecord(*(int(row[k]) for k in CURVE_FIELDS)) for row in reader]


def aggregate_runs(runs: Sequence[Sequence[EvalRecord]]) -> list[dict]:
    """Per-epoch mean/min/max of tp, fp and fn across runs (epochs present in every run)."""
    if not runs:
        raise ValueError("no runs to aggregate")
    by_epoch = [{r.epoch: r for r in run} for run in runs]
    epochs = sorted(set.intersection(*(set(d) for d in by_epoch)))
    rows = []
    for epoch in epochs:
        row: dict = {"epoch": epoch}
        for key in ("tp", "fp", "fn"):
            values = np.array([getattr(d[epoch], key) for d in by_epoch], dtype=float)
            row[f"{key}_mean"] = float(values.mean())
            row[f"{key}_min"] = float(values.min())
            row[f"{key}_max"] = float(values.max())
        rows.append(row)
    return rows


def write_aggregate(rows: list[dict], path: str | os.PathLike) -> None:
    fields = ["epoch"] + [f"{k}_{s}" for k in ("tp", "fp", "fn") for s in ("mean", "min", "max")]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
