"""State-quality metrics (IoU, ground-truth coverage, center deviation) and rewards."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import (
    MOVE_ACTIONS,
    BoundingBox,
    ImageSize,
    apply_refine,
    area,
    center,
    intersection,
)


@dataclass(frozen=True)
class QualityParams:
    """Weights of the quality function, optionally with per-metric sigmoid squashing."""

    alpha: tuple[float, float, float] = (1.0, 1.0, 1.0)
    beta: tuple[float, float, float] = (8.0, 8.0, 8.0)
    gamma: tuple[float, float, float] = (0.5, 0.5, 0.5)
    use_sigmoid: bool = False

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            if len(getattr(self, name)) != 3:
                raise ValueError(f"{name} needs exactly three entries")
        if any(a < 0 for a in self.alpha):
            raise ValueError(f"alpha weights must be non-negative, got {self.alpha}")
        if self.use_sigmoid and any(b <= 0 for b in self.beta):
            raise ValueError(f"sigmoid steepness must be positive, got {self.beta}")

    @classmethod
    def iou_only(cls) -> "QualityParams":
        return cls(alpha=(1.0, 0.0, 0.0))

    @classmethod
    def combined(cls) -> "QualityParams":
        return cls()

    @classmethod
    def combined_sigmoid(cls) -> "QualityParams":
        return cls(use_sigmoid=True)

    @classmethod
    def for_mode(cls, mode: str) -> "QualityParams":
        modes = {
            "iou": cls.iou_only,
            "combined": cls.combined,
            "combined-sigmoid": cls.combined_sigmoid,
        }
        try:
            return modes[mode]()
        except KeyError:
            raise ValueError(f"unknown reward mode {mode!r} (choose from {', '.join(modes)})") from None


REWARD_MODES = ("iou", "combined", "combined-sigmoid")


@dataclass(frozen=True)
class TerminalParams:
    eta: float = 3.0
    tau: float = 0.5

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")


def iou(b: BoundingBox, g: BoundingBox) -> float:
    inter = intersection(b, g)
    if inter == 0.0:
        return 0.0
    if b == g:
        return 1.0
    return inter / (area(b) + area(g) - inter)


def gtc(b: BoundingBox, g: BoundingBox) -> float:
    """Fraction of the ground truth ``g`` covered by ``b``."""
    return intersection(b, g) / area(g)


def cd(b: BoundingBox, g: BoundingBox, image: ImageSize) -> float:
    """Center distance of ``b`` and ``g`` as a fraction of the image diagonal."""
    bx, by = center(b)
    gx, gy = center(g)
    return math.hypot(bx - gx, by - gy) / image.diagonal


def _sigmoid(m: float, alpha: float, beta: float, gamma: float) -> float:
    return alpha / (1.0 + math.exp(beta * (gamma - m)))


def quality_from_metrics(
    iou_value: float, gtc_value: float, cd_value: float, params: QualityParams
) -> float:
    metrics = (iou_value, gtc_value, 1.0 - cd_value)
    if params.use_sigmoid:
        return sum(
            _sigmoid(m, a, b, c)
            for m, a, b, c in zip(metrics, params.alpha, params.beta, params.gamma)
        )
    return sum(a * m for a, m in zip(params.alpha, metrics))


def quality(b: BoundingBox, g: BoundingBox, image: ImageSize, params: QualityParams) -> float:
    return quality_from_metrics(iou(b, g), gtc(b, g), cd(b, g, image), params)


def _sign(x: float) -> float:
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return 0.0


def zoom_reward(
    b: BoundingBox,
    b_next: BoundingBox,
    g: BoundingBox,
    image: ImageSize,
    params: QualityParams,
) -> float:
    """+1 if the quality rose from ``b`` to ``b_next``, -1 if it fell, 0 if unchanged."""
    return _sign(quality(b_next, g, image, params) - quality(b, g, image, params))


def terminal_reward(b: BoundingBox, g: BoundingBox, params: TerminalParams = TerminalParams()) -> float:
    return params.eta if iou(b, g) >= params.tau else -params.eta


def cd_decrease_possible(b: BoundingBox, g: BoundingBox, image: ImageSize) -> bool:
    """True if one of the four (clamped) moves strictly lowers the center deviation."""
    current = cd(b, g, image)
    return any(cd(apply_refine(b, move, image), g, image) < current for move in MOVE_ACTIONS)


def refine_reward(b: BoundingBox, b_next: BoundingBox, g: BoundingBox, image: ImageSize) -> float:
    """Reward a refinement step by whether it moved the box center toward the ground truth.

    When the center deviation did not change (Stay, or a move blocked by the
    border) the step is punished if some move could have lowered it and
    rewarded otherwise.
    """
    before = cd(b, g, image)
    after = cd(b_next, g, image)
    if before != after:
        return _sign(before - after)
    return -1.0 if cd_decrease_possible(b, g, image) else 1.0

