"""Training procedure: epsilon-greedy episodes, two-stage reward timing, replay fits."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, env
from .data import single_object
from .evaluation import EvalRecord, evaluate
from .features import PatchGridExtractor, image_size
from .geometry import REFINE_ACTIONS, BoundingBox, ModelVariant, RefineAction, ZoomAction
from .learning import (
    Adam,
    Experience,
    QNetwork,
    ReplayBuffer,
    load_checkpoint,
    q_update,
    save_checkpoint,
    select_action,
)
from .metrics import QualityParams, TerminalParams, iou, refine_reward, terminal_reward, zoom_reward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    variant: str = "1-stage"
    reward: str = "combined"
    epochs: int = 200
    epsilon_start: float = 1.0
    epsilon_step: float = 0.1
    epsilon_floor: float = 0.1
    gamma: float = 0.9
    eta: float = 3.0
    tau: float = 0.5
    buffer_size: int = 1000
    batch_size: int = 100
    lr: float = 1e-6
    hidden: tuple[int, ...] = (1024, 1024)
    dropout: float = 0.2
    grid: int = 16
    seed: int = 0
    eval_every: int = 10
    # data: manifests, or a synthetic split when no train manifest is given
    train_data: str | None = None
    test_data: str | None = None
    synthetic_train: int = 253
    synthetic_test: int = 159
    image_size: int = 64
    data_seed: int = 0
    # regimes: warm start from a checkpoint, optionally with frozen zoom weights
    init_from: str | None = None
    freeze_zoom: bool = False
    train_refine: bool = True
    # offset into the epsilon schedule; None continues from the warm-start checkpoint
    start_epoch: int | None = None
    out_dir: str | None = None

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        ModelVariant.parse(self.variant)
        QualityParams.for_mode(self.reward)
        TerminalParams(self.eta, self.tau)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("epsilon_start", "epsilon_floor", "gamma"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.epsilon_step < 0:
            raise ValueError("epsilon_step must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        for name in ("buffer_size", "batch_size", "grid", "eval_every", "image_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden sizes must be positive")
        if self.freeze_zoom and not self.init_from:
            raise ValueError("freeze_zoom requires init_from")
        if self.start_epoch is not None and self.start_epoch < 0:
            raise ValueError("start_epoch must be non-negative")

    @property
    def model_variant(self) -> ModelVariant:
        return ModelVariant.parse(self.variant)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    def recorded(self) -> dict:
        """Settings that define the run; the output location is left out so reruns elsewhere match."""
        d = self.to_dict()
        del d["out_dir"]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.recorded(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def epsilon_at(epoch: int, start: float = 1.0, step: float = 0.1, floor: float = 0.1) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return max(start - step * epoch, floor)


@dataclass
class Agent:
    """Networks, optimizers and replay buffers shared across episodes."""

    variant: ModelVariant
    extractor: PatchGridExtractor
    zoom_net: QNetwork
    zoom_adam: Adam
    zoom_buffer: ReplayBuffer
    refine_net: QNetwork | None = None
    refine_adam: Adam | None = None
    refine_buffer: ReplayBuffer | None = None
    train_zoom: bool = True
    train_refine: bool = True

    @property
    def nets(self) -> tuple[QNetwork, QNetwork | None]:
        return (self.zoom_net, self.refine_net)


def build_agent(config: TrainConfig, seed_seq: np.random.SeedSequence | None = None) -> Agent:
    variant = config.model_variant
    extractor = PatchGridExtractor(config.grid)
    seeds = (seed_seq or np.random.SeedSequence(config.seed)).generate_state(2)
    n_zoom = len(variant.zoom_actions)
    zoom_net = QNetwork(
        env.state_dim(extractor, n_zoom), n_zoom, config.hidden, config.dropout, seed=int(seeds[0])
    )
    agent = Agent(
        variant=variant,
        extractor=extractor,
        zoom_net=zoom_net,
        zoom_adam=Adam(zoom_net.params, lr=config.lr),
        zoom_buffer=ReplayBuffer(config.buffer_size, config.batch_size),
        train_zoom=not config.freeze_zoom,
        train_refine=config.train_refine,
    )
    if variant.two_stage:
        n_ref = len(REFINE_ACTIONS)
        ref = QNetwork(
            env.state_dim(extractor, n_ref), n_ref, config.hidden, config.dropout, seed=int(seeds[1])
        )
        agent.refine_net = ref
        agent.refine_adam = Adam(ref.params, lr=config.lr)
        agent.refine_buffer = ReplayBuffer(config.buffer_size, config.batch_size)
    return agent


def _adopt(current: QNetwork, loaded: QNetwork, adam: Adam | None, lr: float, name: str, path) -> tuple:
    if (loaded.input_dim, loaded.output_dim) != (current.input_dim, current.output_dim):
        raise ValueError(
            f"{path}: {name} network shape {loaded.input_dim}->{loaded.output_dim} does not match "
            f"the configured model ({current.input_dim}->{current.output_dim})"
        )
    adam = adam if adam is not None else Adam(loaded.params, lr=lr)
    adam.lr = lr
    return loaded, adam


def load_weights(agent: Agent, path: str | os.PathLike, lr: float) -> int:
    """Warm-start ``agent`` from a checkpoint; returns the epoch recorded in it.

    The zoom network is required. A refinement network is taken when both the
    checkpoint and the agent have one, so a refinement-only run can feed a
    joint fine-tuning run.
    """
    networks, meta = load_checkpoint(path)
    if "zoom" not in networks:
        raise ValueError(f"{path}: checkpoint holds no zoom network")
    agent.zoom_net, agent.zoom_adam = _adopt(agent.zoom_net, *networks["zoom"], lr, "zoom", path)
    if agent.refine_net is not None and "refine" in networks:
        agent.refine_net, agent.refine_adam = _adopt(agent.refine_net, *networks["refine"], lr, "refinement", path)
    return int(meta.get("epoch", 0))


@dataclass
class ZoomRecord:
    """Bookkeeping for one zoom-stage decision, for tests and diagnostics."""

    decision_box: BoundingBox
    decision_iou: float
    chosen: ZoomAction
    action: ZoomAction
    next_box: BoundingBox
    reward: float
    experience: Experience
    refinements: list[Experience] = field(default_factory=list)


@dataclass
class EpisodeLog:
    records: list[ZoomRecord] = field(default_factory=list)
    transitions: list[env.Transition] = field(default_factory=list)
    zoom_losses: list[float] = field(default_factory=list)
    refine_losses: list[float] = field(default_factory=list)
    zoom_fits: int = 0
    refine_fits: int = 0

    @property
    def zoom_experiences(self) -> list[Experience]:
        return [r.experience for r in self.records]

    @property
    def refine_experiences(self) -> list[Experience]:
        return [e for r in self.records for e in r.refinements]


def _fit(net, adam, buffer, gamma, rng) -> float | None:
    batch = buffer.sample(rng)
    if not batch:
        return None
    return q_update(net, adam, batch, gamma, rng)


def run_episode_train(
    image: np.ndarray,
    g: BoundingBox,
    agent: Agent,
    config: TrainConfig,
    epsilon: float,
    rng: np.random.Generator,
) -> EpisodeLog:
    """Play one training episode, storing experiences and fitting after every zoom step."""
    variant = agent.variant
    quality = QualityParams.for_mode(config.reward)
    term = TerminalParams(config.eta, config.tau)
    size = image_size(image)
    extractor = agent.extractor
    episode = EpisodeLog()

    state = env.reset(size, variant)
    zoom_vec = env.observe(state, image, extractor, "zoom")
    while not state.done:
        prev_box = state.box
        prev_vec = zoom_vec
        index = select_action(agent.zoom_net, zoom_vec, epsilon, rng)
        chosen = variant.zoom_actions[index]
        action = env.forced_terminal_override(state, g, chosen)
        decision_iou = iou(prev_box, g)

        state = env.step_zoom(state, action)
        zoom_box = state.box
        zoom_line = len(episode.transitions)
        refinements: list[Experience] = []
        if action is not ZoomAction.TERMINAL and variant.two_stage and not state.degenerate:
            ref_vec = env.observe(state, image, extractor, "refine")
            for ref_step in range(1, env.REFINE_STEPS + 1):
                before = state.box
                ref_prev = ref_vec
                move = RefineAction(select_action(agent.refine_net, ref_vec, epsilon, rng))
                state = env.step_refine(state, move)
                reward = refine_reward(before, state.box, g, size)
                ref_vec = env.observe(state, image, extractor, "refine")
                exp = Experience(ref_prev, int(move), reward, ref_vec, ref_step == env.REFINE_STEPS)
                agent.refine_buffer.push(exp)
                refinements.append(exp)
                episode.transitions.append(env.Transition("R", move.name, state.box, reward))

        if action is ZoomAction.TERMINAL:
            reward = terminal_reward(state.box, g, term)
            kind = "T"
        else:
            # two-stage: compares the box before the zoom with the box after all refinements
            reward = zoom_reward(prev_box, state.box, g, size, quality)
            kind = "Z"
        episode.transitions.insert(zoom_line, env.Transition(kind, action.name, zoom_box, reward))
        if state.degenerate:
            zoom_vec = np.zeros_like(prev_vec)
        else:
            zoom_vec = env.observe(state, image, extractor, "zoom")
        exp = Experience(
            prev_vec,
            state.zoom_index(action),
            reward,
            zoom_vec,
            action is ZoomAction.TERMINAL or state.degenerate,
        )
        agent.zoom_buffer.push(exp)
        episode.records.append(
            ZoomRecord(prev_box, decision_iou, chosen, action, state.box, reward, exp, refinements)
        )

        if agent.train_zoom:
            loss = _fit(agent.zoom_net, agent.zoom_adam, agent.zoom_buffer, config.gamma, rng)
            if loss is not None:
                episode.zoom_losses.append(loss)
                episode.zoom_fits += 1
        if variant.two_stage and agent.train_refine:
            loss = _fit(agent.refine_net, agent.refine_adam, agent.refine_buffer, config.gamma, rng)
            if loss is not None:
                episode.refine_losses.append(loss)
                episode.refine_fits += 1
    return episode


@dataclass
class TrainReport:
    config: dict
    epoch_losses: list[float] = field(default_factory=list)
    refine_losses: list[float] = field(default_factory=list)
    evaluations: list[EvalRecord] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    wall_clock: float = field(default=0.0, compare=False)
    agent: Agent | None = field(default=None, compare=False, repr=False)

    def rows(self) -> list[list]:
        evals = {r.epoch: r for r in self.evaluations}
        rows = []
        for i, loss in enumerate(self.epoch_losses, start=1):
            r = evals.get(i)
            rows.append([i, repr(loss)] + ([r.tp, r.fp, r.fn] if r else ["", "", ""]))
        return rows

    def write(self, path: str | os.PathLike) -> None:
        """CSV of epoch, loss, tp, fp, fn plus a ``.meta.json`` run header beside it."""
        import csv

        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "tp", "fp", "fn"])
            writer.writerows(self.rows())
        meta = run_header(self.config)
        meta["checkpoints"] = [Path(c).name for c in self.checkpoints]
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def run_header(config: dict) -> dict:
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]
    return {
        "version": __version__,
        "seed": config.get("seed"),
        "config_hash": digest,
        "config": config,
    }


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def save_agent(agent: Agent, path: str | os.PathLike, config: TrainConfig, epoch: int) -> None:
    networks = {"zoom": (agent.zoom_net, agent.zoom_adam)}
    if agent.refine_net is not None:
        networks["refine"] = (agent.refine_net, agent.refine_adam)
    save_checkpoint(
        path,
        networks,
        {
            "variant": agent.variant.value,
            "grid": agent.extractor.grid,
            "epoch": epoch,
            "config": config.recorded(),
        },
    )


def train(
    config: TrainConfig,
    train_set: Sequence,
    test_set: Sequence | None = None,
    agent: Agent | None = None,
) -> TrainReport:
    """Run ``config.epochs`` passes over ``train_set``, evaluating every ``eval_every`` epochs."""
    if not train_set:
        raise ValueError("training set is empty")
    start = time.perf_counter()
    root = np.random.SeedSequence(config.seed)
    net_seed, run_seed = root.spawn(2)
    first_epoch = 0
    if agent is None:
        agent = build_agent(config, net_seed)
        if config.init_from:
            first_epoch = load_weights(agent, config.init_from, config.lr)
    if config.start_epoch is not None:
        first_epoch = config.start_epoch
    rng = np.random.default_rng(run_seed)
    report = TrainReport(config=config.recorded())
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    samples = single_object(s for s in train_set if _usable(s))
    for epoch in range(config.epochs):
        eps = epsilon_at(first_epoch + epoch, config.epsilon_start, config.epsilon_step, config.epsilon_floor)
        zoom_losses: list[float] = []
        refine_losses: list[float] = []
        for sample in samples:
            ep = run_episode_train(sample.image, sample.box, agent, config, eps, rng)
            zoom_losses.extend(ep.zoom_losses)
            refine_losses.extend(ep.refine_losses)
        report.epoch_losses.append(_mean(zoom_losses))
        if agent.variant.two_stage:
            report.refine_losses.append(_mean(refine_losses))
        done = epoch + 1
        if test_set and done % config.eval_every == 0:
            record = evaluate(test_set, agent.nets, agent.variant, agent.extractor, epoch=done)
            report.evaluations.append(record)
            log.info("epoch %d: eps=%.2f loss=%.4g TP=%d FP=%d FN=%d", done, eps,
                     report.epoch_losses[-1], record.tp, record.fp, record.fn)
            if out_dir is not None:
                path = out_dir / f"checkpoint-{done:04d}.bzq"
                save_agent(agent, path, config, first_epoch + done)
                report.checkpoints.append(str(path))
        else:
            log.debug("epoch %d: eps=%.2f loss=%.4g", done, eps, report.epoch_losses[-1])

    if out_dir is not None:
        final = out_dir / "final.bzq"
        save_agent(agent, final, config, first_epoch + config.epochs)
        report.checkpoints.append(str(final))
        report.write(out_dir / "report.csv")
    report.wall_clock = time.perf_counter() - start
    report.agent = agent
    return report


def _usable(sample) -> bool:
    box = sample.box
    size = image_size(sample.image)
    if not box.inside(size) or box.width <= 0 or box.height <= 0:
        log.warning("skipping %s: ground truth %r is malformed", sample.id, box)
        return False
    return True
