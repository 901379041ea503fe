"""Q-network (plain numpy MLP), Adam, experience replay and the Q-learning update."""

from __future__ import annotations

import json
import os
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

INIT_STD = 0.01
DROPOUT = 0.2


class QNetwork:
    """Fully connected ReLU network mapping a state vector to one Q-value per action.

    Layout: ``input -> [linear -> ReLU -> dropout] * len(hidden) -> linear``.
    Dropout is inverted (survivors scaled by ``1 / (1 - p)``) and only active
    in training forwards.
    """

    def __init__(
        self,
        input_dim: int,
        output_dim: int,
        hidden: Sequence[int] = (1024, 1024),
        dropout: float = DROPOUT,
        seed: int | None = 0,
        init_std: float = INIT_STD,
    ) -> None:
        dims = [int(input_dim), *map(int, hidden), int(output_dim)]
        if any(d <= 0 for d in dims):
            raise ValueError(f"layer sizes must be positive, got {dims}")
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {dropout}")
        self.input_dim = dims[0]
        self.output_dim = dims[-1]
        self.hidden = tuple(dims[1:-1])
        self.dropout = float(dropout)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:]), start=1):
            self.params[f"W{i}"] = rng.normal(0.0, init_std, size=(fan_in, fan_out))
            self.params[f"b{i}"] = np.zeros(fan_out)

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def copy(self) -> "QNetwork":
        clone = QNetwork.__new__(QNetwork)
        clone.__dict__.update(self.__dict__)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    def dropout_masks(self, batch: int, rng: np.random.Generator) -> list[np.ndarray]:
        keep = 1.0 - self.dropout
        return [
            (rng.random((batch, h)) < keep) / keep for h in self.hidden
        ]

    def _forward(self, x: np.ndarray, masks: list[np.ndarray] | None):
        activations = [x]
        pre = []
        h = x
        for i in range(1, self.n_layers):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            pre.append(z)
            h = np.maximum(z, 0.0)
            if masks is not None:
                h = h * masks[i - 1]
            activations.append(h)
        out = h @ self.params[f"W{self.n_layers}"] + self.params[f"b{self.n_layers}"]
        return out, (activations, pre, masks)

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
        masks: list[np.ndarray] | None = None,
    ) -> np.ndarray:
        """Q-values for a single state ``(input_dim,)`` or a batch ``(n, input_dim)``."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.ndim != 2 or xb.shape[1] != self.input_dim:
            raise ValueError(f"expected input of length {self.input_dim}, got shape {x.shape}")
        if train and masks is None and self.dropout > 0.0:
            if rng is None:
                raise ValueError("training forward with dropout needs an rng")
            masks = self.dropout_masks(xb.shape[0], rng)
        out, _ = self._forward(xb, masks if train else None)
        return out[0] if single else out

    def loss_and_grads(
        self,
        states: np.ndarray,
        actions: np.ndarray,
        targets: np.ndarray,
        masks: list[np.ndarray] | None = None,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean squared error on the taken actions' Q-values, and its parameter gradients."""
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.intp)
        n = states.shape[0]
        out, (activations, pre, masks) = self._forward(states, masks)
        rows = np.arange(n)
        err = out[rows, actions] - targets
        loss = float(np.mean(err**2))

        grads: dict[str, np.ndarray] = {}
        delta = np.zeros_like(out)
        delta[rows, actions] = 2.0 * err / n
        for i in range(self.n_layers, 0, -1):
            grads[f"W{i}"] = activations[i - 1].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i == 1:
                break
            delta = delta @ self.params[f"W{i}"].T
            if masks is not None:
                delta = delta * masks[i - 2]
            delta = delta * (pre[i - 2] > 0.0)
        return loss, grads


def init_network(dims: Sequence[int], rng_seed: int, **kwargs) -> QNetwork:
    """Build a network from ``(input_dim, *hidden, output_dim)``."""
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError("need at least input and output sizes")
    return QNetwork(dims[0], dims[-1], hidden=dims[1:-1], seed=rng_seed, **kwargs)


class Adam:
    """Adam optimizer state for one parameter dictionary."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 1e-6,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Rolling buffer of experiences with uniform sampling without replacement."""

    def __init__(self, capacity: int = 1000, batch_size: int = 100) -> None:
        if capacity < 1 or batch_size < 1:
            raise ValueError("capacity and batch size must be positive")
        self.capacity = capacity
        self.batch_size = batch_size
        self._items: deque[Experience] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i: int) -> Experience:
        return self._items[i]

    def push(self, exp: Experience) -> None:
        self._items.append(exp)

    def sample(self, rng: np.random.Generator, n: int | None = None) -> list[Experience]:
        n = self.batch_size if n is None else n
        k = min(n, len(self._items))
        if k == 0:
            return []
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]


def bellman_targets(net: QNetwork, batch: Sequence[Experience], gamma: float) -> np.ndarray:
    rewards = np.array([e.reward for e in batch], dtype=np.float64)
    terminal = np.array([e.terminal for e in batch], dtype=bool)
    next_q = net.forward(np.stack([e.next_state for e in batch]), train=False)
    return rewards + np.where(terminal, 0.0, gamma * next_q.max(axis=1))


def q_update(
    net: QNetwork,
    adam: Adam,
    batch: Sequence[Experience],
    gamma: float = 0.9,
    rng: np.random.Generator | None = None,
) -> float:
    """One Adam step on the squared Bellman error of ``batch``; returns the pre-step loss.

    Bootstrap targets come from a dropout-free forward of the same network.
    """
    if not batch:
        raise ValueError("empty batch")
    targets = bellman_targets(net, batch, gamma)
    states = np.stack([e.state for e in batch])
    actions = np.array([e.action for e in batch], dtype=np.intp)
    masks = None
    if net.dropout > 0.0:
        if rng is None:
            raise ValueError("q_update with dropout needs an rng")
        masks = net.dropout_masks(len(batch), rng)
    loss, grads = net.loss_and_grads(states, actions, targets, masks)
    adam.step(net.params, grads)
    return loss


def select_action(
    net: QNetwork, state: np.ndarray, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy choice; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(net.output_dim))
    return int(np.argmax(net.forward(state, train=False)))


# --- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"BZQN"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | os.PathLike,
    networks: dict[str, tuple[QNetwork, Adam | None]],
    metadata: dict | None = None,
) -> None:
    """Write networks, their Adam states and free-form metadata.

    Layout: magic, version (uint32), header length (uint32), JSON header,
    then every array as little-endian float64 in header order.
    """
    header: dict = {"metadata": metadata or {}, "networks": {}}
    blobs: list[bytes] = []
    # blobs follow the sorted-key order in which the JSON header is read back
    for name, (net, adam) in sorted(networks.items()):
        arrays = {f"param/{k}": v for k, v in net.params.items()}
        entry = {
            "input_dim": net.input_dim,
            "output_dim": net.output_dim,
            "hidden": list(net.hidden),
            "dropout": net.dropout,
            "arrays": [],
            "adam": None,
        }
        if adam is not None:
            entry["adam"] = {
                "lr": adam.lr,
                "beta1": adam.beta1,
                "beta2": adam.beta2,
                "eps": adam.eps,
                "t": adam.t,
            }
            arrays.update({f"m/{k}": v for k, v in adam.m.items()})
            arrays.update({f"v/{k}": v for k, v in adam.v.items()})
        for key, arr in arrays.items():
            entry["arrays"].append([key, list(arr.shape)])
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        header["networks"][name] = entry
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(
    path: str | os.PathLike,
) -> tuple[dict[str, tuple[QNetwork, Adam | None]], dict]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    version, head_len = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[12 : 12 + head_len])
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt checkpoint header") from None
    pos = 12 + head_len
    networks = {}
    for name, entry in header["networks"].items():
        net = QNetwork(
            entry["input_dim"],
            entry["output_dim"],
            hidden=entry["hidden"],
            dropout=entry["dropout"],
            seed=0,
        )
        arrays = {}
        for key, shape in entry["arrays"]:
            count = int(np.prod(shape))
            chunk = data[pos : pos + 8 * count]
            if len(chunk) != 8 * count:
                raise CheckpointError(f"{path}: truncated array {name}/{key}")
            arrays[key] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
            pos += 8 * count
        net.params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
        adam = None
        if entry["adam"] is not None:
            a = entry["adam"]
            adam = Adam(net.params, lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
            adam.t = a["t"]
            adam.m = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("m/")}
            adam.v = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("v/")}
        networks[name] = (net, adam)
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return networks, header["metadata"]
