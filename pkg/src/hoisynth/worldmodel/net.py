"""Attention dynamics network mapping (object history, control vertices) to a forecast."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..determinism import single_thread
from ..errors import DivergenceError, HoiError
from ..geometry import RigidTransform, orthonormalize, rotation_6d, rotation_from_6d
from .controls import ControlSet
from .state import ObjectStateSeq

log = logging.getLogger(__name__)

STATE_DIM = 9  # translation + 6D rotation
FRAME_FEATURES = 7  # position, surface distance, relative velocity
_MAGIC = b"HOIDYNET"
_VERSION = 1
_HEADER = struct.Struct("<8sII")


class UntrainedNetError(HoiError):
    pass


def encode_segment(prev: ObjectStateSeq, controls: ControlSet) -> tuple[np.ndarray, np.ndarray]:
    """Inputs expressed in the frame of the last history pose.

    Returns the flattened state (H*9,) and one token per control (N, T*7 + 3).
    """
    last = prev[-1]
    r_t = last.rotation.T
    state = np.concatenate([
        np.concatenate([r_t @ (f.translation - last.translation), rotation_6d(r_t @ f.rotation)])
        for f in prev.frames
    ])
    n = controls.n
    pos = (controls.trajectories - last.translation) @ last.rotation  # (T, N, 3)
    vel = controls.rel_velocity @ last.rotation
    per_frame = np.concatenate([pos, controls.surface_dist[..., None], vel], axis=2)  # (T, N, 7)
    tokens = np.concatenate([per_frame.transpose(1, 0, 2).reshape(n, controls.n_frames * FRAME_FEATURES), controls.tpose_xyz], axis=1)
    return state, tokens


def encode_target(prev: ObjectStateSeq, nxt: ObjectStateSeq) -> np.ndarray:
    last = prev[-1]
    r_t = last.rotation.T
    return np.concatenate([
        np.concatenate([r_t @ (f.translation - last.translation), rotation_6d(r_t @ f.rotation)])
        for f in nxt.frames
    ])


def decode_output(prev: ObjectStateSeq, out: np.ndarray) -> ObjectStateSeq:
    last = prev[-1]
    frames = []
    for row in np.asarray(out, dtype=np.float64).reshape(-1, STATE_DIM):
        rel = orthonormalize(rotation_from_6d(row[3:]))
        frames.append(RigidTransform(orthonormalize(last.rotation @ rel), last.translation + last.rotation @ row[:3]))
    return ObjectStateSeq(tuple(frames), prev.frame_rate)


class _Mlp(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x):
        return self.net(x)


class DynamicsBlock(nn.Module):
    """State mapper, per-vertex mapper, then cross-attention in both directions."""

    def __init__(self, dim: int):
        super().__init__()
        self.state_mlp = _Mlp(dim)
        self.vertex_mlp = _Mlp(dim)
        self.norm_s = nn.LayerNorm(dim)
        self.norm_v = nn.LayerNorm(dim)
        self.state_from_vertices = nn.MultiheadAttention(dim, 1, batch_first=True)
        self.vertices_from_state = nn.MultiheadAttention(dim, 1, batch_first=True)

    def forward(self, x, y, pad_mask):
        x = x + self.state_mlp(x)
        y = y + self.vertex_mlp(y)
        xs, ys = self.norm_s(x), self.norm_v(y)
        x_new = x + self.state_from_vertices(xs, ys, ys, key_padding_mask=pad_mask, need_weights=False)[0]
        y_new = y + self.vertices_from_state(ys, xs, xs, need_weights=False)[0]
        return x_new, y_new


class DynamicsNet(nn.Module):
    def __init__(self, history: int, future: int, latent: int = 64, blocks: int = 2):
        super().__init__()
        self.history, self.future, self.latent, self.n_blocks = history, future, latent, blocks
        s_in = history * STATE_DIM
        v_in = (history + future) * FRAME_FEATURES + 3
        out = future * STATE_DIM
        self.state_in = nn.Linear(s_in, latent)
        self.vertex_in = nn.Linear(v_in, latent)
        self.null_token = nn.Parameter(torch.randn(latent) * 0.02)
        self.blocks = nn.ModuleList(DynamicsBlock(latent) for _ in range(blocks))
        self.head = nn.Sequential(nn.LayerNorm(latent), nn.Linear(latent, out))
        nn.init.zeros_(self.head[1].weight)
        nn.init.zeros_(self.head[1].bias)
        for name, dim in (("state", s_in), ("vertex", v_in), ("target", out)):
            self.register_buffer(f"{name}_mean", torch.zeros(dim))
            self.register_buffer(f"{name}_std", torch.ones(dim))
        self.register_buffer("trained", torch.zeros(1))

    @property
    def is_trained(self) -> bool:
        return bool(self.trained.item() > 0)

    def forward(self, state, tokens, pad_mask):
        """Normalized prediction; ``pad_mask`` is True on padding slots of ``tokens``."""
        x = self.state_in((state - self.state_mean) / self.state_std)[:, None, :]
        y = self.vertex_in((tokens - self.vertex_mean) / self.vertex_std)
        empty = pad_mask.all(dim=1)
        if empty.any():
            # Contact-free samples attend to a single learned token instead.
            y = y.clone()
            y[empty, 0] = self.null_token
            pad_mask = pad_mask.clone()
            pad_mask[empty, 0] = False
        for block in self.blocks:
            x, y = block(x, y, pad_mask)
        return self.head(x[:, 0])

    def predict(self, state, tokens, pad_mask):
        return self(state, tokens, pad_mask) * self.target_std + self.target_mean


def _batch(items, dtype=torch.float32):
    states = torch.tensor(np.stack([s for s, _ in items]), dtype=dtype)
    n_max = max(1, max(t.shape[0] for _, t in items))
    dim = items[0][1].shape[1]
    tokens = np.zeros((len(items), n_max, dim))
    mask = np.ones((len(items), n_max), dtype=bool)
    for i, (_, t) in enumerate(items):
        tokens[i, : len(t)] = t
        mask[i, : len(t)] = False
    return states, torch.tensor(tokens, dtype=dtype), torch.tensor(mask)


def learned_step(net: DynamicsNet, prev: ObjectStateSeq, controls: ControlSet) -> ObjectStateSeq:
    if not net.is_trained:
        raise UntrainedNetError("dynamics net has not been trained")
    if len(prev) != net.history or controls.n_frames != net.history + net.future:
        raise ValueError(f"net expects {net.history} history and {net.future} forecast frames")
    state, tokens = encode_segment(prev, controls)
    s, t, m = _batch([(state, tokens)])
    with torch.no_grad(), single_thread():
        out = net.eval().predict(s, t, m)[0].double().numpy()
    return decode_output(prev, out)


@dataclass(frozen=True)
class DynamicsSample:
    prev: ObjectStateSeq
    controls: ControlSet
    next: ObjectStateSeq


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    optimizer: str = "sgd"
    latent: int = 64
    blocks: int = 2
    seed: int = 0


def _stats(x: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    return torch.tensor(mean, dtype=torch.float32), torch.tensor(std, dtype=torch.float32)


def train_dynamics(samples, history: int, future: int, config: TrainConfig = TrainConfig()):
    """Fit a DynamicsNet by minibatch MSE on normalized targets.

    Returns (net, final epoch loss, per-epoch losses). Deterministic for a fixed seed.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("training set is empty")
    encoded = [encode_segment(s.prev, s.controls) for s in samples]
    targets = np.stack([encode_target(s.prev, s.next) for s in samples])
    if any(len(s.prev) != history or s.controls.n_frames != history + future for s in samples):
        raise ValueError("sample horizons do not match the requested model")
    with single_thread():
        torch.manual_seed(config.seed)
        net = DynamicsNet(history, future, config.latent, config.blocks)
        states, tokens, mask = _batch(encoded)
        all_tokens = np.concatenate([t for _, t in encoded if len(t)], axis=0) if any(len(t) for _, t in encoded) \
            else np.zeros((1, tokens.shape[2]))
        net.state_mean, net.state_std = _stats(states.numpy().astype(np.float64))
        net.vertex_mean, net.vertex_std = _stats(all_tokens)
        net.target_mean, net.target_std = _stats(targets)
        y = (torch.tensor(targets, dtype=torch.float32) - net.target_mean) / net.target_std
        if config.optimizer == "sgd":
            opt = torch.optim.SGD(net.parameters(), lr=config.lr, momentum=config.momentum)
        elif config.optimizer == "adam":
            opt = torch.optim.Adam(net.parameters(), lr=config.lr)
        else:
            raise ValueError(f"unknown optimizer {config.optimizer!r}")
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, config.epochs))
        gen = torch.Generator().manual_seed(config.seed)
        n = len(samples)
        losses = []
        net.train()
        for epoch in range(config.epochs):
            order = torch.randperm(n, generator=gen)
            total = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                pred = net(states[idx], tokens[idx], mask[idx])
                loss = torch.mean((pred - y[idx]) ** 2)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"training loss is NaN at epoch {epoch}", losses)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            sched.step()
            losses.append(total / n)
            if epoch % 50 == 0 or epoch == config.epochs - 1:
                log.debug("epoch %d loss %.3e", epoch, losses[-1])
        net.trained.fill_(1.0)
        net.eval()
    return net, losses[-1] if losses else float("nan"), losses


# --- file format ------------------------------------------------------------


def save_net(net: DynamicsNet, path) -> None:
    state = net.state_dict()
    meta = {
        "history": net.history, "future": net.future, "latent": net.latent, "blocks": net.n_blocks,
        "tensors": [[k, list(v.shape)] for k, v in state.items()],
    }
    head = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = b"".join(v.detach().cpu().numpy().astype("<f4").tobytes() for v in state.values())
    Path(path).write_bytes(_HEADER.pack(_MAGIC, _VERSION, len(head)) + head + payload)


def load_net(path) -> DynamicsNet:
    blob = Path(path).read_bytes()
    magic, version, n_head = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a dynamics net file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported dynamics net version {version}")
    meta = json.loads(blob[_HEADER.size:_HEADER.size + n_head].decode("utf-8"))
    net = DynamicsNet(meta["history"], meta["future"], meta["latent"], meta["blocks"])
    offset = _HEADER.size + n_head
    state = {}
    for name, shape in meta["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[name] = torch.tensor(arr.copy())
        offset += 4 * count
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in dynamics net file")
    net.load_state_dict(state)
    return net.eval()
