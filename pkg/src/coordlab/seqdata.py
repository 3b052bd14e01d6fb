"""Tensor assembly for sequence models over stored trajectories.

Chunks are materialized once into memory (observations come from replaying
the stored actions, so a chunk that starts mid-episode still sees the true
mid-episode observations) and then collated into padded (L, B, ...) batches
with a step mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .kitchen import ACTION_INDEX, observe
from .rl import BcBatch
from .trajdata import DatasetManifest, Trajectory, chunk


def trajectory_tensors(traj: Trajectory, focal: int):
    """(obs (T,C,H,W) float32, focal actions (T,), other actions (T,))."""
    states = traj.replay()
    obs = np.stack([observe(s, focal) for s in states[:-1]])
    a = np.array([ACTION_INDEX[step[focal]] for step in traj.actions], dtype=np.int64)
    b = np.array([ACTION_INDEX[step[1 - focal]] for step in traj.actions], dtype=np.int64)
    return torch.from_numpy(obs), torch.from_numpy(a), torch.from_numpy(b)


@dataclass
class ChunkItem:
    obs: torch.Tensor  # (n, C, H, W)
    actions_focal: torch.Tensor  # (n,)
    actions_other: torch.Tensor  # (n,)
    starts_at_t0: bool
    prev_action: int  # focal action before the window; -1 when none exists
    source: dict


class ChunkBatch:
    """Padded collation: obs (L,B,C,H,W), focal/other actions (L,B), mask
    (L,B) with 1.0 on real steps, prev_action (B,), starts_at_t0 (B,)."""

    def __init__(self, obs, actions_focal, actions_other, mask, prev_action, starts_at_t0):
        self.obs = obs
        self.actions_focal = actions_focal
        self.actions_other = actions_other
        self.mask = mask
        self.prev_action = prev_action
        self.starts_at_t0 = starts_at_t0

    @property
    def n_chunks(self) -> int:
        return self.obs.shape[1]

    @property
    def n_steps(self) -> float:
        return float(self.mask.sum())

    def to(self, dtype) -> "ChunkBatch":
        return ChunkBatch(self.obs.to(dtype), self.actions_focal, self.actions_other,
                          self.mask.to(dtype), self.prev_action, self.starts_at_t0)


def collate(items) -> ChunkBatch:
    max_len = max(it.obs.shape[0] for it in items)
    b = len(items)
    c, h, w = items[0].obs.shape[1:]
    obs = torch.zeros(max_len, b, c, h, w)
    af = torch.zeros(max_len, b, dtype=torch.int64)
    ao = torch.zeros(max_len, b, dtype=torch.int64)
    mask = torch.zeros(max_len, b)
    prev = torch.full((b,), -1, dtype=torch.int64)
    starts = torch.zeros(b, dtype=torch.bool)
    for i, it in enumerate(items):
        n = it.obs.shape[0]
        obs[:n, i] = it.obs
        af[:n, i] = it.actions_focal
        ao[:n, i] = it.actions_other
        mask[:n, i] = 1.0
        prev[i] = it.prev_action
        starts[i] = it.starts_at_t0
    return ChunkBatch(obs, af, ao, mask, prev, starts)


def load_chunks(manifest: DatasetManifest, part: str | None = None, focal_seats=(0, 1),
                chunk_length: int | None = None) -> list:
    """Materialize every (trajectory, focal seat, window) as a ChunkItem.

    A joint trajectory contributes one sequence per focal seat unless its
    focal_seat field pins one."""
    length = chunk_length or manifest.chunk_length
    items = []
    for idx in manifest.indices(part):
        traj = manifest.load_trajectory(idx)
        seats = (traj.focal_seat,) if traj.focal_seat is not None else tuple(focal_seats)
        for seat in seats:
            obs, a, b = trajectory_tensors(traj, seat)
            for piece in chunk(traj, length):
                lo, n = piece.start, piece.length
                items.append(
                    ChunkItem(
                        obs=obs[lo : lo + n],
                        actions_focal=a[lo : lo + n],
                        actions_other=b[lo : lo + n],
                        starts_at_t0=piece.starts_at_t0,
                        prev_action=int(a[lo - 1]) if lo > 0 else -1,
                        source={"trajectory": idx, "seat": seat, "start": lo,
                                **traj.source},
                    )
                )
    return items


def batch_iter(items, batch_size: int = 32, shuffle_seed: int | None = None):
    order = np.arange(len(items))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(items))
    for lo in range(0, len(items), batch_size):
        yield collate([items[i] for i in order[lo : lo + batch_size]])


def bc_batches_from_manifest(manifest: DatasetManifest, layout, focal_seats=(0, 1),
                             part: str | None = None, chunk_length: int | None = None,
                             batch_size: int = 32):
    """BC view of a dataset: the focal seat's actions as labels."""
    items = load_chunks(manifest, part=part, focal_seats=focal_seats,
                        chunk_length=chunk_length)
    for cb in batch_iter(items, batch_size=batch_size):
        yield BcBatch(obs=cb.obs, actions=cb.actions_focal, mask=cb.mask)
