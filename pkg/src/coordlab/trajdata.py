"""Trajectory datasets: generation, storage, splitting, chunking, import.

A trajectory file is self-contained: a JSON header line carrying the layout
text, seed, source tags and totals, followed by one `t a b r` line per step.
Observations are never stored; replaying the actions through the engine
reconstructs them, and every load path replay-validates rewards.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, ReplayMismatchError
from .kitchen import ACTION_INDEX, format_layout, parse_layout, reset, step

TRAJ_SUFFIX = ".traj"


@dataclass
class Trajectory:
    layout_text: str  # full layout block; self-contained replay
    seed: int
    actions: list  # [(a_name, b_name), ...]
    rewards: list  # true reward per step
    source: dict = field(default_factory=dict)  # {"a": id, "b": id} or {"kind": "human", ...}
    focal_seat: int | None = None  # None: either seat may be modeled

    def __post_init__(self):
        self._layout = parse_layout(self.layout_text)
        if len(self.actions) != len(self.rewards):
            raise ValueError("actions and rewards must have equal length")
        if len(self.actions) > self._layout.episode_length:
            raise ValueError(
                f"trajectory length {len(self.actions)} exceeds episode length "
                f"{self._layout.episode_length}"
            )

    @property
    def layout(self):
        return self._layout

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def score(self) -> float:
        return float(sum(self.rewards))

    def replay(self):
        """States visited (length T+1, including the start state)."""
        state = reset(self._layout, self.seed)
        states = [state]
        for t, (a, b) in enumerate(self.actions):
            state, r, _ = step(state, a, b)
            if r != self.rewards[t]:
                raise ReplayMismatchError(
                    f"reward mismatch: stored {self.rewards[t]} vs replayed {r}", step=t
                )
            states.append(state)
        return states

    def to_text(self) -> str:
        header = {
            "layout": self._layout.name,
            "layout_text": self.layout_text,
            "seed": self.seed,
            "length": self.length,
            "score": self.score,
            "source": self.source,
            "focal_seat": self.focal_seat,
        }
        lines = [json.dumps(header, sort_keys=True)]
        for t, ((a, b), r) in enumerate(zip(self.actions, self.rewards)):
            lines.append(f"{t} {a} {b} {r:.10g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Trajectory":
        lines = text.strip("\n").split("\n")
        header = json.loads(lines[0])
        actions, rewards = [], []
        for i, line in enumerate(lines[1:]):
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"malformed step line {i}: {line!r}")
            t, a, b, r = parts
            if int(t) != i:
                raise ValueError(f"step index out of order at line {i}: got {t}")
            if a not in ACTION_INDEX or b not in ACTION_INDEX:
                raise ValueError(f"unknown action at step {i}: {a!r}/{b!r}")
            actions.append((a, b))
            rewards.append(float(r))
        traj = cls(
            layout_text=header["layout_text"],
            seed=header["seed"],
            actions=actions,
            rewards=rewards,
            source=header.get("source", {}),
            focal_seat=header.get("focal_seat"),
        )
        if header["length"] != traj.length:
            raise ValueError(f"declared length {header['length']} != stored {traj.length}")
        if abs(header["score"] - traj.score) > 1e-9:
            raise ValueError(f"declared score {header['score']} != stored {traj.score}")
        return traj

    def save(self, path) -> str:
        data = self.to_text().encode("utf-8")
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path) -> "Trajectory":
        return cls.from_text(Path(path).read_text())


@dataclass
class Chunk:
    """A consecutive window of one trajectory."""

    trajectory: Trajectory
    start: int
    length: int

    @property
    def starts_at_t0(self) -> bool:
        return self.start == 0

    @property
    def context_flag(self) -> str:
        return "starts-at-t0" if self.starts_at_t0 else "continuation"


def chunk(trajectory: Trajectory, chunk_length: int = 100) -> list:
    """Non-overlapping windows; a short final remainder is kept."""
    if chunk_length < 1:
        raise ValueError(f"chunk_length must be >= 1, got {chunk_length}")
    out = []
    for start in range(0, trajectory.length, chunk_length):
        length = min(chunk_length, trajectory.length - start)
        out.append(Chunk(trajectory, start, length))
    return out


@dataclass
class DatasetManifest:
    id: str
    directory: str
    layout_name: str
    n_trajectories: int
    chunk_length: int = 100
    seed: int | None = None
    source_population: str | None = None
    split: dict = field(default_factory=dict)  # {"train": [...], "val": [...], "seed": int}
    content_hashes: list = field(default_factory=list)  # per trajectory index
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "layout_name": self.layout_name,
            "n_trajectories": self.n_trajectories,
            "chunk_length": self.chunk_length,
            "seed": self.seed,
            "source_population": self.source_population,
            "split": self.split,
            "content_hashes": self.content_hashes,
            "warnings": self.warnings,
        }

    def save(self) -> None:
        path = Path(self.directory) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "DatasetManifest":
        path = Path(directory) / "manifest.json"
        d = json.loads(path.read_text())
        return cls(directory=str(directory), **d)

    def trajectory_path(self, index: int) -> Path:
        return Path(self.directory) / "trajs" / f"{index:05d}{TRAJ_SUFFIX}"

    def load_trajectory(self, index: int) -> Trajectory:
        traj = Trajectory.load(self.trajectory_path(index))
        stored = self.content_hashes[index]
        actual = hashlib.sha256(self.trajectory_path(index).read_bytes()).hexdigest()
        if actual != stored:
            raise ValueError(f"trajectory {index} content hash mismatch")
        return traj

    def indices(self, part: str | None = None) -> list:
        if part is None:
            return list(range(self.n_trajectories))
        if not self.split:
            raise ValueError("dataset has no split; call split() first")
        return list(self.split[part])

    def dataset_hash(self) -> str:
        digest = hashlib.sha256()
        for h in self.content_hashes:
            digest.update(bytes.fromhex(h))
        return digest.hexdigest()


def pair_counts(n_members: int, n_trajectories: int) -> list:
    """Trajectories per ordered member pair: even share, remainder to the
    earliest pairs in (i, j) row-major order."""
    n_pairs = n_members * n_members
    base, rem = divmod(n_trajectories, n_pairs)
    return [base + (1 if k < rem else 0) for k in range(n_pairs)]


def rollout_pair(layout, agent_a, agent_b, env_seed: int, agent_seed: int,
                 source: dict | None = None) -> Trajectory:
    agent_a.begin_episode(layout, 0, agent_seed)
    agent_b.begin_episode(layout, 1, agent_seed + 1)
    state = reset(layout, env_seed)
    actions, rewards = [], []
    for _ in range(layout.episode_length):
        a = agent_a.act(state)
        b = agent_b.act(state)
        state, r, _ = step(state, a, b)
        actions.append((a, b))
        rewards.append(float(r))
    return Trajectory(
        layout_text=format_layout(layout),
        seed=env_seed,
        actions=actions,
        rewards=rewards,
        source=source or {},
    )


def _traj_seeds(master_seed: int, index: int):
    ss = np.random.SeedSequence([master_seed, index])
    env_seed, agent_seed = (int(x) for x in ss.generate_state(2))
    return env_seed, agent_seed


def _generate_one(job) -> tuple:
    from .agents import PartnerHandle

    index, layout_text, handle_a, handle_b, env_seed, agent_seed, source, out_path = job
    layout = parse_layout(layout_text)
    traj = rollout_pair(
        layout,
        PartnerHandle.from_dict(handle_a).make_agent(),
        PartnerHandle.from_dict(handle_b).make_agent(),
        env_seed,
        agent_seed,
        source=source,
    )
    return index, traj.save(out_path)


def generate_dataset(population, layout, n_trajectories: int, seed: int, out_dir,
                     dataset_id: str | None = None, workers: int = 1,
                     progress=None) -> DatasetManifest:
    """Roll trajectories from every ordered pair of population members.

    Pair k of the N*N row-major ordered pairs contributes pair_counts()[k]
    trajectories; per-trajectory seeds derive from (seed, global index) so
    any worker partitioning reproduces identical files.
    """
    members = population.members
    n = len(members)
    if n == 0:
        raise EmptyDatasetError("population has no members")
    out_dir = Path(out_dir)
    (out_dir / "trajs").mkdir(parents=True, exist_ok=True)

    counts = pair_counts(n, n_trajectories)
    warnings = []
    if n_trajectories < n * n:
        warnings.append(
            f"n_trajectories {n_trajectories} < {n * n} ordered pairs; "
            f"later pairs contribute no trajectories"
        )

    manifest = DatasetManifest(
        id=dataset_id or f"dataset-{layout.name}-s{seed}",
        directory=str(out_dir),
        layout_name=layout.name,
        n_trajectories=n_trajectories,
        seed=seed,
        source_population=getattr(population, "id", None),
        warnings=warnings,
    )

    layout_text = format_layout(layout)
    jobs = []
    index = 0
    for k, count in enumerate(counts):
        i, j = divmod(k, n)
        for _ in range(count):
            env_seed, agent_seed = _traj_seeds(seed, index)
            jobs.append(
                (
                    index,
                    layout_text,
                    members[i].to_dict(),
                    members[j].to_dict(),
                    env_seed,
                    agent_seed,
                    {"a": members[i].id, "b": members[j].id, "pair": [i, j]},
                    str(manifest.trajectory_path(index)),
                )
            )
            index += 1

    hashes = [None] * n_trajectories
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, digest in pool.map(_generate_one, jobs):
                hashes[idx] = digest
                if progress:
                    progress(idx + 1, n_trajectories)
    else:
        for job in jobs:
            idx, digest = _generate_one(job)
            hashes[idx] = digest
            if progress:
                progress(idx + 1, n_trajectories)
    manifest.content_hashes = hashes
    manifest.save()
    return manifest


def split(manifest: DatasetManifest, train_fraction: float = 0.7, seed: int = 0) -> DatasetManifest:
    """Seeded shuffle; the first ceil(fraction * n) go to train."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = manifest.n_trajectories
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(train_fraction * n)
    manifest.split = {
        "train": [int(i) for i in order[:n_train]],
        "val": [int(i) for i in order[n_train:]],
        "seed": seed,
        "train_fraction": train_fraction,
    }
    manifest.save()
    return manifest


def import_human(paths_or_dir, out_dir, dataset_id: str | None = None,
                 chunk_length: int = 100) -> DatasetManifest:
    """Validate recorded trajectory files and assemble a human dataset."""
    if isinstance(paths_or_dir, (str, Path)) and Path(paths_or_dir).is_dir():
        paths = sorted(Path(paths_or_dir).glob(f"*{TRAJ_SUFFIX}"))
    else:
        paths = [Path(p) for p in paths_or_dir]
    if not paths:
        raise EmptyDatasetError("no trajectory files to import")

    out_dir = Path(out_dir)
    (out_dir / "trajs").mkdir(parents=True, exist_ok=True)
    trajs = []
    layout_name = None
    for path in paths:
        traj = Trajectory.load(path)
        traj.replay()  # raises ReplayMismatchError with the step index
        traj.source = dict(traj.source)
        traj.source["kind"] = "human"
        if layout_name is None:
            layout_name = traj.layout.name
        elif traj.layout.name != layout_name:
            raise ValueError(
                f"mixed layouts in import: {layout_name} vs {traj.layout.name} ({path})"
            )
        trajs.append(traj)

    manifest = DatasetManifest(
        id=dataset_id or f"human-{layout_name}",
        directory=str(out_dir),
        layout_name=layout_name,
        n_trajectories=len(trajs),
        chunk_length=chunk_length,
    )
    manifest.content_hashes = [
        traj.save(manifest.trajectory_path(i)) for i, traj in enumerate(trajs)
    ]
    manifest.save()
    return manifest


def validate_dataset(manifest: DatasetManifest) -> None:
    """Replay every trajectory; raises on any inconsistency."""
    for i in range(manifest.n_trajectories):
        manifest.load_trajectory(i).replay()
