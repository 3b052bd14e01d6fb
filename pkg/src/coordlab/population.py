"""Partner populations: staged self-play checkpoints, scripted zoos, PPO-BC.

The default recipe mirrors fictitious co-play: several self-play seeds, each
contributing checkpoints from early, middle and final training, flattened
into one registry of frozen partners.
"""

from __future__ import annotations

import fcntl
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .agents import CooperatorHandle, PartnerHandle, PolicyAgent, save_policy_net
from .errors import EmptyDatasetError, TrainingDivergedError
from .kitchen import observation_shape
from .nets import NetworkSpec, build_network
from .params import ParamSet
from .rl import PpoConfig, bc_update, collect_selfplay, collect_with_partner, ppo_update
from .rl import BcBatch
from .seqdata import batch_iter, load_chunks
from .trajdata import DatasetManifest

FCP_SEEDS = 8
FCP_CHECKPOINTS = 3
DEFAULT_CHECKPOINT_FRACTIONS = (0.1, 0.5, 1.0)


@dataclass
class Population:
    id: str
    layout_name: str
    members: list = field(default_factory=list)  # PartnerHandle

    def __post_init__(self):
        if any(m.layout_name != self.layout_name for m in self.members):
            raise ValueError("population members span multiple layouts")

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        registry = directory / "registry.json"
        lock = directory / ".registry.lock"
        with open(lock, "w") as lk:
            fcntl.flock(lk, fcntl.LOCK_EX)
            payload = {
                "id": self.id,
                "layout_name": self.layout_name,
                "members": [m.to_dict() for m in self.members],
            }
            tmp = registry.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
            tmp.replace(registry)

    @classmethod
    def load(cls, directory) -> "Population":
        payload = json.loads((Path(directory) / "registry.json").read_text())
        return cls(
            id=payload["id"],
            layout_name=payload["layout_name"],
            members=[PartnerHandle.from_dict(m) for m in payload["members"]],
        )

    def verify_hashes(self) -> None:
        for m in self.members:
            actual = m.compute_hash()
            if actual != m.content_hash:
                raise ValueError(f"member {m.id} hash changed: {m.content_hash} -> {actual}")


def small_policy_spec() -> NetworkSpec:
    """Desk-scale policy: one conv stage, small trunk. The full-scale
    default stays NetworkSpec()."""
    return NetworkSpec(conv_stages=((3, 8),), hidden_sizes=(32,), recurrent_size=32)


def train_selfplay(layout, cfg: PpoConfig, seed: int, net_spec: NetworkSpec | None = None,
                   checkpoint_fractions=DEFAULT_CHECKPOINT_FRACTIONS,
                   progress=None) -> list:
    """One self-play PPO run, both seats sharing parameters.

    Returns ParamSets captured after the configured fractions of training.
    On divergence the error carries the last good checkpoint.
    """
    spec = net_spec or NetworkSpec()
    torch.manual_seed(seed)
    net = build_network(spec, observation_shape(layout))
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)

    steps_per_iter = cfg.parallel_envs * layout.episode_length
    iterations = max(1, math.ceil(cfg.total_env_steps / steps_per_iter))
    capture_at = {}
    for frac in checkpoint_fractions:
        capture_at[max(1, round(frac * iterations))] = frac

    checkpoints = []
    env_steps = 0
    shaping_cutoff = cfg.shaping_fraction * cfg.total_env_steps
    for iteration in range(1, iterations + 1):
        iter_seed = int(torch.randint(0, 2**31 - 1, (1,)).item())
        weight = cfg.shaping_weight if env_steps < shaping_cutoff else 0.0
        batch, stats = collect_selfplay(
            layout, net, cfg.parallel_envs, cfg, seed=iter_seed, shaping_weight=weight
        )
        env_steps += stats.env_steps
        try:
            update_stats = ppo_update(net, batch, cfg, optimizer)
        except TrainingDivergedError as err:
            last = checkpoints[-1] if checkpoints else None
            raise TrainingDivergedError(str(err), checkpoint=last) from err
        if progress:
            progress(iteration, iterations, {**update_stats, "mean_reward": stats.mean_reward,
                                             "mean_shaped": stats.mean_shaped,
                                             "env_steps": env_steps})
        if iteration in capture_at:
            ps = ParamSet.from_module(
                net,
                meta={
                    "net_spec": spec.to_dict(),
                    "obs_shape": list(observation_shape(layout)),
                    "layout": layout.name,
                    "seed": seed,
                    "fraction": capture_at[iteration],
                    "iteration": iteration,
                    "env_steps": env_steps,
                },
            )
            checkpoints.append(ps)
    return checkpoints


def build_fcp_population(checkpoint_sets, population_id: str, out_dir) -> Population:
    """Flatten per-seed checkpoint lists into one registered population."""
    if not checkpoint_sets or not any(checkpoint_sets):
        raise ValueError("at least one checkpoint set required")
    layouts = {ps.meta["layout"] for cps in checkpoint_sets for ps in cps}
    if len(layouts) != 1:
        raise ValueError(f"mixed layouts in checkpoint sets: {sorted(layouts)}")
    layout_name = layouts.pop()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    members = []
    for s, cps in enumerate(checkpoint_sets):
        for c, ps in enumerate(cps):
            member_id = f"fcp-s{s}-c{c}"
            path = out_dir / f"{member_id}.params"
            ps.save(path)
            handle = PartnerHandle(
                id=member_id,
                kind="params",
                layout_name=layout_name,
                path=str(path),
                net_spec=ps.meta["net_spec"],
                provenance={
                    "source": "selfplay-checkpoint",
                    "seed": ps.meta["seed"],
                    "fraction": ps.meta["fraction"],
                    "env_steps": ps.meta["env_steps"],
                },
            )
            handle.content_hash = handle.compute_hash()
            members.append(handle)
    pop = Population(id=population_id, layout_name=layout_name, members=members)
    pop.save(out_dir)
    return pop


def train_bc_policy(layout, manifest: DatasetManifest, seed: int, epochs: int = 30,
                    lr: float = 5e-4, net_spec: NetworkSpec | None = None,
                    focal_seats=(0, 1), part: str | None = None, progress=None):
    """Fit a recurrent policy to recorded actions by maximum likelihood."""
    if manifest.n_trajectories == 0:
        raise EmptyDatasetError("behavior cloning needs a non-empty dataset")
    spec = net_spec or small_policy_spec()
    torch.manual_seed(seed)
    net = build_network(spec, observation_shape(layout))
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    items = load_chunks(manifest, part=part, focal_seats=focal_seats)
    final = None
    for epoch in range(epochs):
        total, steps = 0.0, 0
        for cb in batch_iter(items, shuffle_seed=seed * 1000 + epoch):
            batch = BcBatch(obs=cb.obs, actions=cb.actions_focal, mask=cb.mask)
            nll = bc_update(net, batch, optimizer)
            total += nll * batch.n_steps
            steps += batch.n_steps
        final = total / max(steps, 1)
        if progress:
            progress(epoch + 1, epochs, {"nll": final})
    return net, final


def train_vs_partner(layout, cfg: PpoConfig, seed: int, partner_factory,
                     net_spec: NetworkSpec | None = None, progress=None,
                     curve_logger=None):
    """PPO for one learner seat against frozen per-episode partners."""
    spec = net_spec or small_policy_spec()
    torch.manual_seed(seed + 1)
    net = build_network(spec, observation_shape(layout))
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    steps_per_iter = cfg.parallel_envs * layout.episode_length
    iterations = max(1, math.ceil(cfg.total_env_steps / steps_per_iter))
    env_steps = 0
    shaping_cutoff = cfg.shaping_fraction * cfg.total_env_steps
    for iteration in range(1, iterations + 1):
        iter_seed = int(torch.randint(0, 2**31 - 1, (1,)).item())
        weight = cfg.shaping_weight if env_steps < shaping_cutoff else 0.0
        batch, stats = collect_with_partner(
            layout, net, cfg.parallel_envs, cfg, seed=iter_seed,
            partner_factory=partner_factory, shaping_weight=weight,
        )
        env_steps += stats.env_steps
        update_stats = ppo_update(net, batch, cfg, optimizer)
        if progress:
            progress(iteration, iterations, {**update_stats, "mean_reward": stats.mean_reward,
                                             "env_steps": env_steps})
        if curve_logger is not None:
            curve_logger(env_steps, net)
    return net, env_steps


def train_ppo_bc(layout, human_manifest: DatasetManifest, cfg: PpoConfig, seed: int,
                 out_dir, bc_epochs: int = 30, net_spec: NetworkSpec | None = None,
                 progress=None) -> CooperatorHandle:
    """PPO against a frozen behavior-cloned partner fitted to the dataset."""
    if human_manifest.n_trajectories == 0:
        raise EmptyDatasetError("ppo-bc needs a non-empty human dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    bc_net, bc_nll = train_bc_policy(
        layout, human_manifest, seed=seed, epochs=bc_epochs, net_spec=net_spec
    )
    bc_net.eval()
    bc_path = out_dir / "bc-partner.params"
    save_policy_net(bc_net, bc_path, meta={"role": "bc-partner", "nll": bc_nll})

    def partner_factory(episode_seed, player):
        agent = PolicyAgent(bc_net)
        agent.begin_episode(layout, player, episode_seed)
        return agent

    net, env_steps = train_vs_partner(layout, cfg, seed, partner_factory,
                                      net_spec=net_spec, progress=progress)

    path = out_dir / "cooperator.params"
    save_policy_net(net, path, meta={"role": "cooperator"})
    handle = CooperatorHandle(
        id=f"ppo-bc-{layout.name}-s{seed}",
        layout_name=layout.name,
        path=str(path),
        provenance={
            "method": "ppo-bc",
            "seed": seed,
            "dataset": human_manifest.id,
            "dataset_hash": human_manifest.dataset_hash(),
            "bc_partner": str(bc_path),
            "bc_nll": bc_nll,
            "env_steps": env_steps,
        },
    )
    handle.content_hash = handle.compute_hash()
    handle.save(out_dir / "cooperator.json")
    return handle


def scripted_population(styles, layout_name: str, population_id: str = "scripted-zoo",
                        noise: float = 0.0) -> Population:
    from .scripted import ScriptedStyle, scripted_partner

    members = [scripted_partner(ScriptedStyle(s, noise), layout_name) for s in styles]
    return Population(id=population_id, layout_name=layout_name, members=members)
