"""Simulated evaluation: proxy partners, cross-play scores, latent exports.

A report is a set of (cooperator, partner) rows scored by seeded episode
rollouts. Human stand-ins are behavior-cloned policies fitted on held-out
data; any content overlap between that data and a cooperator's training
data aborts the report rather than producing a tainted number.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import PartnerHandle, PolicyAgent, save_policy_net
from .errors import DataOverlapError
from .kitchen import format_layout, get_layout, reset, step
from .nets import NetworkSpec
from .params import config_hash
from .population import train_bc_policy
from .trajdata import DatasetManifest, Trajectory
from .vae import VaeModel, encode

HEADLINE_MIN_SEEDS = 5


def standard_error(values) -> float:
    """Sample standard deviation over the square root of the count."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def play_episode(layout, agent_a, agent_b, seed: int, source=None) -> Trajectory:
    """One full seeded episode; returns the replayable record."""
    agent_a.begin_episode(layout, 0, 2 * seed)
    agent_b.begin_episode(layout, 1, 2 * seed + 1)
    state = reset(layout, seed)
    actions, rewards = [], []
    for _ in range(layout.episode_length):
        pair = (agent_a.act(state), agent_b.act(state))
        state, r, _ = step(state, *pair)
        actions.append(pair)
        rewards.append(r)
    return Trajectory(layout_text=format_layout(layout), seed=seed,
                      actions=actions, rewards=rewards, source=dict(source or {}))


def cross_play(cooperator, partner, layout, n_seeds: int = 5, base_seed: int = 0):
    """Mean true reward and standard error over independent seeded episodes,
    cooperator on seat 0 and partner on seat 1."""
    for handle in (cooperator, partner):
        if handle.layout_name != layout.name:
            raise ValueError(
                f"{handle.id} is for layout {handle.layout_name!r}, not {layout.name!r}"
            )
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    scores = [
        play_episode(layout, cooperator.make_agent(), partner.make_agent(),
                     seed=base_seed + k).score
        for k in range(n_seeds)
    ]
    return float(np.mean(scores)), standard_error(scores)


def train_proxy(manifest: DatasetManifest, layout, out_dir, training_hashes=(),
                seed: int = 0, epochs: int = 30, lr: float = 5e-4,
                net_spec: NetworkSpec | None = None) -> PartnerHandle:
    """Behavior-cloned human stand-in from held-out data.

    Refuses to build a proxy whose data intersects the training corpus."""
    overlap = set(manifest.content_hashes) & set(training_hashes)
    if overlap:
        raise DataOverlapError(overlap)
    net, nll = train_bc_policy(layout, manifest, seed=seed, epochs=epochs, lr=lr,
                               net_spec=net_spec)
    net.eval()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "proxy.params"
    save_policy_net(net, path, meta={"role": "bc-proxy", "nll": nll})
    handle = PartnerHandle(
        id=f"bc-proxy-{manifest.id}-s{seed}",
        kind="params",
        layout_name=layout.name,
        path=str(path),
        net_spec=(net_spec.to_dict() if net_spec else None),
        provenance={
            "source": "bc-proxy",
            "dataset": manifest.id,
            "dataset_hash": manifest.dataset_hash(),
            "nll": nll,
            "seed": seed,
        },
    )
    handle.content_hash = handle.compute_hash()
    return handle


@dataclass
class EvalRow:
    cooperator_id: str
    partner_id: str
    layout_name: str
    n_seeds: int
    mean_reward: float
    se: float
    normalized: float | None = None
    tags: list = field(default_factory=list)


@dataclass
class EvalReport:
    rows: list
    config_hash: str
    base_seed: int
    normalization: dict = field(default_factory=dict)  # layout -> {max_mean, degenerate}

    COLUMNS = ("cooperator", "partner", "layout", "n_seeds", "mean_reward",
               "se", "normalized", "tags")

    def to_text(self) -> str:
        lines = [
            "# coordlab eval report",
            f"# config_hash: {self.config_hash}",
            f"# base_seed: {self.base_seed}",
            f"# normalization: {json.dumps(self.normalization, sort_keys=True)}",
            "\t".join(self.COLUMNS),
        ]
        for r in self.rows:
            norm = "-" if r.normalized is None else f"{r.normalized:.10g}"
            lines.append("\t".join([
                r.cooperator_id, r.partner_id, r.layout_name, str(r.n_seeds),
                f"{r.mean_reward:.10g}", f"{r.se:.10g}", norm,
                ",".join(r.tags) or "-",
            ]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        meta, rows = {}, []
        for line in text.strip("\n").split("\n"):
            if line.startswith("# ") and ":" in line:
                key, _, value = line[2:].partition(":")
                meta[key.strip()] = value.strip()
            elif line and not line.startswith("#") and not line.startswith("cooperator\t"):
                c, p, lay, n, mean, se, norm, tags = line.split("\t")
                rows.append(EvalRow(
                    cooperator_id=c, partner_id=p, layout_name=lay, n_seeds=int(n),
                    mean_reward=float(mean), se=float(se),
                    normalized=None if norm == "-" else float(norm),
                    tags=[] if tags == "-" else tags.split(","),
                ))
        return cls(rows=rows, config_hash=meta.get("config_hash", ""),
                   base_seed=int(meta.get("base_seed", 0)),
                   normalization=json.loads(meta.get("normalization", "{}")))


def cooperator_training_hashes(handle) -> set:
    """Per-trajectory content hashes of everything the cooperator trained on.

    Aggregates dataset directories named in provenance; unknown or missing
    directories contribute their recorded aggregate hash so overlap checks
    stay conservative."""
    hashes = set()
    prov = handle.provenance
    for key in ("dataset_dir", "human_dataset_dir"):
        directory = prov.get(key)
        if directory and (Path(directory) / "manifest.json").exists():
            hashes.update(DatasetManifest.load(directory).content_hashes)
    for key, value in prov.items():
        if key.endswith("dataset_hash") and value:
            hashes.add(value)
    return hashes


def build_report(cooperators, partners, layout, n_seeds: int = 5, base_seed: int = 0,
                 proxy_manifest: DatasetManifest | None = None) -> EvalReport:
    """Cross-play every cooperator with every partner on one layout."""
    if n_seeds < HEADLINE_MIN_SEEDS:
        raise ValueError(
            f"headline reports need n_seeds >= {HEADLINE_MIN_SEEDS}, got {n_seeds}"
        )
    if proxy_manifest is not None:
        proxy_hashes = set(proxy_manifest.content_hashes)
        proxy_hashes.add(proxy_manifest.dataset_hash())
        for coop in cooperators:
            overlap = proxy_hashes & cooperator_training_hashes(coop)
            if overlap:
                raise DataOverlapError(overlap)

    rows = []
    for coop in cooperators:
        for partner in partners:
            mean, se = cross_play(coop, partner, layout, n_seeds=n_seeds,
                                  base_seed=base_seed)
            tags = []
            if coop.provenance.get("method") == "ppo-bc" and \
                    partner.provenance.get("source") == "bc-proxy":
                tags.append("proxy-exploitable")
            rows.append(EvalRow(
                cooperator_id=coop.id, partner_id=partner.id,
                layout_name=layout.name, n_seeds=n_seeds,
                mean_reward=mean, se=se, tags=tags,
            ))
    digest = config_hash({
        "layout": layout.name,
        "n_seeds": n_seeds,
        "base_seed": base_seed,
        "cooperators": [c.content_hash for c in cooperators],
        "partners": [p.content_hash for p in partners],
    })
    return EvalReport(rows=rows, config_hash=digest, base_seed=base_seed)


def normalize(report: EvalReport) -> EvalReport:
    """Divide each row's mean by its layout's best mean; flags layouts whose
    best mean is not positive instead of dividing by it."""
    best = {}
    for r in report.rows:
        best[r.layout_name] = max(best.get(r.layout_name, -math.inf), r.mean_reward)
    normalization = {}
    rows = []
    for r in report.rows:
        top = best[r.layout_name]
        degenerate = top <= 0
        normalization[r.layout_name] = {"max_mean": top, "degenerate": degenerate}
        value = 0.0 if degenerate else r.mean_reward / top
        rows.append(EvalRow(
            cooperator_id=r.cooperator_id, partner_id=r.partner_id,
            layout_name=r.layout_name, n_seeds=r.n_seeds,
            mean_reward=r.mean_reward, se=r.se, normalized=value,
            tags=list(r.tags),
        ))
    return EvalReport(rows=rows, config_hash=report.config_hash,
                      base_seed=report.base_seed, normalization=normalization)


@dataclass
class LatentExport:
    labels: list
    latents: np.ndarray  # (n, latent_dim)
    projection: np.ndarray  # (n, 2)
    path: str


def _principal_plane(latents: np.ndarray) -> np.ndarray:
    """Top-two principal components with a sign convention (the entry of
    largest magnitude in each component is positive)."""
    centered = latents - latents.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = np.zeros((2, latents.shape[1]))
    for i in range(min(2, vt.shape[0])):
        comp = vt[i]
        if comp[np.argmax(np.abs(comp))] < 0:
            comp = -comp
        components[i] = comp
    return centered @ components.T


def export_latents(vae: VaeModel, source, n_per_source: int, out_path,
                   seed: int = 0) -> LatentExport:
    """Embed behavior: sample each member, roll a self-play episode, encode
    it; stored datasets are encoded directly with their per-seat labels."""
    layout = get_layout(vae.layout_name)
    labels, latents = [], []
    if isinstance(source, DatasetManifest):
        for i in range(source.n_trajectories):
            traj = source.load_trajectory(i)
            seats = (traj.focal_seat,) if traj.focal_seat is not None else (0, 1)
            for seat in seats:
                key = "a" if seat == 0 else "b"
                labels.append(str(traj.source.get(key, traj.source.get("kind", "unknown"))))
                latents.append(encode(vae, traj, focal=seat).mean)
    else:
        for m, member in enumerate(source.members):
            if member.layout_name != layout.name:
                raise ValueError(f"member {member.id} is not a {layout.name} partner")
            for k in range(n_per_source):
                episode_seed = int(
                    np.random.default_rng([seed, m, k]).integers(0, 2**31 - 1)
                )
                traj = play_episode(layout, member.make_agent(), member.make_agent(),
                                    seed=episode_seed)
                labels.append(member.id)
                latents.append(encode(vae, traj, focal=0).mean)

    latents = np.stack([np.asarray(z, dtype=np.float64) for z in latents])
    projection = _principal_plane(latents)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    dim = latents.shape[1]
    header = ["label"] + [f"z{i}" for i in range(dim)] + ["pc0", "pc1"]
    lines = [
        "# coordlab latent export",
        f"# vae_encoder: {vae.encoder_hash()}",
        f"# seed: {seed}",
        "\t".join(header),
    ]
    for label, z, p in zip(labels, latents, projection):
        cells = [label] + [f"{v:.10g}" for v in z] + [f"{v:.10g}" for v in p]
        lines.append("\t".join(cells))
    out_path.write_text("\n".join(lines) + "\n")
    return LatentExport(labels=labels, latents=latents, projection=projection,
                        path=str(out_path))


class LearningCurveLogger:
    """Evaluates a training policy against a fixed proxy at checkpoints and
    appends (env_steps, mean, se) rows to a curve file."""

    def __init__(self, proxy, layout, out_path, n_seeds: int = 5, base_seed: int = 0):
        self.proxy = proxy
        self.layout = layout
        self.out_path = Path(out_path)
        self.n_seeds = n_seeds
        self.base_seed = base_seed
        self.rows = []

    def __call__(self, env_steps: int, net) -> None:
        if self.rows and env_steps <= self.rows[-1][0]:
            raise ValueError(
                f"env_steps must increase: {self.rows[-1][0]} then {env_steps}"
            )
        scores = [
            play_episode(self.layout, PolicyAgent(net), self.proxy.make_agent(),
                         seed=self.base_seed + k).score
            for k in range(self.n_seeds)
        ]
        self.rows.append((int(env_steps), float(np.mean(scores)),
                          standard_error(scores)))
        self._write()

    def _write(self) -> None:
        lines = [
            "# coordlab learning curve",
            f"# partner: {self.proxy.id}",
            f"# n_seeds: {self.n_seeds}",
            f"# base_seed: {self.base_seed}",
            "env_steps\tmean_reward\tse",
        ]
        for steps, mean, se in self.rows:
            lines.append(f"{steps}\t{mean:.10g}\t{se:.10g}")
        self.out_path.parent.mkdir(parents=True, exist_ok=True)
        self.out_path.write_text("\n".join(lines) + "\n")
