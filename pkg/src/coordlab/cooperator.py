"""Cooperator training against generative partners.

A Cooperator is a PPO policy whose training partner is the VAE decoder
conditioned on a fresh latent each episode. Sampling latents from the prior
covers the modeled population; centering the sampling distribution on a
human's estimated latent targets that human. The decoder can also be
fine-tuned on human data first, with an anchor penalty keeping its action
distributions near the pretrained model.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .agents import CooperatorHandle, save_policy_net
from .errors import EmptyDatasetError, TrainingDivergedError
from .nets import NetworkSpec
from .params import ParamSet, config_hash
from .rl import PpoConfig
from .seqdata import batch_iter, load_chunks
from .trajdata import DatasetManifest
from .vae import (
    DecoderAgent,
    VaeModel,
    decoder_logprobs,
    encode,
    posterior_from_batch,
)


@dataclass(frozen=True)
class LatentSampler:
    """Identity-covariance Gaussian over partner latents: standard normal,
    or the same noise recentered on a fixed vector."""

    mode: str = "prior"
    center: tuple = ()

    def __post_init__(self):
        if self.mode not in ("prior", "human-centered"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.mode == "human-centered" and not self.center:
            raise ValueError("human-centered sampler needs a center")
        if not all(math.isfinite(v) for v in self.center):
            raise ValueError("sampler center must be finite")

    def draw(self, rng: np.random.Generator, latent_dim: int) -> np.ndarray:
        z = rng.standard_normal(latent_dim)
        if self.mode == "human-centered":
            center = np.asarray(self.center, dtype=np.float64)
            if center.shape != (latent_dim,):
                raise ValueError(
                    f"center has dim {center.shape[0]}, sampler asked for {latent_dim}"
                )
            z = center + z
        return z

    def describe(self) -> dict:
        return {"mode": self.mode, "center": list(self.center)}


def prior_sampler() -> LatentSampler:
    return LatentSampler("prior")


def human_sampler(z_bar) -> LatentSampler:
    z = np.asarray(z_bar, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError("latent center must be finite")
    return LatentSampler("human-centered", tuple(float(v) for v in z))


def estimate_human_latent(vae: VaeModel, manifest: DatasetManifest) -> np.ndarray:
    """Mean over the dataset's trajectories of their posterior means."""
    if manifest.n_trajectories == 0:
        raise EmptyDatasetError("cannot estimate a latent from an empty dataset")
    means = []
    for i in range(manifest.n_trajectories):
        traj = manifest.load_trajectory(i)
        means.append(encode(vae, traj).mean)
    return np.mean(np.stack(means), axis=0)


def train_cooperator(vae: VaeModel, sampler: LatentSampler, layout, cfg: PpoConfig,
                     seed: int, out_dir, method: str = "gamma-prior",
                     net_spec: NetworkSpec | None = None, vae_path: str = "",
                     progress=None, curve_logger=None) -> CooperatorHandle:
    """PPO against decoder partners, one fresh latent per parallel episode."""
    from .population import train_vs_partner

    if vae.layout_name != layout.name:
        raise ValueError(
            f"vae is for layout {vae.layout_name!r}, training asked for {layout.name!r}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    enc_before, dec_before = vae.encoder_hash(), vae.decoder_hash()

    def partner_factory(episode_seed, player):
        rng = np.random.default_rng([int(episode_seed), player])
        agent = DecoderAgent(vae, sampler.draw(rng, vae.latent_dim))
        agent.begin_episode(layout, player, episode_seed)
        return agent

    net, env_steps = train_vs_partner(layout, cfg, seed, partner_factory,
                                      net_spec=net_spec, progress=progress,
                                      curve_logger=curve_logger)

    if vae.encoder_hash() != enc_before or vae.decoder_hash() != dec_before:
        raise TrainingDivergedError("partner parameters changed during training")

    path = out_dir / "cooperator.params"
    save_policy_net(net, path, meta={"role": "cooperator", "method": method})
    handle = CooperatorHandle(
        id=f"{method}-{layout.name}-s{seed}",
        layout_name=layout.name,
        path=str(path),
        provenance={
            "method": method,
            "seed": seed,
            "sampler": sampler.describe(),
            "vae_path": vae_path,
            "vae_encoder_hash": enc_before,
            "vae_decoder_hash": dec_before,
            "config_hash": config_hash(asdict(cfg)),
            "env_steps": env_steps,
        },
    )
    handle.content_hash = handle.compute_hash()
    handle.save(out_dir / "cooperator.json")
    return handle


@dataclass
class FinetuneConfig:
    mode: str = "dft"  # dft: decoder only; fft: encoder and decoder
    anchor_coef: float = 1.0
    epochs: int = 50
    learning_rate: float = 1e-4
    batch_size: int = 32
    chunk_length: int = 100
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("dft", "fft"):
            raise ValueError(f"unknown finetune mode {self.mode!r}")
        if self.anchor_coef < 0:
            raise ValueError("anchor coefficient must be nonnegative")


def finetune_loss(tuned: VaeModel, anchor: VaeModel, batch, beta: float,
                  anchor_coef: float, noise=None, generator=None):
    """(loss, recon_nll, kl, anchor_kl) on one batch.

    The anchor term is the per-step KL from the tuned decoder's action
    distribution to the pretrained decoder's, both conditioned on the same
    latent sample and history, averaged over real steps.
    """
    dtype = next(tuned.encoder.parameters()).dtype
    mean, std = posterior_from_batch(tuned, batch)
    if noise is None:
        noise = torch.randn(mean.shape, generator=generator, dtype=dtype)
    z = mean + std * noise

    logp_new = decoder_logprobs(tuned, batch, z)
    picked = logp_new.gather(-1, batch.actions_focal.unsqueeze(-1)).squeeze(-1)
    mask = batch.mask.to(dtype)
    recon_nll = -(picked * mask).sum(0).mean()
    var = std**2
    kl = 0.5 * (mean**2 + var - 1.0 - torch.log(var)).sum(-1).mean()

    with torch.no_grad():
        logp_old = decoder_logprobs(anchor, batch, z.detach())
    step_kl = (logp_new.exp() * (logp_new - logp_old)).sum(-1)
    anchor_kl = (step_kl * mask).sum() / mask.sum().clamp_min(1.0)

    loss = recon_nll + beta * kl + anchor_coef * anchor_kl
    if not torch.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite finetune loss: recon {recon_nll.item()}, kl {kl.item()}, "
            f"anchor {anchor_kl.item()}"
        )
    return loss, recon_nll, kl, anchor_kl


def finetune(vae: VaeModel, manifest: DatasetManifest, cfg: FinetuneConfig,
             progress=None) -> VaeModel:
    """ELBO refit on human data with a pretrained-decoder anchor penalty.

    Returns a new model; the input stays untouched and serves as the anchor.
    """
    if manifest.layout_name != vae.layout_name:
        raise ValueError(
            f"dataset layout {manifest.layout_name!r} does not match vae "
            f"layout {vae.layout_name!r}"
        )
    part = "train" if manifest.split else None
    items = load_chunks(manifest, part=part, chunk_length=cfg.chunk_length)
    if not items:
        raise EmptyDatasetError("no chunks to fine-tune on")

    tuned = vae.clone()
    anchor = vae.clone()
    anchor.encoder.eval()
    anchor.decoder.eval()
    for p in anchor.encoder.parameters():
        p.requires_grad_(False)
    for p in anchor.decoder.parameters():
        p.requires_grad_(False)

    params = list(tuned.decoder.parameters())
    if cfg.mode == "fft":
        params += list(tuned.encoder.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed + 7)

    curves = []
    for epoch in range(1, cfg.epochs + 1):
        tot = np.zeros(4)
        n = 0
        for batch in batch_iter(items, batch_size=cfg.batch_size,
                                shuffle_seed=cfg.seed * 1000 + epoch):
            loss, recon, kl, ank = finetune_loss(
                tuned, anchor, batch, cfg.beta, cfg.anchor_coef, generator=gen
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            tot += [loss.item(), recon.item(), kl.item(), ank.item()]
            n += 1
        row = dict(zip(("loss", "recon_nll", "kl", "anchor_kl"), (tot / n).tolist()))
        row["epoch"] = epoch
        curves.append(row)
        if progress:
            progress(epoch, cfg.epochs, row)

    tuned.meta.update(
        {
            "finetune": {
                "mode": cfg.mode,
                "anchor_coef": cfg.anchor_coef,
                "epochs": cfg.epochs,
                "dataset_id": manifest.id,
                "dataset_hash": manifest.dataset_hash(),
                "config_hash": config_hash(asdict(cfg)),
                "curves": curves,
            }
        }
    )
    tuned.encoder.eval()
    tuned.decoder.eval()
    return tuned


def train_gamma_ha(vae: VaeModel, human_manifest: DatasetManifest, layout,
                   cfg: PpoConfig, finetune_cfg: FinetuneConfig, seed: int, out_dir,
                   net_spec: NetworkSpec | None = None, progress=None,
                   curve_logger=None) -> CooperatorHandle:
    """Fine-tune on human data, center latent sampling on the humans, train."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tuned = finetune(vae, human_manifest, finetune_cfg)
    tuned_path = out_dir / "vae-finetuned.bin"
    tuned.save(tuned_path)

    z_bar = estimate_human_latent(tuned, human_manifest)
    sampler = human_sampler(z_bar)
    handle = train_cooperator(
        tuned, sampler, layout, cfg, seed, out_dir, method="gamma-ha",
        net_spec=net_spec, vae_path=str(tuned_path), progress=progress,
        curve_logger=curve_logger,
    )
    handle.provenance.update(
        {
            "z_bar": [float(v) for v in z_bar],
            "finetune_mode": finetune_cfg.mode,
            "finetune_config_hash": config_hash(asdict(finetune_cfg)),
            "human_dataset": human_manifest.id,
            "human_dataset_hash": human_manifest.dataset_hash(),
        }
    )
    handle.content_hash = handle.compute_hash()
    handle.save(out_dir / "cooperator.json")
    return handle
