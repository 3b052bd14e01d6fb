"""Trajectory variational autoencoder over partner behavior.

The encoder reads one seat's observations together with both players'
actions and summarizes the episode into a diagonal Gaussian over a latent
style vector. The decoder, conditioned on a latent draw and only the focal
seat's own running history, predicts that seat's next action. Training
maximizes the ELBO with a linearly annealed KL weight; the shipped model is
the checkpoint whose validation KL lands nearest a configured target.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import TrainingDivergedError
from .kitchen import ACTIONS, observe
from .nets import N_ACTIONS, NetworkSpec, build_network, decoder_spec, encoder_spec
from .params import ParamSet
from .seqdata import ChunkBatch, batch_iter, collate, load_chunks, trajectory_tensors
from .trajdata import DatasetManifest, Trajectory

STD_FLOOR = 1e-3
VAE_MAGIC = b"CLVM"
VAE_FORMAT_VERSION = 1


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.stddev = np.asarray(self.stddev, dtype=np.float64)
        if self.mean.shape != self.stddev.shape:
            raise ValueError("mean and stddev shapes differ")
        if not (np.isfinite(self.mean).all() and np.isfinite(self.stddev).all()):
            raise ValueError("posterior parameters must be finite")
        if (self.stddev < STD_FLOOR - 1e-12).any():
            raise ValueError(f"stddev below floor {STD_FLOOR}")


def analytic_kl(q: GaussianPosterior) -> float:
    """KL(N(mean, diag stddev^2) || N(0, I)) in closed form."""
    var = q.stddev**2
    return float(0.5 * np.sum(q.mean**2 + var - 1.0 - np.log(var)))


@dataclass(frozen=True)
class BetaSchedule:
    start: float = 0.0
    end: float = 1.0
    ramp_steps: int = 1

    def value(self, step: int) -> float:
        if self.ramp_steps <= 0:
            return self.end
        frac = min(max(step / self.ramp_steps, 0.0), 1.0)
        return self.start + (self.end - self.start) * frac


@dataclass
class VaeConfig:
    latent_dim: int = 16
    epochs: int = 500
    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    chunk_length: int = 100
    target_kl: float = 32.0
    beta_start: float = 0.0
    beta_end: float = 1.0
    beta_ramp_fraction: float = 0.5  # fraction of epochs spent ramping
    batch_size: int = 32
    checkpoint_interval: int | None = None  # default epochs // 20
    kl_warning_factor: float = 4.0
    seed: int = 0
    encoder: NetworkSpec | None = None
    decoder: NetworkSpec | None = None

    def beta_schedule(self) -> BetaSchedule:
        ramp = max(1, int(round(self.beta_ramp_fraction * self.epochs)))
        return BetaSchedule(self.beta_start, self.beta_end, ramp)

    def encoder_spec(self) -> NetworkSpec:
        return self.encoder or encoder_spec(self.latent_dim)

    def decoder_spec(self) -> NetworkSpec:
        return self.decoder or decoder_spec(self.latent_dim)


class VaeModel:
    def __init__(self, encoder, decoder, latent_dim: int, layout_name: str,
                 obs_shape, meta: dict | None = None):
        self.encoder = encoder
        self.decoder = decoder
        self.latent_dim = latent_dim
        self.layout_name = layout_name
        self.obs_shape = tuple(obs_shape)
        self.meta = dict(meta or {})

    @classmethod
    def fresh(cls, cfg: VaeConfig, layout, seed: int | None = None):
        from .kitchen import observation_shape

        if seed is not None:
            torch.manual_seed(seed)
        obs_shape = observation_shape(layout)
        enc = build_network(cfg.encoder_spec(), obs_shape)
        dec = build_network(cfg.decoder_spec(), obs_shape)
        return cls(enc, dec, cfg.latent_dim, layout.name, obs_shape)

    # -- persistence ---------------------------------------------------

    def to_bytes(self) -> bytes:
        enc = ParamSet.from_module(self.encoder, meta={"net_spec": self.encoder.spec.to_dict()})
        dec = ParamSet.from_module(self.decoder, meta={"net_spec": self.decoder.spec.to_dict()})
        enc_b, dec_b = enc.to_bytes(), dec.to_bytes()
        header = json.dumps(
            {
                "format_version": VAE_FORMAT_VERSION,
                "latent_dim": self.latent_dim,
                "layout_name": self.layout_name,
                "obs_shape": list(self.obs_shape),
                "meta": self.meta,
                "encoder_nbytes": len(enc_b),
                "decoder_nbytes": len(dec_b),
            },
            sort_keys=True,
        ).encode("utf-8")
        out = io.BytesIO()
        out.write(VAE_MAGIC)
        out.write(np.uint64(len(header)).astype("<u8").tobytes())
        out.write(header)
        out.write(enc_b)
        out.write(dec_b)
        return out.getvalue()

    def save(self, path) -> None:
        with open(str(path), "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "VaeModel":
        blob = open(str(path), "rb").read()
        if blob[:4] != VAE_MAGIC:
            raise ValueError(f"bad magic {blob[:4]!r}, expected {VAE_MAGIC!r}")
        hlen = int(np.frombuffer(blob, "<u8", count=1, offset=4)[0])
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
        off = 12 + hlen
        enc_ps = ParamSet.from_bytes(blob[off : off + header["encoder_nbytes"]])
        off += header["encoder_nbytes"]
        dec_ps = ParamSet.from_bytes(blob[off : off + header["decoder_nbytes"]])
        obs_shape = tuple(header["obs_shape"])
        enc = build_network(NetworkSpec.from_dict(enc_ps.meta["net_spec"]), obs_shape)
        dec = build_network(NetworkSpec.from_dict(dec_ps.meta["net_spec"]), obs_shape)
        enc_ps.load_into(enc)
        dec_ps.load_into(dec)
        enc.eval()
        dec.eval()
        return cls(enc, dec, header["latent_dim"], header["layout_name"], obs_shape,
                   meta=header.get("meta", {}))

    def encoder_hash(self) -> str:
        return ParamSet.from_module(self.encoder).state_hash()

    def decoder_hash(self) -> str:
        return ParamSet.from_module(self.decoder).state_hash()

    def clone(self) -> "VaeModel":
        enc = build_network(self.encoder.spec, self.obs_shape)
        dec = build_network(self.decoder.spec, self.obs_shape)
        ParamSet.from_module(self.encoder).load_into(enc)
        ParamSet.from_module(self.decoder).load_into(dec)
        return VaeModel(enc, dec, self.latent_dim, self.layout_name, self.obs_shape,
                        meta=dict(self.meta))


def _one_hot(actions: torch.Tensor, dtype) -> torch.Tensor:
    """One-hot over the action set; negative indices become all-zero rows."""
    safe = actions.clamp_min(0)
    oh = F.one_hot(safe, num_classes=N_ACTIONS).to(dtype)
    return oh * (actions >= 0).unsqueeze(-1).to(dtype)


def _encoder_extra(batch: ChunkBatch, dtype) -> torch.Tensor:
    return torch.cat(
        [_one_hot(batch.actions_focal, dtype), _one_hot(batch.actions_other, dtype)], dim=-1
    )


def _decoder_extra(batch: ChunkBatch, z: torch.Tensor, dtype) -> torch.Tensor:
    # previous own action per step: the pre-window action, then a shift
    prev = torch.cat([batch.prev_action.unsqueeze(0), batch.actions_focal[:-1]], dim=0)
    zs = z.unsqueeze(0).expand(batch.obs.shape[0], -1, -1)
    return torch.cat([_one_hot(prev, dtype), zs.to(dtype)], dim=-1)


def posterior_from_batch(model: VaeModel, batch: ChunkBatch):
    """Per-chunk posterior (mean, stddev) tensors from the encoder summary
    at each chunk's last real step."""
    dtype = next(model.encoder.parameters()).dtype
    outputs, _ = model.encoder(batch.obs.to(dtype), _encoder_extra(batch, dtype))
    last = batch.mask.sum(0).long().clamp_min(1) - 1  # (B,)
    idx = last.view(1, -1, 1).expand(1, -1, model.latent_dim)
    mean = outputs["mean"].gather(0, idx).squeeze(0)
    std = F.softplus(outputs["std_raw"].gather(0, idx).squeeze(0)) + STD_FLOOR
    return mean, std


def encode(model: VaeModel, traj: Trajectory, focal: int | None = None) -> GaussianPosterior:
    """Posterior over the latent style of one trajectory's focal seat."""
    if traj.layout.name != model.layout_name:
        raise ValueError(
            f"trajectory layout {traj.layout.name!r} does not match model "
            f"layout {model.layout_name!r}"
        )
    if focal is None:
        focal = traj.focal_seat if traj.focal_seat is not None else 0
    obs, a, b = trajectory_tensors(traj, focal)
    from .seqdata import ChunkItem

    batch = collate([ChunkItem(obs, a, b, True, -1, {})])
    with torch.no_grad():
        mean, std = posterior_from_batch(model, batch)
    return GaussianPosterior(mean[0].numpy(), std[0].numpy())


def decode_step(model: VaeModel, z, history) -> np.ndarray:
    """Action distribution for the next step given the focal seat's own
    history: {"obs": [(C,H,W)...] length t+1, "actions": [...] length t}."""
    obs = history["obs"]
    acts = history.get("actions", [])
    if len(obs) != len(acts) + 1:
        raise ValueError(
            f"history needs one more observation than actions, got "
            f"{len(obs)} obs / {len(acts)} actions"
        )
    dtype = next(model.decoder.parameters()).dtype
    obs_seq = torch.stack([torch.as_tensor(o) for o in obs]).unsqueeze(1).to(dtype)
    prev = torch.tensor([-1] + [int(a) for a in acts], dtype=torch.int64).unsqueeze(1)
    zt = torch.as_tensor(np.asarray(z), dtype=dtype).view(1, 1, -1).expand(len(obs), 1, -1)
    extra = torch.cat([_one_hot(prev, dtype), zt], dim=-1)
    with torch.no_grad():
        outputs, _ = model.decoder(obs_seq, extra)
    return outputs["action"][-1, 0].exp().numpy()


def decoder_logprobs(model: VaeModel, batch: ChunkBatch, z: torch.Tensor) -> torch.Tensor:
    """(L, B, n_actions) log-probabilities from teacher-forced decoding."""
    dtype = next(model.decoder.parameters()).dtype
    outputs, _ = model.decoder(batch.obs.to(dtype), _decoder_extra(batch, z, dtype))
    return outputs["action"]


def elbo_loss(model: VaeModel, batch: ChunkBatch, beta: float, noise=None, generator=None):
    """(loss, recon_nll, kl): mean over chunks of summed step NLL plus
    beta times mean analytic KL; one reparameterized z per chunk."""
    dtype = next(model.encoder.parameters()).dtype
    mean, std = posterior_from_batch(model, batch)
    if noise is None:
        noise = torch.randn(mean.shape, generator=generator, dtype=dtype)
    z = mean + std * noise

    logp = decoder_logprobs(model, batch, z)
    logp = logp.gather(-1, batch.actions_focal.unsqueeze(-1)).squeeze(-1)
    mask = batch.mask.to(dtype)
    recon_nll = -(logp * mask).sum(0).mean()

    var = std**2
    kl = 0.5 * (mean**2 + var - 1.0 - torch.log(var)).sum(-1).mean()
    loss = recon_nll + beta * kl
    if not torch.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite ELBO: recon {recon_nll.item()}, kl {kl.item()}"
        )
    return loss, recon_nll, kl


def select_nearest_kl(checkpoint_kls, target: float) -> int:
    """Index of the (tag, kl) pair whose kl is nearest target; first wins ties."""
    if not checkpoint_kls:
        raise ValueError("no checkpoints to select from")
    return min(range(len(checkpoint_kls)), key=lambda i: abs(checkpoint_kls[i][1] - target))


def validation_kl(model: VaeModel, items, batch_size: int = 64) -> float:
    total, count = 0.0, 0
    with torch.no_grad():
        for batch in batch_iter(items, batch_size=batch_size):
            mean, std = posterior_from_batch(model, batch)
            var = std**2
            kl = 0.5 * (mean**2 + var - 1.0 - torch.log(var)).sum(-1)
            total += kl.sum().item()
            count += kl.numel()
    if count == 0:
        raise ValueError("no validation chunks")
    return total / count


def train_vae(manifest: DatasetManifest, layout, cfg: VaeConfig, progress=None) -> VaeModel:
    """ELBO training with beta annealing and target-KL checkpoint selection.

    The returned model is the periodic checkpoint whose validation KL is
    nearest cfg.target_kl; curves and the selection are recorded in meta.
    """
    if not manifest.split:
        raise ValueError("dataset must be split into train/validation first")
    train_items = load_chunks(manifest, part="train", chunk_length=cfg.chunk_length)
    val_items = load_chunks(manifest, part="val", chunk_length=cfg.chunk_length)
    if not train_items or not val_items:
        raise ValueError(
            f"need chunks on both sides of the split, got {len(train_items)} train / "
            f"{len(val_items)} val"
        )

    model = VaeModel.fresh(cfg, layout, seed=cfg.seed)
    optimizer = torch.optim.Adam(
        list(model.encoder.parameters()) + list(model.decoder.parameters()),
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
    )
    schedule = cfg.beta_schedule()
    interval = cfg.checkpoint_interval or max(1, cfg.epochs // 20)
    gen = torch.Generator().manual_seed(cfg.seed + 1)

    checkpoints = []  # (epoch, val_kl, encoder ParamSet, decoder ParamSet)
    curves = []
    for epoch in range(1, cfg.epochs + 1):
        beta = schedule.value(epoch - 1)
        tot_loss = tot_nll = tot_kl = 0.0
        n_batches = 0
        for batch in batch_iter(train_items, batch_size=cfg.batch_size,
                                shuffle_seed=cfg.seed * 100_000 + epoch):
            loss, nll, kl = elbo_loss(model, batch, beta, generator=gen)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            tot_loss += loss.item()
            tot_nll += nll.item()
            tot_kl += kl.item()
            n_batches += 1
        row = {
            "epoch": epoch,
            "beta": beta,
            "loss": tot_loss / n_batches,
            "recon_nll": tot_nll / n_batches,
            "kl": tot_kl / n_batches,
        }
        if epoch % interval == 0 or epoch == cfg.epochs:
            val_kl = validation_kl(model, val_items)
            row["val_kl"] = val_kl
            checkpoints.append(
                (epoch, val_kl, ParamSet.from_module(model.encoder),
                 ParamSet.from_module(model.decoder))
            )
        curves.append(row)
        if progress:
            progress(epoch, cfg.epochs, row)

    best = select_nearest_kl([(e, k) for e, k, _, _ in checkpoints], cfg.target_kl)
    epoch, val_kl, enc_ps, dec_ps = checkpoints[best]
    enc_ps.load_into(model.encoder)
    dec_ps.load_into(model.decoder)
    warning = None
    ratio = max(val_kl, 1e-12) / cfg.target_kl
    if ratio > cfg.kl_warning_factor or ratio < 1.0 / cfg.kl_warning_factor:
        warning = (
            f"nearest checkpoint KL {val_kl:.3f} is over {cfg.kl_warning_factor}x "
            f"away from target {cfg.target_kl}"
        )
    model.meta.update(
        {
            "selected_epoch": epoch,
            "selected_val_kl": val_kl,
            "target_kl": cfg.target_kl,
            "beta_schedule": {"start": cfg.beta_start, "end": cfg.beta_end,
                              "ramp_steps": schedule.ramp_steps},
            "dataset_hash": manifest.dataset_hash(),
            "dataset_id": manifest.id,
            "curves": curves,
            "checkpoint_kls": [(e, k) for e, k, _, _ in checkpoints],
            "warning": warning,
            "seed": cfg.seed,
        }
    )
    model.encoder.eval()
    model.decoder.eval()
    return model


def sample_prior(rng: np.random.Generator, latent_dim: int = 16) -> np.ndarray:
    return rng.standard_normal(latent_dim)


class DecoderAgent:
    """Plays the decoder as a live partner: one fixed z for the episode,
    incremental recurrent state over its own (obs, previous action) stream."""

    def __init__(self, model: VaeModel, z):
        self.model = model
        self.z = np.asarray(z, dtype=np.float64)
        if not np.isfinite(self.z).all():
            raise ValueError("latent must be finite")

    def begin_episode(self, layout, player: int, seed: int) -> None:
        if layout.name != self.model.layout_name:
            raise ValueError(
                f"layout {layout.name!r} does not match decoder's {self.model.layout_name!r}"
            )
        self.player = player
        self.hidden = self.model.decoder.initial_state(1)
        self.prev = -1
        self.gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFF)
        self._dtype = next(self.model.decoder.parameters()).dtype

    def act(self, state) -> str:
        obs = torch.from_numpy(observe(state, self.player)).unsqueeze(0).to(self._dtype)
        prev = torch.tensor([self.prev], dtype=torch.int64)
        zt = torch.as_tensor(self.z, dtype=self._dtype).view(1, -1)
        extra = torch.cat([_one_hot(prev, self._dtype), zt], dim=-1)
        with torch.no_grad():
            outputs, self.hidden = self.model.decoder.step(obs, extra, self.hidden)
            probs = outputs["action"][0].exp()
            idx = int(torch.multinomial(probs, 1, generator=self.gen))
        self.last_probs = probs.numpy()
        self.prev = idx
        return ACTIONS[idx]


@dataclass
class DecoderPartnerHandle:
    """A frozen generative partner: a stored model plus a fixed latent."""

    id: str
    layout_name: str
    vae_path: str
    z: list
    provenance: dict = field(default_factory=dict)
    kind: str = "decoder"

    def make_agent(self) -> DecoderAgent:
        if not hasattr(self, "_model"):
            self._model = VaeModel.load(self.vae_path)
        return DecoderAgent(self._model, np.asarray(self.z))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "layout_name": self.layout_name,
            "vae_path": self.vae_path,
            "z": [float(v) for v in self.z],
            "provenance": self.provenance,
        }


def make_partner(vae: VaeModel, z, vae_path: str | None = None,
                 partner_id: str | None = None) -> DecoderPartnerHandle:
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError("latent must be finite")
    handle = DecoderPartnerHandle(
        id=partner_id or f"decoder-z{abs(hash(z.tobytes())) % 10**8:08d}",
        layout_name=vae.layout_name,
        vae_path=vae_path or "",
        z=[float(v) for v in z],
        provenance={"source": "decoder-partner"},
    )
    handle._model = vae
    return handle
