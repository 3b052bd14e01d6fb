"""Cooperator training, latent samplers, human estimation, fine-tuning."""

import collections
import math

import numpy as np
import pytest
import torch

from coordlab.agents import CooperatorHandle
from coordlab.cooperator import (
    FinetuneConfig,
    LatentSampler,
    estimate_human_latent,
    finetune,
    finetune_loss,
    human_sampler,
    prior_sampler,
    train_cooperator,
    train_gamma_ha,
)
from coordlab.errors import EmptyDatasetError
from coordlab.kitchen import ACTIONS, get_layout, reset, step
from coordlab.nets import NetworkSpec
from coordlab.population import scripted_population
from coordlab.rl import PpoConfig
from coordlab.seqdata import batch_iter, load_chunks
from coordlab.trajdata import DatasetManifest, generate_dataset, import_human, split
from coordlab.vae import DecoderAgent, VaeConfig, VaeModel, encode, train_vae

LAYOUT = get_layout("tiny-duo")
LATENT = 3

ENC_SPEC = NetworkSpec(conv_stages=((3, 16),), hidden_sizes=(32,), recurrent_size=32,
                       heads=(("mean", LATENT), ("std_raw", LATENT)), extra_input=12)
DEC_SPEC = NetworkSpec(conv_stages=((3, 16),), hidden_sizes=(32,), recurrent_size=32,
                       heads=(("action", 6),), extra_input=6 + LATENT)

MICRO_PPO = PpoConfig(parallel_envs=4, total_env_steps=4 * 30 * 2, epochs=2,
                      learning_rate=1e-3)


@pytest.fixture(scope="module")
def fixture_vae(tmp_path_factory):
    """Small VAE over three noisy scripted styles, plus its training set."""
    out = tmp_path_factory.mktemp("coop")
    pop = scripted_population(("idleish", "onion-preferring", "clockwise"),
                              LAYOUT.name, noise=0.1)
    manifest = generate_dataset(pop, LAYOUT, n_trajectories=18, seed=7, out_dir=out / "pre")
    manifest = split(manifest, seed=3)
    cfg = VaeConfig(latent_dim=LATENT, epochs=60, chunk_length=15, batch_size=16,
                    checkpoint_interval=20, target_kl=5.0, beta_end=0.02,
                    learning_rate=1e-3, encoder=ENC_SPEC, decoder=DEC_SPEC, seed=5)
    vae = train_vae(manifest, LAYOUT, cfg)
    vae_path = out / "vae.bin"
    vae.save(vae_path)
    return vae, manifest, str(vae_path)


@pytest.fixture(scope="module")
def human_manifest(tmp_path_factory):
    """Eleven noisy single-style trajectories standing in for human play."""
    out = tmp_path_factory.mktemp("human")
    pop = scripted_population(("clockwise",), LAYOUT.name,
                              population_id="human-zoo", noise=0.3)
    manifest = generate_dataset(pop, LAYOUT, n_trajectories=11, seed=21, out_dir=out / "h")
    return split(manifest, seed=9)


def val_recon_nll(model, manifest, chunk_length=15):
    items = load_chunks(manifest, part="val", chunk_length=chunk_length)
    total, n = 0.0, 0
    with torch.no_grad():
        for batch in batch_iter(items, batch_size=32):
            noise = torch.zeros(batch.obs.shape[1], model.latent_dim)
            _, recon, _, _ = finetune_loss(model, model, batch, 0.0, 0.0, noise=noise)
            total += recon.item() * batch.obs.shape[1]
            n += batch.obs.shape[1]
    return total / n


def test_prior_sampler_moments():
    s = prior_sampler()
    draws = np.stack([s.draw(np.random.default_rng(i), 4) for i in range(20_000)])
    se = 1 / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0)) < 4 * se)
    assert np.all(np.abs(draws.std(axis=0) - 1.0) < 0.03)


def test_human_sampler_centers_on_z_bar():
    z_bar = np.array([1.5, -2.0, 0.5])
    s = human_sampler(z_bar)
    draws = np.stack([s.draw(np.random.default_rng(i), 3) for i in range(20_000)])
    se = 1 / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - z_bar) < 4 * se)
    assert np.all(np.abs(draws.std(axis=0) - 1.0) < 0.03)


def test_zero_centered_human_sampler_equals_prior():
    rng_a, rng_b = np.random.default_rng(42), np.random.default_rng(42)
    a = prior_sampler().draw(rng_a, 5)
    b = human_sampler(np.zeros(5)).draw(rng_b, 5)
    assert np.array_equal(a, b)


def test_sampler_validation():
    with pytest.raises(ValueError):
        LatentSampler("bogus")
    with pytest.raises(ValueError):
        LatentSampler("human-centered")
    with pytest.raises(ValueError):
        human_sampler([np.inf, 0.0])
    s = human_sampler([1.0, 2.0])
    with pytest.raises(ValueError):
        s.draw(np.random.default_rng(0), 3)


def test_estimate_human_latent_is_mean_of_posterior_means(fixture_vae, human_manifest):
    vae, _, _ = fixture_vae
    z_bar = estimate_human_latent(vae, human_manifest)
    manual = np.mean(
        [encode(vae, human_manifest.load_trajectory(i)).mean
         for i in range(human_manifest.n_trajectories)],
        axis=0,
    )
    assert np.array_equal(z_bar, manual)


def test_estimate_human_latent_duplication_invariant(fixture_vae, human_manifest, tmp_path):
    vae, _, _ = fixture_vae
    paths = [human_manifest.trajectory_path(i)
             for i in range(human_manifest.n_trajectories)]
    doubled = import_human(paths + paths, tmp_path / "doubled")
    z1 = estimate_human_latent(vae, human_manifest)
    z2 = estimate_human_latent(vae, doubled)
    assert np.allclose(z1, z2, atol=1e-6)


def test_estimate_human_latent_permutation_invariant(fixture_vae, human_manifest, tmp_path):
    vae, _, _ = fixture_vae
    paths = [human_manifest.trajectory_path(i)
             for i in range(human_manifest.n_trajectories)]
    shuffled = import_human(list(reversed(paths)), tmp_path / "shuffled")
    z1 = estimate_human_latent(vae, human_manifest)
    z2 = estimate_human_latent(vae, shuffled)
    assert np.allclose(z1, z2, atol=1e-6)


def test_estimate_human_latent_rejects_empty(fixture_vae):
    vae, _, _ = fixture_vae
    empty = DatasetManifest(id="none", directory="/nonexistent",
                            layout_name=LAYOUT.name, n_trajectories=0)
    with pytest.raises(EmptyDatasetError):
        estimate_human_latent(vae, empty)


def test_partner_latent_constant_within_episode(fixture_vae):
    vae, _, _ = fixture_vae
    agent = DecoderAgent(vae, prior_sampler().draw(np.random.default_rng(0), LATENT))
    state = reset(LAYOUT, seed=0)
    agent.begin_episode(LAYOUT, 0, seed=1)
    z0 = agent.z.copy()
    for _ in range(10):
        a = agent.act(state)
        assert np.array_equal(agent.z, z0)
        state, _, _ = step(state, a, "stay")


def test_train_cooperator_keeps_partner_frozen(fixture_vae, tmp_path):
    vae, _, vae_path = fixture_vae
    enc_before, dec_before = vae.encoder_hash(), vae.decoder_hash()
    handle = train_cooperator(vae, prior_sampler(), LAYOUT, MICRO_PPO, seed=1,
                              out_dir=tmp_path, vae_path=vae_path)
    assert vae.encoder_hash() == enc_before
    assert vae.decoder_hash() == dec_before
    assert handle.provenance["vae_decoder_hash"] == dec_before


def test_train_cooperator_provenance_and_roundtrip(fixture_vae, tmp_path):
    vae, _, vae_path = fixture_vae
    handle = train_cooperator(vae, human_sampler(np.zeros(LATENT)), LAYOUT, MICRO_PPO,
                              seed=2, out_dir=tmp_path, vae_path=vae_path)
    for key in ("method", "seed", "sampler", "config_hash", "vae_encoder_hash", "env_steps"):
        assert key in handle.provenance
    assert handle.provenance["sampler"]["mode"] == "human-centered"
    loaded = CooperatorHandle.load(tmp_path / "cooperator.json")
    assert loaded.content_hash == handle.content_hash
    agent = loaded.make_agent()
    agent.begin_episode(LAYOUT, 0, seed=3)
    assert agent.act(reset(LAYOUT, seed=3)) in ACTIONS


def test_train_cooperator_rejects_layout_mismatch(fixture_vae, tmp_path):
    vae, _, _ = fixture_vae
    with pytest.raises(ValueError, match="layout"):
        train_cooperator(vae, prior_sampler(), get_layout("tiny-choice"), MICRO_PPO,
                         seed=0, out_dir=tmp_path)


def test_finetune_config_validation():
    with pytest.raises(ValueError):
        FinetuneConfig(mode="partial")
    with pytest.raises(ValueError):
        FinetuneConfig(anchor_coef=-0.1)


def test_finetune_dft_keeps_encoder_bit_identical(fixture_vae, human_manifest):
    vae, _, _ = fixture_vae
    cfg = FinetuneConfig(mode="dft", anchor_coef=1.0, epochs=2, chunk_length=15,
                         learning_rate=1e-3, seed=2)
    tuned = finetune(vae, human_manifest, cfg)
    assert tuned.encoder_hash() == vae.encoder_hash()
    assert tuned.decoder_hash() != vae.decoder_hash()
    assert tuned.meta["finetune"]["mode"] == "dft"


def test_finetune_fft_updates_both_networks(fixture_vae, human_manifest):
    vae, _, _ = fixture_vae
    cfg = FinetuneConfig(mode="fft", anchor_coef=1.0, epochs=2, chunk_length=15,
                         learning_rate=1e-3, seed=2)
    tuned = finetune(vae, human_manifest, cfg)
    assert tuned.encoder_hash() != vae.encoder_hash()
    assert tuned.decoder_hash() != vae.decoder_hash()


def test_finetune_huge_anchor_pins_decoder_to_pretrained(fixture_vae, human_manifest):
    vae, _, _ = fixture_vae

    def final_anchor_kl(coef):
        cfg = FinetuneConfig(mode="dft", anchor_coef=coef, epochs=5, chunk_length=15,
                             learning_rate=1e-3, seed=2)
        tuned = finetune(vae, human_manifest, cfg)
        items = load_chunks(human_manifest, part="val", chunk_length=15)
        kls = []
        with torch.no_grad():
            for batch in batch_iter(items, batch_size=32):
                noise = torch.zeros(batch.obs.shape[1], LATENT)
                _, _, _, ank = finetune_loss(tuned, vae, batch, 0.0, 0.0, noise=noise)
                kls.append(ank.item())
        return float(np.mean(kls))

    pinned = final_anchor_kl(1e4)
    free = final_anchor_kl(0.0)
    assert pinned < 0.02
    assert pinned < 0.1 * free


def test_finetune_large_anchor_generalizes_no_worse(fixture_vae, human_manifest):
    """Small noisy dataset plus many epochs overfits; the anchor keeps the
    decoder near the pretrained model and the held-out NLL lower."""
    vae, _, _ = fixture_vae

    def median_val_nll(coef):
        nlls = []
        for seed in (0, 1, 2):
            cfg = FinetuneConfig(mode="fft", anchor_coef=coef, epochs=200,
                                 chunk_length=15, learning_rate=2e-3, seed=seed)
            nlls.append(val_recon_nll(finetune(vae, human_manifest, cfg), human_manifest))
        return float(np.median(nlls))

    assert median_val_nll(10.0) <= median_val_nll(0.0)


def test_distinct_style_latents_give_distinct_partners(fixture_vae):
    """Decoder partners at two styles' posterior centroids behave apart:
    total-variation distance between rollout action profiles is large."""
    vae, manifest, _ = fixture_vae
    means = {}
    for i in range(manifest.n_trajectories):
        traj = manifest.load_trajectory(i)
        for focal, key in ((0, "a"), (1, "b")):
            label = traj.source[key]
            if "idleish" in label or "onion" in label:
                means.setdefault(label, []).append(encode(vae, traj, focal=focal).mean)
    centroids = {k: np.mean(v, axis=0) for k, v in means.items()}
    assert len(centroids) == 2

    profiles = {}
    for label, z in centroids.items():
        agent = DecoderAgent(vae, z)
        counts = collections.Counter()
        for ep in range(5):
            state = reset(LAYOUT, seed=100 + ep)
            agent.begin_episode(LAYOUT, 1, seed=200 + ep)
            for _ in range(LAYOUT.episode_length):
                a = agent.act(state)
                counts[a] += 1
                state, _, _ = step(state, "stay", a)
        total = sum(counts.values())
        profiles[label] = np.array([counts[a] / total for a in ACTIONS])

    idle = next(v for k, v in profiles.items() if "idleish" in k)
    onion = next(v for k, v in profiles.items() if "onion" in k)
    stay = ACTIONS.index("stay")
    assert idle[stay] > 0.6
    assert onion[stay] < 0.3
    assert 0.5 * np.abs(idle - onion).sum() > 0.3


def test_zero_latent_on_untrained_vae_is_near_uniform():
    torch.manual_seed(0)
    cfg = VaeConfig(latent_dim=LATENT, encoder=ENC_SPEC, decoder=DEC_SPEC)
    fresh = VaeModel.fresh(cfg, LAYOUT, seed=0)
    agent = DecoderAgent(fresh, np.zeros(LATENT))
    counts = collections.Counter()
    for ep in range(10):
        state = reset(LAYOUT, seed=ep)
        agent.begin_episode(LAYOUT, 0, seed=50 + ep)
        for _ in range(LAYOUT.episode_length):
            a = agent.act(state)
            counts[a] += 1
            state, _, _ = step(state, a, "stay")
    total = sum(counts.values())
    freqs = np.array([counts[a] / total for a in ACTIONS])
    assert np.abs(freqs - 1 / 6).max() < 0.12


def test_gamma_ha_chains_provenance(fixture_vae, human_manifest, tmp_path):
    vae, _, _ = fixture_vae
    fcfg = FinetuneConfig(mode="dft", anchor_coef=1.0, epochs=2, chunk_length=15,
                          learning_rate=1e-3, seed=4)
    handle = train_gamma_ha(vae, human_manifest, LAYOUT, MICRO_PPO, fcfg,
                            seed=5, out_dir=tmp_path)
    prov = handle.provenance
    assert prov["method"] == "gamma-ha"
    assert prov["finetune_mode"] == "dft"
    assert len(prov["z_bar"]) == LATENT
    assert prov["human_dataset_hash"]
    assert prov["sampler"]["mode"] == "human-centered"
    assert np.allclose(prov["sampler"]["center"], prov["z_bar"])
    assert (tmp_path / "vae-finetuned.bin").exists()
    tuned = VaeModel.load(tmp_path / "vae-finetuned.bin")
    # DFT: the encoder that produced z_bar is the pretrained one
    assert tuned.encoder_hash() == vae.encoder_hash()
