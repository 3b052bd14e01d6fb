"""Behavior VAE tests: KL oracles, ELBO structure, gradients, causality."""

import math

import numpy as np
import pytest
import torch

from coordlab.errors import TrainingDivergedError
from coordlab.kitchen import ACTIONS, get_layout, observation_shape, observe, reset, step
from coordlab.nets import NetworkSpec, build_network
from coordlab.population import scripted_population
from coordlab.scripted import scripted_partner
from coordlab.seqdata import ChunkItem, collate, load_chunks
from coordlab.trajdata import generate_dataset, rollout_pair, split
from coordlab.vae import (
    STD_FLOOR,
    BetaSchedule,
    DecoderAgent,
    GaussianPosterior,
    VaeConfig,
    VaeModel,
    analytic_kl,
    decode_step,
    elbo_loss,
    encode,
    make_partner,
    posterior_from_batch,
    sample_prior,
    select_nearest_kl,
    train_vae,
    validation_kl,
)
from util import finite_difference_check

LAYOUT = get_layout("tiny-duo")
OBS_SHAPE = observation_shape(LAYOUT)
LATENT = 3

# 1x1 conv squeezes the observation stack to one plane so the whole model
# stays small enough for exhaustive finite differencing
ENC_SPEC = NetworkSpec(
    conv_stages=((1, 1),),
    hidden_sizes=(),
    recurrent_size=2,
    heads=(("mean", LATENT), ("std_raw", LATENT)),
    extra_input=12,
)
DEC_SPEC = NetworkSpec(
    conv_stages=((1, 1),),
    hidden_sizes=(),
    recurrent_size=2,
    heads=(("action", 6),),
    extra_input=6 + LATENT,
)

# KL(N(0, 2^2) || N(0,1)) = (4 - 1 - ln 4) / 2, frozen:
KL_STD_TWO = 0.8068528194400547


def tiny_model(seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    enc = build_network(ENC_SPEC, OBS_SHAPE).to(dtype)
    dec = build_network(DEC_SPEC, OBS_SHAPE).to(dtype)
    return VaeModel(enc, dec, LATENT, LAYOUT.name, OBS_SHAPE)


def random_item(rng, length, start):
    obs = torch.from_numpy(rng.random((length, *OBS_SHAPE)))
    focal = torch.from_numpy(rng.integers(0, 6, size=length))
    other = torch.from_numpy(rng.integers(0, 6, size=length))
    prev = -1 if start else int(rng.integers(0, 6))
    return ChunkItem(obs, focal, other, start, prev, {})


def random_batch(seed=0, lengths=(5, 5)):
    rng = np.random.default_rng(seed)
    return collate([random_item(rng, n, i == 0) for i, n in enumerate(lengths)])


def scripted_trajectory(style="onion-preferring", env_seed=4, focal=0):
    handle = scripted_partner(style, LAYOUT.name)
    traj = rollout_pair(LAYOUT, handle.make_agent(), handle.make_agent(),
                        env_seed=env_seed, agent_seed=17)
    traj.focal_seat = focal
    return traj


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("vae")
    pop = scripted_population(("clockwise", "onion-preferring"), LAYOUT.name)
    manifest = generate_dataset(pop, LAYOUT, n_trajectories=8, seed=7, out_dir=out / "ds")
    manifest = split(manifest, seed=3)
    cfg = VaeConfig(latent_dim=LATENT, epochs=6, chunk_length=15, batch_size=16,
                    checkpoint_interval=2, target_kl=2.0, learning_rate=1e-3,
                    encoder=ENC_SPEC, decoder=DEC_SPEC, seed=5)
    model = train_vae(manifest, LAYOUT, cfg)
    return model, manifest, cfg


def test_analytic_kl_of_standard_normal_is_zero():
    q = GaussianPosterior(np.zeros(4), np.ones(4))
    assert analytic_kl(q) == 0.0


def test_analytic_kl_hand_computed_values():
    assert analytic_kl(GaussianPosterior([1.0, 0.0], [1.0, 1.0])) == pytest.approx(0.5)
    assert analytic_kl(GaussianPosterior([0.0], [2.0])) == pytest.approx(KL_STD_TWO, rel=1e-12)


def test_analytic_kl_matches_monte_carlo():
    mean = np.array([0.5, -0.3, 1.2])
    std = np.array([0.7, 1.5, 1.0])
    rng = np.random.default_rng(123)
    x = mean + std * rng.standard_normal((1_000_000, 3))
    log_q = (-0.5 * ((x - mean) / std) ** 2 - np.log(std)).sum(axis=1)
    log_p = (-0.5 * x**2).sum(axis=1)
    samples = log_q - log_p
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(analytic_kl(GaussianPosterior(mean, std)) - samples.mean()) < 3 * se


def test_posterior_rejects_bad_parameters():
    with pytest.raises(ValueError):
        GaussianPosterior(np.zeros(3), np.full(3, 1e-4))
    with pytest.raises(ValueError):
        GaussianPosterior(np.zeros(3), np.ones(2))
    with pytest.raises(ValueError):
        GaussianPosterior(np.array([np.nan]), np.ones(1))


def test_beta_schedule_ramps_linearly_then_saturates():
    sched = BetaSchedule(0.0, 1.0, 100)
    assert sched.value(0) == 0.0
    assert sched.value(50) == pytest.approx(0.5)
    assert sched.value(100) == 1.0
    assert sched.value(250) == 1.0


def test_config_defaults():
    cfg = VaeConfig()
    assert cfg.latent_dim == 16
    assert cfg.epochs == 500
    assert cfg.learning_rate == 5e-4
    assert cfg.weight_decay == 1e-4
    assert cfg.chunk_length == 100
    assert cfg.target_kl == 32.0
    assert cfg.beta_schedule().ramp_steps == 250


def test_select_nearest_kl_and_tie_break():
    assert select_nearest_kl([(10, 10.0), (20, 30.0), (30, 50.0)], 32.0) == 1
    assert select_nearest_kl([(1, 30.0), (2, 34.0)], 32.0) == 0
    with pytest.raises(ValueError):
        select_nearest_kl([], 32.0)


def test_elbo_decomposes_exactly_into_nll_plus_beta_kl():
    model = tiny_model()
    batch = random_batch(seed=1)
    noise = torch.randn(2, LATENT, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(0))
    loss, recon, kl = elbo_loss(model, batch, beta=0.7, noise=noise)
    assert loss.item() == recon.item() + 0.7 * kl.item()
    assert kl.item() > 0.0
    loss0, recon0, _ = elbo_loss(model, batch, beta=0.0, noise=noise)
    assert loss0.item() == recon0.item() == recon.item()


def test_elbo_gradients_match_finite_differences():
    model = tiny_model(seed=2)
    batch = random_batch(seed=3, lengths=(4, 3))
    noise = torch.randn(2, LATENT, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(1))
    finite_difference_check(
        [model.encoder, model.decoder],
        lambda: elbo_loss(model, batch, beta=0.5, noise=noise)[0],
    )


def test_elbo_raises_on_poisoned_weights():
    model = tiny_model()
    model.decoder.heads["action"].bias.data[0] = float("nan")
    noise = torch.zeros(2, LATENT, dtype=torch.float64)
    with pytest.raises(TrainingDivergedError):
        elbo_loss(model, random_batch(), beta=1.0, noise=noise)


def test_posterior_summary_ignores_padding():
    model = tiny_model(seed=4)
    batch = random_batch(seed=5, lengths=(4, 9))
    mean, std = posterior_from_batch(model, batch)
    rng = np.random.default_rng(5)
    alone = collate([random_item(rng, 4, True)])
    mean1, std1 = posterior_from_batch(model, alone)
    assert torch.allclose(mean[0], mean1[0], atol=1e-9)
    assert torch.allclose(std[0], std1[0], atol=1e-9)


def test_stddev_floor_binds_when_head_saturates():
    model = tiny_model(seed=6)
    model.encoder.heads["std_raw"].weight.data.zero_()
    model.encoder.heads["std_raw"].bias.data.fill_(-50.0)
    q = encode(model, scripted_trajectory())
    assert np.all(q.stddev >= STD_FLOOR)
    assert q.stddev == pytest.approx(np.full(LATENT, STD_FLOOR), abs=1e-12)


def test_encode_is_deterministic_and_seat_sensitive():
    model = tiny_model(seed=7)
    traj = scripted_trajectory()
    q1, q2 = encode(model, traj), encode(model, traj)
    assert np.array_equal(q1.mean, q2.mean) and np.array_equal(q1.stddev, q2.stddev)
    q_other = encode(model, traj, focal=1)
    assert not np.array_equal(q1.mean, q_other.mean)


def test_encode_rejects_layout_mismatch():
    model = tiny_model()
    other = get_layout("tiny-choice")
    handle = scripted_partner("onion-preferring", other.name)
    traj = rollout_pair(other, handle.make_agent(), handle.make_agent(),
                        env_seed=1, agent_seed=2)
    with pytest.raises(ValueError, match="layout"):
        encode(model, traj)


def test_zeroed_action_head_decodes_uniform():
    model = tiny_model(seed=8)
    model.decoder.heads["action"].weight.data.zero_()
    model.decoder.heads["action"].bias.data.zero_()
    state = reset(LAYOUT, seed=0)
    p = decode_step(model, np.zeros(LATENT), {"obs": [observe(state, 0)], "actions": []})
    assert np.allclose(p, np.full(6, 1 / 6), atol=1e-12)


def test_decode_step_rejects_misaligned_history():
    model = tiny_model()
    state = reset(LAYOUT, seed=0)
    with pytest.raises(ValueError, match="history"):
        decode_step(model, np.zeros(LATENT), {"obs": [observe(state, 0)], "actions": [2]})


def test_decoder_hidden_state_is_causal():
    """Outputs up to step t must not move when steps after t change."""
    model = tiny_model(seed=9)
    rng = np.random.default_rng(11)
    obs = torch.from_numpy(rng.random((7, 1, *OBS_SHAPE)))
    prev = torch.from_numpy(rng.integers(0, 6, size=(7, 1)))
    z = torch.from_numpy(rng.standard_normal(LATENT))

    def run(o, a):
        onehot = torch.nn.functional.one_hot(a, 6).to(torch.float64)
        zt = z.view(1, 1, -1).expand(7, 1, -1)
        out, _ = model.decoder(o, torch.cat([onehot, zt], dim=-1))
        return out["action"].detach()

    base = run(obs, prev)
    mutated_obs = obs.clone()
    mutated_obs[4:] = torch.from_numpy(rng.random((3, 1, *OBS_SHAPE)))
    mutated_prev = prev.clone()
    mutated_prev[4:] = (prev[4:] + 1) % 6
    changed = run(mutated_obs, mutated_prev)
    assert torch.equal(base[:4], changed[:4])
    assert not torch.equal(base[4:], changed[4:])


def test_incremental_agent_matches_whole_sequence_decoding():
    torch.manual_seed(10)
    enc = build_network(ENC_SPEC, OBS_SHAPE)
    dec = build_network(DEC_SPEC, OBS_SHAPE)
    model = VaeModel(enc, dec, LATENT, LAYOUT.name, OBS_SHAPE)
    z = np.random.default_rng(2).standard_normal(LATENT)
    agent = DecoderAgent(model, z)
    state = reset(LAYOUT, seed=3)
    agent.begin_episode(LAYOUT, 0, seed=11)
    history = {"obs": [], "actions": []}
    for _ in range(6):
        history["obs"].append(observe(state, 0))
        name = agent.act(state)
        expected = decode_step(model, z, history)
        assert np.array_equal(agent.last_probs, expected)
        history["actions"].append(ACTIONS.index(name))
        state, _, _ = step(state, name, "stay")


def test_decoder_agent_is_seed_deterministic():
    model = tiny_model(seed=12, dtype=torch.float32)
    z = np.random.default_rng(4).standard_normal(LATENT)

    def play(seed):
        agent = DecoderAgent(model, z)
        state = reset(LAYOUT, seed=5)
        agent.begin_episode(LAYOUT, 1, seed=seed)
        out = []
        for _ in range(12):
            a = agent.act(state)
            out.append(a)
            state, _, _ = step(state, "stay", a)
        return out

    assert play(21) == play(21)


def test_decoder_agent_rejects_wrong_layout():
    model = tiny_model()
    agent = DecoderAgent(model, np.zeros(LATENT))
    with pytest.raises(ValueError, match="layout"):
        agent.begin_episode(get_layout("tiny-choice"), 0, seed=0)


def test_sample_prior_is_standard_normal():
    rng = np.random.default_rng(7)
    draws = np.stack([sample_prior(rng, 16) for _ in range(50_000)])
    se = 1 / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0)) < 4 * se)
    assert np.all(np.abs(draws.std(axis=0) - 1.0) < 0.02)


def test_model_file_roundtrip_is_bit_exact(tmp_path, trained):
    model, _, _ = trained
    path = tmp_path / "style.vae"
    model.save(path)
    loaded = VaeModel.load(path)
    assert loaded.encoder_hash() == model.encoder_hash()
    assert loaded.decoder_hash() == model.decoder_hash()
    assert loaded.latent_dim == model.latent_dim
    assert loaded.layout_name == model.layout_name
    traj = scripted_trajectory()
    q1, q2 = encode(model, traj), encode(loaded, traj)
    assert np.array_equal(q1.mean, q2.mean)
    assert np.array_equal(q1.stddev, q2.stddev)


def test_model_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "garbage.vae"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError, match="magic"):
        VaeModel.load(path)


def test_training_selects_checkpoint_nearest_target_kl(trained):
    model, manifest, cfg = trained
    kls = model.meta["checkpoint_kls"]
    assert len(kls) == 3  # epochs 2, 4, 6
    best = select_nearest_kl(kls, cfg.target_kl)
    assert model.meta["selected_epoch"] == kls[best][0]
    assert model.meta["selected_val_kl"] == kls[best][1]
    val_items = load_chunks(manifest, part="val", chunk_length=cfg.chunk_length)
    assert validation_kl(model, val_items) == pytest.approx(model.meta["selected_val_kl"])


def test_training_curves_show_reconstruction_progress(trained):
    model, _, cfg = trained
    curves = model.meta["curves"]
    assert len(curves) == cfg.epochs
    assert curves[-1]["recon_nll"] < curves[0]["recon_nll"]
    betas = [row["beta"] for row in curves]
    assert betas == sorted(betas)
    assert model.meta["dataset_hash"]


def test_partner_handle_plays_from_saved_file(tmp_path, trained):
    model, _, _ = trained
    path = tmp_path / "partner.vae"
    model.save(path)
    z = sample_prior(np.random.default_rng(9), LATENT)
    handle = make_partner(VaeModel.load(path), z, vae_path=str(path))
    payload = handle.to_dict()
    assert payload["kind"] == "decoder" and len(payload["z"]) == LATENT
    agent = handle.make_agent()
    state = reset(LAYOUT, seed=6)
    agent.begin_episode(LAYOUT, 0, seed=13)
    for _ in range(LAYOUT.episode_length):
        a = agent.act(state)
        assert a in ACTIONS
        state, _, _ = step(state, a, "stay")
