"""Whole-system gate: every shipped guarantee measured in one place.

Each test gathers its evidence, then reports exactly one PASS or FAIL line
through util.acceptance; conftest echoes the block after the run summary.
Training recipes here are pinned (seeds, budgets, network sizes) so reruns
land on the same numbers.
"""

import contextlib
import hashlib
import inspect
import io
import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
import torch
import yaml

from coordlab.agents import CooperatorHandle, save_policy_net
from coordlab.cli import main as cli_main
from coordlab.cooperator import (
    FinetuneConfig,
    estimate_human_latent,
    finetune,
    prior_sampler,
    train_cooperator,
    train_gamma_ha,
)
from coordlab.evaluate import cross_play
from coordlab.kitchen import (
    ACTIONS,
    builtin_layouts,
    format_layout,
    get_layout,
    tiny_layouts,
)
from coordlab.nets import NetworkSpec, build_network
from coordlab.population import (
    FCP_CHECKPOINTS,
    FCP_SEEDS,
    scripted_population,
    train_bc_policy,
    train_vs_partner,
)
from coordlab.rl import PpoConfig
from coordlab.scripted import ScriptedStyle, scripted_partner
from coordlab.seqdata import collate, load_chunks
from coordlab.trajdata import Trajectory, generate_dataset, import_human, split
from coordlab.vae import (
    GaussianPosterior,
    VaeConfig,
    VaeModel,
    analytic_kl,
    decoder_logprobs,
    elbo_loss,
    encode,
    posterior_from_batch,
    train_vae,
)

from util import acceptance, bfs_min_steps_to_serve, finite_difference_check, rollout


# -- engine ------------------------------------------------------------------


def test_search_oracle_matches_engine_optimum():
    layout = get_layout("tiny-duo")
    steps, plan = bfs_min_steps_to_serve(layout, max_depth=20)
    _, rewards, _ = rollout(layout, 0, plan)
    first = next(t for t, r in enumerate(rewards) if r > 0) + 1
    acceptance(
        "environment-oracle",
        steps == 12 and first == 12 and sum(rewards) == 20.0,
        f"search minimum on tiny-duo is {steps} joint steps; replaying the plan "
        f"first serves at t={first} for {sum(rewards):g} points",
    )


def test_random_rollouts_replay_bit_identically():
    rng = np.random.default_rng(2024)
    layouts = builtin_layouts() + tiny_layouts()
    mismatches = 0
    for i in range(100):
        layout = layouts[i % len(layouts)]
        seed = int(rng.integers(1 << 31))
        n = int(min(layout.episode_length, 60))
        actions = [(str(rng.choice(ACTIONS)), str(rng.choice(ACTIONS)))
                   for _ in range(n)]
        _, rewards, _ = rollout(layout, seed, actions)
        traj = Trajectory(layout_text=format_layout(layout), seed=seed,
                          actions=actions, rewards=rewards)
        copy = Trajectory.from_text(traj.to_text())
        copy.replay()  # raises on any divergence from stored rewards
        if copy.to_text() != traj.to_text() or copy.score != traj.score:
            mismatches += 1
    acceptance(
        "determinism-replay",
        mismatches == 0,
        f"100 random action sequences over {len(layouts)} layouts serialized, "
        f"reloaded and replayed bit-identically ({mismatches} mismatches)",
    )


# -- numerics ----------------------------------------------------------------


def test_kl_and_gradients_match_oracles():
    rng = np.random.default_rng(2)
    worst_sigma = 0.0
    for _ in range(20):
        dim = int(rng.integers(1, 6))
        q = GaussianPosterior(rng.normal(0.0, 2.0, dim),
                              np.exp(rng.normal(0.0, 0.5, dim)))
        z = q.mean + q.stddev * rng.standard_normal((1_000_000, dim))
        logq = (-0.5 * (((z - q.mean) / q.stddev) ** 2 + math.log(2 * math.pi))
                - np.log(q.stddev))
        logp = -0.5 * (z**2 + math.log(2 * math.pi))
        per_sample = (logq - logp).sum(axis=1)
        se = per_sample.std(ddof=1) / math.sqrt(per_sample.size)
        worst_sigma = max(worst_sigma, abs(per_sample.mean() - analytic_kl(q)) / se)

    # every network family, shrunk under 50 parameters, in double precision
    torch.manual_seed(0)
    obs_shape = (1, 2, 2)
    obs = torch.randn(3, 2, *obs_shape, dtype=torch.float64)
    acts = torch.randint(0, 6, (3, 2))
    targets = torch.randn(3, 2, dtype=torch.float64)

    policy = build_network(
        NetworkSpec(conv_stages=((1, 1),), hidden_sizes=(2,), recurrent_size=1),
        obs_shape).double()
    encoder = build_network(
        NetworkSpec(conv_stages=((1, 1),), hidden_sizes=(2,), recurrent_size=1,
                    heads=(("mean", 2), ("std_raw", 2)), extra_input=2),
        obs_shape).double()
    decoder = build_network(
        NetworkSpec(conv_stages=((1, 1),), hidden_sizes=(2,), recurrent_size=1,
                    heads=(("action", 6),), extra_input=3),
        obs_shape).double()
    extra_enc = torch.randn(3, 2, 2, dtype=torch.float64)
    extra_dec = torch.randn(3, 2, 3, dtype=torch.float64)

    def policy_loss():
        out, _ = policy(obs)
        return -out["action"].gather(-1, acts.unsqueeze(-1)).sum()

    def value_loss():
        out, _ = policy(obs)
        return ((out["value"].squeeze(-1) - targets) ** 2).mean()

    def encoder_loss():
        out, _ = encoder(obs, extra_enc)
        std = torch.nn.functional.softplus(out["std_raw"][-1]) + 1e-3
        mean = out["mean"][-1]
        return 0.5 * (mean**2 + std**2 - 1.0 - torch.log(std**2)).sum()

    def decoder_loss():
        out, _ = decoder(obs, extra_dec)
        return -out["action"].gather(-1, acts.unsqueeze(-1)).sum()

    sizes = {net: sum(p.numel() for p in net.parameters())
             for net in (policy, encoder, decoder)}
    worst_grad = max(
        finite_difference_check(policy, policy_loss),
        finite_difference_check(policy, value_loss),
        finite_difference_check(encoder, encoder_loss),
        finite_difference_check(decoder, decoder_loss),
    )
    acceptance(
        "numerics",
        worst_sigma < 3.0 and max(sizes.values()) <= 50,
        f"closed-form KL within {worst_sigma:.2f} standard errors of 1e6-sample "
        f"Monte Carlo on 20 posteriors (limit 3); finite differences confirm "
        f"policy/value/encoder/decoder gradients on "
        f"{sorted(sizes.values())}-parameter double nets, worst rel err "
        f"{worst_grad:.1e} (limit 1e-4)",
    )


# -- loss contracts ----------------------------------------------------------


def _uniform_action_dataset(layout, out_dir, n_trajectories=12):
    rng = np.random.default_rng(42)
    raw = out_dir / "raw"
    raw.mkdir(parents=True)
    text = format_layout(layout)
    for i in range(n_trajectories):
        actions = [(str(rng.choice(ACTIONS)), str(rng.choice(ACTIONS)))
                   for _ in range(layout.episode_length)]
        _, rewards, _ = rollout(layout, i, actions)
        Trajectory(layout_text=text, seed=i, actions=actions, rewards=rewards,
                   source={"kind": "human"}).save(raw / f"{i:03d}.traj")
    return import_human(raw, out_dir / "ds")


def test_loss_reduces_to_reconstruction_at_beta_zero(tmp_path):
    layout = get_layout("tiny-duo")
    manifest = _uniform_action_dataset(layout, tmp_path)

    enc = NetworkSpec(conv_stages=((1, 4),), hidden_sizes=(8,), recurrent_size=8,
                      heads=(("mean", 2), ("std_raw", 2)), extra_input=12)
    dec = NetworkSpec(conv_stages=((1, 4),), hidden_sizes=(8,), recurrent_size=8,
                      heads=(("action", 6),), extra_input=8)
    cfg = VaeConfig(latent_dim=2, chunk_length=15, encoder=enc, decoder=dec)
    model = VaeModel.fresh(cfg, layout, seed=3)
    batch = collate(load_chunks(manifest, chunk_length=15)[:8])
    loss, recon, kl = elbo_loss(model, batch, beta=0.0,
                                generator=torch.Generator().manual_seed(0))
    identity = loss.item() == recon.item() and kl.item() > 0.0

    net_spec = NetworkSpec(conv_stages=((1, 4),), hidden_sizes=(8,),
                           recurrent_size=8)
    _, nll = train_bc_policy(layout, manifest, seed=0, epochs=20,
                             net_spec=net_spec)
    gap = abs(nll - math.log(6))
    acceptance(
        "elbo-contract",
        identity and gap < 0.05,
        f"beta=0 loss equals reconstruction nll bit-for-bit with kl={kl.item():.2f} "
        f"ignored; cloning uniform-random actions converges to nll {nll:.4f}, "
        f"{gap:.4f} from ln6 (limit 0.05)",
    )


# -- latent separability -----------------------------------------------------


def _chunk_style(item):
    return item.source["a" if item.source["seat"] == 0 else "b"]


def test_latent_space_separates_scripted_styles(tmp_path):
    layout = get_layout("tiny-choice")
    styles = ("onion-preferring", "tomato-preferring")
    pop = scripted_population(styles, layout.name, noise=0.05)
    manifest = generate_dataset(pop, layout, 200, seed=17,
                                out_dir=tmp_path / "ds", workers=4)
    split(manifest, train_fraction=0.7, seed=3)

    enc = NetworkSpec(conv_stages=((3, 16),), hidden_sizes=(32,), recurrent_size=32,
                      heads=(("mean", 4), ("std_raw", 4)), extra_input=12)
    dec = NetworkSpec(conv_stages=((3, 16),), hidden_sizes=(32,), recurrent_size=32,
                      heads=(("action", 6),), extra_input=10)
    cfg = VaeConfig(latent_dim=4, epochs=150, chunk_length=50, batch_size=32,
                    checkpoint_interval=25, target_kl=8.0, beta_end=0.02,
                    learning_rate=1e-3, seed=5, encoder=enc, decoder=dec)
    model = train_vae(manifest, layout, cfg)

    def posterior_means(items):
        means, labels = [], []
        for item in items:
            with torch.no_grad():
                mean, _ = posterior_from_batch(model, collate([item]))
            means.append(mean[0].double().numpy())
            labels.append(_chunk_style(item))
        return np.stack(means), labels

    train_means, train_labels = posterior_means(load_chunks(manifest, part="train"))
    val_items = load_chunks(manifest, part="val")
    val_means, val_labels = posterior_means(val_items)
    centroids = {
        s: train_means[[i for i, lab in enumerate(train_labels) if s in lab]].mean(axis=0)
        for s in styles
    }
    accuracy = float(np.mean([
        min(styles, key=lambda s: np.linalg.norm(v - centroids[s])) in lab
        for v, lab in zip(val_means, val_labels)
    ]))

    agreement = {}
    for s in styles:
        z = torch.tensor(centroids[s], dtype=torch.float32)
        hits = steps = 0
        for item in val_items:
            if s not in _chunk_style(item):
                continue
            batch = collate([item])
            with torch.no_grad():
                logp = decoder_logprobs(model, batch, z.repeat(batch.n_chunks, 1))
            mask = batch.mask.bool()
            hits += int((logp.argmax(-1) == batch.actions_focal)[mask].sum())
            steps += int(mask.sum())
        agreement[s] = hits / steps

    acceptance(
        "vae-separability",
        accuracy >= 0.90 and min(agreement.values()) >= 0.80,
        f"held-out nearest-centroid accuracy {accuracy:.3f} (floor 0.90); "
        f"centroid-conditioned decoder agreement "
        f"{agreement[styles[0]]:.3f}/{agreement[styles[1]]:.3f} (floor 0.80)",
    )


# -- cooperator transfer -----------------------------------------------------

POP_STYLES = ("onion-preferring", "tomato-preferring", "clockwise", "idleish")
HELD_OUT = "counterclockwise"
TRANSFER_SEEDS = (0, 1, 2)
PPO_BUDGET = 200_000
POLICY_NET = NetworkSpec(conv_stages=((3, 8),), hidden_sizes=(32,),
                         recurrent_size=16)


def _transfer_ppo():
    return PpoConfig(parallel_envs=16, total_env_steps=PPO_BUDGET, epochs=4,
                     learning_rate=5e-3, entropy_coeff=0.05,
                     shaping_weight=0.3, shaping_fraction=0.5)


def _median(values):
    return sorted(values)[len(values) // 2]


@pytest.fixture(scope="module")
def transfer(tmp_path_factory):
    """Population, style model and the three cooperator arms, scored against
    the held-out style. Shared by the two directional tests below."""
    root = tmp_path_factory.mktemp("transfer")
    layout = get_layout("tiny-choice")
    pop = scripted_population(POP_STYLES, layout.name, noise=0.1)
    manifest = generate_dataset(pop, layout, 160, seed=23,
                                out_dir=root / "ds", workers=4)
    split(manifest, train_fraction=0.7, seed=3)

    latent = 3
    enc = NetworkSpec(conv_stages=((3, 16),), hidden_sizes=(32,), recurrent_size=32,
                      heads=(("mean", latent), ("std_raw", latent)), extra_input=12)
    dec = NetworkSpec(conv_stages=((3, 16),), hidden_sizes=(32,), recurrent_size=32,
                      heads=(("action", 6),), extra_input=6 + latent)
    cfg = VaeConfig(latent_dim=latent, epochs=200, chunk_length=50, batch_size=32,
                    checkpoint_interval=25, target_kl=8.0, beta_end=0.02,
                    learning_rate=1e-3, seed=5, encoder=enc, decoder=dec)
    vae = train_vae(manifest, layout, cfg)
    vae.save(root / "vae.bin")

    human_pop = scripted_population((HELD_OUT,), layout.name, noise=0.05)
    human = generate_dataset(human_pop, layout, 10, seed=71,
                             out_dir=root / "human-ds", workers=2)
    finetune_cfg = FinetuneConfig(mode="dft", anchor_coef=1.0, epochs=50,
                                  learning_rate=1e-4, batch_size=32,
                                  chunk_length=50, seed=9)

    held_out = scripted_partner(ScriptedStyle(HELD_OUT, 0.0), layout.name)

    def score(handle):
        mean, _ = cross_play(handle, held_out, layout, n_seeds=5, base_seed=100)
        return mean

    member = pop.members[0]

    def member_factory(episode_seed, player):
        agent = member.make_agent()
        agent.begin_episode(layout, player, episode_seed)
        return agent

    prior, single, ha = [], [], []
    for seed in TRANSFER_SEEDS:
        handle = train_cooperator(vae, prior_sampler(), layout, _transfer_ppo(),
                                  seed, root / f"prior-s{seed}",
                                  vae_path=str(root / "vae.bin"),
                                  net_spec=POLICY_NET)
        prior.append(score(handle))

        net, _ = train_vs_partner(layout, _transfer_ppo(), seed, member_factory,
                                  net_spec=POLICY_NET)
        out = root / f"single-s{seed}"
        out.mkdir()
        save_policy_net(net, out / "cooperator.params", meta={"role": "cooperator"})
        baseline = CooperatorHandle(id=f"single-partner-s{seed}",
                                    layout_name=layout.name,
                                    path=str(out / "cooperator.params"))
        baseline.content_hash = baseline.compute_hash()
        single.append(score(baseline))

        handle = train_gamma_ha(vae, human, layout, _transfer_ppo(), finetune_cfg,
                                seed, root / f"ha-s{seed}", net_spec=POLICY_NET)
        ha.append(score(handle))

    return SimpleNamespace(layout=layout, vae=vae, human=human,
                           finetune_cfg=finetune_cfg, prior=prior,
                           single=single, ha=ha)


def test_prior_cooperator_transfers_as_well_as_single_partner(transfer):
    prior_med = _median(transfer.prior)
    single_med = _median(transfer.single)
    acceptance(
        "generative-directional",
        prior_med >= single_med,
        f"cross-play vs held-out {HELD_OUT}, median of seeds {TRANSFER_SEEDS}: "
        f"prior-sampled training {prior_med:g} (runs {transfer.prior}) vs "
        f"single fixed partner {single_med:g} (runs {transfer.single})",
    )


def test_human_targeted_cooperator_matches_prior(transfer):
    tuned = finetune(transfer.vae, transfer.human, transfer.finetune_cfg)
    encoder_same = tuned.encoder_hash() == transfer.vae.encoder_hash()
    decoder_moved = tuned.decoder_hash() != transfer.vae.decoder_hash()

    z_bar = estimate_human_latent(tuned, transfer.human)
    means = [encode(tuned, transfer.human.load_trajectory(i)).mean
             for i in range(transfer.human.n_trajectories)]
    z_exact = np.array_equal(z_bar, np.mean(np.stack(means), axis=0))

    ha_med = _median(transfer.ha)
    prior_med = _median(transfer.prior)
    acceptance(
        "human-adaptive-targeting",
        encoder_same and decoder_moved and z_exact and ha_med >= prior_med,
        f"10-trajectory targeting of {HELD_OUT}: median {ha_med:g} "
        f"(runs {transfer.ha}) vs prior {prior_med:g} (runs {transfer.prior}); "
        f"decoder-only tuning left encoder bit-identical={encoder_same}; "
        f"latent center equals the mean of posterior means={z_exact}",
    )


# -- pipeline reproducibility ------------------------------------------------


def _cli(args):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli_main([str(a) for a in args])
    text = (out if code == 0 else err).getvalue().strip()
    return code, json.loads(text.splitlines()[-1])


def _stage_config(path, **doc):
    path.write_text(yaml.safe_dump(doc))
    return path


def test_pipeline_rerun_reproduces_content_hashes(tmp_path):
    root = tmp_path
    micro_ppo = {"parallel_envs": 2, "total_env_steps": 120, "epochs": 2,
                 "learning_rate": 1e-3}
    tiny_net = {"conv_stages": [[1, 4]], "hidden_sizes": [8], "recurrent_size": 8}

    stages = [
        ("train-population", root / "pop",
         _stage_config(root / "pop.yaml", stage="train-population",
                       layout="tiny-duo",
                       params={"styles": ["onion-preferring", "idleish"],
                               "noise": 0.1})),
        ("gen-dataset", root / "data",
         _stage_config(root / "data.yaml", stage="gen-dataset",
                       layout="tiny-duo", seed=11, workers=2,
                       params={"population": str(root / "pop"),
                               "n_trajectories": 6,
                               "split": {"fraction": 0.7, "seed": 3}})),
        ("gen-dataset", root / "heldout",
         _stage_config(root / "heldout.yaml", stage="gen-dataset",
                       layout="tiny-duo", seed=99, workers=2,
                       params={"population": str(root / "pop"),
                               "n_trajectories": 4})),
        ("train-vae", root / "vae",
         _stage_config(root / "vae.yaml", stage="train-vae",
                       layout="tiny-duo", seed=5,
                       params={"dataset": str(root / "data"),
                               "vae": {"latent_dim": 2, "epochs": 4,
                                       "chunk_length": 15, "batch_size": 8,
                                       "checkpoint_interval": 2, "target_kl": 5.0,
                                       "encoder": tiny_net, "decoder": tiny_net}})),
        ("train-cooperator", root / "coop",
         _stage_config(root / "coop.yaml", stage="train-cooperator",
                       layout="tiny-duo", seed=1,
                       params={"mode": "gamma-prior",
                               "vae": str(root / "vae" / "vae.bin"),
                               "ppo": micro_ppo, "net": tiny_net})),
        ("eval", root / "eval",
         _stage_config(root / "eval.yaml", stage="eval",
                       layout="tiny-duo", seed=0,
                       params={"cooperators": [str(root / "coop" / "cooperator.json")],
                               "scripted_partners": ["onion-preferring"],
                               "proxy": {"dataset": str(root / "heldout"),
                                         "epochs": 3, "net": tiny_net},
                               "n_seeds": 5})),
    ]
    first = {}
    for stage, out, config in stages:
        code, doc = _cli([stage, "--config", config, "--out", out])
        assert code == 0, doc
        first[str(out)] = doc

    # replay every stage from the run configs stored beside its artifacts
    rerun = {}
    for stage, out, _ in stages:
        code, doc = _cli([stage, "--config", out / "run-config.yaml",
                          "--out", root / (out.name + "-rerun")])
        assert code == 0, doc
        rerun[str(out)] = doc

    data_match = (first[str(root / "data")]["dataset_hash"]
                  == rerun[str(root / "data")]["dataset_hash"])
    report_match = (first[str(root / "eval")]["report_hash"]
                    == rerun[str(root / "eval")]["report_hash"])
    vae_match = (
        hashlib.sha256((root / "vae" / "vae.bin").read_bytes()).hexdigest()
        == hashlib.sha256((root / "vae-rerun" / "vae.bin").read_bytes()).hexdigest()
    )
    coop_match = (
        CooperatorHandle.load(root / "coop" / "cooperator.json").content_hash
        == CooperatorHandle.load(root / "coop-rerun" / "cooperator.json").content_hash
    )
    acceptance(
        "pipeline-reproducibility",
        data_match and report_match and vae_match and coop_match,
        f"rerun from stored run configs: dataset hash match={data_match}, "
        f"eval report hash match={report_match}, model bytes match={vae_match}, "
        f"cooperator parameters match={coop_match}",
    )


# -- shipped defaults --------------------------------------------------------


def test_shipped_training_defaults():
    vae_cfg = VaeConfig()
    schedule = vae_cfg.beta_schedule()
    ppo_cfg = PpoConfig()
    split_default = inspect.signature(split).parameters["train_fraction"].default
    checks = {
        "latent 16": vae_cfg.latent_dim == 16,
        "target kl 32": vae_cfg.target_kl == 32.0,
        "beta 0 to 1": schedule.start == 0.0 and schedule.end == 1.0,
        "chunk 100": vae_cfg.chunk_length == 100,
        "train fraction 0.7": split_default == 0.7,
        "discount 0.99": ppo_cfg.discount == 0.99,
        "gae lambda 0.95": ppo_cfg.gae_lambda == 0.95,
        "ppo epochs 15": ppo_cfg.epochs == 15,
        "learning rate 5e-4": ppo_cfg.learning_rate == 5e-4
                              and vae_cfg.learning_rate == 5e-4,
        "population 8x3": FCP_SEEDS == 8 and FCP_CHECKPOINTS == 3,
    }
    bad = [name for name, ok in checks.items() if not ok]
    acceptance(
        "default-conformance",
        not bad,
        "all shipped defaults at their documented values"
        if not bad else f"defaults drifted: {', '.join(bad)}",
    )
