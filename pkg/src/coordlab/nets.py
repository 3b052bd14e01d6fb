"""Recurrent network substrate shared by policies, encoders and decoders.

One architecture family: a stack of same-padding conv stages over the grid
observation, optional extra vector inputs concatenated after flattening,
an MLP trunk, a GRU, and named linear heads. The "action" head is returned
as normalized log-probabilities; every other head is returned raw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatchError

N_ACTIONS = 6

_ACTIVATIONS = {"relu": F.relu, "tanh": torch.tanh}


@dataclass(frozen=True)
class NetworkSpec:
    """Sizes for one recurrent network.

    conv_stages: (kernel, out_channels) pairs applied with same padding.
    extra_input: width of a per-step vector input concatenated to the
    flattened conv features (action one-hots, latent codes, ...).
    """

    conv_stages: tuple = ((3, 32), (3, 64), (3, 32))
    hidden_sizes: tuple = (64,)
    recurrent_size: int = 64
    activation: str = "relu"
    heads: tuple = (("action", N_ACTIONS), ("value", 1))
    extra_input: int = 0

    def validate(self) -> None:
        for k, ch in self.conv_stages:
            if k <= 0 or ch <= 0:
                raise ValueError(f"conv stage sizes must be positive, got ({k}, {ch})")
        if any(h <= 0 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be positive: {self.hidden_sizes}")
        if self.recurrent_size <= 0:
            raise ValueError(f"recurrent size must be positive: {self.recurrent_size}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.heads:
            raise ValueError("at least one head required")
        for name, size in self.heads:
            if size <= 0:
                raise ValueError(f"head {name!r} size must be positive, got {size}")
        if self.extra_input < 0:
            raise ValueError("extra_input must be >= 0")
        heads = dict(self.heads)
        if "action" in heads and heads["action"] != N_ACTIONS:
            raise ValueError(f"action head must have {N_ACTIONS} outputs, got {heads['action']}")

    def to_dict(self) -> dict:
        return {
            "conv_stages": [list(s) for s in self.conv_stages],
            "hidden_sizes": list(self.hidden_sizes),
            "recurrent_size": self.recurrent_size,
            "activation": self.activation,
            "heads": [list(h) for h in self.heads],
            "extra_input": self.extra_input,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            conv_stages=tuple(tuple(s) for s in d["conv_stages"]),
            hidden_sizes=tuple(d["hidden_sizes"]),
            recurrent_size=d["recurrent_size"],
            activation=d["activation"],
            heads=tuple((n, s) for n, s in d["heads"]),
            extra_input=d.get("extra_input", 0),
        )


def policy_spec() -> NetworkSpec:
    return NetworkSpec()


def encoder_spec(latent_dim: int = 16) -> NetworkSpec:
    # encoder reads (obs, one-hot a, one-hot b) and emits posterior stats
    return NetworkSpec(
        hidden_sizes=(256,),
        recurrent_size=256,
        heads=(("mean", latent_dim), ("std_raw", latent_dim)),
        extra_input=2 * N_ACTIONS,
    )


def decoder_spec(latent_dim: int = 16) -> NetworkSpec:
    # decoder reads (obs, one-hot previous own action, z) and emits an action
    return NetworkSpec(
        hidden_sizes=(256,),
        recurrent_size=256,
        heads=(("action", N_ACTIONS),),
        extra_input=N_ACTIONS + latent_dim,
    )


def _orthogonal(layer: nn.Module, gain: float) -> None:
    nn.init.orthogonal_(layer.weight, gain=gain)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)


class RecurrentNet(nn.Module):
    """Conv -> MLP -> GRU -> heads, built from a NetworkSpec.

    forward consumes (T, B, C, H, W) observation sequences; splitting a
    sequence and carrying the recurrent state is exactly equivalent to one
    whole-sequence call.
    """

    def __init__(self, spec: NetworkSpec, obs_shape):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.obs_shape = tuple(obs_shape)
        c, h, w = self.obs_shape
        self._act = _ACTIVATIONS[spec.activation]

        convs = []
        in_ch = c
        for k, ch in spec.conv_stages:
            convs.append(nn.Conv2d(in_ch, ch, k, padding=k // 2))
            in_ch = ch
        self.convs = nn.ModuleList(convs)
        flat = in_ch * h * w + spec.extra_input

        mlp = []
        last = flat
        for size in spec.hidden_sizes:
            mlp.append(nn.Linear(last, size))
            last = size
        self.mlp = nn.ModuleList(mlp)

        self.gru = nn.GRU(last, spec.recurrent_size)
        self.heads = nn.ModuleDict(
            {name: nn.Linear(spec.recurrent_size, size) for name, size in spec.heads}
        )
        self._init_weights()

    def _init_weights(self):
        gain = nn.init.calculate_gain(self.spec.activation)
        for conv in self.convs:
            _orthogonal(conv, gain)
        for lin in self.mlp:
            _orthogonal(lin, gain)
        for name, param in self.gru.named_parameters():
            if "weight" in name:
                nn.init.orthogonal_(param)
            else:
                nn.init.zeros_(param)
        for name, head in self.heads.items():
            # near-uniform action logits at init keep early PPO stable
            _orthogonal(head, 0.01 if name == "action" else 1.0)

    def initial_state(self, batch_size: int) -> torch.Tensor:
        p = next(self.parameters())
        return torch.zeros(batch_size, self.spec.recurrent_size, dtype=p.dtype, device=p.device)

    def forward(self, obs_seq: torch.Tensor, extra_seq=None, state=None):
        """Return ({head: (T, B, size)}, final_state (B, R)).

        The "action" head is log-softmax normalized; others are raw.
        """
        if obs_seq.dim() != 5:
            raise ShapeMismatchError("input", "(T, B, C, H, W)", tuple(obs_seq.shape))
        t, b = obs_seq.shape[:2]
        if tuple(obs_seq.shape[2:]) != self.obs_shape:
            raise ShapeMismatchError("input", self.obs_shape, tuple(obs_seq.shape[2:]))
        if self.spec.extra_input:
            if extra_seq is None:
                raise ShapeMismatchError("extra_input", (t, b, self.spec.extra_input), None)
            if tuple(extra_seq.shape) != (t, b, self.spec.extra_input):
                raise ShapeMismatchError(
                    "extra_input", (t, b, self.spec.extra_input), tuple(extra_seq.shape)
                )

        # All matmuls run on (B, ...) shapes, one timestep at a time. Kernel
        # choice then never depends on sequence length, which keeps
        # chunked-vs-whole recurrence bit-exact.
        feats = []
        for i in range(t):
            x = obs_seq[i]
            for conv in self.convs:
                x = self._act(conv(x))
            x = x.reshape(b, -1)
            if self.spec.extra_input:
                x = torch.cat([x, extra_seq[i]], dim=-1)
            for lin in self.mlp:
                x = self._act(lin(x))
            feats.append(x)

        if state is None:
            state = self.initial_state(b)
        out, final = self.gru(torch.stack(feats), state.unsqueeze(0))
        outputs = {}
        for name, head in self.heads.items():
            y = torch.stack([head(out[i]) for i in range(t)])
            outputs[name] = F.log_softmax(y, dim=-1) if name == "action" else y
        return outputs, final.squeeze(0)

    def step(self, obs: torch.Tensor, extra=None, state=None):
        """Single-step convenience: obs (B, C, H, W) -> ({head: (B, size)}, state)."""
        extra_seq = None if extra is None else extra.unsqueeze(0)
        outputs, final = self.forward(obs.unsqueeze(0), extra_seq, state)
        return {k: v.squeeze(0) for k, v in outputs.items()}, final


def build_network(spec: NetworkSpec, obs_shape) -> RecurrentNet:
    return RecurrentNet(spec, obs_shape)
