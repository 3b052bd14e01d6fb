"""Episode-level agent interfaces.

An agent is anything with begin_episode(layout, player, seed) and
act(state) -> action name. Handles are the serializable descriptors that
populations, evaluations and the live service exchange; handle.make_agent()
builds a fresh agent whose recurrent state and rng live for one episode.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .kitchen import ACTIONS, observe
from .nets import NetworkSpec, build_network
from .params import ParamSet


class UniformRandomAgent:
    def begin_episode(self, layout, player: int, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def act(self, state) -> str:
        return ACTIONS[self.rng.integers(len(ACTIONS))]


class PolicyAgent:
    """Samples a recurrent policy network step by step."""

    def __init__(self, net, deterministic: bool = False):
        self.net = net
        self.deterministic = deterministic

    def begin_episode(self, layout, player: int, seed: int) -> None:
        self.player = player
        self.hidden = self.net.initial_state(1)
        self.gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFF)

    def act(self, state) -> str:
        obs = torch.from_numpy(observe(state, self.player)).unsqueeze(0)
        with torch.no_grad():
            outputs, self.hidden = self.net.step(obs, state=self.hidden)
            logp = outputs["action"][0]
            if self.deterministic:
                idx = int(logp.argmax())
            else:
                idx = int(torch.multinomial(logp.exp(), 1, generator=self.gen))
        return ACTIONS[idx]


@dataclass
class PartnerHandle:
    """One population member: a parameter-backed policy or a scripted style."""

    id: str
    kind: str  # "params" | "scripted"
    layout_name: str
    path: str | None = None  # ParamSet file for kind="params"
    net_spec: dict | None = None
    style: dict | None = None  # {"style": name, "noise": eps} for kind="scripted"
    provenance: dict = field(default_factory=dict)
    content_hash: str = ""

    def compute_hash(self) -> str:
        if self.kind == "params":
            return ParamSet.load(self.path).state_hash()
        payload = json.dumps(self.style, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def make_agent(self):
        if self.kind == "params":
            return PolicyAgent(load_policy_net(self.path))
        if self.kind == "scripted":
            from .scripted import ScriptedAgent, ScriptedStyle

            return ScriptedAgent(ScriptedStyle(self.style["style"], self.style.get("noise", 0.0)))
        raise ValueError(f"unknown partner kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "layout_name": self.layout_name,
            "path": self.path,
            "net_spec": self.net_spec,
            "style": self.style,
            "provenance": self.provenance,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartnerHandle":
        return cls(**d)


@dataclass
class CooperatorHandle:
    """A trained cooperating policy plus the provenance to rerun it."""

    id: str
    layout_name: str
    path: str
    provenance: dict = field(default_factory=dict)
    content_hash: str = ""

    def compute_hash(self) -> str:
        return ParamSet.load(self.path).state_hash()

    def make_agent(self):
        return PolicyAgent(load_policy_net(self.path))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "layout_name": self.layout_name,
            "path": self.path,
            "provenance": self.provenance,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CooperatorHandle":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CooperatorHandle":
        return cls.from_dict(json.loads(Path(path).read_text()))


def save_policy_net(net, path, meta: dict | None = None) -> ParamSet:
    """Persist a RecurrentNet as a ParamSet carrying its spec and obs shape."""
    meta = dict(meta or {})
    meta["net_spec"] = net.spec.to_dict()
    meta["obs_shape"] = list(net.obs_shape)
    ps = ParamSet.from_module(net, meta=meta)
    ps.save(path)
    return ps


def load_policy_net(path):
    ps = ParamSet.load(path)
    spec = NetworkSpec.from_dict(ps.meta["net_spec"])
    net = build_network(spec, tuple(ps.meta["obs_shape"]))
    ps.load_into(net)
    net.eval()
    return net
