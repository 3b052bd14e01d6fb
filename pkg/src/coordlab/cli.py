"""Pipeline driver: one subcommand per stage.

Each stage resolves a RunConfig from an optional YAML file plus overriding
flags, verifies any hashes declared for its inputs, runs, and leaves the
exact resolved config (with its own hash) next to the outputs. Rerunning a
stored config with the same seeds reproduces content hashes for the
deterministic stages.
"""

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .agents import CooperatorHandle
from .cooperator import (FinetuneConfig, finetune, prior_sampler,
                         train_cooperator, train_gamma_ha)
from .errors import (CoordLabError, DataOverlapError, EmptyDatasetError,
                     HashMismatchError, LayoutError, MissingArtifactError,
                     ReplayMismatchError)
from .evaluate import (build_report, cooperator_training_hashes, export_latents,
                       normalize, train_proxy)
from .kitchen import get_layout, parse_layout
from .nets import NetworkSpec, decoder_spec, encoder_spec
from .params import config_hash
from .population import (Population, build_fcp_population, scripted_population,
                         train_ppo_bc, train_selfplay)
from .rl import PpoConfig
from .service import AgentRegistry, scripted_registry, serve
from .trajdata import DatasetManifest, Trajectory, generate_dataset, split
from .vae import VaeConfig, VaeModel, train_vae

STAGES = (
    "train-population",
    "gen-dataset",
    "train-vae",
    "train-cooperator",
    "finetune-vae",
    "eval",
    "export-latents",
    "serve",
    "replay",
    "validate-layout",
)

# stages that write artifacts and must store their RunConfig alongside them
OUT_STAGES = frozenset(STAGES[:7])

RUN_CONFIG_NAME = "run-config.yaml"

COOPERATOR_MODES = ("gamma-prior", "gamma-ha", "ppo-bc")


class UsageError(CoordLabError):
    """Bad command line or config file shape."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2) with bare text
        raise UsageError(message)


@dataclass
class RunConfig:
    """Everything a stage needs, hashable and storable as one document."""

    stage: str
    layout: str = ""
    seed: int = 0
    workers: int = 1
    out: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise UsageError(f"unknown stage {self.stage!r}")
        if self.workers < 1:
            raise UsageError(f"workers must be >= 1, got {self.workers}")
        if not isinstance(self.params, dict):
            raise UsageError("params must be a mapping")

    def hash(self) -> str:
        return config_hash(asdict(self))

    def save(self, directory) -> Path:
        doc = asdict(self)
        doc["config_hash"] = self.hash()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RUN_CONFIG_NAME
        path.write_text(yaml.safe_dump(doc, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"config file not found: {path}")
        raw = yaml.safe_load(path.read_text())
        if not isinstance(raw, dict):
            raise UsageError(f"config file {path} must hold a mapping")
        declared = raw.pop("config_hash", None)
        try:
            cfg = cls(**raw)
        except TypeError as e:
            raise UsageError(f"bad config file {path}: {e}") from None
        if declared is not None and declared != cfg.hash():
            raise HashMismatchError(str(path), declared, cfg.hash())
        return cfg


# ---------------------------------------------------------------------------
# Input checking


def _require(path, what: str) -> Path:
    if not str(path):
        raise MissingArtifactError(f"{what} not declared in params")
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"{what} not found: {p}")
    return p


def artifact_hash(path) -> str:
    """Content hash of a declared input: datasets by trajectory content,
    populations by registry, plain files by bytes."""
    p = _require(path, "artifact")
    if p.is_dir():
        if (p / "manifest.json").exists():
            return DatasetManifest.load(p).dataset_hash()
        if (p / "registry.json").exists():
            return hashlib.sha256((p / "registry.json").read_bytes()).hexdigest()
        raise MissingArtifactError(
            f"{p} holds neither manifest.json nor registry.json"
        )
    return hashlib.sha256(p.read_bytes()).hexdigest()


def check_declared_hashes(cfg: RunConfig) -> None:
    """Any param pair <name>/<name>_hash pins the input's content."""
    for key in sorted(cfg.params):
        if not key.endswith("_hash"):
            continue
        target = cfg.params.get(key[:-len("_hash")])
        if target is None:
            continue
        actual = artifact_hash(target)
        if actual != cfg.params[key]:
            raise HashMismatchError(key[:-len("_hash")], cfg.params[key], actual)


def _layout(name: str):
    try:
        return get_layout(name)
    except KeyError as e:
        raise UsageError(str(e).strip('"')) from None


def _sized_spec(template: NetworkSpec, d: dict) -> NetworkSpec:
    """Config files size networks; heads and extra inputs stay structural."""
    allowed = ("conv_stages", "hidden_sizes", "recurrent_size", "activation")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise UsageError(f"network spec takes only {list(allowed)}, got {unknown}")
    kw = {k: d[k] for k in ("recurrent_size", "activation") if k in d}
    if "conv_stages" in d:
        kw["conv_stages"] = tuple(tuple(s) for s in d["conv_stages"])
    if "hidden_sizes" in d:
        kw["hidden_sizes"] = tuple(d["hidden_sizes"])
    return replace(template, **kw)


def _net_spec(d) -> NetworkSpec | None:
    return None if d is None else _sized_spec(NetworkSpec(), d)


def _ppo_config(d) -> PpoConfig:
    try:
        return PpoConfig(**(d or {}))
    except TypeError as e:
        raise UsageError(f"bad ppo params: {e}") from None


def _vae_config(d, default_seed: int) -> VaeConfig:
    d = dict(d or {})
    latent = int(d.get("latent_dim", VaeConfig.latent_dim))
    for key, template in (("encoder", encoder_spec), ("decoder", decoder_spec)):
        if isinstance(d.get(key), dict):
            d[key] = _sized_spec(template(latent), d[key])
    d.setdefault("seed", default_seed)
    try:
        return VaeConfig(**d)
    except TypeError as e:
        raise UsageError(f"bad vae params: {e}") from None


def _finetune_config(d, default_seed: int) -> FinetuneConfig:
    d = dict(d or {})
    d.setdefault("seed", default_seed)
    try:
        return FinetuneConfig(**d)
    except TypeError as e:
        raise UsageError(f"bad finetune params: {e}") from None


def _load_dataset(path, what: str = "dataset") -> DatasetManifest:
    p = _require(path, what)
    _require(p / "manifest.json", f"{what} manifest")
    return DatasetManifest.load(p)


# ---------------------------------------------------------------------------
# Stage runners: each takes the resolved RunConfig and returns a summary dict.


def run_train_population(cfg: RunConfig) -> dict:
    kind = cfg.params.get("kind", "scripted")
    if kind == "scripted":
        styles = cfg.params.get("styles")
        if not styles:
            raise UsageError("train-population needs params.styles")
        pop = scripted_population(
            styles, cfg.layout,
            population_id=cfg.params.get("population_id", "scripted-zoo"),
            noise=cfg.params.get("noise", 0.0),
        )
        pop.save(cfg.out)
    elif kind == "fcp":
        layout = _layout(cfg.layout)
        ppo = _ppo_config(cfg.params.get("ppo"))
        net = _net_spec(cfg.params.get("net"))
        seeds = cfg.params.get("seeds") or [cfg.seed + i
                                            for i in range(cfg.params.get("n_seeds", 3))]
        kwargs = {}
        if "checkpoint_fractions" in cfg.params:
            kwargs["checkpoint_fractions"] = tuple(cfg.params["checkpoint_fractions"])
        sets = [train_selfplay(layout, ppo, seed=int(s), net_spec=net, **kwargs)
                for s in seeds]
        pop = build_fcp_population(
            sets, cfg.params.get("population_id", "fcp-zoo"), cfg.out
        )
    else:
        raise UsageError(f"unknown population kind {kind!r}")
    return {"population_id": pop.id, "members": len(pop.members)}


def run_gen_dataset(cfg: RunConfig) -> dict:
    pop = Population.load(_require(cfg.params.get("population", ""), "population"))
    pop.verify_hashes()
    if cfg.layout and pop.layout_name != cfg.layout:
        raise UsageError(
            f"population is for layout {pop.layout_name!r}, config says {cfg.layout!r}"
        )
    layout = _layout(pop.layout_name)
    manifest = generate_dataset(
        pop, layout, int(cfg.params.get("n_trajectories", 16)), cfg.seed, cfg.out,
        dataset_id=cfg.params.get("dataset_id"), workers=cfg.workers,
    )
    if "split" in cfg.params:
        sp = cfg.params["split"]
        manifest = split(manifest, train_fraction=sp.get("fraction", 0.7),
                         seed=sp.get("seed", 0))
    return {"dataset_id": manifest.id, "n_trajectories": manifest.n_trajectories,
            "dataset_hash": manifest.dataset_hash()}


def run_train_vae(cfg: RunConfig) -> dict:
    manifest = _load_dataset(cfg.params.get("dataset", ""))
    layout = _layout(cfg.layout or manifest.layout_name)
    model = train_vae(manifest, layout, _vae_config(cfg.params.get("vae"), cfg.seed))
    path = Path(cfg.out) / "vae.bin"
    model.save(path)
    return {"vae": str(path), "latent_dim": model.latent_dim,
            "encoder_hash": model.encoder_hash(), "decoder_hash": model.decoder_hash()}


def run_train_cooperator(cfg: RunConfig) -> dict:
    mode = cfg.params.get("mode", "gamma-prior")
    if mode not in COOPERATOR_MODES:
        raise UsageError(
            f"unknown cooperator mode {mode!r}; choose from: {', '.join(COOPERATOR_MODES)}"
        )
    layout = _layout(cfg.layout)
    ppo = _ppo_config(cfg.params.get("ppo"))
    net = _net_spec(cfg.params.get("net"))
    if mode == "ppo-bc":
        manifest = _load_dataset(cfg.params.get("human_dataset", ""), "human dataset")
        handle = train_ppo_bc(layout, manifest, ppo, cfg.seed, cfg.out,
                              bc_epochs=int(cfg.params.get("bc_epochs", 30)),
                              net_spec=net)
    else:
        vae_path = _require(cfg.params.get("vae", ""), "vae")
        vae = VaeModel.load(vae_path)
        if mode == "gamma-prior":
            handle = train_cooperator(vae, prior_sampler(), layout, ppo, cfg.seed,
                                      cfg.out, net_spec=net, vae_path=str(vae_path))
        else:
            manifest = _load_dataset(cfg.params.get("human_dataset", ""),
                                     "human dataset")
            handle = train_gamma_ha(vae, manifest, layout, ppo,
                                    _finetune_config(cfg.params.get("finetune"),
                                                     cfg.seed),
                                    cfg.seed, cfg.out, net_spec=net)
    return {"cooperator_id": handle.id, "mode": mode,
            "content_hash": handle.content_hash}


def run_finetune_vae(cfg: RunConfig) -> dict:
    vae = VaeModel.load(_require(cfg.params.get("vae", ""), "vae"))
    manifest = _load_dataset(cfg.params.get("dataset", ""))
    tuned = finetune(vae, manifest, _finetune_config(cfg.params.get("finetune"),
                                                     cfg.seed))
    path = Path(cfg.out) / "vae-finetuned.bin"
    tuned.save(path)
    return {"vae": str(path), "encoder_hash": tuned.encoder_hash(),
            "decoder_hash": tuned.decoder_hash()}


def run_eval(cfg: RunConfig) -> dict:
    from .scripted import ScriptedStyle, scripted_partner

    layout = _layout(cfg.layout)
    paths = cfg.params.get("cooperators")
    if not paths:
        raise UsageError("eval needs params.cooperators (list of handle files)")
    cooperators = [CooperatorHandle.load(_require(p, "cooperator")) for p in paths]

    partners = []
    for entry in cfg.params.get("scripted_partners", []):
        if isinstance(entry, str):
            entry = {"style": entry}
        style = ScriptedStyle(entry["style"], entry.get("noise", 0.0))
        partners.append(scripted_partner(style, layout.name))

    proxy_manifest = None
    proxy_spec = cfg.params.get("proxy")
    if proxy_spec is not None:
        proxy_manifest = _load_dataset(proxy_spec.get("dataset", ""), "proxy dataset")
        training_hashes = set()
        for coop in cooperators:
            training_hashes |= cooperator_training_hashes(coop)
        partners.append(train_proxy(
            proxy_manifest, layout, cfg.out, training_hashes=sorted(training_hashes),
            seed=int(proxy_spec.get("seed", cfg.seed)),
            epochs=int(proxy_spec.get("epochs", 30)),
            lr=float(proxy_spec.get("lr", 5e-4)),
            net_spec=_net_spec(proxy_spec.get("net")),
        ))
    if not partners:
        raise UsageError("eval needs scripted_partners and/or a proxy")

    report = build_report(cooperators, partners, layout,
                          n_seeds=int(cfg.params.get("n_seeds", 5)),
                          base_seed=cfg.seed, proxy_manifest=proxy_manifest)
    if cfg.params.get("normalize", True):
        report = normalize(report)
    path = Path(cfg.out) / "report.tsv"
    report.save(path)
    return {"report": str(path), "rows": len(report.rows),
            "report_hash": hashlib.sha256(report.to_text().encode()).hexdigest()}


def run_export_latents(cfg: RunConfig) -> dict:
    vae = VaeModel.load(_require(cfg.params.get("vae", ""), "vae"))
    src = _require(cfg.params.get("source", ""), "source")
    if (src / "manifest.json").exists():
        source = DatasetManifest.load(src)
    elif (src / "registry.json").exists():
        source = Population.load(src)
        source.verify_hashes()
    else:
        raise MissingArtifactError(
            f"{src} holds neither manifest.json nor registry.json"
        )
    path = Path(cfg.out) / "latents.tsv"
    export = export_latents(vae, source, int(cfg.params.get("n_per_source", 8)),
                            path, seed=cfg.seed)
    return {"latents": str(path), "rows": len(export.labels)}


def run_serve(cfg: RunConfig) -> dict:
    if "registry" in cfg.params:
        registry = AgentRegistry.from_dir(_require(cfg.params["registry"], "registry"))
    else:
        if not cfg.layout:
            raise UsageError("serve needs params.registry or a layout for "
                             "scripted agents")
        registry = scripted_registry(cfg.layout, cfg.params.get("noise", 0.0))
    host = cfg.params.get("host", "127.0.0.1")
    port = int(cfg.params.get("port", 8000))
    serve(host, port, registry,
          record_dir=cfg.params.get("record_dir"),
          time_scale=float(cfg.params.get("time_scale", 1.0)))
    return {"host": host, "port": port, "agents": registry.ids()}


def run_replay(cfg: RunConfig) -> dict:
    path = _require(cfg.params.get("path", ""), "trajectory")
    traj = Trajectory.load(path)
    traj.replay()
    return {"path": str(path), "layout": traj.layout.name, "steps": traj.length,
            "score": traj.score}


def run_validate_layout(cfg: RunConfig) -> dict:
    name = cfg.params.get("name") or cfg.layout
    if not name:
        raise UsageError("validate-layout needs a layout name or file")
    p = Path(name)
    layout = parse_layout(p.read_text()) if p.is_file() else _layout(name)
    return {"layout": layout.name, "width": layout.width, "height": layout.height,
            "episode_length": layout.episode_length, "cook_time": layout.cook_time,
            "recipes": len(layout.recipes)}


RUNNERS = {
    "train-population": run_train_population,
    "gen-dataset": run_gen_dataset,
    "train-vae": run_train_vae,
    "train-cooperator": run_train_cooperator,
    "finetune-vae": run_finetune_vae,
    "eval": run_eval,
    "export-latents": run_export_latents,
    "serve": run_serve,
    "replay": run_replay,
    "validate-layout": run_validate_layout,
}


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coordlab",
                     description="kitchen coordination pipeline")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="stage")
    for stage in STAGES:
        p = sub.add_parser(stage, description=f"run the {stage} stage")
        p.add_argument("--config", help="YAML RunConfig file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--out", help="output directory")
        if stage in ("replay", "validate-layout"):
            p.add_argument("target", nargs="?",
                           help="trajectory file / layout name or file")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
        if cfg.stage != args.stage:
            raise UsageError(
                f"config file is for stage {cfg.stage!r}, invoked as {args.stage!r}"
            )
    else:
        cfg = RunConfig(stage=args.stage)
    for name in ("seed", "workers", "out"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    target = getattr(args, "target", None)
    if target is not None:
        cfg.params[{"replay": "path", "validate-layout": "name"}[args.stage]] = target
    cfg.__post_init__()
    return cfg


def _error_code(exc: Exception) -> str:
    if isinstance(exc, UsageError):
        return "usage"
    if isinstance(exc, MissingArtifactError) or isinstance(exc, FileNotFoundError):
        return "missing-artifact"
    if isinstance(exc, HashMismatchError):
        return "hash-mismatch"
    if isinstance(exc, ReplayMismatchError):
        return "replay-mismatch"
    if isinstance(exc, DataOverlapError):
        return "data-overlap"
    if isinstance(exc, EmptyDatasetError):
        return "empty-dataset"
    if isinstance(exc, LayoutError):
        return "invalid-layout"
    return "error"


def _fail(code: str, detail: str, stage=None) -> int:
    record = {"error": code, "stage": stage, "detail": detail}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return 2 if code in ("usage", "unknown-stage") else 1


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-") and argv[0] not in STAGES:
        return _fail("unknown-stage",
                     f"unknown stage {argv[0]!r}; stages: {', '.join(STAGES)}",
                     argv[0])
    stage = None
    try:
        args = build_parser().parse_args(argv)
        stage = args.stage
        cfg = resolve_config(args)
        check_declared_hashes(cfg)
        if cfg.stage in OUT_STAGES:
            if not cfg.out:
                raise UsageError(f"stage {cfg.stage} needs an output directory (--out)")
            cfg.save(cfg.out)
        summary = {"stage": cfg.stage, "config_hash": cfg.hash()}
        summary.update(RUNNERS[cfg.stage](cfg))
        print(json.dumps(summary, sort_keys=True))
        return 0
    except (CoordLabError, ValueError, TypeError, KeyError, OSError) as e:
        return _fail(_error_code(e), str(e), stage)


if __name__ == "__main__":
    sys.exit(main())
