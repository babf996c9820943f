"""YAML run configuration: generator, model, training and paths in one file.

Seed precedence: ``--seed`` flag, then the ``OPINIONXF_SEED`` environment
variable, then the file's top-level ``seed``. The resolved seed drives data
generation, the split, parameter initialisation and batch shuffling.
"""
from dataclasses import dataclass, field
import hashlib
import os
from pathlib import Path

import yaml

from .dataset import GeneratorConfig, default_generator_config
from .errors import ConfigError
from .training import TrainConfig

SEED_ENV = "OPINIONXF_SEED"

MODEL_KEYS = {
    "d_model", "n_layers", "n_heads", "d_ff", "use_fusion", "use_quantum", "use_contrastive",
    "fusion_bands", "fusion_activation", "quantum_features", "dropout", "freeze_answer_embeddings",
}

VARIANTS = {
    "base": {"use_fusion": False, "use_quantum": False, "use_contrastive": False},
    "fusion": {"use_fusion": True, "use_quantum": False, "use_contrastive": False},
    "quantum": {"use_fusion": True, "use_quantum": True, "use_contrastive": True},
}


@dataclass
class Paths:
    dataset: Path
    decks: Path
    embeddings: Path
    output_dir: Path


@dataclass
class RunConfig:
    seed: int
    generator: GeneratorConfig
    model: dict
    training: TrainConfig
    paths: Paths
    split_ratio: float = 0.8
    embedding_dim: int = 384
    topics: list | None = None
    raw: dict = field(default_factory=dict)

    def model_overrides(self, variant=None):
        out = dict(self.model)
        if variant is not None:
            out.update(VARIANTS[variant])
        out["seed"] = self.seed
        return out

    def resolved(self):
        """Plain dict of the effective configuration (what gets echoed to disk)."""
        return {
            "seed": self.seed,
            "split_ratio": self.split_ratio,
            "embedding_dim": self.embedding_dim,
            "topics": self.topics,
            "generator": self.generator.to_dict(),
            "model": dict(sorted(self.model.items())),
            "training": self.training.to_dict(),
            "paths": {k: str(v) for k, v in vars(self.paths).items()},
        }

    def dump(self):
        return yaml.safe_dump(self.resolved(), sort_keys=True)

    def digest(self):
        return hashlib.sha256(self.dump().encode()).hexdigest()

    def echo(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        text = self.dump()
        (out_dir / "config.yaml").write_text(text, encoding="utf-8")
        (out_dir / "config.sha256").write_text(self.digest() + "\n", encoding="utf-8")


def resolve_seed(file_seed, cli_seed=None, environ=None):
    environ = os.environ if environ is None else environ
    if cli_seed is not None:
        return int(cli_seed)
    if environ.get(SEED_ENV, "").strip():
        try:
            return int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return int(file_seed)


def load_run_config(path=None, seed=None, out=None, environ=None):
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} must hold a mapping")
        base = path.parent
    return build_run_config(raw, base, seed, out, environ)


def build_run_config(raw, base=None, seed=None, out=None, environ=None):
    base = Path(base or Path.cwd())
    known = {"seed", "split_ratio", "embedding_dim", "topics", "generator", "model", "training", "paths"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    run_seed = resolve_seed(raw.get("seed", 0), seed, environ)
    dim = int(raw.get("embedding_dim", 384))

    gen_raw = raw.get("generator")
    if gen_raw is None:
        generator = default_generator_config(seed=run_seed)
    else:
        gen_raw = dict(gen_raw)
        if "topics" not in gen_raw:
            gen_raw["topics"] = default_generator_config().to_dict()["topics"]
        gen_raw["seed"] = run_seed
        gen_raw.setdefault("embedding_dim", dim)
        try:
            generator = GeneratorConfig.from_dict(gen_raw)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad generator section: {exc}") from None
    generator.seed = run_seed
    generator.embedding_dim = dim

    model = dict(raw.get("model") or {})
    bad = set(model) - MODEL_KEYS
    if bad:
        raise ConfigError(f"unknown model keys: {sorted(bad)}")

    train_raw = dict(raw.get("training") or {})
    train_raw["seed"] = run_seed
    try:
        training = TrainConfig(**train_raw)
    except TypeError as exc:
        raise ConfigError(f"bad training section: {exc}") from None

    p = dict(raw.get("paths") or {})
    data_dir = Path(p.get("data_dir", "data"))

    def rel(value, default):
        v = Path(value) if value is not None else default
        return v if v.is_absolute() else base / v

    output_dir = Path(out) if out is not None else rel(p.get("output_dir"), Path("runs"))
    paths = Paths(
        dataset=rel(p.get("dataset"), data_dir / "dataset.jsonl"),
        decks=rel(p.get("decks"), data_dir / "decks.jsonl"),
        embeddings=rel(p.get("embeddings"), data_dir / "embeddings.txt"),
        output_dir=output_dir,
    )
    ratio = float(raw.get("split_ratio", 0.8))
    topics = raw.get("topics")
    if topics is None:
        topics = generator.topic_names
    return RunConfig(run_seed, generator, model, training, paths, ratio, dim, list(topics), raw)
