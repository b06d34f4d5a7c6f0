"""Declarative run configuration.

One YAML file describes the providers per role (manager, generator,
evaluator, judge), the threshold and retrieval parameters, file paths, and
pipeline options. Secrets never live in the file: ``${VAR}`` interpolates
environment variables at load time and missing required variables fail fast
with a config error.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import yaml

from .core import NamegenError, RetrievalParams, ThresholdParams
from .corpus import HashNgramEmbedder
from .verification import default_rules
from .gateway import (
    CallLedger,
    DecodingParams,
    Gateway,
    HttpTransport,
    RecordingTransport,
    ReplayTransport,
    ScriptedTransport,
    Transport,
)
from .agents import AgentTeam, Evaluator, Generator, Manager
from .pipeline import PipelineOptions
from .prompts import PromptLibrary

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")

ROLES = ("manager", "generator", "evaluator", "judge")

_ROLE_TEMPERATURES = {"manager": 0.2, "generator": 1.5, "evaluator": 0.2, "judge": 0.2}


class ConfigError(NamegenError):
    """The configuration file is invalid or references missing resources."""


def _interpolate(value, path: str):
    if isinstance(value, str):

        def replace(match: re.Match) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(f"{path}: environment variable {name} is not set")
            return os.environ[name]

        return _ENV_RE.sub(replace, value)
    if isinstance(value, dict):
        return {k: _interpolate(v, f"{path}.{k}") for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v, f"{path}[{i}]") for i, v in enumerate(value)]
    return value


@dataclass(frozen=True, slots=True)
class ProviderConfig:
    kind: str  # mock | http | replay
    model: str = "mock"
    base_url: str | None = None
    api_key_env: str | None = None
    temperature: float | None = None
    max_tokens: int = 1024
    seed: int | None = None
    script: str | None = None  # mock: rules file
    cassette: str | None = None  # replay source / recording sink
    record: bool = False

    def decoding(self, role: str) -> DecodingParams:
        temperature = (
            self.temperature
            if self.temperature is not None
            else _ROLE_TEMPERATURES.get(role, 0.2)
        )
        return DecodingParams(
            temperature=temperature, max_tokens=self.max_tokens, seed=self.seed
        )


@dataclass(frozen=True, slots=True)
class PathsConfig:
    corpus: str | None = None
    index: str | None = None
    prompt_dir: str | None = None
    transcripts: str = "runs"


@dataclass(frozen=True, slots=True)
class Config:
    providers: dict[str, ProviderConfig]
    thresholds: ThresholdParams
    paths: PathsConfig
    pipeline: PipelineOptions
    workers: int = 1
    embedder_dim: int = 256
    embedder_seed: int = 0
    #: task type -> accuracy-rule ids; "default" applies to unlisted tasks.
    verification: dict[str, tuple[str, ...]] | None = None

    def provider(self, role: str) -> ProviderConfig:
        try:
            return self.providers[role]
        except KeyError:
            raise ConfigError(f"no provider configured for role {role!r}") from None

    def rules_for_task(self, task_type: str):
        """Resolve the accuracy-rule registry for a task type, or None for
        the built-in default rule set."""
        if not self.verification:
            return None
        ids = self.verification.get(task_type, self.verification.get("default"))
        if ids is None:
            return None
        registry = default_rules()
        unknown = [rule_id for rule_id in ids if rule_id not in registry]
        if unknown:
            raise ConfigError(f"verification names unknown rule ids: {unknown}")
        return {rule_id: registry[rule_id] for rule_id in ids}


def _provider_from_dict(role: str, data: dict) -> ProviderConfig:
    kind = data.get("kind", "mock")
    if kind not in ("mock", "http", "replay"):
        raise ConfigError(f"provider {role}: unknown kind {kind!r}")
    cfg = ProviderConfig(
        kind=kind,
        model=data.get("model", "mock"),
        base_url=data.get("base_url"),
        api_key_env=data.get("api_key_env"),
        temperature=data.get("temperature"),
        max_tokens=int(data.get("max_tokens", 1024)),
        seed=data.get("seed"),
        script=data.get("script"),
        cassette=data.get("cassette"),
        record=bool(data.get("record", False)),
    )
    if kind == "http":
        if not cfg.base_url:
            raise ConfigError(f"provider {role}: http provider needs base_url")
        if cfg.api_key_env and not os.environ.get(cfg.api_key_env):
            raise ConfigError(
                f"provider {role}: environment variable {cfg.api_key_env} is not set"
            )
    if kind == "mock" and not cfg.script:
        raise ConfigError(f"provider {role}: mock provider needs a script file")
    if kind == "replay" and not cfg.cassette:
        raise ConfigError(f"provider {role}: replay provider needs a cassette file")
    return cfg


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    data = _interpolate(raw, "config")

    providers = {
        role: _provider_from_dict(role, block)
        for role, block in (data.get("providers") or {}).items()
    }

    thr = data.get("thresholds") or {}
    ret = data.get("retrieval") or {}
    try:
        thresholds = ThresholdParams(
            delta=float(thr.get("delta", 0.85)),
            alpha=float(thr.get("alpha", 0.75)),
            warmup=int(thr.get("warmup", 2)),
            max_rounds=int(thr.get("max_rounds", 8)),
            retrieval=RetrievalParams(
                coarse_rounds=int(ret.get("coarse_rounds", 2)),
                max_rounds=int(ret.get("max_rounds", 3)),
                top_k=int(ret.get("top_k", 5)),
            ),
        )
    except (ValueError, NamegenError) as exc:
        raise ConfigError(f"invalid threshold/retrieval parameters: {exc}") from exc

    paths_block = data.get("paths") or {}
    paths = PathsConfig(
        corpus=paths_block.get("corpus"),
        index=paths_block.get("index"),
        prompt_dir=paths_block.get("prompt_dir"),
        transcripts=paths_block.get("transcripts", "runs"),
    )
    for label in ("corpus", "index", "prompt_dir"):
        value = getattr(paths, label)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"paths.{label} does not exist: {value}")

    pipe = data.get("pipeline") or {}
    options = PipelineOptions(
        task_type=pipe.get("task_type"),
        expand_key_info=bool(pipe.get("expand_key_info", True)),
        objective_review_rounds=int(pipe.get("objective_review_rounds", 3)),
        design_review_rounds=int(pipe.get("design_review_rounds", 3)),
        shots=int(pipe.get("shots", 2)),
        shots_path=pipe.get("shots_path"),
    )

    bench_block = data.get("bench") or {}
    embed_block = data.get("embedder") or {}
    verification_block = data.get("verification")
    verification = None
    if verification_block:
        if not isinstance(verification_block, dict):
            raise ConfigError("verification must map task types to rule-id lists")
        verification = {
            str(task): tuple(str(rule_id) for rule_id in ids)
            for task, ids in verification_block.items()
        }
    return Config(
        providers=providers,
        thresholds=thresholds,
        paths=paths,
        pipeline=options,
        workers=int(bench_block.get("workers", 1)),
        embedder_dim=int(embed_block.get("dim", 256)),
        embedder_seed=int(embed_block.get("seed", 0)),
        verification=verification,
    )


def load_mock_rules(path: str | Path) -> list[tuple[str | re.Pattern, str]]:
    """Read a mock rules file: a YAML list of {match, reply, regex?}."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read mock script {path}: {exc}") from exc
    if not isinstance(data, list):
        raise ConfigError(f"mock script {path} must be a YAML list")
    rules: list[tuple[str | re.Pattern, str]] = []
    for i, entry in enumerate(data):
        try:
            matcher: str | re.Pattern = str(entry["match"])
            if entry.get("regex"):
                matcher = re.compile(str(entry["match"]))
            rules.append((matcher, str(entry["reply"])))
        except (KeyError, TypeError, re.error) as exc:
            raise ConfigError(f"mock script {path} entry {i}: {exc}") from exc
    return rules


def build_transport(cfg: ProviderConfig, seed: int | None = None) -> Transport:
    if cfg.kind == "mock":
        transport: Transport = ScriptedTransport(load_mock_rules(cfg.script))
    elif cfg.kind == "replay":
        transport = ReplayTransport(cfg.cassette)
    else:
        api_key = os.environ.get(cfg.api_key_env) if cfg.api_key_env else None
        transport = HttpTransport(cfg.base_url, cfg.model, api_key=api_key)
    if cfg.record and cfg.kind != "replay":
        if not cfg.cassette:
            raise ConfigError("recording needs a cassette path")
        transport = RecordingTransport(transport, cfg.cassette)
    return transport


def build_team(
    config: Config,
    prompts: PromptLibrary | None = None,
    ledger: CallLedger | None = None,
) -> AgentTeam:
    """Wire the three pipeline roles to their transports around one shared
    ledger (the judge role is built separately by the reporting layer)."""
    prompts = prompts or PromptLibrary(config.paths.prompt_dir)
    ledger = ledger or CallLedger()
    gateways = {}
    for role in ("manager", "generator", "evaluator"):
        cfg = config.provider(role)
        gateways[role] = Gateway(transport=build_transport(cfg), ledger=ledger)
    return AgentTeam(
        manager=Manager(
            gateways["manager"], prompts, config.provider("manager").decoding("manager")
        ),
        generator=Generator(
            gateways["generator"],
            prompts,
            config.provider("generator").decoding("generator"),
        ),
        evaluator=Evaluator(
            gateways["evaluator"],
            prompts,
            config.provider("evaluator").decoding("evaluator"),
        ),
    )


def build_embedder(config: Config, seed: int | None = None) -> HashNgramEmbedder:
    effective = config.embedder_seed if seed is None else seed
    return HashNgramEmbedder(dim=config.embedder_dim, seed=effective)
