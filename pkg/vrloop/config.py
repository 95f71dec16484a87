#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Run configuration: one YAML file, validated section by section."""
import hashlib
import json
import os
from typing import Any, Dict, List, Literal, Optional

import httpx
import yaml
from pydantic import BaseModel, Field, ValidationError

from .agents.base import EndpointConfig, GeneratorAgent, LogprobModel, VerifierAgent
from .agents.client import ChatClient
from .agents.networked import EndpointGenerator, EndpointVerifier
from .agents.simulated import (
    SimGenerator, SimGeneratorParams, SimLogprobModel, SimLogprobParams, SimVerifier, SimVerifierParams,
)
from .core import Bin, LoopConfig
from .embeddings import EmbeddingProvider, EndpointEmbedder, FileEmbedder, HashingEmbedder
from .errors import ConfigError
from .protocol import DEFAULT_FINAL_ANSWER_PATTERN, PromptSet
from .stv import StvConfig

ENDPOINT_SECTIONS = ("generator", "verifier", "teacher", "embeddings")


class RunSection(BaseModel):
    seed: int = Field(0, description="base seed of every derived call seed")
    output_dir: str = Field("runs/default", description="directory for traces, exports and the manifest")
    loops_per_problem: int = Field(32, ge=1, description="independent loops per problem")
    in_flight: int = Field(16, ge=1, description="work items executing at the same time")


class DataSection(BaseModel):
    problems: Optional[str] = Field(None, description="JSONL problems for run-vr, run-bon, build-opd, collect-vil")
    train: Optional[str] = Field(None, description="JSONL training problems for dedup")
    test: Optional[str] = Field(None, description="JSONL test problems for dedup")
    rollouts: int = Field(32, ge=1, description="round-0 generations per problem when estimating pass@1")
    dedup_threshold: float = Field(0.8, ge=-1.0, le=1.0, description="cosine similarity above which a test problem is dropped")
    include_bins: Optional[List[Bin]] = Field(None, description="only run problems in these bins")


class GeneratorSection(BaseModel):
    kind: Literal["simulated", "endpoint"] = "simulated"
    endpoint: EndpointConfig = Field(default_factory=EndpointConfig)
    sim: SimGeneratorParams = Field(default_factory=SimGeneratorParams)
    final_answer_pattern: str = DEFAULT_FINAL_ANSWER_PATTERN


class VerifierSection(BaseModel):
    kind: Literal["simulated", "endpoint"] = "simulated"
    endpoint: EndpointConfig = Field(default_factory=EndpointConfig)
    sim: SimVerifierParams = Field(default_factory=SimVerifierParams)
    logprobs: SimLogprobParams = Field(default_factory=SimLogprobParams,
                                       description="token distributions of the simulated verifier")
    frozen: bool = Field(False, description="weights are not being trained; required for episode collection")
    tag: str = Field("verifier", description="identity recorded on episodes")


class TeacherSection(BaseModel):
    kind: Literal["same", "simulated", "endpoint"] = Field(
        "same", description="'same' uses the verifier model with the reference in its prompt")
    endpoint: EndpointConfig = Field(default_factory=EndpointConfig)
    logprobs: SimLogprobParams = Field(default_factory=SimLogprobParams)


class EmbeddingsSection(BaseModel):
    kind: Literal["hashing", "endpoint", "file"] = "hashing"
    dimension: int = Field(512, ge=8)
    endpoint: EndpointConfig = Field(default_factory=EndpointConfig)
    path: Optional[str] = Field(None, description="precomputed vectors for kind 'file'")
    batch_size: int = Field(64, ge=1)


class StvSection(StvConfig):
    pair_source: Literal["traces", "rollouts"] = "rollouts"
    pairs_per_problem: int = Field(4, ge=1)
    verdict_samples: int = Field(1, ge=1)
    with_sft: bool = Field(False, description="also export teacher-sampled SFT records")


class VilSection(BaseModel):
    max_episodes_per_problem: Optional[int] = Field(None, ge=1)


class BonSection(BaseModel):
    n: Optional[int] = Field(None, ge=1, description="samples per run; defaults to max_rounds + 1")
    budgets: Optional[List[int]] = Field(None, description="refinement rounds r compared against BoN at N = r+1")


class PromptsSection(BaseModel):
    dir: Optional[str] = Field(None, description="directory with template overrides")


class RunConfig(BaseModel):
    run: RunSection = Field(default_factory=RunSection)
    data: DataSection = Field(default_factory=DataSection)
    loop: LoopConfig = Field(default_factory=LoopConfig)
    generator: GeneratorSection = Field(default_factory=GeneratorSection)
    verifier: VerifierSection = Field(default_factory=VerifierSection)
    teacher: TeacherSection = Field(default_factory=TeacherSection)
    embeddings: EmbeddingsSection = Field(default_factory=EmbeddingsSection)
    stv: StvSection = Field(default_factory=StvSection)
    vil: VilSection = Field(default_factory=VilSection)
    bon: BonSection = Field(default_factory=BonSection)
    prompts: PromptsSection = Field(default_factory=PromptsSection)

    def loop_config(self) -> LoopConfig:
        return self.loop.model_copy(update={"seed": self.run.seed})

    @property
    def bon_n(self) -> int:
        return self.bon.n or self.loop.max_rounds + 1

    @property
    def budgets(self) -> List[int]:
        if self.bon.budgets is not None:
            return list(self.bon.budgets)
        return list(range(min(self.loop.max_rounds, self.bon_n - 1) + 1))


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> RunConfig:
    """Read and validate a YAML config; `overrides` maps section -> field -> value."""
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as ex:
            raise ConfigError(f"cannot read config {path} - {ex}")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        if path and data.get("prompts", {}).get("dir"):
            # prompt overrides are resolved relative to the config file
            data["prompts"]["dir"] = os.path.join(os.path.dirname(path), data["prompts"]["dir"])
    for section, values in (overrides or {}).items():
        data.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    base_url = os.environ.get("VRLOOP_BASE_URL")
    if base_url:
        for section in ENDPOINT_SECTIONS:
            data.setdefault(section, {}).setdefault("endpoint", {})["base_url"] = base_url
    try:
        return RunConfig.model_validate(data)
    except ValidationError as ex:
        raise ConfigError(f"invalid config{' ' + path if path else ''}:\n{ex}")


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Agents:
    """Agents of one run, wired from config.

    Endpoint sections with identical settings share one client, and with it
    one in-flight bound; pointing generator and verifier at one endpoint is
    how self-verification is run.
    """

    def __init__(self, cfg: RunConfig, *, http: Optional[httpx.Client] = None):
        self.cfg = cfg
        self._http = http
        self.clients: Dict[str, ChatClient] = {}
        self.prompts = PromptSet.load(cfg.prompts.dir)
        g, v, t = cfg.generator, cfg.verifier, cfg.teacher

        if g.kind == "simulated":
            self.generator: GeneratorAgent = SimGenerator(g.sim, prompts=self.prompts,
                                                          generic_feedback_text=cfg.loop.generic_feedback_text)
        else:
            self.generator = EndpointGenerator(self.client(g.endpoint), self.prompts, g.final_answer_pattern)

        if v.kind == "simulated":
            self.verifier: VerifierAgent = SimVerifier(v.sim, prompts=self.prompts, frozen=v.frozen)
            self.student: LogprobModel = SimLogprobModel(v.logprobs)
        else:
            client = self.client(v.endpoint)
            self.verifier = EndpointVerifier(client, self.prompts, frozen=v.frozen)
            self.student = client

        if t.kind == "same":
            self.teacher: LogprobModel = self.student
        elif t.kind == "simulated":
            self.teacher = SimLogprobModel(t.logprobs)
        else:
            self.teacher = self.client(t.endpoint)

    def client(self, ep: EndpointConfig) -> ChatClient:
        key = ep.model_dump_json()
        if key not in self.clients:
            self.clients[key] = ChatClient(ep, http=self._http)
        return self.clients[key]

    def embedder(self) -> EmbeddingProvider:
        e = self.cfg.embeddings
        if e.kind == "hashing":
            return HashingEmbedder(e.dimension)
        if e.kind == "file":
            if not e.path:
                raise ConfigError("embeddings.path is required for kind 'file'")
            return FileEmbedder(e.path)
        return EndpointEmbedder(self.client(e.endpoint), batch_size=e.batch_size)

    def probe(self, *, logprobs: bool = False, scoring: bool = False):
        """Check endpoint capabilities before any work is scheduled."""
        if self.cfg.generator.kind == "endpoint":
            self.client(self.cfg.generator.endpoint).probe(logprobs=False)
        if self.cfg.verifier.kind == "endpoint":
            self.client(self.cfg.verifier.endpoint).probe(logprobs=logprobs)
        if scoring and isinstance(self.teacher, ChatClient):
            self.teacher.probe(logprobs=False, scoring=True)

    @property
    def scoring_mechanism(self) -> str:
        return getattr(self.teacher, "scoring_mechanism", "")

    def close(self):
        for c in self.clients.values():
            c.close()


def build_agents(cfg: RunConfig, *, http: Optional[httpx.Client] = None) -> Agents:
    return Agents(cfg, http=http)
