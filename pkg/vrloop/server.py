#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""An OpenAI-compatible endpoint answering with the simulated agents.

Rendered prompts are matched back to their template to recover the problem
and the solution under review; the simulated generator or verifier then
answers exactly as it would in-process.
"""
import math
import os
import re
import sys
import time
from logging import Logger
from signal import SIGTERM, signal
from typing import Any, Dict, List, Optional, Sequence

import uvicorn
from fastapi import FastAPI, HTTPException, Request, Response
from opentelemetry.instrumentation.fastapi import FastAPIInstrumentor
from pydantic import BaseModel, ConfigDict, Field
from uuid6 import uuid6
from ivcap_service import getLogger, otel_instrument, service_log_config

from .agents.base import TokenDist
from .agents.simulated import SimGenerator, SimLogprobModel, SimVerifier, round_of
from .core import Attempt, Message, Problem, VerifyMode
from .embeddings import HashingEmbedder
from .protocol import PromptSet, TemplateId, extract_answer
from .version import get_version

logger = getLogger("server")

_TOKEN_RE = re.compile(r"\n|[.,]| ?[^ .,\n]+| ")


class ChatRequest(BaseModel):
    model_config = ConfigDict(extra="allow")

    model: str = "sim"
    messages: List[Message]
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: Optional[int] = None
    seed: Optional[int] = None
    logprobs: bool = False
    top_logprobs: Optional[int] = None
    continue_final_message: bool = False
    add_generation_prompt: bool = True
    prompt_logprobs: Optional[int] = None


class EmbeddingRequest(BaseModel):
    model: str = "sim"
    input: List[str] = Field(description="texts to embed")


def split_tokens(text: str) -> List[str]:
    """Split text generated from the simulated vocabulary back into its tokens."""
    return _TOKEN_RE.findall(text)


class SimBackend:
    def __init__(self, problems: Sequence[Problem], generator: SimGenerator, verifier: SimVerifier,
                 logprobs: SimLogprobModel, prompts: PromptSet, embedder: Optional[HashingEmbedder] = None):
        self.by_statement = {p.statement: p for p in problems}
        self.generator = generator
        self.verifier = verifier
        self.logprobs = logprobs
        self.prompts = prompts
        self.embedder = embedder or HashingEmbedder()

    def chat(self, req: ChatRequest) -> Dict[str, Any]:
        seed = req.seed or 0
        if req.continue_final_message and req.messages and req.messages[-1].role == "assistant":
            return self._score(req)
        if req.logprobs:
            text, dists = self.logprobs.complete_with_logprobs(req.messages, seed=seed, max_tokens=req.max_tokens)
            return _completion(req, text, dists)
        return _completion(req, self._respond(req.messages, seed), None)

    def _respond(self, messages: List[Message], seed: int) -> str:
        user = next((m.content for m in reversed(messages) if m.role == "user"), "")
        matched = self.prompts.match(user)
        if matched is None:
            text, _ = self.logprobs.complete_with_logprobs(messages, seed=seed)
            return text
        tid, slots = matched
        problem = self.by_statement.get(slots.get("statement"))
        if problem is None:
            raise HTTPException(status_code=400, detail="unknown problem statement")
        prior = slots.get("prior_solution")
        prev = None
        if prior is not None:
            prev = Attempt(round_index=round_of(prior), text=prior, extracted_answer=extract_answer(prior))
        if tid == TemplateId.GENERATOR_INITIAL:
            return self.generator.generate_initial(problem, seed=seed).text
        if tid == TemplateId.GENERATOR_REFINE:
            return self.generator.refine(problem, prev, slots.get("feedback"), seed=seed).text
        if tid == TemplateId.GENERATOR_RETRY:
            return self.generator.refine(problem, prev, None, seed=seed).text
        mode = VerifyMode.REFERENCE_CONDITIONED if tid == TemplateId.VERIFIER_TEACHER else VerifyMode.PLAIN
        return self.verifier.respond(problem, prev, mode, seed=seed)

    def _score(self, req: ChatRequest) -> Dict[str, Any]:
        context, prefix = req.messages[:-1], req.messages[-1].content
        tokens = split_tokens(prefix)
        if req.prompt_logprobs is not None:
            dists = self.logprobs.score_tokens(context, tokens)
            resp = _completion(req, "", None)
            resp["prompt_logprobs"] = [_prompt_entry(d) for d in dists]
            return resp
        d = self.logprobs.next_token(context, tokens)
        return _completion(req, d.chosen_token, [d])

    def embed(self, req: EmbeddingRequest) -> Dict[str, Any]:
        vectors = self.embedder.embed(req.input)
        return {
            "object": "list",
            "model": req.model,
            "data": [{"object": "embedding", "index": i, "embedding": v} for i, v in enumerate(vectors)],
            "usage": {"prompt_tokens": sum(len(t.split()) for t in req.input), "total_tokens": 0},
        }


def _completion(req: ChatRequest, text: str, dists: Optional[List[TokenDist]]) -> Dict[str, Any]:
    prompt_tokens = sum(len(m.content.split()) for m in req.messages)
    completion_tokens = len(dists) if dists is not None else len(text.split())
    logprobs = None
    if dists is not None:
        k = req.top_logprobs or 0
        logprobs = {"content": [{
            "token": d.chosen_token,
            "logprob": d.chosen_logprob,
            "top_logprobs": [{"token": t, "logprob": lp} for t, lp in d.alternatives[:k]],
        } for d in dists]}
    return {
        "id": f"chatcmpl-{uuid6()}",
        "object": "chat.completion",
        "created": int(time.time()),
        "model": req.model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop",
            "logprobs": logprobs,
        }],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens,
                  "total_tokens": prompt_tokens + completion_tokens},
    }


def _prompt_entry(d: TokenDist) -> Dict[str, Dict[str, Any]]:
    entry = {}
    listed = sorted(d.listed().items(), key=lambda kv: -kv[1])
    for rank, (tok, p) in enumerate(listed, 1):
        entry[str(rank)] = {"logprob": math.log(p), "rank": rank, "decoded_token": tok}
    return entry


def create_sim_app(backend: SimBackend) -> FastAPI:
    app = FastAPI(title="vrloop simulated endpoint", version=get_version(), docs_url="/api")

    @app.post("/v1/chat/completions")
    def chat_completions(req: ChatRequest):
        return backend.chat(req)

    @app.post("/v1/embeddings")
    def embeddings(req: EmbeddingRequest):
        return backend.embed(req)

    @app.get("/_healtz", tags=["System"])
    def healtz():
        return {"version": os.environ.get("VERSION", get_version())}

    async def _add_version(request: Request, call_next) -> Response:
        resp = await call_next(request)
        resp.headers["Vrloop-Version"] = get_version()
        return resp

    app.middleware("http")(_add_version)
    return app


def start_sim_server(
    backend: SimBackend,
    *,
    host: str = "0.0.0.0",
    port: int = 8090,
    with_telemetry: Optional[bool] = None,
    logger: Optional[Logger] = None,
    run_opts: Optional[Dict[str, Any]] = None,
):
    """Serve `backend` with uvicorn until interrupted."""
    # shutdown pod gracefully
    signal(SIGTERM, lambda _1, _2: sys.exit(0))
    logger = logger or getLogger("server")
    app = create_sim_app(backend)
    otel_instrument(with_telemetry, lambda _: FastAPIInstrumentor.instrument_app(app), logger)
    logger.info(f"simulated endpoint v{get_version()} on {host}:{port} - {len(backend.by_statement)} problem(s)")
    server = uvicorn.Server(config=uvicorn.Config(app, host=host, port=port, log_config=service_log_config(),
                                                  **(run_opts or {})))
    server.run()
