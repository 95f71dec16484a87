#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""A small client for OpenAI-compatible chat-completion and embedding endpoints."""
import os
import random
import threading
import time
from typing import Any, Callable, Dict, List, Optional, Tuple

import httpx
from pydantic import BaseModel
from ivcap_service import getLogger

from ..core import CallUsage, Message
from ..errors import CapabilityError, TransportError
from .base import EndpointConfig, TokenDist

logger = getLogger("client")

RETRY_STATUS = {429, 500, 502, 503, 504}


class ChatResult(BaseModel):
    text: str
    token_dists: List[TokenDist] = []
    usage: CallUsage


class ChatClient:
    """Thread-safe client enforcing the endpoint's in-flight bound.

    Retries transport errors, 429 and 5xx responses with exponential backoff
    and jitter. The request body, including `seed`, is re-sent unchanged.
    """

    def __init__(
        self,
        cfg: EndpointConfig,
        *,
        http: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        base_url = os.environ.get("VRLOOP_BASE_URL", cfg.base_url).rstrip("/")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(cfg.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        if http is None:
            http = httpx.Client(base_url=base_url, timeout=cfg.timeout)
            self._prefix = ""
            self._owns_http = True
        else:
            # an injected client (e.g. a TestClient) keeps its own base url
            self._prefix = httpx.URL(base_url).path.rstrip("/")
            self._owns_http = False
        self._http = http
        self._headers = headers
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.max_observed_in_flight = 0
        self.requests_sent = 0
        self.scoring_mechanism = cfg.scoring

    def close(self):
        if self._owns_http:
            self._http.close()

    # ---- transport ----

    def post(self, path: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        url = f"{self._prefix}{path}"
        attempt = 0
        while True:
            try:
                resp = self._send(url, payload)
                if resp.status_code < 400:
                    return resp.json()
                if resp.status_code not in RETRY_STATUS:
                    raise TransportError(f"{path} returned {resp.status_code}: {resp.text[:200]}", resp.status_code)
                err = TransportError(f"{path} returned {resp.status_code}", resp.status_code)
            except httpx.TransportError as ex:
                err = TransportError(f"{path} failed - {type(ex).__name__}: {ex}")
            if attempt >= self.cfg.max_retries:
                logger.error(f"giving up on {path} after {attempt + 1} attempt(s) - {err}")
                raise err
            delay = min(self.cfg.backoff_max, self.cfg.backoff_base * (2 ** attempt))
            delay = delay * random.uniform(0.5, 1.0)
            logger.warning(f"retrying {path} in {delay:.2f}s (attempt {attempt + 1}) - {err}")
            self._sleep(delay)
            attempt += 1

    def _send(self, url: str, payload: Dict[str, Any]) -> httpx.Response:
        with self._slots:
            with self._lock:
                self.in_flight += 1
                self.requests_sent += 1
                self.max_observed_in_flight = max(self.max_observed_in_flight, self.in_flight)
            try:
                return self._http.post(url, json=payload, headers=self._headers)
            finally:
                with self._lock:
                    self.in_flight -= 1

    # ---- chat ----

    def _chat_payload(self, messages: List[Message], seed: Optional[int], max_tokens: Optional[int]) -> Dict[str, Any]:
        payload = {
            "model": self.cfg.model,
            "messages": [m.model_dump() for m in messages],
            "temperature": self.cfg.temperature,
            "top_p": self.cfg.top_p,
            "max_tokens": max_tokens or self.cfg.max_tokens,
        }
        if seed is not None:
            payload["seed"] = seed
        payload.update(self.cfg.extra_body)
        return payload

    def chat(
        self,
        messages: List[Message],
        *,
        seed: Optional[int] = None,
        max_tokens: Optional[int] = None,
        logprobs: bool = False,
        role: str = "",
        round_index: int = 0,
    ) -> ChatResult:
        payload = self._chat_payload(messages, seed, max_tokens)
        if logprobs:
            payload["logprobs"] = True
            payload["top_logprobs"] = self.cfg.top_logprobs
        start = time.perf_counter()
        data = self.post("/chat/completions", payload)
        elapsed = time.perf_counter() - start
        try:
            choice = data["choices"][0]
            text = choice["message"].get("content") or ""
        except (KeyError, IndexError, TypeError) as ex:
            raise TransportError(f"malformed chat completion response - {ex}")
        dists = []
        if logprobs:
            content = (choice.get("logprobs") or {}).get("content")
            if content is None:
                raise CapabilityError(f"endpoint {self.cfg.base_url} returned no token logprobs")
            dists = [self._token_dist(i, entry) for i, entry in enumerate(content)]
        u = data.get("usage") or {}
        usage = CallUsage(
            role=role,
            round_index=round_index,
            prompt_tokens=int(u.get("prompt_tokens") or 0),
            completion_tokens=int(u.get("completion_tokens") or 0),
            wall_time=elapsed,
        )
        return ChatResult(text=text, token_dists=dists, usage=usage)

    def _token_dist(self, position: int, entry: Dict[str, Any]) -> TokenDist:
        alts = [(a["token"], a["logprob"]) for a in entry.get("top_logprobs") or []]
        return TokenDist.from_logprobs(position, entry["token"], entry.get("logprob"), alts, k=self.cfg.top_logprobs)

    # ---- logprob capability ----

    def complete_with_logprobs(self, messages: List[Message], *, seed: int,
                               max_tokens: Optional[int] = None) -> Tuple[str, List[TokenDist]]:
        result = self.chat(messages, seed=seed, max_tokens=max_tokens, logprobs=True)
        return result.text, result.token_dists

    def score_tokens(self, messages: List[Message], tokens: List[str]) -> List[TokenDist]:
        """Distributions of this model at each position of a forced continuation."""
        if self.cfg.scoring == "prompt_logprobs":
            return self._score_prompt_logprobs(messages, tokens)
        return [self._score_position(messages, tokens, i) for i in range(len(tokens))]

    def _prefill_payload(self, messages: List[Message], prefix: str) -> Dict[str, Any]:
        payload = self._chat_payload(messages + [Message(role="assistant", content=prefix)], None, 1)
        payload["continue_final_message"] = True
        payload["add_generation_prompt"] = False
        return payload

    def _score_position(self, messages: List[Message], tokens: List[str], i: int) -> TokenDist:
        payload = self._prefill_payload(messages, "".join(tokens[:i]))
        payload["temperature"] = 0.0
        payload["logprobs"] = True
        payload["top_logprobs"] = self.cfg.top_logprobs
        data = self.post("/chat/completions", payload)
        try:
            entry = data["choices"][0]["logprobs"]["content"][0]
        except (KeyError, IndexError, TypeError):
            raise CapabilityError(f"endpoint {self.cfg.base_url} cannot score forced tokens")
        alts = [(a["token"], a["logprob"]) for a in entry.get("top_logprobs") or []]
        return TokenDist.from_logprobs(i, tokens[i], None, alts, k=self.cfg.top_logprobs)

    def _score_prompt_logprobs(self, messages: List[Message], tokens: List[str]) -> List[TokenDist]:
        payload = self._prefill_payload(messages, "".join(tokens))
        payload["prompt_logprobs"] = self.cfg.top_logprobs
        data = self.post("/chat/completions", payload)
        entries = data.get("prompt_logprobs")
        if not entries or len(entries) < len(tokens):
            raise CapabilityError(f"endpoint {self.cfg.base_url} returned no prompt logprobs")
        dists = []
        for i, (tok, entry) in enumerate(zip(tokens, entries[-len(tokens):])):
            cands = sorted((entry or {}).values(), key=lambda c: c.get("rank", 0))
            alts = [(c.get("decoded_token", ""), c["logprob"]) for c in cands]
            chosen = next((lp for t, lp in alts if t == tok), None)
            dists.append(TokenDist.from_logprobs(i, tok, chosen, alts, k=self.cfg.top_logprobs))
        return dists

    def probe(self, *, logprobs: bool = True, scoring: bool = False):
        """Fail fast if the endpoint lacks a capability a run depends on."""
        ping = [Message(role="user", content="Reply with the single word: ready")]
        result = self.chat(ping, seed=0, max_tokens=2, logprobs=logprobs)
        if logprobs and not result.token_dists:
            raise CapabilityError(f"endpoint {self.cfg.base_url} returned no token logprobs")
        if scoring:
            self.score_tokens(ping, ["ready"])
        logger.info(f"endpoint {self.cfg.base_url} ({self.cfg.model}) ok - scoring via {self.scoring_mechanism}")

    # ---- embeddings ----

    def embed(self, texts: List[str]) -> List[List[float]]:
        data = self.post("/embeddings", {"model": self.cfg.model, "input": list(texts)})
        rows = sorted(data.get("data") or [], key=lambda d: d.get("index", 0))
        if len(rows) != len(texts):
            raise TransportError(f"expected {len(texts)} embeddings, got {len(rows)}")
        return [row["embedding"] for row in rows]
