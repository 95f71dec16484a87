#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""JSONL persistence: append-only run files, exported datasets and the run manifest."""
import hashlib
import json
import os
import threading
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Optional, Type, TypeVar

from pydantic import BaseModel, Field, ValidationError
from uuid6 import uuid6
from ivcap_service import getLogger

from .core import CallUsage
from .errors import ConfigError, DataError
from .version import get_version

logger = getLogger("store")

MANIFEST_SCHEMA = "urn:vrloop:schema.manifest.1"
MANIFEST_FILE = "manifest.json"
RUN_URN_PREFIX = "urn:vrloop:run:"

M = TypeVar("M", bound=BaseModel)


def dump_record(record: BaseModel) -> str:
    return record.model_dump_json(by_alias=True)


class JsonlAppender:
    """Single-writer, append-only JSONL file.

    Every record is written as one complete line and fsynced. A torn last
    line left behind by a crash is cut off when the file is reopened.
    """

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        _truncate_torn_tail(path)
        self._fh = open(path, "a", encoding="utf-8")

    def append(self, record: BaseModel):
        line = dump_record(record) + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self):
        with self._lock:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *_):
        self.close()


def _truncate_torn_tail(path: str):
    if not os.path.exists(path):
        return
    with open(path, "rb+") as fh:
        data = fh.read()
        if not data or data.endswith(b"\n"):
            return
        cut = data.rfind(b"\n") + 1
        logger.warning(f"{path}: dropping torn trailing line ({len(data) - cut} bytes)")
        fh.truncate(cut)


def _lines(path: str) -> List[str]:
    """Complete record lines of `path`, without header comments and a torn tail."""
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    if lines and lines[-1] != "":
        logger.warning(f"{path}: ignoring torn trailing line")
    lines = lines[:-1]
    return [line for line in lines if line.strip() and not line.startswith("#")]


def read_jsonl(path: str, model: Type[M]) -> List[M]:
    records = []
    for i, line in enumerate(_lines(path), 1):
        try:
            records.append(model.model_validate_json(line))
        except ValidationError as ex:
            raise DataError(f"{path}: record {i} is not a valid {model.__name__} - {ex}")
    return records


def write_export(path: str, schema: str, records: Iterable[BaseModel]) -> int:
    """Write `records` under a `# <schema>` header; returns the record count.

    The file is assembled as `<path>.partial` and only renamed once complete.
    """
    partial = f"{path}.partial"
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    count = 0
    with open(partial, "w", encoding="utf-8") as fh:
        fh.write(f"# {schema}\n")
        for r in records:
            fh.write(dump_record(r) + "\n")
            count += 1
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(partial, path)
    logger.info(f"wrote {count} record(s) to {path}")
    return count


def read_export(path: str, model: Type[M], schema: str) -> List[M]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header != f"# {schema}":
        raise DataError(f"{path}: expected header '# {schema}', found '{header}'")
    return read_jsonl(path, model)


def trace_digest(path: str) -> str:
    """Order-independent sha256 over the complete records of a JSONL file."""
    h = hashlib.sha256()
    for line in sorted(_lines(path)):
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---- run manifest ----

class UsageTotals(BaseModel):
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_time: float = 0.0

    def add(self, u: CallUsage) -> "UsageTotals":
        return UsageTotals(
            calls=self.calls + 1,
            prompt_tokens=self.prompt_tokens + u.prompt_tokens,
            completion_tokens=self.completion_tokens + u.completion_tokens,
            wall_time=self.wall_time + u.wall_time,
        )


class RunManifest(BaseModel):
    jschema: str = Field(MANIFEST_SCHEMA, alias="$schema")
    run_id: str = Field(description="urn:vrloop:run:<uuid6>")
    config_hash: str = Field(description="sha256 of the validated run config")
    base_seed: int
    engine_version: str
    datasets: Dict[str, str] = Field(default_factory=dict, description="file name -> sha256")
    completed: Dict[str, List[str]] = Field(default_factory=dict, description="arm -> completed work keys")
    usage: Dict[str, UsageTotals] = Field(default_factory=dict, description="role -> usage totals")
    scoring_mechanism: Optional[str] = Field(None, description="how teacher token probabilities were obtained")
    created_at: str
    updated_at: str

    model_config = {"populate_by_name": True}

    def mark_completed(self, arm: str, keys: Iterable[str]):
        done = set(self.completed.get(arm, []))
        done.update(keys)
        self.completed[arm] = sorted(done)

    def add_usage(self, usage: Iterable[CallUsage]):
        for u in usage:
            role = u.role or "unknown"
            self.usage[role] = self.usage.get(role, UsageTotals()).add(u)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def open_manifest(run_dir: str, config_hash: str, base_seed: int) -> RunManifest:
    """Load the manifest of `run_dir`, or create one.

    Raises ConfigError when the directory was started with a different config.
    """
    path = os.path.join(run_dir, MANIFEST_FILE)
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                m = RunManifest.model_validate(json.load(fh))
        except (json.JSONDecodeError, ValidationError) as ex:
            raise ConfigError(f"{path}: unreadable run manifest - {ex}")
        if m.config_hash != config_hash:
            raise ConfigError(f"{run_dir} was started with config {m.config_hash[:12]}, "
                              f"not {config_hash[:12]}; use a new output directory")
        if m.base_seed != base_seed:
            raise ConfigError(f"{run_dir} was started with seed {m.base_seed}, not {base_seed}")
        logger.info(f"resuming run {m.run_id}")
        return m
    now = _now()
    m = RunManifest(run_id=f"{RUN_URN_PREFIX}{uuid6()}", config_hash=config_hash, base_seed=base_seed,
                    engine_version=get_version(), created_at=now, updated_at=now)
    logger.info(f"starting run {m.run_id}")
    save_manifest(m, run_dir)
    return m


def save_manifest(manifest: RunManifest, run_dir: str):
    os.makedirs(run_dir, exist_ok=True)
    manifest.updated_at = _now()
    path = os.path.join(run_dir, MANIFEST_FILE)
    partial = f"{path}.partial"
    with open(partial, "w", encoding="utf-8") as fh:
        fh.write(manifest.model_dump_json(by_alias=True, indent=2))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(partial, path)
