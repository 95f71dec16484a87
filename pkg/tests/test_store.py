#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import json

import pytest

from vrloop.core import TRACE_SCHEMA, CallUsage, LoopConfig, VRTrace
from vrloop.errors import ConfigError, DataError
from vrloop.loop import run_vr_loop
from vrloop.store import (
    MANIFEST_FILE, JsonlAppender, open_manifest, read_export, read_jsonl, save_manifest, trace_digest, write_export,
)

from conftest import sim_generator, sim_verifier


def _traces(problems, loops=2):
    gen, ver = sim_generator(0.3), sim_verifier(0.8, 0.2)
    return [run_vr_loop(p, gen, ver, LoopConfig(max_rounds=3), loop_id=i) for p in problems for i in range(loops)]


def test_appender_writes_schema_tagged_lines(tmp_path, problems):
    path = str(tmp_path / "traces.jsonl")
    traces = _traces(problems[:1])
    with JsonlAppender(path) as out:
        for t in traces:
            out.append(t)
    first = json.loads(open(path).readline())
    assert first["$schema"] == TRACE_SCHEMA
    assert read_jsonl(path, VRTrace) == traces


def test_torn_tail_is_ignored_then_truncated(tmp_path, problems):
    path = tmp_path / "traces.jsonl"
    traces = _traces(problems[:1])
    with JsonlAppender(str(path)) as out:
        out.append(traces[0])
    with open(path, "a") as fh:
        fh.write(traces[1].model_dump_json(by_alias=True)[:40])
    assert read_jsonl(str(path), VRTrace) == traces[:1]

    with JsonlAppender(str(path)) as out:
        out.append(traces[1])
    assert read_jsonl(str(path), VRTrace) == traces


def test_invalid_record_is_a_data_error(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"problem_id": "x"}\n')
    with pytest.raises(DataError):
        read_jsonl(str(path), VRTrace)


def test_missing_file_reads_as_empty(tmp_path):
    assert read_jsonl(str(tmp_path / "none.jsonl"), VRTrace) == []


def test_export_header_and_atomic_rename(tmp_path, problems):
    path = str(tmp_path / "out" / "traces.jsonl")
    traces = _traces(problems[:1])
    assert write_export(path, TRACE_SCHEMA, traces) == len(traces)
    assert open(path).readline() == f"# {TRACE_SCHEMA}\n"
    assert not (tmp_path / "out" / "traces.jsonl.partial").exists()
    assert read_export(path, VRTrace, TRACE_SCHEMA) == traces
    with pytest.raises(DataError):
        read_export(path, VRTrace, "urn:vrloop:schema.other.1")


def test_digest_ignores_order(tmp_path, problems):
    traces = _traces(problems[:2])
    a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    with JsonlAppender(a) as out:
        for t in traces:
            out.append(t)
    with JsonlAppender(b) as out:
        for t in reversed(traces):
            out.append(t)
    assert trace_digest(a) == trace_digest(b)


def test_manifest_lifecycle(tmp_path):
    d = str(tmp_path)
    m = open_manifest(d, "abc", 0)
    assert m.run_id.startswith("urn:vrloop:run:")
    m.mark_completed("vr", ["p1/0", "p1/1"])
    m.mark_completed("vr", ["p1/0"])
    m.add_usage([CallUsage(role="generator", prompt_tokens=3, completion_tokens=5)] * 2)
    save_manifest(m, d)

    again = open_manifest(d, "abc", 0)
    assert again.run_id == m.run_id
    assert again.completed["vr"] == ["p1/0", "p1/1"]
    assert again.usage["generator"].calls == 2
    assert again.usage["generator"].completion_tokens == 10
    assert json.loads((tmp_path / MANIFEST_FILE).read_text())["$schema"].startswith("urn:vrloop:schema.manifest")

    with pytest.raises(ConfigError):
        open_manifest(d, "other", 0)
    with pytest.raises(ConfigError):
        open_manifest(d, "abc", 1)
