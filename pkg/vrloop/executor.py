#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import concurrent.futures
import threading
import traceback
from typing import Callable, Dict, Generic, Iterable, List, Optional, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field
from ivcap_service import ExecutionError, getLogger
from opentelemetry import context, trace
from opentelemetry.context.context import Context

logger = getLogger("executor")
tracer = trace.get_tracer("executor")

FAILURE_SCHEMA = "urn:vrloop:schema.failure.1"

T = TypeVar('T')
R = TypeVar('R')


class ExecutorOpts(BaseModel):
    max_in_flight: int = Field(16, ge=1, description="max number of work items executing at the same time")
    name: str = Field("work", description="name used for spans and log lines")


class FailureRecord(BaseModel):
    jschema: str = Field(FAILURE_SCHEMA, alias="$schema")
    key: str
    arm: str = ""
    message: str
    type: str = ""
    traceback: Optional[str] = None

    model_config = ConfigDict(populate_by_name=True)

    @classmethod
    def from_error(cls, key: str, err: ExecutionError, arm: str = "") -> "FailureRecord":
        return cls(key=key, arm=arm, message=err.error, type=err.type or "", traceback=err.traceback)


class ScheduleReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    completed: int = 0
    failures: Dict[str, ExecutionError] = Field(default_factory=dict)
    max_active: int = Field(0, description="highest number of items observed running at once")

    @property
    def ok(self) -> bool:
        return not self.failures


class Executor(Generic[T, R]):
    """
    Runs a function over work items in a bounded thread pool.

    Results are handed to `on_result` on the calling thread, one at a time, so
    the caller can persist them as a single writer. A failing item is recorded
    as an ExecutionError and never stops the others.
    """

    def __init__(self, func: Callable[[T], R], *, opts: Optional[ExecutorOpts] = None):
        self.func = func
        self.opts = opts or ExecutorOpts()
        self._lock = threading.Lock()
        self._active = set()
        self._max_active = 0

    def active_items(self) -> List[str]:
        """Returns the keys of the items currently running"""
        with self._lock:
            return sorted(self._active)

    def run(
        self,
        items: Iterable[T],
        *,
        key: Callable[[T], str] = str,
        on_result: Optional[Callable[[T, R], None]] = None,
    ) -> ScheduleReport:
        report = ScheduleReport()
        items = list(items)
        if not items:
            return report
        logger.info(f"scheduling {len(items)} {self.opts.name} item(s), at most {self.opts.max_in_flight} in flight")

        def _run(item: T, ctxt: Context) -> Union[R, ExecutionError]:
            context.attach(ctxt)  # OTEL
            k = key(item)
            with tracer.start_as_current_span(f"RUN {self.opts.name}") as span:
                span.set_attribute("item.key", k)
                with self._lock:
                    self._active.add(k)
                    self._max_active = max(self._max_active, len(self._active))
                try:
                    return self.func(item)
                except Exception as ex:
                    span.record_exception(ex)
                    logger.error(f"while executing {k} - {type(ex).__name__}: {ex}")
                    return ExecutionError(
                        error=str(ex),
                        type=type(ex).__name__,
                        traceback=traceback.format_exc()
                    )
                finally:
                    with self._lock:
                        self._active.discard(k)

        with concurrent.futures.ThreadPoolExecutor(max_workers=self.opts.max_in_flight,
                                                   thread_name_prefix=self.opts.name) as pool:
            futures = {pool.submit(_run, item, context.get_current()): item for item in items}
            for future in concurrent.futures.as_completed(futures):
                item = futures[future]
                res = future.result()
                if isinstance(res, ExecutionError):
                    report.failures[key(item)] = res
                    continue
                if on_result is not None:
                    try:
                        on_result(item, res)
                    except Exception as ex:
                        logger.error(f"while storing result of {key(item)} - {ex}")
                        report.failures[key(item)] = ExecutionError(
                            error=str(ex), type=type(ex).__name__, traceback=traceback.format_exc())
                        continue
                report.completed += 1

        report.max_active = self._max_active
        if report.failures:
            logger.warning(f"{len(report.failures)} of {len(items)} {self.opts.name} item(s) failed")
        return report


def schedule_loops(
    items: Iterable[T],
    func: Callable[[T], R],
    bound: int,
    *,
    key: Callable[[T], str] = str,
    on_result: Optional[Callable[[T, R], None]] = None,
    name: str = "loop",
) -> ScheduleReport:
    """Execute `func` over `items` with at most `bound` items in flight."""
    if bound < 1:
        raise ValueError("bound must be >= 1")
    return Executor(func, opts=ExecutorOpts(max_in_flight=bound, name=name)).run(items, key=key, on_result=on_result)
