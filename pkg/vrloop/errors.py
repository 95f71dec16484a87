#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
from typing import Iterable


class VRLoopError(Exception):
    """Base class of all errors raised by this package."""


class ConfigError(VRLoopError):
    """Invalid configuration, detected before any network call."""


class PromptError(ConfigError):
    """A prompt template could not be rendered."""


class TransportError(VRLoopError):
    """An endpoint call failed after all retries."""

    def __init__(self, message: str, status_code: int = None):
        super().__init__(message)
        self.status_code = status_code


class CapabilityError(VRLoopError):
    """An endpoint lacks a capability required by the requested operation."""


class DataError(VRLoopError):
    """Malformed or inconsistent input data."""


class MissingEmbeddingError(DataError):
    def __init__(self, missing: Iterable[str]):
        self.missing = sorted(missing)
        super().__init__(f"missing embeddings for {len(self.missing)} problem(s): {', '.join(self.missing)}")
