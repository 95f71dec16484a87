#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import json
import os
import logging
from typing import List, Optional

from ivcap_service import set_service_log_config

class SuppressPathsFilter(logging.Filter):
    """Drops uvicorn access lines for noisy paths of the simulated endpoint."""

    def __init__(self, targets: Optional[List[str]] = None):
        super().__init__()
        self.targets = targets or []

    def filter(self, record):
        # For uvicorn.access, HTTP info is in record.args: (client_addr, method, path, http_version, status)
        path = ""
        if hasattr(record, "args") and isinstance(record.args, tuple) and len(record.args) >= 3:
            path = record.args[2]
        return path not in self.targets

def logging_init(cfg_path: Optional[str] = None):
    """Load a dictConfig style logging configuration and install it.

    Defaults to the `logging.json` shipped with this package.
    """
    if not cfg_path:
        script_dir = os.path.dirname(__file__)
        cfg_path = os.path.join(script_dir, "logging.json")

    with open(cfg_path, 'r') as file:
        config = json.load(file)
        set_service_log_config(config)
