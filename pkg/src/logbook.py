"""
Boosted Decay Lab - Stage Logging
Timestamped log entries on stderr, prefixed with the stage that emitted them
"""

import sys
import time
from contextlib import contextmanager
from datetime import datetime
from typing import Dict, Iterable, Iterator, List, Optional

from tqdm import tqdm


class StageLogger:
    """Collects log entries and per-stage wall-clock timings."""

    def __init__(self, verbose: bool = True):
        self.verbose = verbose
        self.entries: List[str] = []
        self.timings: Dict[str, float] = {}

    def log(self, stage: str, message: str):
        """Log execution progress."""
        timestamp = datetime.now().strftime("%H:%M:%S")
        self.entries.append(f"{timestamp} [{stage}] {message}")
        if self.verbose:
            # tqdm.write keeps open progress bars intact
            tqdm.write(f"[{stage}] {message}", file=sys.stderr)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time a named stage; repeated stages accumulate."""
        self.log(name, "begin")
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            self.log(name, f"end ({elapsed:.2f}s)")

    def progress(self, iterable: Iterable, desc: str, total: Optional[int] = None) -> Iterable:
        return tqdm(iterable, desc=desc, total=total, disable=not self.verbose,
                    file=sys.stderr, leave=False)

    def reset(self):
        self.entries.clear()
        self.timings.clear()


# Shared by library modules; the runner toggles verbosity
LOGBOOK = StageLogger()
