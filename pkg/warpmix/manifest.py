from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path
from typing import Any, Optional, Union

from .constants import WARPMIX_TOOL_VERSION
from .writer import write_json

logger = logging.getLogger(__name__)


def file_digest(path: Union[str, Path]) -> str:
    digest = sha256()
    with open(path, mode="rb") as file:
        for chunk in iter(lambda: file.read(1 << 20), b""):
            digest.update(chunk)
    sha256sum = digest.hexdigest()
    logger.debug(f"Hashed '{path}' as {sha256sum}")
    return sha256sum


@dataclass
class RunManifest:
    """Everything needed to re-run a command and get identical outputs."""

    command: str
    config: dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    arguments: dict[str, Any] = field(default_factory=dict)
    tool_version: str = WARPMIX_TOOL_VERSION
    started_at: str = ""
    wall_seconds: float = 0.0
    _clock: float = field(default=0.0, repr=False)

    def start(self) -> RunManifest:
        self.started_at = datetime.now(timezone.utc).isoformat()
        self._clock = time.perf_counter()
        return self

    def add_input(self, path: Union[str, Path]) -> None:
        self.inputs[str(path)] = file_digest(path)

    def add_output(self, path: Union[str, Path]) -> None:
        self.outputs.append(str(path))

    def finish(self) -> None:
        self.wall_seconds = time.perf_counter() - self._clock

    def to_dict(self) -> dict[str, Any]:
        document = asdict(self)
        del document["_clock"]
        return document

    def save(self, path: Union[str, Path]) -> None:
        write_json(self.to_dict(), path)
        logger.info(f"Wrote run manifest to {path}")
