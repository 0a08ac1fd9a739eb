"""
Run Manifests for critiqa

Tracks wall-clock time and process memory for one CLI command and writes the
RunManifest that sits beside every artifact. Also provides the atomic write
helpers and content digests every artifact writer uses.
"""

import hashlib
import json
import os
import platform
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

try:
    import psutil

    HAS_PSUTIL = True
except ImportError:
    HAS_PSUTIL = False

MANIFEST_SUFFIX = ".run.json"


@dataclass
class MemorySnapshot:
    """Process memory at one point in time."""

    timestamp: datetime
    rss: int  # Resident Set Size
    vms: int  # Virtual Memory Size

    @classmethod
    def capture(cls) -> "MemorySnapshot":
        """Capture current memory state."""
        if HAS_PSUTIL:
            mem_info = psutil.Process().memory_info()
            rss, vms = mem_info.rss, mem_info.vms
        else:
            import resource

            usage = resource.getrusage(resource.RUSAGE_SELF)
            rss, vms = usage.ru_maxrss * 1024, 0
        return cls(timestamp=datetime.now(), rss=rss, vms=vms)


@dataclass
class RunManifest:
    """Everything needed to reproduce an artifact."""

    command: str
    config: Dict[str, Any]
    seed: Optional[int]
    input_digests: Dict[str, str]
    tool_version: str
    python_version: str = field(default_factory=platform.python_version)
    numpy_version: str = field(default_factory=lambda: np.__version__)
    duration_seconds: float = 0.0
    peak_rss_bytes: int = 0
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write_beside(self, artifact: Union[str, Path]) -> Path:
        """Write as <artifact>.run.json."""
        target = manifest_path_for(artifact)
        atomic_write_text(target, json.dumps(self.to_dict(), indent=2, default=str) + "\n")
        return target


class RunTracker:
    """Context manager that times a command and records its memory high-water mark."""

    def __init__(
        self,
        command: str,
        config: Dict[str, Any],
        seed: Optional[int],
        inputs: Sequence[Union[str, Path]] = (),
        tool_version: str = "",
    ):
        self.command = command
        self.config = config
        self.seed = seed
        self.inputs = [Path(p) for p in inputs]
        self.tool_version = tool_version
        self.start_memory: Optional[MemorySnapshot] = None
        self.end_memory: Optional[MemorySnapshot] = None
        self._start_time = 0.0
        self.duration = 0.0

    def __enter__(self) -> "RunTracker":
        self.start_memory = MemorySnapshot.capture()
        self._start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration = time.perf_counter() - self._start_time
        self.end_memory = MemorySnapshot.capture()

    def manifest(self, outputs: Sequence[Union[str, Path]] = ()) -> RunManifest:
        peak = max(
            (s.rss for s in (self.start_memory, self.end_memory) if s is not None), default=0
        )
        return RunManifest(
            command=self.command,
            config=self.config,
            seed=self.seed,
            input_digests={str(p): path_digest(p) for p in self.inputs if p.exists()},
            tool_version=self.tool_version,
            duration_seconds=self.duration,
            peak_rss_bytes=peak,
            outputs=[str(o) for o in outputs],
        )

    def write(self, *artifacts: Union[str, Path]) -> List[Path]:
        """Write one manifest beside each artifact."""
        manifest = self.manifest(outputs=artifacts)
        return [manifest.write_beside(a) for a in artifacts]


def manifest_path_for(artifact: Union[str, Path]) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + MANIFEST_SUFFIX)


# Atomic writes


def atomic_write_bytes(path: Union[str, Path], data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_lines(path: Union[str, Path], lines: Sequence[str]) -> Path:
    """Write LF-terminated lines atomically."""
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


@contextmanager
def atomic_directory(path: Union[str, Path]) -> Iterator[Path]:
    """Yield a staging directory that replaces ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield staging
        if path.exists():
            retired = Path(tempfile.mkdtemp(prefix=f".{path.name}.old.", dir=path.parent))
            os.replace(path, retired / path.name)
            os.replace(staging, path)
            shutil.rmtree(retired, ignore_errors=True)
        else:
            os.replace(staging, path)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise


# Digests


def path_digest(path: Union[str, Path]) -> str:
    """sha256 of a file, or of a directory's files (relative name + bytes) in sorted order."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(child.relative_to(path).as_posix().encode("utf-8"))
            h.update(child.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def tool_identity() -> str:
    from .. import __version__

    return f"critiqa {__version__} ({sys.implementation.name})"
