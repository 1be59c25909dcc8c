"""
store.py — Flat-file pipeline store with a sha256 manifest.

Layout under the store root:
    raw/*.xml  records/*.json  detections/*.json  enriched/*.json
    graph/*.nt|*.ttl  links/*.nt|*.json  manifest.json

Every file written through Store is recorded in manifest.json as
relpath → {sha256, stage, produced_by, timestamp}. Writes go to a temp file
and are renamed into place.
"""

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable
from urllib.parse import unquote

from pipeline.errors import EmptyIdentifier, ManifestMissing, MissingStageInput, StoreError, StoreLocked

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"

STAGE_DIRS = {
    "raw": "raw",
    "record": "records",
    "detections": "detections",
    "enriched": "enriched",
    "graph": "graph",
    "links": "links",
}

_SAFE_BYTES = frozenset(
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789._-"
)


def sanitize_id(identifier: str) -> str:
    """
    Percent-encode every UTF-8 byte outside [A-Za-z0-9._-] as %XX.

    Identifiers made only of dots are fully encoded so they never name
    "." or "..". The mapping is reversed by unsanitize_id().
    """
    if not identifier:
        raise EmptyIdentifier("identifier must be non-empty")
    data = identifier.encode("utf-8")
    if set(identifier) == {"."}:
        return "".join(f"%{b:02X}" for b in data)
    return "".join(chr(b) if b in _SAFE_BYTES else f"%{b:02X}" for b in data)


def unsanitize_id(name: str) -> str:
    return unquote(name, encoding="utf-8", errors="strict")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class VerifyReport:
    missing: list[str] = field(default_factory=list)
    modified: list[str] = field(default_factory=list)
    untracked: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        """Untracked files are informational and do not make a store dirty."""
        return not self.missing and not self.modified

    def to_dict(self) -> dict:
        return {"missing": self.missing, "modified": self.modified, "untracked": self.untracked}


class Store:
    """One store root. Not safe for concurrent writers; use lock()."""

    def __init__(self, root: str | Path, produced_by: str = "foliograph",
                 clock: Callable[[], str] = _utc_now):
        self.root = Path(root)
        self.produced_by = produced_by
        self._clock = clock
        self._manifest: dict | None = None
        self._dirty = False

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    # ── Manifest ──────────────────────────────────────────────────

    def manifest(self) -> dict:
        if self._manifest is None:
            if self.manifest_path.exists():
                try:
                    self._manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
                except (OSError, json.JSONDecodeError) as e:
                    raise StoreError(f"unreadable manifest {self.manifest_path}: {e}")
            else:
                self._manifest = {}
        return self._manifest

    def save_manifest(self) -> None:
        if not self._dirty:
            return
        text = json.dumps(self.manifest(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
        atomic_write(self.manifest_path, text.encode("utf-8"))
        self._dirty = False

    @contextmanager
    def lock(self):
        """Advisory exclusive lock; the manifest is saved on the way out."""
        self.root.mkdir(parents=True, exist_ok=True)
        lock_path = self.root / LOCK_NAME
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreLocked(f"{lock_path} exists; another run owns this store")
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield self
        finally:
            try:
                self.save_manifest()
            finally:
                lock_path.unlink(missing_ok=True)

    # ── Files ─────────────────────────────────────────────────────

    @staticmethod
    def relpath(stage: str, name: str) -> str:
        if stage not in STAGE_DIRS:
            raise StoreError(f"unknown store stage '{stage}'")
        return f"{STAGE_DIRS[stage]}/{name}"

    def path(self, stage: str, name: str) -> Path:
        return self.root / self.relpath(stage, name)

    def write(self, stage: str, name: str, data: bytes | str) -> bool:
        """Write one file; returns False when identical content was already there."""
        if isinstance(data, str):
            data = data.encode("utf-8")
        rel = self.relpath(stage, name)
        target = self.root / rel
        digest = sha256_bytes(data)
        manifest = self.manifest()

        entry = manifest.get(rel)
        if entry and entry.get("sha256") == digest and target.exists() \
                and sha256_bytes(target.read_bytes()) == digest:
            return False

        atomic_write(target, data)
        manifest[rel] = {
            "sha256": digest,
            "stage": stage,
            "produced_by": self.produced_by,
            "timestamp": self._clock(),
        }
        self._dirty = True
        logger.debug("wrote %s (%s)", rel, digest[:12])
        return True

    def write_json(self, stage: str, name: str, payload) -> bool:
        text = json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
        return self.write(stage, name, text)

    def remove(self, stage: str, name: str) -> bool:
        rel = self.relpath(stage, name)
        target = self.root / rel
        existed = target.exists() or rel in self.manifest()
        target.unlink(missing_ok=True)
        if self.manifest().pop(rel, None) is not None:
            self._dirty = True
        return existed

    def read_bytes(self, stage: str, name: str) -> bytes:
        return self.path(stage, name).read_bytes()

    def read_text(self, stage: str, name: str) -> str:
        return self.read_bytes(stage, name).decode("utf-8")

    def read_json(self, stage: str, name: str):
        return json.loads(self.read_bytes(stage, name))

    def entries(self, stage: str, suffix: str = "") -> list[str]:
        """File names (not paths) recorded for a stage, sorted."""
        prefix = STAGE_DIRS[stage] + "/"
        return sorted(
            rel[len(prefix):] for rel, entry in self.manifest().items()
            if entry.get("stage") == stage and rel.startswith(prefix) and rel.endswith(suffix)
        )

    def require(self, stage: str, suffix: str = "") -> list[str]:
        """Entries for a stage, or MissingStageInput when the stage never ran."""
        names = self.entries(stage, suffix)
        if not names:
            raise MissingStageInput(stage)
        return names


def verify_store(root: str | Path) -> VerifyReport:
    """
    Re-hash every manifest entry and report missing or modified files.

    Raises:
        ManifestMissing: the root has no manifest.json.
    """
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise ManifestMissing(f"no {MANIFEST_NAME} under {root}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise StoreError(f"unreadable manifest {manifest_path}: {e}")

    report = VerifyReport()
    for rel in sorted(manifest):
        target = root / rel
        if not target.is_file():
            report.missing.append(rel)
        elif sha256_bytes(target.read_bytes()) != manifest[rel].get("sha256"):
            report.modified.append(rel)

    tracked = set(manifest)
    for directory in sorted(set(STAGE_DIRS.values())):
        base = root / directory
        if not base.is_dir():
            continue
        for path in sorted(base.rglob("*")):
            if path.is_file() and not path.name.startswith("."):
                rel = path.relative_to(root).as_posix()
                if rel not in tracked:
                    report.untracked.append(rel)
    return report
