"""Extraction manifest: JSON-lines of {"id", "prompt", "image"}."""

import json
from dataclasses import dataclass

from .errors import ManifestError

FIELDS = ("id", "prompt", "image")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    prompt: str
    image: str  # path to the image file


def read_manifest(path):
    """Parse and validate a manifest. Duplicate ids are rejected up front,
    before any inference runs."""
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: not valid JSON: {exc}") from exc
            if not isinstance(row, dict):
                raise ManifestError(f"line {lineno}: expected an object")
            missing = [f for f in FIELDS if f not in row]
            extra = [k for k in row if k not in FIELDS]
            if missing or extra:
                raise ManifestError(
                    f"line {lineno}: missing fields {missing}, unknown fields {extra}")
            if not all(isinstance(row[f], str) and row[f] for f in FIELDS):
                raise ManifestError(f"line {lineno}: fields must be non-empty strings")
            if row["id"] in seen:
                raise ManifestError(f"line {lineno}: duplicate id {row['id']!r}")
            seen.add(row["id"])
            entries.append(ManifestEntry(row["id"], row["prompt"], row["image"]))
    if not entries:
        raise ManifestError(f"{path}: manifest is empty")
    return entries
