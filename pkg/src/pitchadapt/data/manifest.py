"""Line-delimited JSON corpus manifests."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ManifestError

FIELDS = ("id", "audio", "text", "speaker", "durations", "split", "f0", "stage")

STAGE_REQUIREMENTS = {
    "t2t": ("text",),
    "m2m": ("audio",),
    "tts": ("audio", "text", "speaker", "durations"),
}


@dataclass
class ManifestEntry:
    id: str
    audio: str | None = None
    text: str | None = None
    speaker: int | None = None
    durations: list[int] | None = None
    split: str = "train"
    f0: str | None = None
    stage: str | None = None
    root: Path | None = field(default=None, repr=False, compare=False)

    def path(self, name: str) -> Path:
        """Absolute path of the ``audio`` or ``f0`` field, relative to the manifest."""
        value = getattr(self, name)
        if value is None:
            raise ManifestError(f"entry {self.id!r} has no {name!r} field")
        p = Path(value)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def to_record(self) -> dict:
        rec = {"id": self.id, "audio": self.audio, "text": self.text, "speaker": self.speaker,
               "durations": self.durations, "split": self.split}
        if self.f0 is not None:
            rec["f0"] = self.f0
        if self.stage is not None:
            rec["stage"] = self.stage
        return rec


def require(entry: ManifestEntry, stage: str) -> None:
    for name in STAGE_REQUIREMENTS[stage]:
        if getattr(entry, name) is None:
            raise ManifestError(f"entry {entry.id!r}: field {name!r} is required for stage {stage!r}")


def _entry_from_record(rec: dict, lineno: int, root: Path | None) -> ManifestEntry:
    if not isinstance(rec, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    unknown = set(rec) - set(FIELDS)
    if unknown:
        raise ManifestError(f"line {lineno}: unknown field(s) {sorted(unknown)}")
    if not isinstance(rec.get("id"), str) or not rec["id"]:
        raise ManifestError(f"line {lineno}: field 'id' is required")
    speaker = rec.get("speaker")
    if speaker is not None and (not isinstance(speaker, int) or speaker < 0):
        raise ManifestError(f"line {lineno}: field 'speaker' must be a non-negative integer")
    durations = rec.get("durations")
    if durations is not None:
        if not isinstance(durations, list) or not all(isinstance(d, int) and d >= 0 for d in durations):
            raise ManifestError(f"line {lineno}: field 'durations' must be a list of non-negative integers")
    stage = rec.get("stage")
    if stage is not None and stage not in STAGE_REQUIREMENTS:
        raise ManifestError(f"line {lineno}: unknown stage {stage!r}")
    entry = ManifestEntry(
        id=rec["id"], audio=rec.get("audio"), text=rec.get("text"), speaker=speaker, durations=durations,
        split=rec.get("split") or "train", f0=rec.get("f0"), stage=stage, root=root,
    )
    if stage is not None:
        try:
            require(entry, stage)
        except ManifestError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None
    return entry


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    root = path.resolve().parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            entry = _entry_from_record(rec, lineno, root)
            if entry.id in seen:
                raise ManifestError(f"line {lineno}: duplicate utterance id {entry.id!r}")
            seen.add(entry.id)
            entries.append(entry)
    return entries


def write_manifest(entries, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")
