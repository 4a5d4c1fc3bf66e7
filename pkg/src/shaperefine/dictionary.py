"""Shape dictionary: descriptor-per-label store with nearest-neighbor query.

The dictionary holds one entry per reference label volume (descriptor of the
middle slice plus the path of the label file) and retrieves by Euclidean
distance over the 10-vector with a linear scan.  The on-disk format is JSON
with floats written at 17 significant digits so descriptors round-trip
exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .descriptor import (
    DESCRIPTOR_CONVENTION,
    DEFAULT_RESAMPLE,
    ShapeDescriptor,
    compute_descriptor,
    descriptor_distance,
)
from .errors import DictionaryError, FormatError, ShapeRefineError
from .volume import extract_middle_slice, read_volume

DICT_VERSION = 1


@dataclass(frozen=True)
class DictionaryMeta:
    resample_m: int = DEFAULT_RESAMPLE
    axis: str = "z"
    convention: str = DESCRIPTOR_CONVENTION


@dataclass(frozen=True)
class DictionaryEntry:
    id: str
    descriptor: ShapeDescriptor
    label_path: str


@dataclass(frozen=True)
class ShapeDictionary:
    entries: tuple[DictionaryEntry, ...]
    meta: DictionaryMeta

    def __post_init__(self):
        if not self.entries:
            raise DictionaryError("dictionary must contain at least one entry")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DictionaryError("entry ids must be unique")

    def __len__(self) -> int:
        return len(self.entries)


def build_dictionary(
    label_paths,
    axis: str = "z",
    resample_m: int = DEFAULT_RESAMPLE,
    ids=None,
) -> ShapeDictionary:
    """One entry per label volume, in input order; fails fast naming the culprit."""
    paths = [os.fspath(p) for p in label_paths]
    if not paths:
        raise DictionaryError("no label volumes given")
    if ids is None:
        ids = [_default_id(p, i, paths) for i, p in enumerate(paths)]
    entries = []
    for label_id, path in zip(ids, paths):
        try:
            volume = read_volume(path)
            descriptor = compute_descriptor(
                extract_middle_slice(volume, axis), resample_m=resample_m
            )
        except (ShapeRefineError, OSError, ValueError) as exc:
            raise DictionaryError(f"label {path!r}: {exc}") from exc
        entries.append(DictionaryEntry(id=label_id, descriptor=descriptor, label_path=path))
    meta = DictionaryMeta(resample_m=resample_m, axis=axis)
    return ShapeDictionary(entries=tuple(entries), meta=meta)


def _default_id(path: str, index: int, all_paths) -> str:
    stem = os.path.splitext(os.path.basename(path))[0]
    # duplicate basenames (or duplicate paths) get an index suffix
    if sum(1 for p in all_paths if os.path.basename(p) == os.path.basename(path)) > 1:
        return f"{stem}#{index}"
    return stem


def retrieve_nearest(d: ShapeDictionary, query: ShapeDescriptor):
    """Entry minimizing Euclidean descriptor distance; ties keep the lowest index."""
    if not d.entries:
        raise DictionaryError("cannot query an empty dictionary")
    best = None
    best_dist = None
    for entry in d.entries:
        dist = descriptor_distance(entry.descriptor, query)
        if best_dist is None or dist < best_dist:
            best, best_dist = entry, dist
    return best, best_dist


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_dictionary(d: ShapeDictionary, path) -> None:
    """JSON with descriptors at 17 significant digits (exact double round-trip)."""
    lines = ["{", f'  "version": {DICT_VERSION},']
    lines.append(
        '  "meta": {"resample_m": %d, "axis": "%s", "convention": "%s"},'
        % (d.meta.resample_m, d.meta.axis, d.meta.convention)
    )
    lines.append('  "entries": [')
    for i, e in enumerate(d.entries):
        desc = ", ".join(_fmt(v) for v in e.descriptor.values)
        comma = "," if i + 1 < len(d.entries) else ""
        lines.append(
            '    {"id": %s, "label_path": %s, "descriptor": [%s]}%s'
            % (json.dumps(e.id), json.dumps(e.label_path), desc, comma)
        )
    lines.append("  ]")
    lines.append("}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dictionary(path) -> ShapeDictionary:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != DICT_VERSION:
        raise FormatError(
            f"{path}: expected schema version {DICT_VERSION}, got {doc.get('version')!r}"
        )
    try:
        meta = DictionaryMeta(
            resample_m=int(doc["meta"]["resample_m"]),
            axis=str(doc["meta"]["axis"]),
            convention=str(doc["meta"]["convention"]),
        )
        entries = tuple(
            DictionaryEntry(
                id=str(e["id"]),
                descriptor=ShapeDescriptor(values=tuple(float(v) for v in e["descriptor"])),
                label_path=str(e["label_path"]),
            )
            for e in doc["entries"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed dictionary document: {exc}") from exc
    return ShapeDictionary(entries=entries, meta=meta)
