"""Capture ingestion, the canonical JSONL dataset format, and descriptive profiling."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import logging
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

import numpy as np

from .digest import canonical_json, sha256_bytes
from .errors import (
    InvalidArgument,
    ParseError,
    RecordSkipped,
    SchemaVersionError,
    UnlabeledDataset,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRACKER = "T"
NON_TRACKER = "NT"
LABELS = (TRACKER, NON_TRACKER)


class Direction(str, enum.Enum):
    REQUEST = "req"
    RESPONSE = "res"

    @classmethod
    def parse(cls, value: str) -> "Direction":
        aliases = {"req": cls.REQUEST, "request": cls.REQUEST,
                   "res": cls.RESPONSE, "response": cls.RESPONSE}
        try:
            return aliases[value.lower()]
        except (KeyError, AttributeError):
            raise InvalidArgument(f"unknown direction {value!r}") from None


@dataclass(frozen=True)
class HttpMessageRecord:
    record_id: int
    direction: Direction
    remote_hostname: str
    url: str
    headers: tuple[tuple[str, str], ...]
    browser_tag: str = ""
    capture_timestamp: int = 0

    def header_names(self) -> set[str]:
        return {name for name, _ in self.headers}

    def to_json(self, label: str | None = None) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "id": self.record_id,
            "dir": self.direction.value,
            "host": self.remote_hostname,
            "url": self.url,
            "browser": self.browser_tag,
            "ts": self.capture_timestamp,
            "hdr": [[n, v] for n, v in self.headers],
            "label": label,
        }


@dataclass(frozen=True)
class Provenance:
    source_paths: tuple[str, ...] = ()
    browser_tag: str = ""
    crawl_date: str | None = None
    content_digest: str = ""
    extra: Mapping = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "source_paths": list(self.source_paths),
            "browser_tag": self.browser_tag,
            "crawl_date": self.crawl_date,
            "content_digest": self.content_digest,
            "extra": dict(self.extra),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Provenance":
        return cls(
            source_paths=tuple(obj.get("source_paths", ())),
            browser_tag=obj.get("browser_tag", ""),
            crawl_date=obj.get("crawl_date"),
            content_digest=obj.get("content_digest", ""),
            extra=dict(obj.get("extra", {})),
        )

    def with_extra(self, **kw) -> "Provenance":
        extra = dict(self.extra)
        extra.update(kw)
        return dataclasses.replace(self, extra=extra)


@dataclass(frozen=True)
class Dataset:
    records: tuple[HttpMessageRecord, ...]
    provenance: Provenance = field(default_factory=Provenance)
    label_map: Mapping[int, str] | None = None

    def __post_init__(self):
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("record ids are not unique within the dataset")
        if self.label_map is not None:
            if set(self.label_map) != set(ids):
                raise InvalidArgument("label_map must cover every record exactly once")
            bad = set(self.label_map.values()) - set(LABELS)
            if bad:
                raise InvalidArgument(f"unknown labels {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def is_labeled(self) -> bool:
        return self.label_map is not None

    def label_of(self, record: HttpMessageRecord) -> str:
        if self.label_map is None:
            raise UnlabeledDataset("dataset carries no labels")
        return self.label_map[record.record_id]

    def label_vector(self) -> np.ndarray:
        """1 for tracker, 0 for non-tracker, in record order."""
        if self.label_map is None:
            raise UnlabeledDataset("dataset carries no labels")
        return np.fromiter((self.label_map[r.record_id] == TRACKER for r in self.records),
                           dtype=np.int8, count=len(self.records))

    def digest(self) -> str:
        return records_digest(self.records, self.label_map)

    def subset(self, indices: Iterable[int], **extra) -> "Dataset":
        recs = tuple(self.records[i] for i in indices)
        labels = None
        if self.label_map is not None:
            labels = {r.record_id: self.label_map[r.record_id] for r in recs}
        prov = self.provenance.with_extra(**extra) if extra else self.provenance
        return Dataset(recs, prov, labels)

    def select_direction(self, direction: Direction | str) -> "Dataset":
        """One-direction view; request and response streams are never mixed downstream."""
        d = Direction.parse(direction) if isinstance(direction, str) else direction
        keep = [i for i, r in enumerate(self.records) if r.direction is d]
        return self.subset(keep, direction=d.value)

    def directions(self) -> set[Direction]:
        return {r.direction for r in self.records}


def records_digest(records: Sequence[HttpMessageRecord], label_map=None) -> str:
    h = hashlib.sha256()
    for r in records:
        label = None if label_map is None else label_map[r.record_id]
        h.update(canonical_json(r.to_json(label)).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


_HOST_RE = re.compile(r"^(?:[a-z0-9_.\-]+|[0-9a-f:.]+)$")


def hostname_from_url(url: str) -> str | None:
    """Lowercased URL authority without port or userinfo; None when absent."""
    try:
        host = urlsplit(url.strip()).hostname
    except ValueError:
        return None
    if not host:
        return None
    host = host.rstrip(".").lower()
    if not host or not _HOST_RE.match(host):
        return None
    return host


def _record_id(file_digest: str, position: int, direction: Direction) -> int:
    raw = f"{file_digest}:{position}:{direction.value}".encode()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "big")


def _normalize_headers(raw) -> tuple[tuple[str, str], ...] | None:
    """Accepts webRequest-style [{name, value}], [[name, value]] or {name: value(s)}."""
    out = []
    if isinstance(raw, Mapping):
        items = []
        for name, value in raw.items():
            if isinstance(value, list):
                items.extend((name, v) for v in value)
            else:
                items.append((name, value))
    elif isinstance(raw, list):
        items = []
        for h in raw:
            if isinstance(h, Mapping) and "name" in h:
                value = h.get("value", h.get("binaryValue", ""))
                items.append((h["name"], value))
            elif isinstance(h, (list, tuple)) and len(h) == 2:
                items.append((h[0], h[1]))
            else:
                return None
    else:
        return None
    for name, value in items:
        if not isinstance(name, str):
            return None
        name = name.strip().lower()
        if not name:
            return None
        if value is None:
            value = ""
        elif not isinstance(value, str):
            value = json.dumps(value) if isinstance(value, (list, dict)) else str(value)
        out.append((name, value))
    return tuple(out)


def _tex_entries(doc) -> list:
    if isinstance(doc, list):
        return doc
    if isinstance(doc, dict):
        for key in ("requests", "responses", "entries", "data", "messages"):
            if isinstance(doc.get(key), list):
                return doc[key]
        values = list(doc.values())
        if values and all(isinstance(v, dict) for v in values):
            return values
    raise ParseError("unrecognized T.EX export layout: expected a list of entries")


def _parse_tex_json(text: str, file_digest: str, browser_tag: str, skipped: Counter):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    records = []
    for pos, entry in enumerate(_tex_entries(doc)):
        if not isinstance(entry, dict):
            skipped["not_an_object"] += 1
            continue
        url = entry.get("url")
        host = hostname_from_url(url) if isinstance(url, str) else None
        if host is None:
            skipped["bad_url"] += 1
            continue
        ts = entry.get("timeStamp", entry.get("timestamp", 0))
        try:
            ts = int(float(ts or 0))
        except (TypeError, ValueError):
            ts = 0
        found = False
        for key, direction in (("requestHeaders", Direction.REQUEST),
                               ("responseHeaders", Direction.RESPONSE)):
            if key not in entry:
                continue
            found = True
            headers = _normalize_headers(entry[key])
            if headers is None:
                skipped["bad_headers"] += 1
                continue
            records.append(HttpMessageRecord(
                _record_id(file_digest, pos, direction), direction, host, url,
                headers, browser_tag, ts))
        if not found:
            skipped["no_headers_field"] += 1
    return records


def _record_from_json(obj: dict, default_browser: str = "") -> tuple[HttpMessageRecord, str | None]:
    if obj.get("v") != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema version {obj.get('v')!r}")
    headers = _normalize_headers(obj["hdr"])
    if headers is None:
        raise ValueError("bad hdr field")
    host = obj["host"]
    if not isinstance(host, str) or not host or not _HOST_RE.match(host):
        raise ValueError("bad host field")
    label = obj.get("label")
    if label not in (None, TRACKER, NON_TRACKER):
        raise ValueError("bad label field")
    rec = HttpMessageRecord(
        record_id=int(obj["id"]),
        direction=Direction.parse(obj["dir"]),
        remote_hostname=host,
        url=str(obj.get("url", "")),
        headers=headers,
        browser_tag=str(obj.get("browser", default_browser)),
        capture_timestamp=int(obj.get("ts", 0)),
    )
    if not 0 <= rec.record_id < 2**64:
        raise ValueError("id out of u64 range")
    return rec, label


def _iter_jsonl(text: str):
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: malformed JSON: {exc}") from exc


def _parse_canonical(text: str, skipped: Counter, strict: bool):
    meta = None
    records, labels = [], []
    for lineno, obj in _iter_jsonl(text):
        if not isinstance(obj, dict):
            if strict:
                raise ParseError(f"line {lineno}: expected an object")
            skipped["not_an_object"] += 1
            continue
        if "meta" in obj:
            if obj.get("v") != SCHEMA_VERSION:
                raise SchemaVersionError(f"unsupported schema version {obj.get('v')!r}")
            meta = obj["meta"]
            continue
        try:
            rec, label = _record_from_json(obj)
        except SchemaVersionError:
            raise
        except (KeyError, TypeError, ValueError, InvalidArgument) as exc:
            if strict:
                raise ParseError(f"line {lineno}: {exc}") from exc
            skipped["bad_record"] += 1
            continue
        records.append(rec)
        labels.append(label)
    return meta, records, labels


def _labels_to_map(records, labels):
    present = [lab is not None for lab in labels]
    if not any(present):
        return None
    if not all(present):
        raise ParseError("labels present on some records but not all")
    return {r.record_id: lab for r, lab in zip(records, labels)}


def ingest_capture(path, format: str = "tex_json", browser_tag: str = "",
                   crawl_date: str | None = None) -> Dataset:
    """Parse one capture export into a Dataset.

    Malformed entries are skipped and summarized in one ``RecordSkipped``
    warning; the count is kept in ``provenance.extra["skipped"]``.
    Container-level syntax errors raise ``ParseError``.
    """
    path = Path(path)
    raw = path.read_bytes()
    file_digest = sha256_bytes(raw)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8") from exc
    skipped: Counter = Counter()
    if format == "tex_json":
        records = _parse_tex_json(text, file_digest, browser_tag, skipped)
        label_map = None
    elif format == "canonical_jsonl":
        _, records, labels = _parse_canonical(text, skipped, strict=False)
        if browser_tag:
            records = [dataclasses.replace(r, browser_tag=browser_tag) for r in records]
        label_map = _labels_to_map(records, labels)
    else:
        raise InvalidArgument(f"unknown capture format {format!r}")

    seen = set()
    unique = []
    for r in records:
        if r.record_id in seen:
            skipped["duplicate_id"] += 1
            continue
        seen.add(r.record_id)
        unique.append(r)
    records = unique
    if label_map is not None:
        label_map = {r.record_id: label_map[r.record_id] for r in records}

    n_skipped = sum(skipped.values())
    if n_skipped:
        warnings.warn(f"{path}: skipped {n_skipped} malformed entries {dict(skipped)}",
                      RecordSkipped, stacklevel=2)
    prov = Provenance(
        source_paths=(str(path),),
        browser_tag=browser_tag,
        crawl_date=crawl_date,
        content_digest=records_digest(records),
        extra={"source_sha256": [file_digest], "skipped": n_skipped,
               "skip_reasons": dict(sorted(skipped.items())),
               "headerless": sum(1 for r in records if not r.headers)},
    )
    return Dataset(tuple(records), prov, label_map)


def merge_datasets(datasets: Sequence[Dataset]) -> Dataset:
    """Concatenate in the given order; provenance lists every source."""
    if not datasets:
        return Dataset(())
    records = tuple(r for ds in datasets for r in ds.records)
    labeled = [ds.label_map is not None for ds in datasets]
    if any(labeled) and not all(labeled):
        raise InvalidArgument("cannot merge labeled and unlabeled datasets")
    label_map = None
    if all(labeled):
        label_map = {}
        for ds in datasets:
            label_map.update(ds.label_map)
    first = datasets[0].provenance
    prov = Provenance(
        source_paths=tuple(p for ds in datasets for p in ds.provenance.source_paths),
        browser_tag=first.browser_tag,
        crawl_date=first.crawl_date,
        content_digest=records_digest(records),
        extra={"source_sha256": [s for ds in datasets
                                 for s in ds.provenance.extra.get("source_sha256", [])],
               "skipped": sum(ds.provenance.extra.get("skipped", 0) for ds in datasets),
               "headerless": sum(1 for r in records if not r.headers)},
    )
    return Dataset(records, prov, label_map)


def dataset_to_jsonl(ds: Dataset) -> str:
    lines = [canonical_json({"v": SCHEMA_VERSION, "meta": ds.provenance.to_json()})]
    for r in ds.records:
        label = None if ds.label_map is None else ds.label_map[r.record_id]
        lines.append(canonical_json(r.to_json(label)))
    return "\n".join(lines) + "\n"


def persist_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_jsonl(ds).encode("utf-8"))


def load_dataset(path) -> Dataset:
    text = Path(path).read_bytes().decode("utf-8")
    meta, records, labels = _parse_canonical(text, Counter(), strict=True)
    prov = Provenance.from_json(meta) if meta is not None else Provenance()
    return Dataset(tuple(records), prov, _labels_to_map(records, labels))


def filter_hosts(ds: Dataset, exclude_substrings: Sequence[str]) -> Dataset:
    """Drop records whose hostname contains any of the substrings (case-insensitive)."""
    subs = [s.lower() for s in exclude_substrings]
    if not subs or any(not s for s in subs):
        raise InvalidArgument("exclusion substrings must be non-empty")
    keep = [i for i, r in enumerate(ds.records)
            if not any(s in r.remote_hostname.lower() for s in subs)]
    sub = ds.subset(keep)
    prior = list(ds.provenance.extra.get("excluded_host_substrings", []))
    prov = sub.provenance.with_extra(excluded_host_substrings=prior + subs)
    prov = dataclasses.replace(prov, content_digest=records_digest(sub.records))
    return Dataset(sub.records, prov, sub.label_map)


# --- profiling -------------------------------------------------------------

@dataclass
class ProfileReport:
    responses_per_label: dict
    unique_headers_per_label: dict
    headers_per_record_quartiles: dict
    header_frequency: dict
    value_summaries: dict
    overlap_counts: dict | None = None
    headerless_records: int = 0

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        if self.overlap_counts is not None:
            out["overlap_counts"] = {"|".join(k): v for k, v in self.overlap_counts.items()}
        return out


def quartiles(values) -> tuple[float, float, float] | None:
    if len(values) == 0:
        return None
    q = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    return float(q[0]), float(q[1]), float(q[2])


_INT_RE = re.compile(r"^[+-]?\d+$")


def overlap_counts(name_sets: Mapping[str, set]) -> dict[tuple[str, ...], int]:
    """Cardinality of every region of the intersection lattice.

    Keys are the sorted tuple of dataset tags a region belongs to exactly.
    """
    tags = sorted(name_sets)
    membership: dict[str, tuple[str, ...]] = {}
    for name in set().union(*name_sets.values()) if name_sets else ():
        membership[name] = tuple(t for t in tags if name in name_sets[t])
    counts = Counter(membership.values())
    out = {}
    for r in range(1, len(tags) + 1):
        for combo in combinations(tags, r):
            out[combo] = counts.get(combo, 0)
    return out


def profile_dataset(ds: Dataset, value_summary_headers: Sequence[str] = (),
                    others: Mapping[str, Dataset] | None = None) -> ProfileReport:
    if ds.label_map is None:
        raise UnlabeledDataset("profiling requires a labeled dataset")
    counts = Counter()
    names_by_label = {lab: set() for lab in LABELS}
    per_record = {lab: [] for lab in LABELS}
    freq = Counter()
    wanted = [h.lower() for h in value_summary_headers]
    values = {h: {lab: [] for lab in LABELS} for h in wanted}
    unparsed = {h: 0 for h in wanted}
    for r in ds.records:
        lab = ds.label_map[r.record_id]
        counts[lab] += 1
        names = r.header_names()
        names_by_label[lab] |= names
        per_record[lab].append(len(names))
        freq.update(names)
        for name, value in r.headers:
            if name in values:
                v = value.strip()
                if _INT_RE.match(v):
                    values[name][lab].append(int(v))
                else:
                    unparsed[name] += 1
    n = len(ds.records)
    responses = {lab: {"count": counts[lab], "fraction": (counts[lab] / n) if n else 0.0}
                 for lab in LABELS}
    summaries = {}
    for h in wanted:
        summaries[h] = {lab: {"n": len(values[h][lab]), "quartiles": quartiles(values[h][lab])}
                        for lab in LABELS}
        summaries[h]["skipped_unparseable"] = unparsed[h]
    overlaps = None
    if others:
        sets = {tag: set().union(*(r.header_names() for r in o.records)) if o.records else set()
                for tag, o in others.items()}
        overlaps = overlap_counts(sets)
    return ProfileReport(
        responses_per_label=responses,
        unique_headers_per_label={lab: len(names_by_label[lab]) for lab in LABELS},
        headers_per_record_quartiles={lab: quartiles(per_record[lab]) for lab in LABELS},
        header_frequency=dict(sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))),
        value_summaries=summaries,
        overlap_counts=overlaps,
        headerless_records=sum(1 for r in ds.records if not r.headers),
    )
