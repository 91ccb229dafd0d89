"""Header vocabulary: the four reduction filters and fuzzy header merging."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

from ..digest import sha256_json
from ..errors import EmptyTrainingSet, InvalidArgument, InvalidWeights, UnlabeledDataset
from ..ingest import Dataset
from .strdist import damerau_levenshtein, jaccard

LOW_VARIANCE = "low_variance"
MISSING_RATIO = "missing_ratio"
SINGLE_LABEL = "single_label"


@dataclass(frozen=True)
class VocabParams:
    min_presence_rate: float = 1e-4
    w_dl: float = 0.7
    w_h: float = 0.3
    name_threshold: float = 0.88
    value_threshold: float = 0.5

    def __post_init__(self):
        if self.w_dl < 0 or self.w_h < 0 or abs(self.w_dl + self.w_h - 1.0) > 1e-9:
            raise InvalidWeights(f"w_dl + w_h must equal 1 (got {self.w_dl} + {self.w_h})")
        if not 0.0 <= self.min_presence_rate <= 1.0:
            raise InvalidArgument("min_presence_rate must lie in [0, 1]")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class HeaderVocabulary:
    canonical: list[str]
    alias_map: dict[str, str]
    dropped: dict[str, str]
    thresholds: dict
    train_digest: str
    frequencies: dict[str, int] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.canonical)

    def column_of(self) -> dict[str, int]:
        cols = {name: j for j, name in enumerate(self.canonical)}
        for alias, target in self.alias_map.items():
            cols[alias] = cols[target]
        return cols

    def to_json(self) -> dict:
        return {
            "canonical": list(self.canonical),
            "alias_map": dict(sorted(self.alias_map.items())),
            "dropped": dict(sorted(self.dropped.items())),
            "thresholds": dict(self.thresholds),
            "train_digest": self.train_digest,
            "frequencies": dict(self.frequencies),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HeaderVocabulary":
        return cls(list(obj["canonical"]), dict(obj["alias_map"]), dict(obj["dropped"]),
                   dict(obj["thresholds"]), obj["train_digest"],
                   dict(obj.get("frequencies", {})))

    @property
    def digest(self) -> str:
        body = self.to_json()
        body.pop("frequencies")
        return sha256_json(body)


class _UnionFind:
    def __init__(self, items: Iterable[str]):
        self.parent = {x: x for x in items}

    def find(self, x: str) -> str:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # deterministic regardless of pair order
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _char_count_gap(a: str, b: str) -> int:
    ca, cb = Counter(a), Counter(b)
    return sum(abs(ca[k] - cb[k]) for k in ca.keys() | cb.keys())


def name_pair_similarity(a: str, b: str, params: VocabParams) -> float:
    dl = damerau_levenshtein(a, b)
    longest = max(len(a), len(b)) or 1
    ham = 0.0
    if len(a) == len(b):
        ham = 1.0 - (sum(x != y for x, y in zip(a, b)) / len(a) if a else 0.0)
    return params.w_dl * (1.0 - dl / longest) + params.w_h * ham


def fuzzy_merge_headers(names: Iterable[str], value_sets: Mapping[str, set],
                        params: VocabParams | None = None,
                        frequencies: Mapping[str, int] | None = None) -> dict[str, str]:
    """Group similar header names; returns alias -> canonical for merged names.

    A pair is joined when its weighted name similarity reaches
    ``params.name_threshold`` and the Jaccard overlap of observed values
    reaches ``params.value_threshold``. Groups are the transitive closure of
    joined pairs; the most frequent member names the group.
    """
    params = params or VocabParams()
    names = sorted(set(names))
    if not names:
        raise InvalidArgument("no header names to merge")
    frequencies = frequencies or {}
    uf = _UnionFind(names)
    tau_n = params.name_threshold
    by_len: dict[int, list[str]] = defaultdict(list)
    for n in names:
        by_len[len(n)].append(n)
    lengths = sorted(by_len)
    for li, la in enumerate(lengths):
        for lb in lengths[li:]:
            # unequal lengths: Hamming term is 0 and DL >= |la - lb|
            if la != lb and params.w_dl * (1.0 - (lb - la) / lb) < tau_n:
                break
            group_a, group_b = by_len[la], by_len[lb]
            for i, a in enumerate(group_a):
                start = i + 1 if la == lb else 0
                for b in group_b[start:]:
                    longest = max(la, lb)
                    ham = 0.0
                    if la == lb:
                        ham = 1.0 - sum(x != y for x, y in zip(a, b)) / la if la else 1.0
                    if params.w_dl + params.w_h * ham < tau_n:
                        continue
                    dl_floor = max(abs(la - lb), (_char_count_gap(a, b) + 1) // 2)
                    if params.w_dl * (1.0 - dl_floor / longest) + params.w_h * ham < tau_n:
                        continue
                    if jaccard(value_sets.get(a, set()), value_sets.get(b, set())) \
                            < params.value_threshold:
                        continue
                    if name_pair_similarity(a, b, params) >= tau_n:
                        uf.union(a, b)
    groups: dict[str, list[str]] = defaultdict(list)
    for n in names:
        groups[uf.find(n)].append(n)
    alias_map = {}
    for members in groups.values():
        if len(members) < 2:
            continue
        canon = min(members, key=lambda m: (-frequencies.get(m, 0), m))
        for m in members:
            if m != canon:
                alias_map[m] = canon
    return alias_map


@dataclass
class _HeaderStats:
    presence: int = 0
    labels: set = field(default_factory=set)
    values: set = field(default_factory=set)


def collect_header_stats(ds: Dataset) -> dict[str, _HeaderStats]:
    stats: dict[str, _HeaderStats] = defaultdict(_HeaderStats)
    for r in ds.records:
        lab = ds.label_map[r.record_id]
        for name in r.header_names():
            st = stats[name]
            st.presence += 1
            st.labels.add(lab)
        for name, value in r.headers:
            stats[name].values.add(value)
    return dict(stats)


def build_vocabulary(train: Dataset, params: VocabParams | None = None) -> HeaderVocabulary:
    """Derive the frozen feature vocabulary from the training split only."""
    params = params or VocabParams()
    if train.label_map is None:
        raise UnlabeledDataset("vocabulary construction needs labels")
    if len(train) == 0:
        raise EmptyTrainingSet("training split is empty")
    n = len(train)
    stats = collect_header_stats(train)
    dropped: dict[str, str] = {}
    survivors = []
    for name in sorted(stats):
        st = stats[name]
        if len(st.values) <= 1:
            dropped[name] = LOW_VARIANCE
        elif st.presence / n < params.min_presence_rate:
            dropped[name] = MISSING_RATIO
        elif len(st.labels) < 2:
            dropped[name] = SINGLE_LABEL
        else:
            survivors.append(name)

    alias_map = {}
    if survivors:
        alias_map = fuzzy_merge_headers(
            survivors, {s: stats[s].values for s in survivors}, params,
            {s: stats[s].presence for s in survivors})
    groups: dict[str, list[str]] = defaultdict(list)
    for s in survivors:
        groups[alias_map.get(s, s)].append(s)
    # (iii) again on merged groups
    for canon, members in list(groups.items()):
        labels = set().union(*(stats[m].labels for m in members))
        if len(labels) < 2:
            for m in members:
                dropped[m] = SINGLE_LABEL
                alias_map.pop(m, None)
            del groups[canon]

    freq = Counter()
    if alias_map:
        for r in train.records:
            hit = {alias_map.get(h, h) for h in r.header_names()}
            freq.update(h for h in hit if h in groups)
    else:
        freq.update({g: stats[g].presence for g in groups})
    canonical = sorted(groups, key=lambda g: (-freq[g], g))
    return HeaderVocabulary(
        canonical=canonical,
        alias_map={a: c for a, c in alias_map.items() if c in groups},
        dropped=dropped,
        thresholds=params.to_json(),
        train_digest=train.digest(),
        frequencies={g: freq[g] for g in canonical},
    )
