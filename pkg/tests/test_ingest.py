import json
import warnings

import numpy as np
import pytest

from hdrtrack.errors import (
    InvalidArgument,
    ParseError,
    RecordSkipped,
    SchemaVersionError,
    UnlabeledDataset,
)
from hdrtrack.ingest import (
    Dataset,
    Direction,
    HttpMessageRecord,
    dataset_to_jsonl,
    filter_hosts,
    hostname_from_url,
    ingest_capture,
    load_dataset,
    merge_datasets,
    overlap_counts,
    persist_dataset,
    profile_dataset,
    quartiles,
)
from hdrtrack.synthetic import synthetic_dataset


def _capture(tmp_path, entries, name="cap.json"):
    p = tmp_path / name
    p.write_text(json.dumps(entries), encoding="utf-8")
    return p


ENTRIES = [
    {"url": "https://ads.tracker.com/pixel?x=1", "timeStamp": 1660000000123.5,
     "requestHeaders": [{"name": "User-Agent", "value": "x"}],
     "responseHeaders": [{"name": "Content-Length", "value": "43"},
                         {"name": "X-Cache", "value": "HIT"}]},
    {"url": "https://www.site.org:8443/", "timeStamp": 1660000000200,
     "responseHeaders": {"content-type": "text/html", "set-cookie": ["a=1", "b=2"]}},
    {"url": "not a url", "responseHeaders": []},
    {"url": "https://cdn.site.org/a.js", "requestHeaders": [["Accept", "*/*"]]},
    {"url": "https://x.site.org/", "responseHeaders": "garbage"},
    {"url": "https://y.site.org/"},
    "not an object",
]


def test_tex_json_ingest_and_skips(tmp_path):
    path = _capture(tmp_path, {"requests": ENTRIES})
    with pytest.warns(RecordSkipped):
        ds = ingest_capture(path, browser_tag="chrome22", crawl_date="2022-08-01")
    dirs = [(r.remote_hostname, r.direction) for r in ds.records]
    assert dirs == [("ads.tracker.com", Direction.REQUEST), ("ads.tracker.com", Direction.RESPONSE),
                    ("www.site.org", Direction.RESPONSE), ("cdn.site.org", Direction.REQUEST)]
    first_res = ds.records[1]
    assert first_res.headers == (("content-length", "43"), ("x-cache", "HIT"))
    assert first_res.capture_timestamp == 1660000000123
    assert ds.records[2].headers == (("content-type", "text/html"), ("set-cookie", "a=1"),
                                     ("set-cookie", "b=2"))
    extra = ds.provenance.extra
    assert extra["skipped"] == 4
    assert extra["skip_reasons"] == {"bad_headers": 1, "bad_url": 1, "no_headers_field": 1,
                                     "not_an_object": 1}
    assert ds.provenance.browser_tag == "chrome22"
    assert ds.label_map is None


def test_record_ids_are_stable_and_unique(tmp_path):
    path = _capture(tmp_path, ENTRIES[:2])
    a = ingest_capture(path)
    b = ingest_capture(path)
    assert [r.record_id for r in a.records] == [r.record_id for r in b.records]
    assert len({r.record_id for r in a.records}) == len(a.records)
    assert a.digest() == b.digest()


def test_malformed_container_raises(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        ingest_capture(p)
    p.write_text('"a string"', encoding="utf-8")
    with pytest.raises(ParseError):
        ingest_capture(p)


@pytest.mark.parametrize("url,host", [
    ("https://Ads.Example.COM/x", "ads.example.com"),
    ("http://user:pw@host.net:8080/p", "host.net"),
    ("https://example.com./", "example.com"),
    ("https://[2001:db8::1]/", "2001:db8::1"),
    ("/relative/path", None),
    ("https:///nohost", None),
])
def test_hostname_from_url(url, host):
    assert hostname_from_url(url) == host


def test_canonical_roundtrip(tmp_path):
    ds = synthetic_dataset(40, seed=2)
    p = tmp_path / "ds.jsonl"
    persist_dataset(ds, p)
    back = load_dataset(p)
    assert back.records == ds.records
    assert back.label_map == ds.label_map
    assert back.digest() == ds.digest()
    assert dataset_to_jsonl(back) == p.read_text(encoding="utf-8")


def test_canonical_load_is_strict(tmp_path):
    ds = synthetic_dataset(5, seed=2)
    lines = dataset_to_jsonl(ds).splitlines()
    p = tmp_path / "x.jsonl"
    p.write_text("\n".join(lines[:2] + ["{broken"] + lines[2:]), encoding="utf-8")
    with pytest.raises(ParseError):
        load_dataset(p)
    rec = json.loads(lines[1])
    rec["v"] = 99
    p.write_text("\n".join([lines[0], json.dumps(rec)]), encoding="utf-8")
    with pytest.raises(SchemaVersionError):
        load_dataset(p)


def test_canonical_ingest_is_lenient(tmp_path):
    ds = synthetic_dataset(5, seed=2)
    lines = dataset_to_jsonl(ds).splitlines()
    bad = json.loads(lines[2])
    bad["host"] = "Not A Host"
    p = tmp_path / "x.jsonl"
    p.write_text("\n".join(lines[:2] + [json.dumps(bad)] + lines[3:]) + "\n", encoding="utf-8")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = ingest_capture(p, format="canonical_jsonl")
    assert len(out) == 4
    assert any(issubclass(w.category, RecordSkipped) for w in caught)


def test_unknown_format(tmp_path):
    with pytest.raises(InvalidArgument):
        ingest_capture(_capture(tmp_path, []), format="har")


def test_dataset_invariants():
    r = HttpMessageRecord(1, Direction.RESPONSE, "a.com", "https://a.com/", (), "x", 0)
    with pytest.raises(InvalidArgument):
        Dataset((r, r))
    with pytest.raises(InvalidArgument):
        Dataset((r,), label_map={2: "T"})
    with pytest.raises(InvalidArgument):
        Dataset((r,), label_map={1: "maybe"})
    with pytest.raises(UnlabeledDataset):
        Dataset((r,)).label_vector()


def test_direction_parse():
    assert Direction.parse("request") is Direction.REQUEST
    assert Direction.parse("res") is Direction.RESPONSE
    with pytest.raises(InvalidArgument):
        Direction.parse("both")


def test_select_direction_never_mixes():
    a = synthetic_dataset(20, seed=1, direction=Direction.REQUEST)
    b = synthetic_dataset(20, seed=2, id_offset=1000)
    merged = merge_datasets([a, b])
    assert merged.select_direction("request").directions() == {Direction.REQUEST}
    assert len(merged.select_direction("response")) == 20


def test_merge_rejects_mixed_labeling():
    a = synthetic_dataset(5, seed=1)
    b = synthetic_dataset(5, seed=2, labeled=False, id_offset=100)
    with pytest.raises(InvalidArgument):
        merge_datasets([a, b])


def test_filter_hosts():
    ds = synthetic_dataset(100, seed=4)
    out = filter_hosts(ds, ["TRACK.example"])
    assert all("track.example" not in r.remote_hostname for r in out.records)
    assert len(out) == int((ds.label_vector() == 0).sum())
    assert out.provenance.extra["excluded_host_substrings"] == ["track.example"]
    with pytest.raises(InvalidArgument):
        filter_hosts(ds, [])
    with pytest.raises(InvalidArgument):
        filter_hosts(ds, [""])


def test_quartiles_match_linear_interpolation():
    vals = [1, 2, 3, 4, 10]
    # type-7: position (n-1)*q
    assert quartiles(vals) == (2.0, 3.0, 4.0)
    assert quartiles([5]) == (5.0, 5.0, 5.0)
    assert quartiles([]) is None


def test_overlap_counts_regions():
    sets = {"a": {"x", "y", "z"}, "b": {"y", "z", "w"}, "c": {"z"}}
    out = overlap_counts(sets)
    assert out[("a",)] == 1 and out[("b",)] == 1
    assert out[("a", "b")] == 1 and out[("a", "b", "c")] == 1
    assert out[("c",)] == 0 and out[("a", "c")] == 0
    union = set().union(*sets.values())
    assert sum(out.values()) == len(union)


def _rec(i, host, headers):
    return HttpMessageRecord(i, Direction.RESPONSE, host, f"https://{host}/", headers, "t", 0)


def test_profile_by_hand():
    recs = (
        _rec(1, "t.com", (("content-length", "62"), ("x-a", "1"))),
        _rec(2, "t.com", (("content-length", "43"), ("x-a", "1"), ("x-a", "2"))),
        _rec(3, "s.com", (("content-length", "8068"), ("server", "nginx"), ("etag", "z"))),
        _rec(4, "s.com", (("content-length", "abc"),)),
        _rec(5, "s.com", ()),
    )
    ds = Dataset(recs, label_map={1: "T", 2: "T", 3: "NT", 4: "NT", 5: "NT"})
    rep = profile_dataset(ds, ["Content-Length"])
    assert rep.responses_per_label["T"]["count"] == 2
    assert rep.responses_per_label["NT"]["fraction"] == pytest.approx(0.6)
    assert rep.unique_headers_per_label == {"T": 2, "NT": 3}
    # duplicate names count once per record
    assert rep.headers_per_record_quartiles["T"] == (2.0, 2.0, 2.0)
    assert rep.headers_per_record_quartiles["NT"][1] == 1.0
    cl = rep.value_summaries["content-length"]
    assert cl["T"]["quartiles"][1] == pytest.approx(52.5)
    assert cl["NT"]["n"] == 1 and cl["skipped_unparseable"] == 1
    assert rep.header_frequency["content-length"] == 4
    assert rep.headerless_records == 1
    json.dumps(rep.to_json())


def test_profile_needs_labels():
    with pytest.raises(UnlabeledDataset):
        profile_dataset(synthetic_dataset(5, labeled=False))


def test_label_vector_orientation():
    ds = synthetic_dataset(60, seed=9)
    y = ds.label_vector()
    hosts = np.array([r.remote_hostname.endswith("track.example") for r in ds.records])
    assert np.array_equal(y.astype(bool), hosts)
