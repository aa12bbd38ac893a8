import gzip
import json
import random

import pytest

from vtfeed.labeler import LabelResult
from vtfeed.report_model import (
    FEATURE_HEADER,
    FiletypeMapping,
    Interval,
    MalformedRecord,
    MalformedRow,
    ParseStats,
    SampleFeatures,
    dedup_latest,
    derive_filetype,
    extract_features,
    feature_name,
    first_reports,
    format_features,
    iter_reports,
    parse_features,
    parse_report_line,
    read_features,
    read_reports,
    write_features,
)
from vtfeed.synth import random_sha

SHA = "a" * 64
MAPPING = FiletypeMapping.load()
WINDOW = Interval(1000, 2000)


def line(**fields):
    rec = {"sha256": SHA, "scan_date": 1500, "fseen_date": 1500, "vt_score": 0, "detection_labels": []}
    rec.update(fields)
    return json.dumps(rec)


def test_minimal_record_has_null_optionals():
    r = parse_report_line(line())
    assert (r.sha256, r.scan_date, r.fseen_date, r.vt_score) == (SHA, 1500, 1500, 0)
    for name in ("sha1", "md5", "tlsh", "vhash", "imphash", "trid_file_type", "package_name", "cert_valid_from"):
        assert getattr(r, name) is None
    assert r.vt_tags == () and r.detection_labels == ()


@pytest.mark.parametrize(
    "fields",
    [
        {"fseen_date": 1501},
        {"sha256": "a" * 63},
        {"sha256": "g" * 64},
        {"vt_score": -1},
        {"vt_score": 201},
        {"imphash": "xyz"},
        {"md5": "ab"},
        {"tlsh": "T1" + "0" * 10},
        {"scan_date": None},
        {"detection_labels": "x"},
    ],
)
def test_malformed(fields):
    with pytest.raises(MalformedRecord):
        parse_report_line(line(**fields))


@pytest.mark.parametrize("text", ["", "not json", "[1, 2]", "{"])
def test_not_a_record(text):
    with pytest.raises(MalformedRecord):
        parse_report_line(text)


def test_normalization_and_label_shapes():
    r = parse_report_line(line(sha256="A" * 64, imphash="ABCDEF" + "0" * 26, tlsh="TNULL",
                               detection_labels={"E1": "Win32.Zbot.a", "E2": None}, unknown_field=5))
    assert r.sha256 == SHA and r.imphash == "abcdef" + "0" * 26 and r.tlsh is None
    assert r.detection_labels == (("E1", "Win32.Zbot.a"), ("E2", None))
    r2 = parse_report_line(line(detection_labels=[{"engine": "E1", "label": "x"}, ["E2", ""]]))
    assert r2.detection_labels == (("E1", "x"), ("E2", None))


def test_missing_vt_score_is_counted_from_labels():
    r = parse_report_line(json.dumps({"sha256": SHA, "scan_date": 5, "fseen_date": 5,
                                      "detection_labels": [["a", "x"], ["b", None], ["c", "y"]]}))
    assert r.vt_score == 2


def test_corrupted_stream_counts_errors():
    rng = random.Random(4)
    bad = set(rng.sample(range(1, 10_001), 100))
    lines = [
        rng.choice(["{broken", line(fseen_date=9999), line(sha256="zz")]) if i in bad else line(sha256=random_sha(rng))
        for i in range(1, 10_001)
    ]
    stats = ParseStats()
    records = list(iter_reports(lines, stats, keep_error_lines=True))
    assert len(records) == 9_900 and stats.errors == 100 and set(stats.error_lines) == bad


def test_gzip_input(tmp_path):
    path = tmp_path / "r.jsonl.gz"
    with gzip.open(path, "wt", encoding="utf-8") as fh:
        fh.write(line() + "\n" + line(sha256="b" * 64) + "\n")
    assert [r.sha256 for r in read_reports([path])] == [SHA, "b" * 64]


# -- filetype --------------------------------------------------------------


def test_filetype_majority():
    assert derive_filetype("Win32 Executable MS Visual C++ (generic)", ["peexe"], "setup.exe", MAPPING) == "peexe"


def test_filetype_all_abstain():
    assert derive_filetype(None, [], None, MAPPING) is None
    assert derive_filetype("Unknown blob", ["nothing"], "noext", MAPPING) is None


def test_filetype_three_way_split_uses_priority():
    assert derive_filetype("Adobe Portable Document Format", ["html"], "a.js", MAPPING) == "pdf"
    assert derive_filetype(None, ["html"], "a.js", MAPPING) == "html"
    assert derive_filetype(None, [], "a.js", MAPPING) == "javascript"


def test_filetype_two_votes_beat_priority():
    assert derive_filetype("Adobe Portable Document Format", ["html"], "index.html", MAPPING) == "html"


def test_filetype_tag_order_insensitive():
    tags = ["pdf", "html", "peexe"]
    expected = derive_filetype(None, tags, None, MAPPING)
    rng = random.Random(0)
    for _ in range(20):
        rng.shuffle(tags)
        assert derive_filetype(None, tags, None, MAPPING) == expected


def test_custom_mapping():
    m = FiletypeMapping.parse("trid\tfoo format\tfoo\ntag\tbar\tbar\next\tbaz\tbaz\n")
    assert derive_filetype("The FOO Format v2", [], None, m) == "foo"
    assert derive_filetype(None, ["BAR"], "x.baz", m) == "bar"
    with pytest.raises(ValueError):
        FiletypeMapping.parse("weird\ta\tb\n")


# -- features --------------------------------------------------------------


def test_extract_features():
    r = parse_report_line(line(tlsh="T1" + "AB" * 35, imphash="ABCDEF" + "0" * 26,
                               trid_file_type="Android Package", fseen_date=1000, scan_date=1700))
    f = extract_features(r, LabelResult("FAM:zbot", (), True), WINDOW, MAPPING)
    assert f.tlsh == "t1" + "ab" * 35 and f.vhash is None
    assert f.imphash == "abcdef" + "0" * 26
    assert f.filetype == "apk" and f.family == "FAM:zbot" and f.is_pup is True
    assert f.is_new


@pytest.mark.parametrize("fseen,new", [(999, False), (1000, True), (1999, True), (2000, False)])
def test_is_new_window_bounds(fseen, new):
    r = parse_report_line(line(fseen_date=fseen, scan_date=2500))
    assert extract_features(r, None, WINDOW, MAPPING).is_new is new


def test_feature_name_aliases():
    assert feature_name("pkg_name") == "package_name"
    assert feature_name("avc2_family") == "family"
    with pytest.raises(ValueError):
        feature_name("sha1")


def row(sha, scan, fseen=None, new=True, **kw):
    return SampleFeatures(sha, scan, scan if fseen is None else fseen, 0, is_new=new, **kw)


def test_dedup_latest_basics():
    x = "1" * 64
    assert dedup_latest([row(x, 1), row(x, 2)]) == [row(x, 2)]
    assert dedup_latest([row(x, 1)]) == [row(x, 1)]
    assert dedup_latest([]) == []


def test_dedup_ties():
    x = "1" * 64
    poor, rich = row(x, 5), row(x, 5, vhash="v")
    assert dedup_latest([poor, rich]) == [rich]
    assert dedup_latest([rich, poor]) == [rich]
    a, b = row(x, 5, vhash="a"), row(x, 5, vhash="b")
    assert dedup_latest([a, b]) == [a]


def test_first_reports():
    x, y = "1" * 64, "2" * 64
    rows = [row(x, 3, 1), row(x, 2, 1), row(y, 1, new=False)]
    assert first_reports(rows) == [row(x, 2, 1)]


def test_dedup_bulk_against_generator():
    rng = random.Random(11)
    shas = [random_sha(rng) for _ in range(6000)]
    rows, latest, earliest = [], {}, {}
    for _ in range(10_000):
        sha = rng.choice(shas)
        scan = rng.randrange(10**6)
        # distinct scan dates per sample keep the expected winner unambiguous
        while any(r.sha256 == sha and r.scan_date == scan for r in rows[-50:]):
            scan = rng.randrange(10**6)
        r = row(sha, scan, 0)
        rows.append(r)
        if sha not in latest or scan > latest[sha].scan_date:
            latest[sha] = r
        if sha not in earliest or scan < earliest[sha].scan_date:
            earliest[sha] = r
    out = dedup_latest(rows)
    assert len(out) == len(set(shas) & {r.sha256 for r in rows})
    assert out == [latest[k] for k in sorted(latest)]
    assert first_reports(rows) == [earliest[k] for k in sorted(earliest)]
    assert dedup_latest(out) == out and first_reports(first_reports(rows)) == first_reports(rows)
    rng.shuffle(rows)
    assert dedup_latest(rows) == out


def test_feature_file_round_trip(tmp_path):
    rows = [row("1" * 64, 5, 4, vhash="v1", is_pup=False, family="UNK:x"), row("2" * 64, 6, new=False)]
    path = tmp_path / "f.tsv"
    assert write_features(path, rows) == 2
    assert path.read_text().startswith(FEATURE_HEADER)
    assert list(read_features(path)) == rows
    assert parse_features(format_features(rows[0])) == rows[0]


def test_feature_file_errors(tmp_path):
    with pytest.raises(MalformedRow):
        parse_features("a\tb\n")
    bad = tmp_path / "bad.tsv"
    bad.write_text("#other\n")
    with pytest.raises(MalformedRow):
        list(read_features(bad))
    cols = format_features(row("1" * 64, 5)).rstrip("\n").split("\t")
    cols[1] = "x"
    with pytest.raises(MalformedRow):
        parse_features("\t".join(cols))
