"""RTTM and transcript JSON round trips, plus the millisecond time grid."""

import json

import pytest

import meetpipe as mp
from meetpipe.annotations import quantize_ms
from meetpipe.errors import FormatError, ShapeError


def test_quantize_ms():
    assert quantize_ms(1.23456) == 1.235
    assert quantize_ms(0.0004) == 0.0
    assert quantize_ms(0.0005) in (0.0, 0.001)  # half-way ties go to an adjacent grid point
    assert quantize_ms(2.0) == 2.0


def test_segment_validation():
    seg = mp.SegmentAnnotation(0, "spk0", 0.5, 1.5)
    assert seg.end > seg.start
    with pytest.raises(ShapeError):
        mp.SegmentAnnotation(0, "spk0", 2.0, 1.0)


def test_rttm_round_trip(tmp_path):
    segments = [
        mp.SegmentAnnotation(0, "spk0", 0.0, 1.234),
        mp.SegmentAnnotation(1, "spk1", 0.5, 2.0),
        mp.SegmentAnnotation(0, "spk0", 3.0, 4.5),
    ]
    path = tmp_path / "hyp.rttm"
    mp.write_rttm(path, segments, "rec0")
    back = mp.read_rttm(path)
    assert [(s.speaker, s.start, s.end) for s in back] == [
        ("spk0", 0.0, 1.234),
        ("spk1", 0.5, 2.0),
        ("spk0", 3.0, 4.5),
    ]


def test_rttm_field_layout(tmp_path):
    path = tmp_path / "one.rttm"
    mp.write_rttm(path, [mp.SegmentAnnotation(0, "alice", 1.0, 3.5)], "recX")
    line = path.read_text().strip()
    fields = line.split()
    assert fields[0] == "SPEAKER"
    assert fields[1] == "recX"
    assert fields[2] == "1"
    assert fields[3] == "1.000"  # onset, 3 decimals
    assert fields[4] == "2.500"  # duration, 3 decimals
    assert fields[7] == "alice"
    assert len(fields) == 10


def test_rttm_parse_error_names_line(tmp_path):
    path = tmp_path / "bad.rttm"
    path.write_text(
        "SPEAKER rec 1 0.000 1.000 <NA> <NA> spk0 <NA> <NA>\n"
        "SPEAKER rec 1 0.5\n"
    )
    with pytest.raises(FormatError, match=r":2"):
        mp.read_rttm(path)


def test_rttm_rejects_nonnumeric_times(tmp_path):
    path = tmp_path / "bad.rttm"
    path.write_text("SPEAKER rec 1 zero 1.000 <NA> <NA> spk0 <NA> <NA>\n")
    with pytest.raises(FormatError, match=r":1"):
        mp.read_rttm(path)


def test_rttm_skips_blank_lines(tmp_path):
    path = tmp_path / "c.rttm"
    path.write_text(
        "\n"
        "SPEAKER rec 1 0.000 1.000 <NA> <NA> spk0 <NA> <NA>\n"
        "\n"
    )
    assert len(mp.read_rttm(path)) == 1


def test_transcript_json_round_trip(tmp_path):
    t = mp.SpeakerTranscript()
    t.add("spk0", mp.TranscriptUtterance(0.0, 2.0, ["hello", "there"]))
    t.add("spk1", mp.TranscriptUtterance(1.0, 3.0, ["yes"]))
    t.add("spk0", mp.TranscriptUtterance(4.0, 5.0, ["bye"]))
    path = tmp_path / "ref.json"
    mp.write_transcript_json(path, t, "rec0")
    rec, back = mp.read_transcript_json(path)
    assert rec == "rec0"
    assert back.speakers == ["spk0", "spk1"]
    assert back.words_for("spk0") == ["hello", "there", "bye"]
    assert back.total_words() == 4


def test_transcript_json_is_sorted_and_stable(tmp_path):
    t = mp.SpeakerTranscript()
    t.add("b", mp.TranscriptUtterance(1.0, 2.0, ["x"]))
    t.add("a", mp.TranscriptUtterance(0.0, 1.0, ["y"]))
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    mp.write_transcript_json(p1, t, "r")
    mp.write_transcript_json(p2, t, "r")
    assert p1.read_bytes() == p2.read_bytes()
    payload = json.loads(p1.read_text())
    assert isinstance(payload, list)
    speakers = [u["speaker"] for u in payload]
    assert speakers == sorted(speakers)
    assert all(u["recording"] == "r" for u in payload)


def test_transcript_json_rejects_wrong_shape(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"recording": "r"}')
    with pytest.raises(FormatError):
        mp.read_transcript_json(path)


def test_transcript_json_rejects_unparseable_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(FormatError):
        mp.read_transcript_json(path)
