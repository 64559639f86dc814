import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from shapeadv import report as R

rows_st = st.lists(st.fixed_dictionaries({
    "attack": st.sampled_from(["hit_adv", "ifgm"]),
    "defense": st.sampled_from(["none", "sor", "srs"]),
    "defended_model": st.sampled_from(["undefended", "adversarially_trained"]),
    "attempted": st.integers(1, 9).map(str),
    "asr": st.sampled_from(["0.5", "1.0"]),
    "csd_mean": st.sampled_from(["", "0.3"]),
    "chamfer_mean": st.just("0.01"),
    "knn_dist_mean": st.just("0.05"),
}), max_size=5)


@settings(max_examples=60, deadline=None)
@given(rows_st, rows_st, rows_st)
def test_merge_is_associative(a, b, c):
    left = R.merge_rows([R.merge_rows([a, b]), c])
    right = R.merge_rows([a, R.merge_rows([b, c])])
    assert left == right == R.merge_rows([a, b, c])


def _report(attack, defense, asr):
    return {"schema_version": 1,
            "config_echo": {"attack": {"kind": attack}, "defense": {"kind": defense},
                            "defended_model": "undefended"},
            "summary": {"asr": asr, "attempted": 4, "csd_mean": 0.25, "chamfer_mean": None,
                        "knn_dist_mean": 0.1},
            "examples": []}


def test_report_has_one_row_per_pair_and_figure(tmp_path):
    paths = []
    for attack in ("hit_adv", "ifgm"):
        for defense in ("none", "sor"):
            p = tmp_path / f"{attack}_{defense}.json"
            p.write_text(json.dumps(_report(attack, defense, 0.75)))
            paths.append(str(p))
    out, fig = tmp_path / "t.csv", tmp_path / "t.png"
    R.build_report(paths, str(out), str(fig))
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert sorted((r["attack"], r["defense"]) for r in rows) == [
        ("hit_adv", "none"), ("hit_adv", "sor"), ("ifgm", "none"), ("ifgm", "sor")]
    assert rows[0]["chamfer_mean"] == "" and rows[0]["asr"] == "0.75"
    assert fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_csv_round_trips_through_merge(tmp_path):
    p = tmp_path / "a.json"
    p.write_text(json.dumps(_report("ifgm", "srs", 0.5)))
    first = tmp_path / "first.csv"
    R.build_report([str(p)], str(first))
    again = tmp_path / "again.csv"
    R.build_report([str(first), str(p)], str(again))
    assert first.read_text() == again.read_text()


def test_bad_inputs(tmp_path):
    with pytest.raises(FileNotFoundError):
        R.read_rows(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.csv"
    bad.write_text("attack,asr\nx,1\n")
    with pytest.raises(ValueError, match="missing columns"):
        R.read_rows(str(bad))
