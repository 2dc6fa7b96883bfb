import json

import numpy as np
import pytest

from qflow import data as D
from qflow.errors import DataError, ModelFormatError, ParseError

GROUP_OF = {"RES": "Residential", "OFF": "Office", "OTH": "Others"}


def _write(tmp_path, text, name="c.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _record(pid, series_by_date, racks=None):
    return D.PortRecord(pid, racks, {d: np.asarray(s, float) for d, s in series_by_date.items()})


def test_empty_body(tmp_path):
    assert D.load_counts(_write(tmp_path, "port_id,date,hour,count\n")) == []


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    recs = [_record(p, {d: rng.integers(0, 9, 17) for d in ("2024-04-01", "2024-04-02")}, 10)
            for p in ("A", "B")]
    path = tmp_path / "c.csv"
    D.write_counts(recs, path)
    back = D.load_counts(path)
    assert [r.port_id for r in back] == ["A", "B"]
    for a, b in zip(recs, back):
        assert b.rack_count == 10 and b.days() == a.days()
        for d in a.days():
            assert np.array_equal(a.counts[d], b.counts[d])


@pytest.mark.parametrize("body,fragment", [
    ("port_id,date,count\n", "missing column"),
    ("port_id,date,hour,count\nA,2024-04-01,7,abc\n", ":2:"),
    ("port_id,date,hour,count\nA,2024-04-01,7,1\nA,2024-04-01,7,2\n", "duplicate"),
    ("port_id,date,hour,count\nA,04/01/2024,7,1\n", "bad date"),
])
def test_parse_errors(tmp_path, body, fragment):
    with pytest.raises(ParseError, match=fragment):
        D.load_counts(_write(tmp_path, body))


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="nope.csv"):
        D.load_counts(tmp_path / "nope.csv")


def test_hours_outside_grid_dropped_and_rack_warning(tmp_path):
    body = "port_id,date,hour,count,rack_count\nA,2024-04-01,3,1,2\nA,2024-04-01,7,5,2\n"
    with pytest.warns(UserWarning, match="exceed"):
        recs = D.load_counts(_write(tmp_path, body))
    s = recs[0].counts["2024-04-01"]
    assert s[1] == 5 and np.isnan(s[0])


def _commute_record(pid, delta, days=("2024-04-01", "2024-04-02")):
    s = np.full(17, 10.0)
    s[3:] = 10 + delta  # 9:00 onward
    return _record(pid, {d: s for d in days})


@pytest.mark.parametrize("delta,group", [(-3, "Residential"), (2, "Office"), (1.9, "Others"),
                                         (-2, "Residential"), (0, "Others")])
def test_classification_rule(delta, group):
    assert D.classify_ports([_commute_record("p", delta)]).groups["p"] == group


def test_classification_uses_weekdays_only():
    weekday = _commute_record("p", -3, days=("2024-04-01",))
    weekend = _commute_record("p", 20, days=("2024-04-06",))
    rec = _record("p", {**weekday.counts, **weekend.counts})
    assert D.classify_ports([rec]).groups["p"] == "Residential"


def test_classification_missing_hours():
    s = np.full(17, 3.0)
    s[1] = np.nan
    with pytest.raises(DataError, match="p"):
        D.classify_ports([_record("p", {"2024-04-01": s})])


def _random_records(seed, n=6, days=("2024-04-01", "2024-04-02", "2024-04-03")):
    rng = np.random.default_rng(seed)
    return [_record(f"P{seed}_{k}", {d: rng.integers(0, 12, 17) for d in days}, 12)
            for k in range(n)]


def test_aggregation_single_port_per_group():
    recs = [_commute_record("r", -3), _commute_record("o", 3), _commute_record("x", 0)]
    panel = D.aggregate_groups(recs, D.classify_ports(recs))
    for k, r in enumerate(recs):
        assert np.array_equal(panel.counts[:, k], np.stack([r.counts[d] for d in r.days()]))


def test_aggregation_brute_force_and_linearity():
    recs = _random_records(1)
    groups = {r.port_id: D.GROUPS[k % 3] for k, r in enumerate(recs)}
    ga = D.GroupAssignment(groups)
    panel = D.aggregate_groups(recs, ga)
    for i, day in enumerate(panel.day_labels):
        for g, name in enumerate(D.GROUPS):
            for t in range(17):
                ref = sum(r.counts[day][t] for r in recs if groups[r.port_id] == name)
                assert panel.counts[i, g, t] == ref
    a = D.aggregate_groups(recs[:3], ga)
    b = D.aggregate_groups(recs[3:], ga)
    assert np.array_equal(panel.counts, a.counts + b.counts)


def test_aggregation_two_ports_sum():
    a = _record("a", {"2024-04-01": np.full(17, 3.0)})
    b = _record("b", {"2024-04-01": np.full(17, 4.0)})
    panel = D.aggregate_groups([a, b], D.GroupAssignment({"a": "Residential", "b": "Residential"}))
    assert panel.counts[0, 0, 5] == 7


def test_partition_and_summary():
    recs = D.synth_generate(D.SynthSpec(num_days=5), seed=2)
    ga = D.classify_ports(recs)
    assert set(ga.groups) == {r.port_id for r in recs}
    rows = ga.summary()
    assert [r[0] for r in rows] == ["Residential", "Office", "Others", "Total"]
    assert sum(r[1] for r in rows[:3]) == rows[3][1] == 134
    assert abs(sum(r[2] for r in rows[:3]) - 100) < 1e-9


def test_synthetic_flows_exactly_opposite_without_noise():
    recs = D.synth_generate(D.SynthSpec(noise=0.0, num_days=5), seed=0)
    ga = D.GroupAssignment({r.port_id: GROUP_OF[r.port_id[:3]] for r in recs})
    inc = np.diff(D.aggregate_groups(recs, ga).counts, axis=2)
    assert np.array_equal(inc[:, 0], -inc[:, 1])
    assert not inc[:, 2].any()
    assert inc[:, 0, 1:3].min() < 0  # morning outflow from Residential


def test_synthetic_classification_recovers_groups():
    recs = D.synth_generate(D.SynthSpec(), seed=0)
    ga = D.classify_ports(recs)
    hits = np.mean([ga.groups[r.port_id] == GROUP_OF[r.port_id[:3]] for r in recs])
    assert hits >= 0.95


def test_synthetic_deterministic():
    a = D.synth_generate(D.SynthSpec(num_days=3), seed=7)
    b = D.synth_generate(D.SynthSpec(num_days=3), seed=7)
    assert all(np.array_equal(x.counts[d], y.counts[d]) for x, y in zip(a, b) for d in x.days())


def test_synth_spec_dict_round_trip():
    spec = D.SynthSpec(num_days=4, noise=0.1)
    assert D.SynthSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_panel_file_round_trip(tmp_path):
    panel = D.synth_group_panel(num_days=3, seed=1)
    D.write_panel(panel, tmp_path / "p.csv")
    back = D.read_panel(tmp_path / "p.csv")
    assert np.array_equal(back.counts, panel.counts)
    assert back.port_labels == list(D.GROUPS) and back.day_labels == panel.day_labels


def test_model_round_trip(tmp_path, small_model):
    path = tmp_path / "m.json"
    D.save_model(small_model, path)
    back = D.load_model(path)
    assert np.array_equal(back.params.theta1, small_model.params.theta1)
    assert np.array_equal(back.params.theta2, small_model.params.theta2)
    assert back.layout == small_model.layout and back.params.entangle == small_model.params.entangle
    assert np.array_equal(back.codebook.representatives, small_model.codebook.representatives)
    assert np.array_equal(back.transitions.probs, small_model.transitions.probs)
    assert back.cost_history == small_model.cost_history
    assert back.config == small_model.config


def test_model_corruption_detected(tmp_path, small_model):
    path = tmp_path / "m.json"
    D.save_model(small_model, path)
    text = path.read_text()
    k = text.index('"theta2"')
    k = text.index("0.", k) + 2
    digit = text[k]
    path.write_text(text[:k] + ("1" if digit != "1" else "2") + text[k + 1:])
    with pytest.raises(ModelFormatError, match="checksum"):
        D.load_model(path)


def test_model_newer_version_rejected(tmp_path, small_model):
    path = tmp_path / "m.json"
    D.save_model(small_model, path)
    doc = json.loads(path.read_text())
    doc["version"] = "2.0"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="version"):
        D.load_model(path)
    path.write_text("not json")
    with pytest.raises(ModelFormatError):
        D.load_model(path)
