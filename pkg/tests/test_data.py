import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrgmtl.data import (SyntheticConfig, generate_synthetic, load_column_mapping, load_csv,
                          partition_sizes, split, write_csv)
from ehrgmtl.errors import ConfigError, ContractError, GenerationError, ParseError, SchemaError
from oracles import record

HEADER = "patient_id,ev__uti__180d,ev__hosp__180d,ev__uti__90d,label__NIT"


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_schema_walkthrough(tmp_path):
    ds = load_csv(write(tmp_path, HEADER + "\np1,1,1,0,0\n"))
    assert len(ds.records) == 1 and ds.vocab.size == 3
    assert ds.vocab.windows == ("180d", "180d", "90d")
    assert [e.event_name for e in ds.vocab.entries] == ["uti", "hosp", "uti"]
    r = ds.records[0]
    assert (r.patient_id, r.events, r.labels) == ("p1", (1, 1, 0), (0,))
    assert ds.label_names == ["NIT"]


def test_all_zero_row_is_dropped(tmp_path):
    ds = load_csv(write(tmp_path, HEADER + "\np1,1,1,0,0\np2,0,0,0,1\n"))
    assert [r.patient_id for r in ds.records] == ["p1"]
    assert ds.dropped == ["p2"]


def test_non_binary_cell_names_row_and_column(tmp_path):
    with pytest.raises(ParseError, match=r"row 3.*ev__hosp__180d.*'2'"):
        load_csv(write(tmp_path, HEADER + "\np1,1,1,0,0\np2,0,2,0,1\n"))


def test_missing_label_column(tmp_path):
    with pytest.raises(SchemaError, match="label__SXT"):
        load_csv(write(tmp_path, HEADER + "\np1,1,0,0,0\n"), label_names=["NIT", "SXT"])


@pytest.mark.parametrize("header,match", [
    ("id,ev__a__w,label__NIT", "patient_id"),
    ("patient_id,ev__a,label__NIT", "ev__a"),
    ("patient_id,ev__a__w,foo", "foo"),
    ("patient_id,label__NIT", "ev__"),
    ("patient_id,ev__a__w,ev__a__w,label__X", "duplicate"),
])
def test_malformed_headers(tmp_path, header, match):
    with pytest.raises(SchemaError, match=match):
        load_csv(write(tmp_path, header + "\n"))


def test_ragged_row(tmp_path):
    with pytest.raises(ParseError, match="row 2"):
        load_csv(write(tmp_path, HEADER + "\np1,1,1\n"))


def test_label_selection_reorders(tmp_path):
    text = "patient_id,ev__a__w,label__A,label__B\np,1,0,1\n"
    ds = load_csv(write(tmp_path, text), label_names=["B", "A"])
    assert ds.records[0].labels == (1, 0) and ds.label_names == ["B", "A"]


def test_column_mapping(tmp_path):
    mp = write(tmp_path, "# source names from a data dictionary\nUTI_6M = ev__uti__180d\nRES_NIT=label__NIT\n",
               "map.txt")
    mapping = load_column_mapping(mp)
    assert mapping == {"UTI_6M": "ev__uti__180d", "RES_NIT": "label__NIT"}
    ds = load_csv(write(tmp_path, "patient_id,UTI_6M,RES_NIT\nq,1,1\n"), column_map=mapping)
    assert ds.vocab.column_names() == ["ev__uti__180d"] and ds.records[0].labels == (1,)
    with pytest.raises(SchemaError):
        load_column_mapping(write(tmp_path, "no equals sign\n", "bad.txt"))


def test_round_trip(tmp_path):
    vocab, records = generate_synthetic(SyntheticConfig(n_patients=50, n_events=12, n_windows=3,
                                                        events_per_patient_mean=3.0))
    path = tmp_path / "s.csv"
    write_csv(path, vocab, records, ("NIT", "SXT", "CIP", "LVX"))
    ds = load_csv(path)
    assert ds.vocab == vocab and ds.records == records and ds.dropped == []
    write_csv(tmp_path / "t.csv", ds.vocab, ds.records, ds.label_names)
    assert (tmp_path / "t.csv").read_bytes() == path.read_bytes()


# ---------------------------------------------------------------- split


def recs(n):
    return [record([1], pid=f"p{i}") for i in range(n)]


def test_split_sizes():
    s = split(recs(100), seed=0)
    assert (len(s.train), len(s.validation), len(s.test)) == (70, 10, 20)
    s = split(recs(10), seed=0)
    assert (len(s.train), len(s.validation), len(s.test)) == (7, 1, 2)


def test_split_is_deterministic():
    assert split(recs(50), seed=3) == split(recs(50), seed=3)
    assert split(recs(50), seed=3).train != split(recs(50), seed=4).train


def test_split_errors():
    with pytest.raises(ContractError):
        split(recs(2))
    with pytest.raises(ConfigError):
        split(recs(10), (0.5, 0.5, 0.5))


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 300), st.integers(0, 2**32 - 1))
def test_split_is_a_partition(n, seed):
    s = split(recs(n), seed=seed)
    ids = [r.patient_id for part in (s.train, s.validation, s.test) for r in part]
    assert sorted(ids) == sorted(f"p{i}" for i in range(n))
    for size, p in zip((len(s.train), len(s.validation), len(s.test)), (0.7, 0.1, 0.2)):
        assert abs(size - n * p) <= 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(1, 20), min_size=1, max_size=5))
def test_partition_sizes_sum(n, weights):
    props = [w / sum(weights) for w in weights]
    sizes = partition_sizes(n, props)
    assert sum(sizes) == n
    assert all(abs(s - n * p) < 1 for s, p in zip(sizes, props))


# ---------------------------------------------------------------- synthetic


def test_synthetic_shape():
    vocab, records = generate_synthetic(SyntheticConfig(n_patients=10))
    assert len(records) == 10 and vocab.size == 50
    assert all(len(r.labels) == 4 and set(r.labels) <= {0, 1} and any(r.events) for r in records)
    assert vocab.windows[:5] == ("w0", "w1", "w2", "w3", "w0")


def test_synthetic_is_deterministic():
    cfg = SyntheticConfig(n_patients=300)
    assert generate_synthetic(cfg) == generate_synthetic(cfg)
    assert generate_synthetic(cfg)[1] != generate_synthetic(SyntheticConfig(n_patients=300, seed=7))[1]


def test_synthetic_rates_at_default_size():
    cfg = SyntheticConfig()
    _, records = generate_synthetic(cfg)
    Y = np.array([r.labels for r in records])
    assert np.all(np.abs(Y.mean(axis=0) - np.array(cfg.positive_rates)) <= 0.02)
    assert abs(np.mean([sum(r.events) for r in records]) - cfg.events_per_patient_mean) < 0.5


def test_synthetic_labels_depend_on_events():
    # the label rule is a function of co-window pairs, so events predict labels
    _, records = generate_synthetic(SyntheticConfig())
    X = np.array([r.events for r in records], dtype=float)
    Y = np.array([r.labels for r in records], dtype=float)
    corr = np.nan_to_num(np.corrcoef(X.T, Y.T)[: X.shape[1], X.shape[1]:])
    assert np.abs(corr).max(axis=0).min() > 0.2


def test_synthetic_config_validation():
    for bad in (dict(positive_rates=(0.6, 0.1, 0.1, 0.1)), dict(n_windows=0), dict(n_events=2, n_windows=3),
                dict(task_count=2), dict(events_per_patient_mean=0.5), dict(n_patients=0)):
        with pytest.raises(ConfigError):
            SyntheticConfig(**bad)


def test_infeasible_rate_is_generation_error():
    with pytest.raises(GenerationError):
        generate_synthetic(SyntheticConfig(n_patients=5, task_count=1, positive_rates=(0.05,)))
