"""CSV loading and the synthetic dataset generator."""

import pytest

from vflkit.data import (
    PartyDataset,
    check_binary_labels,
    gen_synthetic,
    load_party_csv,
)
from vflkit.errors import DataError
from vflkit.tensor import Tensor

import oracles


def write_csv(tmp_path, text, name="t.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_member_table(tmp_path):
    path = write_csv(tmp_path, "id,x0,x1\na,1.5,-2.0\nb,0.25,3.0\n")
    ds = load_party_csv(path)
    assert ds.ids == ("a", "b")
    assert ds.feature_names == ("x0", "x1")
    assert ds.features.to_lists() == [[1.5, -2.0], [0.25, 3.0]]
    assert ds.labels is None


def test_load_master_table_with_label(tmp_path):
    path = write_csv(tmp_path, "id,x0,label\na,1.0,1.0\nb,2.0,0.0\n")
    ds = load_party_csv(path, label_column="label")
    assert ds.feature_names == ("x0",)
    assert ds.labels.to_lists() == [[1.0], [0.0]]


def test_load_respects_column_positions(tmp_path):
    # id and label need not be first/last
    path = write_csv(tmp_path, "label,key,x0\n1.0,a,5.0\n")
    ds = load_party_csv(path, id_column="key", label_column="label")
    assert ds.ids == ("a",)
    assert ds.features.to_lists() == [[5.0]]
    assert ds.labels.to_lists() == [[1.0]]


def test_load_featureless_table(tmp_path):
    path = write_csv(tmp_path, "id,label\na,1.0\nb,0.0\n")
    ds = load_party_csv(path, label_column="label")
    assert ds.features.shape == (2, 0)
    assert ds.feature_names == ()


def test_load_errors_name_path_and_row(tmp_path):
    with pytest.raises(DataError, match="cannot open"):
        load_party_csv(tmp_path / "absent.csv")

    path = write_csv(tmp_path, "")
    with pytest.raises(DataError, match="empty file"):
        load_party_csv(path)

    path = write_csv(tmp_path, "key,x0\na,1.0\n")
    with pytest.raises(DataError, match="id column 'id' not in header"):
        load_party_csv(path)

    path = write_csv(tmp_path, "id,x0\na,1.0\n")
    with pytest.raises(DataError, match="label column 'y' not in header"):
        load_party_csv(path, label_column="y")

    path = write_csv(tmp_path, "id,x0\na,1.0,9.0\n")
    with pytest.raises(DataError, match=r"t\.csv:2: 3 cells, header has 2"):
        load_party_csv(path)

    path = write_csv(tmp_path, "id,x0\na,1.0\na,2.0\n")
    with pytest.raises(DataError, match=r"t\.csv:3: duplicate id 'a'"):
        load_party_csv(path)

    path = write_csv(tmp_path, "id,x0\na,1.0\nb,wide\n")
    with pytest.raises(DataError, match=r"t\.csv:3: column 'x0': 'wide'"):
        load_party_csv(path)

    path = write_csv(tmp_path, "id,x0,label\na,1.0,maybe\n")
    with pytest.raises(DataError, match=r"column 'label': 'maybe'"):
        load_party_csv(path, label_column="label")


def test_party_dataset_row_count_validation():
    with pytest.raises(DataError, match="2 feature rows for 1 ids"):
        PartyDataset(("a",), Tensor(2, 1, (1.0, 2.0)), None, ("x0",))
    with pytest.raises(DataError, match="1 labels for 2 ids"):
        PartyDataset(("a", "b"), Tensor(2, 1, (1.0, 2.0)),
                     Tensor(1, 1, (1.0,)), ("x0",))


def test_check_binary_labels():
    ds = PartyDataset(("a", "b"), Tensor(2, 0, ()),
                      Tensor(2, 1, (1.0, 0.5)), ())
    check_binary_labels(ds, "linreg")  # anything goes for regression
    with pytest.raises(DataError, match="label at row 1 is 0.5"):
        check_binary_labels(ds, "logreg")
    member_ds = PartyDataset(("a",), Tensor(1, 1, (9.0,)), None, ("x0",))
    check_binary_labels(member_ds, "logreg")  # no labels, nothing to check


def test_gen_synthetic_layout(tmp_path):
    written = gen_synthetic(tmp_path, parties=3, rows=20,
                            features_per_party=2, seed=6)
    assert sorted(written) == ["master", "member0", "member1"]
    master = load_party_csv(written["master"], label_column="label")
    m0 = load_party_csv(written["member0"])
    m1 = load_party_csv(written["member1"])
    assert master.feature_names == ("x0", "x1")
    assert set(master.labels.data) <= {0.0, 1.0}
    # ~10% dropped per party, never everything
    for ds in (master, m0, m1):
        assert 0 < len(ds.ids) <= 20
        assert all(i.startswith("r") and len(i) == 4 for i in ds.ids)
    # different parties drop different rows (seeded independently)
    assert not (set(m0.ids) == set(m1.ids) == set(master.ids))


def test_gen_synthetic_is_deterministic(tmp_path):
    a = gen_synthetic(tmp_path / "a", parties=2, rows=15,
                      features_per_party=1, seed=9)
    b = gen_synthetic(tmp_path / "b", parties=2, rows=15,
                      features_per_party=1, seed=9)
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()
    c = gen_synthetic(tmp_path / "c", parties=2, rows=15,
                      features_per_party=1, seed=10)
    assert a["master"].read_bytes() != c["master"].read_bytes()


def test_gen_synthetic_master_takes_last_columns(tmp_path):
    written = gen_synthetic(tmp_path, parties=2, rows=10,
                            features_per_party=1, seed=3)
    # regenerate the full matrix the same way and check the split
    rng = oracles.substream(3, "gen", "features")
    matrix = [[rng.gauss(0.0, 1.0) for _ in range(2)] for _ in range(10)]
    m0 = load_party_csv(written["member0"])
    master = load_party_csv(written["master"], label_column="label")
    id_to_row = {f"r{i:03d}": i for i in range(10)}
    for rid, row in zip(m0.ids, m0.features.to_lists()):
        assert row == [matrix[id_to_row[rid]][0]]
    for rid, row in zip(master.ids, master.features.to_lists()):
        assert row == [matrix[id_to_row[rid]][1]]


def test_gen_synthetic_wide_row_counter(tmp_path):
    written = gen_synthetic(tmp_path, parties=2, rows=1200,
                            features_per_party=1, seed=1)
    ds = load_party_csv(written["member0"])
    assert all(len(i) == 5 for i in ds.ids)  # "r0000".."r1199"


def test_gen_synthetic_argument_guards(tmp_path):
    with pytest.raises(DataError, match="at least 2 parties"):
        gen_synthetic(tmp_path, parties=1, rows=10, features_per_party=1, seed=0)
    with pytest.raises(DataError, match="features_per_party"):
        gen_synthetic(tmp_path, parties=2, rows=10, features_per_party=0, seed=0)
    with pytest.raises(DataError, match="rows"):
        gen_synthetic(tmp_path, parties=2, rows=-1, features_per_party=1, seed=0)
