import numpy as np
import pytest

from hplapr.evaluation import make_synthetic
from hplapr.io import FormatError, read_feature_csv, read_json, read_matrix_csv, write_feature_csv, write_matrix_csv


def test_feature_roundtrip(tmp_path):
    t = make_synthetic(points_per_class=3, seed=2)
    mask = np.zeros(t.n, bool)
    mask[::2] = True
    write_feature_csv(t, tmp_path / "f.csv", mask)
    back = read_feature_csv(tmp_path / "f.csv")
    np.testing.assert_array_equal(back.features, t.features)
    np.testing.assert_array_equal(back.class_labels, np.where(mask, t.class_labels, -1))
    np.testing.assert_array_equal(back.group_labels, t.group_labels)
    assert back.ids == t.ids


def test_optional_columns(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("id,label,group,f0\na,,,1.0\nb,,,2.0\n")
    t = read_feature_csv(p)
    assert t.class_labels is None and t.group_labels is None and t.ids == ["a", "b"]


@pytest.mark.parametrize("body", [
    "id,label,f0\na,1,1.0\n",
    "id,label,group,f0\na,1,0,1.0,2.0\n",
    "id,label,group,f0\na,x,0,1.0\nb,1,0,2.0\n",
    "id,label,group,f0\na,1,0,1.0\nb,1,,2.0\n",
    "id,label,group,f0\na,1,0,nan\nb,1,0,2.0\n",
    "",
])
def test_malformed_feature_csv(tmp_path, body):
    p = tmp_path / "f.csv"
    p.write_text(body)
    with pytest.raises(FormatError):
        read_feature_csv(p)


def test_missing_files_name_the_path(tmp_path):
    for reader in (read_feature_csv, read_matrix_csv, read_json):
        with pytest.raises(FileNotFoundError, match="nope"):
            reader(tmp_path / "nope")


def test_matrix_roundtrip(tmp_path):
    M = np.random.default_rng(0).normal(size=(4, 3))
    write_matrix_csv(M, tmp_path / "m.csv")
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "m.csv"), M)
    (tmp_path / "bad.csv").write_text("1,2\n3\n")
    with pytest.raises(FormatError):
        read_matrix_csv(tmp_path / "bad.csv")


def test_bad_json(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(FormatError):
        read_json(tmp_path / "c.json")
