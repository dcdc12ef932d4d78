import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dada import dataset as ds
from dada.errors import ConfigError, EmptySeries, MalformedFile, SeriesTooShort


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_without_labels(tmp_path):
    ts = ds.load(write(tmp_path / "a.csv", "c0,c1\n1,2\n3,4\n5,6\n"))
    assert (ts.T, ts.C) == (3, 2)
    assert ts.labels is None
    np.testing.assert_array_equal(ts.values, [[1, 2], [3, 4], [5, 6]])


def test_load_zero_labels(tmp_path):
    ts = ds.load(write(tmp_path / "a.csv", "c0,label\n1,0\n2,0\n3,0\n"))
    np.testing.assert_array_equal(ts.labels, [0, 0, 0])


def test_missing_cell_is_linearly_interpolated(tmp_path):
    ts = ds.load(write(tmp_path / "a.csv", "c0,c1\n1,0\n2,0\n,0\n8,0\n10,0\n"))
    # hand interpolation between t=1 (2) and t=3 (8)
    np.testing.assert_allclose(ts.values[:, 0], [1, 2, 5, 8, 10])


def test_missing_edges_held_constant(tmp_path):
    ts = ds.load(write(tmp_path / "b.csv", "c0,c1\n,1\n4,1\n6,1\n,1\n"))
    np.testing.assert_allclose(ts.values[:, 0], [4, 4, 6, 6])


@pytest.mark.parametrize(
    "text, err",
    [
        ("", EmptySeries),
        ("c0\n", EmptySeries),
        ("x,y\n1,2\n", MalformedFile),
        ("c0,c1\n1\n", MalformedFile),
        ("c0\nabc\n", MalformedFile),
        ("c0,label\n1,2\n", MalformedFile),
    ],
)
def test_load_errors(tmp_path, text, err):
    with pytest.raises(err):
        ds.load(write(tmp_path / "bad.csv", text))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(50, 3))
    labels = (rng.random(50) < 0.2).astype(int)
    ds.save_csv(tmp_path / "x.csv", values, labels)
    ts = ds.load(tmp_path / "x.csv")
    np.testing.assert_array_equal(ts.values, values)
    np.testing.assert_array_equal(ts.labels, labels)


def test_split_single_channel_identity():
    ts = ds.TimeSeries("s", np.arange(10.0))
    views = ds.split_channels(ts)
    assert len(views) == 1
    np.testing.assert_array_equal(views[0].values, np.arange(10.0))


def test_split_stack_round_trip():
    values = np.random.default_rng(1).normal(size=(40, 3))
    views = ds.split_channels(ds.TimeSeries("s", values, np.zeros(40, int)))
    assert len(views) == 3
    np.testing.assert_array_equal(np.column_stack([v.values for v in views]), values)
    assert all(v.labels is views[0].labels for v in views)


def test_split_smd_shape():
    views = ds.split_channels(ds.TimeSeries("smd", np.zeros((500, 38))))
    assert len(views) == 38
    assert all(v.values.shape == (500,) for v in views)


def view(T, labels=False):
    lab = (np.arange(T) % 7 == 0).astype(int) if labels else None
    return ds.ChannelView("s", 0, np.arange(T, dtype=float), lab)


def test_exact_tiling():
    b = ds.make_windows(view(200), 100, 100)
    assert len(b) == 2
    assert [o[2] for o in b.origin] == [0, 100]
    np.testing.assert_array_equal(b.windows.ravel(), np.arange(200.0))


def test_padded_tail():
    b = ds.make_windows(view(250), 100, 100, mode="test")
    assert len(b) == 3
    assert b.origin[2][2:] == (200, 50)
    np.testing.assert_array_equal(b.windows[2, 50:], 249.0)


def test_train_stride_one_count():
    assert len(ds.make_windows(view(1000), 100, 1)) == 901


def test_test_mode_forces_stride():
    b = ds.make_windows(view(1000), 100, 1, mode="test")
    assert len(b) == 10


def test_too_short():
    with pytest.raises(SeriesTooShort):
        ds.make_windows(view(50), 100)


def test_normalize_constant_window():
    b = ds.normalize(ds.WindowBatch(np.ones((1, 8))))
    np.testing.assert_array_equal(b.windows, 0.0)
    assert b.stds[0] == ds.STD_FLOOR
    assert b.means[0] == 1.0


def test_normalize_two_points():
    b = ds.normalize(ds.WindowBatch(np.array([[0.0, 2.0]])))
    np.testing.assert_allclose(b.windows, [[-1.0, 1.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 64), st.floats(1e-3, 1e3))
def test_normalize_round_trip(seed, W, scale):
    x = np.random.default_rng(seed).normal(size=(5, W)) * scale + 3.0
    b = ds.normalize(ds.WindowBatch(x))
    np.testing.assert_allclose(ds.denormalize(b.windows, b.means, b.stds), x, atol=1e-6)
    assert np.all(b.stds > 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 600), st.integers(1, 100))
def test_test_windows_disjoint_and_ordered(T, W):
    if W > T:
        return
    b = ds.make_windows(view(T), W, 1, mode="test")
    spans = [(o[2], o[2] + o[3]) for o in b.origin]
    assert spans[0][0] == 0 and spans[-1][1] == T
    for (s0, e0), (s1, _) in zip(spans, spans[1:]):
        assert e0 == s1 and s0 < s1
    assert b.windows.shape[1] == W


def test_manifest_round_trip_and_validation(tmp_path):
    ds.save_csv(tmp_path / "a.csv", np.zeros(10))
    ds.write_manifest(tmp_path / "m.json", ds.DatasetManifest([ds.ManifestEntry(str(tmp_path / "a.csv"), "normal", "x")], 3))
    raw = json.loads((tmp_path / "m.json").read_text())
    assert raw["entries"][0]["path"] == "a.csv"
    m = ds.load_manifest(tmp_path / "m.json")
    assert m.seed == 3 and m.by_role("normal")[0].path == str(tmp_path / "a.csv")

    raw["extra"] = 1
    (tmp_path / "bad.json").write_text(json.dumps(raw))
    with pytest.raises(ConfigError):
        ds.load_manifest(tmp_path / "bad.json")
    raw.pop("extra")
    raw["entries"][0]["role"] = "validation"
    (tmp_path / "bad.json").write_text(json.dumps(raw))
    with pytest.raises(ConfigError):
        ds.load_manifest(tmp_path / "bad.json")
    raw["entries"][0].update(role="normal", path="missing.csv")
    (tmp_path / "bad.json").write_text(json.dumps(raw))
    with pytest.raises(ConfigError):
        ds.load_manifest(tmp_path / "bad.json")


def test_batch_order_deterministic():
    b = ds.normalize(ds.make_windows(view(500), 50, 5))
    order = lambda seed: [x.origin[0][2] for x in ds.iterate_batches(b, 16, np.random.default_rng(seed))]
    assert order(4) == order(4)
    assert order(4) != order(5)
