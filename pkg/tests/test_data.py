import json
import math

import numpy as np
import pytest

from sustain.data import (FORMAT_VERSION, MAGIC, SPLITS, DatasetSpec, file_digest, generate_dataset,
                          load_dataset, load_model, read_features, read_labels, save_model,
                          write_features, write_labels)
from sustain.errors import (ArchitectureMismatch, FormatError, LabelColumnError, MagicError,
                            TruncatedError, VersionError)
from sustain.estimators import LinearProbe
from sustain.mil import WeaNet, WeaNetConfig
from sustain.noise import inject_noise


def small_spec(**kw):
    base = dict(n_classes=3, n_train=20, n_val=8, n_test=12, frames=40, feature_dim=5, event_length=10,
                delta=0.7, seed=3)
    base.update(kw)
    return DatasetSpec(**base)


# ---------------------------------------------------------------- feature files
def test_feature_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(7, 3)).astype(np.float32)
    write_features(tmp_path / "a.sstn", x)
    raw = (tmp_path / "a.sstn").read_bytes()
    assert raw[:4] == MAGIC
    assert int.from_bytes(raw[4:6], "little") == FORMAT_VERSION
    assert int.from_bytes(raw[6:10], "little") == 7 and int.from_bytes(raw[10:14], "little") == 3
    assert len(raw) == 14 + 4 * 21
    back = read_features(tmp_path / "a.sstn")
    assert back.astype(np.float32).tobytes() == x.tobytes()


def test_corrupted_magic_names_offset_zero(tmp_path):
    p = tmp_path / "a.sstn"
    write_features(p, np.zeros((2, 2)))
    p.write_bytes(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(MagicError) as err:
        read_features(p)
    assert err.value.offset == 0 and isinstance(err.value, FormatError)
    assert "offset 0" in str(err.value)


def test_version_truncation_and_trailing_bytes(tmp_path):
    p = tmp_path / "a.sstn"
    write_features(p, np.ones((4, 2)))
    good = p.read_bytes()
    p.write_bytes(good[:4] + (9).to_bytes(2, "little") + good[6:])
    with pytest.raises(VersionError) as err:
        read_features(p)
    assert err.value.offset == 4
    p.write_bytes(good[:-3])
    with pytest.raises(TruncatedError):
        read_features(p)
    p.write_bytes(good[:8])
    with pytest.raises(TruncatedError):
        read_features(p)
    p.write_bytes(good + b"\x00")
    with pytest.raises(FormatError):
        read_features(p)


# ---------------------------------------------------------------- label files
def test_label_round_trip_and_external_mode(tmp_path):
    ids = ["a", "b"]
    y = np.array([[1, 0, 1], [0, 0, 1]])
    yt = np.array([[1, 1, 1], [0, 0, 0]])
    write_labels(tmp_path / "l.csv", ids, y, yt)
    header = (tmp_path / "l.csv").read_text().splitlines()[0]
    assert header == "bag_id,y_0,y_1,y_2,ytrue_0,ytrue_1,ytrue_2"
    got_ids, got_y, got_t = read_labels(tmp_path / "l.csv", 3)
    assert got_ids == ids
    np.testing.assert_array_equal(got_y, y)
    np.testing.assert_array_equal(got_t, yt)
    write_labels(tmp_path / "ext.csv", ids, y)
    _, _, none = read_labels(tmp_path / "ext.csv", 3)
    assert none is None


def test_label_column_count_mismatch(tmp_path):
    write_labels(tmp_path / "l.csv", ["a"], np.array([[1, 0]]))
    with pytest.raises(LabelColumnError):
        read_labels(tmp_path / "l.csv", 3)


def test_label_values_must_be_binary(tmp_path):
    (tmp_path / "l.csv").write_text("bag_id,y_0\na,2\n")
    with pytest.raises(FormatError):
        read_labels(tmp_path / "l.csv", 1)


# ---------------------------------------------------------------- generation
def test_generation_deterministic_and_round_trip(tmp_path):
    spec = small_spec()
    a = generate_dataset(spec, tmp_path / "a")
    generate_dataset(spec, tmp_path / "b")
    assert file_digest(tmp_path / "a") == file_digest(tmp_path / "b")
    generate_dataset(small_spec(seed=4), tmp_path / "c")
    assert file_digest(tmp_path / "a") != file_digest(tmp_path / "c")
    loaded = load_dataset(tmp_path / "a")
    assert loaded.spec == spec
    for name in SPLITS:
        x, y = a.split(name), loaded.split(name)
        assert x.X.tobytes() == y.X.tobytes()
        np.testing.assert_array_equal(x.y, y.y)
        np.testing.assert_array_equal(x.y_true, y.y_true)
        assert x.ids == y.ids
        assert sorted(x.events) == sorted(y.events)


def test_dataset_layout(tmp_path):
    generate_dataset(small_spec(), tmp_path)
    assert json.loads((tmp_path / "spec.json").read_text())["n_classes"] == 3
    for name in SPLITS:
        assert (tmp_path / name / "labels.csv").exists()
        assert len(list((tmp_path / name / "features").glob("*.sstn"))) == getattr(small_spec(), f"n_{name}")


def test_template_longer_than_bag():
    with pytest.raises(ValueError):
        small_spec(event_length=41)


def test_single_class_always_present():
    ds = generate_dataset(small_spec(n_classes=1, priors=1.0, delta=1.0))
    assert ds.train.y_true.all() and ds.test.y_true.all()


def test_every_test_class_has_a_positive():
    ds = generate_dataset(small_spec(n_classes=6, priors=0.02, n_test=10))
    assert np.all(ds.test.y_true.sum(axis=0) >= 1)


def test_observed_labels_reverifiable_from_spec():
    spec = small_spec(n_train=300)
    ds = generate_dataset(spec)
    noise = spec.noise_spec()
    for k, name in enumerate(SPLITS):
        sp = ds.split(name)
        again = inject_noise(sp.y_true, noise.delta, rng=np.random.default_rng([noise.seed, k]))
        np.testing.assert_array_equal(again, sp.y)


def test_prior_realization():
    spec = small_spec(n_classes=4, priors=[0.1, 0.25, 0.5, 0.8], n_train=4000, delta=1.0)
    rates = generate_dataset(spec).train.y_true.mean(axis=0)
    for p, r in zip(spec.prior_vector(), rates):
        assert abs(r - p) <= 3 * math.sqrt(p * (1 - p) / 4000)


def test_events_sit_where_labels_say():
    ds = generate_dataset(small_spec(delta=1.0))
    for i, c, on, off in ds.train.events:
        assert ds.train.y_true[i, c] == 1 and 0 <= on < off <= 40


@pytest.mark.parametrize("name", ["standard", "clean", "audioset-like", "noisy-probe"])
def test_presets(name):
    spec = DatasetSpec.preset(name, n_train=10)
    assert spec.n_train == 10
    if name == "audioset-like":
        p = spec.prior_vector()
        assert np.all(np.diff(p) < 0)
    with pytest.raises(ValueError):
        DatasetSpec.preset("nope")


def test_linear_probe_sanity_floor():
    spec = DatasetSpec(n_classes=4, n_train=200, n_val=10, n_test=200, frames=64, feature_dim=8,
                       event_length=16, noise_sigma=0.0, overlap=0.0, priors=[0.25] * 4,
                       label_mode="single", delta=1.0, seed=1)
    ds = generate_dataset(spec)
    probe = LinearProbe().fit(ds.train.X.mean(axis=1), ds.train.y_true.argmax(axis=1))
    assert probe.score(ds.test.X.mean(axis=1), ds.test.y_true.argmax(axis=1)) >= 0.95


# ---------------------------------------------------------------- model snapshots
def _net():
    cfg = WeaNetConfig(n_classes=3, feature_dim=4, channels=(3,), pools=(2,), segment_width=2,
                       embed_dim=5, hidden_dims=(4,))
    net = WeaNet.create(cfg, 9)
    net.params["attention"].data = np.random.default_rng(0).normal(size=(3, 3))
    return net


def test_model_round_trip_bitwise(tmp_path):
    net = _net()
    save_model(net, tmp_path / "m.npz", {"stage": 2, "alphas": [0.2, 0.8]})
    back, meta = load_model(tmp_path / "m.npz")
    assert meta == {"stage": 2, "alphas": [0.2, 0.8]}
    X = np.random.default_rng(1).normal(size=(3, 12, 4))
    assert back.predict(X).tobytes() == net.predict(X).tobytes()
    for k in net.params:
        assert back.params[k].data.tobytes() == net.params[k].data.tobytes()


def test_model_class_mismatch_names_both_counts(tmp_path):
    save_model(_net(), tmp_path / "m.npz")
    with pytest.raises(ArchitectureMismatch) as err:
        load_model(tmp_path / "m.npz", n_classes=5)
    assert "3" in str(err.value) and "5" in str(err.value)
    other = WeaNetConfig(n_classes=3, feature_dim=4, channels=(3,), pools=(2,), segment_width=2,
                         embed_dim=6, hidden_dims=(4,))
    with pytest.raises(ArchitectureMismatch):
        load_model(tmp_path / "m.npz", config=other)
