"""Synthetic weakly labelled bags, on-disk formats and model snapshots.

Dataset directory layout::

    spec.json
    train/  val/  test/
        features/<bag_id>.sstn
        labels.csv
        events.csv          (planted event spans; synthetic data only)

Feature files are ``b"SSTN"``, a little-endian u16 version, u32 frame and
dimension counts, then frames*dim little-endian float32 values.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ArchitectureMismatch, FormatError, LabelColumnError, MagicError,
                     TruncatedError, VersionError)
from .mil import WeaNet, WeaNetConfig
from .noise import NoiseSpec, inject_noise

MAGIC = b"SSTN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHII")
SPLITS = ("train", "val", "test")
PRESETS = ("standard", "audioset-like", "noisy-probe", "clean")


# ---------------------------------------------------------------- file formats
def write_features(path, features) -> None:
    feats = np.asarray(features)
    if feats.ndim != 2:
        raise ValueError(f"features must be (frames, dim), got {feats.shape}")
    frames, dim = feats.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, frames, dim))
        fh.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    """Read one feature file into a float64 (frames, dim) array."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise MagicError(f"bad magic bytes {raw[:4]!r}, expected {MAGIC!r}", path, 0)
    if len(raw) < _HEADER.size:
        raise TruncatedError(f"header needs {_HEADER.size} bytes, file has {len(raw)}", path, len(raw))
    _, version, frames, dim = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version}", path, 4)
    need = _HEADER.size + 4 * frames * dim
    if len(raw) < need:
        raise TruncatedError(f"payload truncated: expected {need} bytes, found {len(raw)}", path, len(raw))
    if len(raw) > need:
        raise FormatError(f"{len(raw) - need} unexpected trailing bytes", path, need)
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(frames, dim)
    return data.astype(np.float64)


def write_labels(path, ids, observed, true=None) -> None:
    observed = np.asarray(observed)
    C = observed.shape[1]
    header = ["bag_id"] + [f"y_{c}" for c in range(C)]
    if true is not None:
        header += [f"ytrue_{c}" for c in range(C)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, bag_id in enumerate(ids):
            row = [bag_id] + [int(v) for v in observed[i]]
            if true is not None:
                row += [int(v) for v in true[i]]
            w.writerow(row)


def read_labels(path, n_classes=None):
    """Return (ids, observed, true_or_None).

    ``n_classes`` defaults to the number of ``y_`` columns in the header.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "bag_id":
        raise FormatError("label file must start with a 'bag_id' header", path, 0)
    header = rows[0]
    n_cols = len(header) - 1
    C = n_classes if n_classes is not None else sum(h.startswith("y_") for h in header)
    if n_cols == C:
        has_true = False
    elif n_cols == 2 * C:
        has_true = True
    else:
        raise LabelColumnError(f"label file has {n_cols} label columns, expected {C} or {2 * C}", path)
    ids, vals = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise LabelColumnError(f"line {lineno} has {len(row)} fields, header has {len(header)}", path)
        ids.append(row[0])
        try:
            v = [int(x) for x in row[1:]]
        except ValueError:
            raise FormatError(f"line {lineno}: labels must be integers", path) from None
        if any(x not in (0, 1) for x in v):
            raise FormatError(f"line {lineno}: labels must be 0 or 1", path)
        vals.append(v)
    arr = np.array(vals, dtype=np.int8).reshape(len(ids), n_cols)
    observed = arr[:, :C]
    true = arr[:, C:] if has_true else None
    return ids, observed, true


# ---------------------------------------------------------------- data model
@dataclass
class Bag:
    """One recording: features (frames, dim) plus weak label vectors."""

    features: np.ndarray
    observed_labels: np.ndarray
    true_labels: np.ndarray | None = None
    id: str = ""

    @property
    def n_frames(self):
        return self.features.shape[0]


@dataclass
class Split:
    X: np.ndarray               # (n, frames, dim)
    y: np.ndarray               # observed labels (n, C)
    y_true: np.ndarray | None   # true labels or None for external data
    ids: list
    events: list = field(default_factory=list)  # (bag index, class, onset, offset)

    def __len__(self):
        return len(self.ids)

    @property
    def n_classes(self):
        return self.y.shape[1]

    def bags(self):
        for i, bag_id in enumerate(self.ids):
            yield Bag(self.X[i], self.y[i], None if self.y_true is None else self.y_true[i], bag_id)

    def labels(self, reference="observed"):
        if reference == "true":
            if self.y_true is None:
                raise ValueError("true labels are not available for this split")
            return self.y_true
        return self.y


@dataclass
class Dataset:
    spec: "DatasetSpec | None"
    train: Split
    val: Split
    test: Split

    def split(self, name) -> Split:
        return getattr(self, name)

    @property
    def n_classes(self):
        return self.train.n_classes

    @property
    def feature_dim(self):
        return self.train.X.shape[2]


@dataclass
class DatasetSpec:
    """Everything needed to regenerate a synthetic dataset bit for bit."""

    n_classes: int = 8
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 1000
    frames: int = 128
    feature_dim: int = 16
    event_length: int = 24
    event_amplitude: float = 1.0
    noise_sigma: float = 1.0
    overlap: float = 0.0
    priors: list | float = 0.25
    label_mode: str = "multi"
    delta: float | list = 1.0
    noise_seed: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.event_length > self.frames:
            raise ValueError(f"event template ({self.event_length} frames) is longer than the bag ({self.frames})")
        if self.label_mode not in ("multi", "single"):
            raise ValueError("label_mode must be 'multi' or 'single'")
        pri = self.prior_vector()
        if np.any(pri < 0) or np.any(pri > 1):
            raise ValueError("class priors must lie in [0, 1]")
        if self.label_mode == "single" and not np.isclose(pri.sum(), 1.0):
            raise ValueError(f"single-event priors must sum to 1, got {pri.sum()}")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap probability must lie in [0, 1]")
        NoiseSpec(self.delta)

    def prior_vector(self) -> np.ndarray:
        p = np.asarray(self.priors, dtype=np.float64)
        return np.full(self.n_classes, float(p)) if p.ndim == 0 else p

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.delta, self.seed + 1 if self.noise_seed is None else self.noise_seed)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def preset(cls, name="standard", **overrides) -> "DatasetSpec":
        """Named configurations.

        ``audioset-like`` draws power-law priors so class weights matter;
        ``noisy-probe`` is a small noisy set for linear-probe transfer;
        ``clean`` is the standard set with 5% flips.
        """
        base = {}
        if name == "standard":
            base = dict(delta=0.3)
        elif name == "clean":
            base = dict(delta=0.95)
        elif name == "audioset-like":
            C = overrides.get("n_classes", 8)
            base = dict(priors=power_law_priors(C).tolist(), delta=0.7)
        elif name == "noisy-probe":
            base = dict(n_train=600, n_val=200, n_test=600, delta=0.7)
        else:
            raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
        base.update(overrides)
        return cls(**base)


def power_law_priors(n_classes, top=0.5, exponent=1.0) -> np.ndarray:
    return top * (np.arange(1, n_classes + 1, dtype=np.float64) ** -exponent)


def event_templates(spec: DatasetSpec) -> np.ndarray:
    """(C, event_length, dim) class patterns, each seeded by the class index."""
    out = np.empty((spec.n_classes, spec.event_length, spec.feature_dim))
    for c in range(spec.n_classes):
        rng = np.random.default_rng([spec.seed, 7919, c])
        out[c] = rng.standard_normal((spec.event_length, spec.feature_dim)) * spec.event_amplitude
    return out


def _bag_rng(spec, split_index, bag_index, attempt=0):
    return np.random.default_rng([spec.seed, split_index, bag_index, attempt])


def _sample_labels(spec, rng):
    pri = spec.prior_vector()
    if spec.label_mode == "single":
        z = np.zeros(spec.n_classes, dtype=np.int8)
        z[rng.choice(spec.n_classes, p=pri / pri.sum())] = 1
        return z
    return (rng.random(spec.n_classes) < pri).astype(np.int8)


def _place_events(spec, classes, rng):
    """Return [(class, onset)]; non-overlapping unless the overlap coin says otherwise."""
    L, F = spec.event_length, spec.frames
    placed = []
    for c in classes:
        onset = int(rng.integers(0, F - L + 1))
        if placed and rng.random() >= spec.overlap:
            for _ in range(32):
                if all(abs(onset - o) >= L for _, o in placed):
                    break
                onset = int(rng.integers(0, F - L + 1))
        placed.append((int(c), onset))
    return placed


def generate_split(spec: DatasetSpec, split_index: int, n_bags: int, templates=None) -> Split:
    templates = event_templates(spec) if templates is None else templates
    X = np.empty((n_bags, spec.frames, spec.feature_dim))
    Y = np.empty((n_bags, spec.n_classes), dtype=np.int8)
    events = []
    for i in range(n_bags):
        rng = _bag_rng(spec, split_index, i)
        z = _sample_labels(spec, rng)
        x = rng.standard_normal((spec.frames, spec.feature_dim)) * spec.noise_sigma
        for c, onset in _place_events(spec, np.flatnonzero(z), rng):
            x[onset:onset + spec.event_length] += templates[c]
            events.append((i, c, onset, onset + spec.event_length))
        X[i] = x
        Y[i] = z
    if SPLITS[split_index] == "test":
        _ensure_positives(spec, split_index, X, Y, events, templates)
    # round through float32 so the in-memory copy equals what is written to disk
    X = X.astype(np.float32).astype(np.float64)
    noise = spec.noise_spec()
    y_obs = inject_noise(Y, noise.delta, rng=np.random.default_rng([noise.seed, split_index]))
    ids = [f"{SPLITS[split_index]}_{i:05d}" for i in range(n_bags)]
    return Split(X, y_obs, Y, ids, events)


def _ensure_positives(spec, split_index, X, Y, events, templates):
    """Re-draw the last bags until every class has a positive test bag."""
    missing = np.flatnonzero(Y.sum(axis=0) == 0)
    if len(missing) == 0 or spec.prior_vector()[missing].min() == 0:
        return
    n = len(Y)
    for slot, c in enumerate(missing):
        i = n - 1 - slot
        if i < 0:
            break
        rng = _bag_rng(spec, split_index, i, attempt=1)
        z = np.zeros(spec.n_classes, dtype=np.int8)
        z[c] = 1
        x = rng.standard_normal((spec.frames, spec.feature_dim)) * spec.noise_sigma
        onset = int(rng.integers(0, spec.frames - spec.event_length + 1))
        x[onset:onset + spec.event_length] += templates[c]
        events[:] = [e for e in events if e[0] != i] + [(i, int(c), onset, onset + spec.event_length)]
        X[i], Y[i] = x, z


def generate_dataset(spec: DatasetSpec, path=None) -> Dataset:
    """Build all three splits in memory and, if ``path`` is given, write them out."""
    templates = event_templates(spec)
    sizes = (spec.n_train, spec.n_val, spec.n_test)
    splits = [generate_split(spec, k, n, templates) for k, n in enumerate(sizes)]
    ds = Dataset(spec, *splits)
    if path is not None:
        save_dataset(ds, path)
    return ds


def save_dataset(ds: Dataset, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    if ds.spec is not None:
        (root / "spec.json").write_text(json.dumps(ds.spec.to_dict(), indent=2, sort_keys=True) + "\n")
    for name in SPLITS:
        sp = ds.split(name)
        fdir = root / name / "features"
        fdir.mkdir(parents=True, exist_ok=True)
        for i, bag_id in enumerate(sp.ids):
            write_features(fdir / f"{bag_id}.sstn", sp.X[i].astype(np.float32))
        write_labels(root / name / "labels.csv", sp.ids, sp.y, sp.y_true)
        if sp.events:
            with open(root / name / "events.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["bag_id", "class", "onset", "offset"])
                for i, c, on, off in sorted(sp.events):
                    w.writerow([sp.ids[i], c, on, off])


def load_split(path, n_classes=None) -> Split:
    root = Path(path)
    ids, y, y_true = read_labels(root / "labels.csv", n_classes)
    feats = [read_features(root / "features" / f"{bag_id}.sstn") for bag_id in ids]
    if feats and len({f.shape for f in feats}) == 1:
        X = np.stack(feats)
    else:
        X = np.empty(len(feats), dtype=object)
        X[:] = feats
    events = []
    ev_path = root / "events.csv"
    if ev_path.exists():
        index = {b: i for i, b in enumerate(ids)}
        with open(ev_path, newline="") as fh:
            for row in csv.DictReader(fh):
                events.append((index[row["bag_id"]], int(row["class"]), int(row["onset"]), int(row["offset"])))
    return Split(X, y, y_true, ids, events)


def load_dataset(path) -> Dataset:
    root = Path(path)
    spec = None
    n_classes = None
    if (root / "spec.json").exists():
        spec = DatasetSpec.from_dict(json.loads((root / "spec.json").read_text()))
        n_classes = spec.n_classes
    splits = [load_split(root / name, n_classes) for name in SPLITS]
    return Dataset(spec, *splits)


# ---------------------------------------------------------------- snapshots
def save_model(model: WeaNet, path, meta=None) -> None:
    """Write parameters plus the architecture config (and optional metadata) to ``.npz``.

    Optimizer state is not saved.
    """
    header = {"config": model.config.to_dict(), "trainable": {k: model.params.is_trainable(k) for k in model.params},
              "meta": meta or {}}
    arrays = {f"param:{k}": v for k, v in model.params.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_model(path, n_classes=None, config: WeaNetConfig | None = None):
    """Return (model, meta). Raises ArchitectureMismatch when the stored
    architecture disagrees with ``n_classes`` or ``config``."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        state = {k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")}
    stored = WeaNetConfig.from_dict(header["config"])
    if n_classes is not None and stored.n_classes != n_classes:
        raise ArchitectureMismatch(
            f"snapshot has {stored.n_classes} classes but {n_classes} were requested")
    if config is not None and config.to_dict() != stored.to_dict():
        diff = {k: (stored.to_dict()[k], v) for k, v in config.to_dict().items() if stored.to_dict()[k] != v}
        raise ArchitectureMismatch(f"snapshot architecture differs (stored, requested): {diff}")
    model = WeaNet.create(stored, seed=0)
    model.params.load_state_dict(state)
    for k, flag in header["trainable"].items():
        model.params.set_trainable(k, flag)
    return model, header["meta"]


def file_digest(path) -> str:
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(path)):
        for f in sorted(files):
            p = Path(root) / f
            h.update(str(p.relative_to(path)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
