"""Dataset model, CSV ingestion, preprocessing and a synthetic generator.

On-disk dataset layout (written by the generator, read by the loader):

    <root>/manifest.csv             sample_id,file,split,category,variant
    <root>/samples/sample_XXXX.csv  one row per timestep
    <root>/injections.csv           synthetic ground truth (optional)

A sample CSV starts with the metadata columns ``time, sample, anomaly,
category, variant, active, action`` (``setting`` is accepted as an alias for
``variant``), followed by one float column per signal. Metadata is carried
separately and never enters model input.

Preprocessing fits on training data only: resample to the target frequency
(non-overlapping window means), select a signal subset, standardize per
signal with the training statistics, pad to the training maximum length by
repeating the final observed row, and append one all-zero dummy signal when
the subset has odd width (the coupling split needs an even count).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import named_rng

NORMAL_CATEGORY = 12

METADATA_COLUMNS = ("time", "sample", "anomaly", "category", "variant",
                    "active", "action")
_VARIANT_ALIASES = ("variant", "setting")

SUBSETS = ("all", "mechanical", "electrical", "measured", "computed")

# anomaly categories of the robot machine-data benchmark
ROBOT_CATEGORY_NAMES = {
    0: "axis_friction",
    1: "axis_weight",
    2: "collision_foam",
    3: "collision_cable",
    4: "collision_carton",
    5: "miss_can",
    6: "lose_can",
    7: "can_weight",
    8: "entangled",
    9: "invalid_position",
    10: "motor_commutation",
    11: "wobbling_station",
    NORMAL_CATEGORY: "normal_operation",
}

SYNTH_CATEGORY_NAMES = {
    0: "torque_drift",
    1: "torque_spike",
    2: "load_scale",
    3: "drive_dropout",
    NORMAL_CATEGORY: "normal_operation",
}


@dataclass
class Sample:
    """One recording: a (T, S) time-major signal matrix plus labels."""

    values: np.ndarray
    sample_id: int
    category: int = NORMAL_CATEGORY
    variant: int = 0
    native_hz: float = 100.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"sample values must be (T, S), got {self.values.shape}")
        if not 0 <= self.category <= NORMAL_CATEGORY:
            raise ValueError(f"category must be in 0..{NORMAL_CATEGORY}, "
                             f"got {self.category}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"sample {self.sample_id} contains non-finite values")

    @property
    def anomaly(self) -> bool:
        return self.category != NORMAL_CATEGORY


@dataclass(frozen=True)
class SignalInfo:
    name: str
    group: str            # mechanical | electrical
    signal_type: str      # target | measurement | estimation
    axis: int | None = None


@dataclass
class SignalSchema:
    signals: list[SignalInfo]
    category_names: dict[int, str] = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.signals]

    def subset_indices(self, subset: str) -> np.ndarray:
        if subset not in SUBSETS:
            raise ValueError(f"unknown signal subset {subset!r}; choose from {SUBSETS}")
        if subset == "all":
            keep = [True] * len(self.signals)
        elif subset in ("mechanical", "electrical"):
            keep = [s.group == subset for s in self.signals]
        elif subset == "measured":
            keep = [s.signal_type == "measurement" for s in self.signals]
        else:  # computed = targets plus estimations
            keep = [s.signal_type in ("target", "estimation") for s in self.signals]
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            raise ValueError(f"signal subset {subset!r} is empty for this schema")
        return idx

    def subset_names(self, subset: str) -> list[str]:
        return [self.signals[i].name for i in self.subset_indices(subset)]


# 21 per-axis signals of the robot dataset in table order. The two mechanical
# power estimates are counted with the electrical group, which yields the
# published 78 mechanical / 52 electrical split.
_ROBOT_AXIS_SIGNALS = [
    ("target_position", "mechanical", "target"),
    ("target_velocity", "mechanical", "target"),
    ("target_acceleration", "mechanical", "target"),
    ("target_torque", "mechanical", "target"),
    ("computed_inertia", "mechanical", "estimation"),
    ("computed_torque", "mechanical", "estimation"),
    ("motor_position", "mechanical", "measurement"),
    ("motor_velocity", "mechanical", "measurement"),
    ("joint_position", "mechanical", "measurement"),
    ("joint_velocity", "mechanical", "measurement"),
    ("motor_torque", "mechanical", "estimation"),
    ("torque_sensor_a", "mechanical", "measurement"),
    ("torque_sensor_b", "mechanical", "measurement"),
    ("motor_iq", "electrical", "estimation"),
    ("motor_id", "electrical", "estimation"),
    ("power_motor_el", "electrical", "estimation"),
    ("power_motor_mech", "electrical", "estimation"),
    ("power_load_mech", "electrical", "estimation"),
    ("motor_voltage", "electrical", "measurement"),
    ("supply_voltage", "electrical", "measurement"),
    ("brake_voltage", "electrical", "measurement"),
]

_ROBOT_GLOBAL_SIGNALS = [
    ("robot_voltage", "electrical", "measurement"),
    ("robot_current", "electrical", "measurement"),
    ("io_current", "electrical", "measurement"),
    ("system_current", "electrical", "measurement"),
]


def robot_schema(n_axes: int = 6) -> SignalSchema:
    """Schema of the 130-signal robot machine-data layout (6 axes)."""
    signals = [SignalInfo(f"{name}_{axis + 1}", group, stype, axis)
               for axis in range(n_axes)
               for name, group, stype in _ROBOT_AXIS_SIGNALS]
    signals += [SignalInfo(name, group, stype, None)
                for name, group, stype in _ROBOT_GLOBAL_SIGNALS]
    return SignalSchema(signals, dict(ROBOT_CATEGORY_NAMES))


def synthetic_schema(n_signals: int = 8) -> SignalSchema:
    """Alternating position/torque channels: position signals are measured
    mechanical, torque signals are estimated mechanical."""
    signals = []
    for i in range(n_signals):
        axis = i // 2
        if i % 2 == 0:
            signals.append(SignalInfo(f"axis_position_{axis + 1}", "mechanical",
                                      "measurement", axis))
        else:
            signals.append(SignalInfo(f"axis_torque_{axis + 1}", "mechanical",
                                      "estimation", axis))
    return SignalSchema(signals, dict(SYNTH_CATEGORY_NAMES))


# ---------------------------------------------------------------------------
# sample CSV i/o


def write_sample_csv(path: str | Path, sample: Sample, schema: SignalSchema,
                     active: np.ndarray | None = None,
                     action: np.ndarray | None = None) -> None:
    values = sample.values
    n_steps, n_signals = values.shape
    if n_signals != len(schema.signals):
        raise ValueError(f"sample has {n_signals} signals, schema expects "
                         f"{len(schema.signals)}")
    active = np.ones(n_steps, dtype=int) if active is None else active
    action = np.ones(n_steps, dtype=int) if action is None else action
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(METADATA_COLUMNS + tuple(schema.names)) + "\n")
        for t in range(n_steps):
            meta = (repr(t / sample.native_hz), str(sample.sample_id),
                    str(int(sample.anomaly)), str(sample.category),
                    str(sample.variant), str(int(active[t])), str(int(action[t])))
            row = ",".join(meta) + "," + ",".join(repr(float(v)) for v in values[t])
            fh.write(row + "\n")


def read_sample_csv(path: str | Path, schema: SignalSchema) -> Sample:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh))
    columns = {name: i for i, name in enumerate(header)}
    if len(columns) != len(header):
        raise ValueError(f"{path}: duplicate columns in header")

    variant_col = next((a for a in _VARIANT_ALIASES if a in columns), None)
    missing_meta = [c for c in METADATA_COLUMNS
                    if c not in columns and not (c == "variant" and variant_col)]
    missing_signals = [n for n in schema.names if n not in columns]
    known = set(METADATA_COLUMNS) | set(_VARIANT_ALIASES) | set(schema.names)
    extra = [c for c in header if c not in known]
    if missing_meta or missing_signals or extra:
        problems = []
        if missing_meta:
            problems.append(f"missing metadata columns: {missing_meta}")
        if missing_signals:
            problems.append(f"missing signal columns: {missing_signals}")
        if extra:
            problems.append(f"unexpected columns: {extra}")
        raise ValueError(f"{path}: " + "; ".join(problems))

    raw = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    if raw.shape[0] < 2:
        raise ValueError(f"{path}: need at least 2 timesteps to infer the "
                         "sampling frequency")
    if raw.shape[1] != len(header):
        raise ValueError(f"{path}: row width {raw.shape[1]} does not match "
                         f"header width {len(header)}")

    time = raw[:, columns["time"]]
    step = float(np.median(np.diff(time)))
    if step <= 0:
        raise ValueError(f"{path}: time column is not strictly increasing")
    native_hz = 1.0 / step
    if abs(native_hz - round(native_hz)) < 1e-6:
        native_hz = float(round(native_hz))

    category = int(raw[0, columns["category"]])
    anomaly_flag = bool(raw[0, columns["anomaly"]])
    if anomaly_flag != (category != NORMAL_CATEGORY):
        raise ValueError(f"{path}: anomaly flag {anomaly_flag} contradicts "
                         f"category {category}")
    values = raw[:, [columns[n] for n in schema.names]]
    return Sample(values=values,
                  sample_id=int(raw[0, columns["sample"]]),
                  category=category,
                  variant=int(raw[0, columns[variant_col]]),
                  native_hz=native_hz)


# ---------------------------------------------------------------------------
# manifest + dataset loading


def write_manifest(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["sample_id", "file", "split",
                                                "category", "variant"])
        writer.writeheader()
        writer.writerows(rows)


def load_dataset(root: str | Path, schema: SignalSchema,
                 ) -> tuple[list[Sample], list[Sample]]:
    """Read a manifest-described dataset; the train split must be all-normal."""
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv under {root}")
    with open(manifest, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{manifest}: empty manifest")

    missing = [str(root / r["file"]) for r in rows if not (root / r["file"]).exists()]
    if missing:
        raise FileNotFoundError(f"manifest references missing files: {missing}")

    train, test = [], []
    for row in rows:
        split = row["split"]
        if split not in ("train", "test"):
            raise ValueError(f"{manifest}: invalid split {split!r} for sample "
                             f"{row['sample_id']}")
        sample = read_sample_csv(root / row["file"], schema)
        if sample.sample_id != int(row["sample_id"]) or \
                sample.category != int(row["category"]):
            raise ValueError(f"{manifest}: metadata of {row['file']} disagrees "
                             "with the manifest")
        if split == "train":
            if sample.anomaly:
                raise ValueError(f"anomalous sample {sample.sample_id} "
                                 f"(category {sample.category}) in the training split")
            train.append(sample)
        else:
            test.append(sample)
    return train, test


# ---------------------------------------------------------------------------
# preprocessing


def resample(values: np.ndarray, from_hz: float, to_hz: float) -> np.ndarray:
    """Decimate by non-overlapping window means; from_hz must be an integer
    multiple of to_hz. The trailing partial window is averaged as-is."""
    ratio = from_hz / to_hz
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ValueError(f"resample: {from_hz} Hz is not an integer multiple "
                         f"of {to_hz} Hz")
    if factor == 1:
        return np.array(values, dtype=np.float64)
    n_steps = values.shape[0]
    n_full = n_steps // factor
    head = values[:n_full * factor].reshape(n_full, factor, -1).mean(axis=1)
    if n_steps % factor:
        tail = values[n_full * factor:].mean(axis=0, keepdims=True)
        head = np.concatenate([head, tail], axis=0)
    return head


@dataclass
class PreprocessConfig:
    target_hz: float = 100.0
    subset: str = "all"
    standardize: bool = True
    allow_truncate: bool = False
    std_floor: float = 1e-8


class Preprocessor:
    """Frozen per-signal statistics plus the resample/subset/pad recipe.

    Fit on training data only; apply() is deterministic and idempotent with
    respect to refitting on the same data.
    """

    def __init__(self, config: PreprocessConfig, signal_names: list[str],
                 indices: np.ndarray, max_len: int, mean: np.ndarray,
                 std: np.ndarray, dummy_signal: bool):
        self.config = config
        self.signal_names = list(signal_names)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.max_len = int(max_len)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.dummy_signal = bool(dummy_signal)

    @property
    def n_signals_out(self) -> int:
        return len(self.signal_names) + (1 if self.dummy_signal else 0)

    @property
    def output_shape(self) -> tuple[int, int]:
        return (self.max_len, self.n_signals_out)

    @classmethod
    def fit(cls, train: list[Sample], schema: SignalSchema,
            config: PreprocessConfig | None = None) -> "Preprocessor":
        config = config or PreprocessConfig()
        if not train:
            raise ValueError("cannot fit a preprocessor on an empty training set")
        indices = schema.subset_indices(config.subset)
        names = [schema.signals[i].name for i in indices]
        if set(names) & set(METADATA_COLUMNS):
            raise ValueError("schema signal names collide with metadata columns")

        max_len = 0
        count = 0
        total = np.zeros(len(indices))
        total_sq = np.zeros(len(indices))
        for sample in train:
            values = resample(sample.values, sample.native_hz,
                              config.target_hz)[:, indices]
            max_len = max(max_len, values.shape[0])
            count += values.shape[0]
            total += values.sum(axis=0)
            total_sq += (values * values).sum(axis=0)
        mean = total / count
        var = np.maximum(total_sq / count - mean * mean, 0.0)
        std = np.maximum(np.sqrt(var), config.std_floor)
        return cls(config, names, indices, max_len, mean, std,
                   dummy_signal=len(indices) % 2 == 1)

    def apply(self, sample: Sample) -> np.ndarray:
        """Preprocess one sample to a float64 (max_len, S_out) matrix."""
        values = resample(sample.values, sample.native_hz,
                          self.config.target_hz)[:, self.indices]
        if self.config.standardize:
            values = (values - self.mean) / self.std
        n_steps = values.shape[0]
        if n_steps > self.max_len:
            if not self.config.allow_truncate:
                raise ValueError(
                    f"sample {sample.sample_id} has {n_steps} steps after "
                    f"resampling, longer than the training maximum "
                    f"{self.max_len}; enable allow_truncate to cut it")
            values = values[:self.max_len]
        elif n_steps < self.max_len:
            values = np.pad(values, ((0, self.max_len - n_steps), (0, 0)),
                            mode="edge")
        if self.dummy_signal:
            values = np.concatenate(
                [values, np.zeros((self.max_len, 1))], axis=1)
        return values

    def apply_many(self, samples: list[Sample]) -> np.ndarray:
        return np.stack([self.apply(s) for s in samples])

    # -- container round trip ------------------------------------------------

    def to_meta(self) -> tuple[dict, dict[str, np.ndarray]]:
        meta = {
            "target_hz": self.config.target_hz,
            "subset": self.config.subset,
            "standardize": self.config.standardize,
            "allow_truncate": self.config.allow_truncate,
            "std_floor": self.config.std_floor,
            "signal_names": self.signal_names,
            "max_len": self.max_len,
            "dummy_signal": self.dummy_signal,
        }
        arrays = {
            "preprocessor.indices": self.indices.astype(np.int64),
            "preprocessor.mean": self.mean,
            "preprocessor.std": self.std,
        }
        return meta, arrays

    @classmethod
    def from_meta(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "Preprocessor":
        config = PreprocessConfig(
            target_hz=meta["target_hz"], subset=meta["subset"],
            standardize=meta["standardize"], allow_truncate=meta["allow_truncate"],
            std_floor=meta["std_floor"])
        return cls(config, meta["signal_names"], arrays["preprocessor.indices"],
                   meta["max_len"], arrays["preprocessor.mean"],
                   arrays["preprocessor.std"], meta["dummy_signal"])


# ---------------------------------------------------------------------------
# synthetic pick-and-place generator


@dataclass
class SynthConfig:
    n_signals: int = 8
    n_steps: int = 256
    n_train: int = 200
    n_test_normal: int = 50
    n_test_anomalies: int = 80
    anomaly_types: tuple[int, ...] = (0, 1, 2, 3)
    native_hz: float = 100.0
    noise_std: float = 0.01
    n_ramps: int = 3
    magnitude_scale: float = 1.0

    def __post_init__(self):
        if self.n_signals < 2:
            raise ValueError("need at least one position/torque pair")
        bad = [c for c in self.anomaly_types if c not in SYNTH_CATEGORY_NAMES
               or c == NORMAL_CATEGORY]
        if bad:
            raise ValueError(f"unknown synthetic anomaly categories: {bad}")


@dataclass
class Injection:
    sample_id: int
    category: int
    variant: int
    signal: int
    t_star: int
    magnitude: float


@dataclass
class SyntheticDataset:
    train: list[Sample]
    test: list[Sample]
    injections: list[Injection]
    schema: SignalSchema
    config: SynthConfig
    seed: int


class _World:
    """Dataset-level constants shared by all samples of one generation."""

    def __init__(self, config: SynthConfig, rng: np.random.Generator):
        n_axes = (config.n_signals + 1) // 2
        self.torque_bias = rng.uniform(-0.6, 0.6, size=n_axes)
        self.torque_gain = rng.uniform(9.0, 15.0, size=n_axes)
        self.n_axes = n_axes


def _normal_values(config: SynthConfig, world: _World,
                   rng: np.random.Generator) -> np.ndarray:
    """Smooth per-axis motion (sums of logistic ramps with random onsets,
    mimicking randomized object positions) and torque-like channels derived
    from the motion (scaled derivative plus a gravity-like bias)."""
    n_steps, n_signals = config.n_steps, config.n_signals
    t = np.arange(n_steps, dtype=np.float64)
    values = np.zeros((n_steps, n_signals))
    for axis in range(world.n_axes):
        pos = np.zeros(n_steps)
        for _ in range(config.n_ramps):
            amplitude = rng.uniform(-1.0, 1.0)
            onset = rng.uniform(0.1, 0.9) * n_steps
            width = rng.uniform(3.0, 10.0)
            pos += amplitude / (1.0 + np.exp(-(t - onset) / width))
        torque = world.torque_bias[axis] + world.torque_gain[axis] * np.gradient(pos)
        values[:, 2 * axis] = pos
        if 2 * axis + 1 < n_signals:
            values[:, 2 * axis + 1] = torque
    values += rng.normal(0.0, config.noise_std, size=values.shape)
    return values


def _torque_columns(config: SynthConfig) -> list[int]:
    return [i for i in range(config.n_signals) if i % 2 == 1]


def _inject(values: np.ndarray, category: int, variant: int,
            config: SynthConfig, world: _World, rng: np.random.Generator,
            ) -> tuple[np.ndarray, int, int, float]:
    """Apply one anomaly injector; returns (values, signal, t_star, magnitude).

    A magnitude of exactly 0 leaves the sample untouched. Variant levels
    scale the base magnitude of each injector.
    """
    out = values.copy()
    n_steps = values.shape[0]
    torque_cols = _torque_columns(config)
    level = variant * config.magnitude_scale

    if category == 0:  # slowly growing torque offset, friction-like
        signal = int(rng.choice(torque_cols))
        magnitude = 0.25 * level
        out[:, signal] += magnitude * (np.arange(n_steps) / n_steps)
        t_star = n_steps - 1
    elif category == 1:  # short transient on one signal, collision-like
        signal = int(rng.choice(torque_cols))
        width = int(rng.integers(5, 16))
        t_star = int(rng.integers(30, n_steps - 30))
        magnitude = 0.4 * level
        lo = max(t_star - width // 2, 0)
        bump = np.hanning(width + 2)[1:-1]
        out[lo:lo + width, signal] += magnitude * bump[:n_steps - lo]
        t_star = int(lo + min(width, n_steps - lo) // 2)
    elif category == 2:  # all torque channels scaled, payload-like
        signal = -1
        magnitude = 0.08 * level
        out[:, torque_cols] *= 1.0 + magnitude
        t_star = -1
    elif category == 3:  # torque decouples from its motion after an onset
        axis = int(rng.integers(0, len(torque_cols)))
        signal = torque_cols[axis]
        t_star = int(rng.integers(int(0.2 * n_steps), int(0.7 * n_steps)))
        magnitude = min(0.5 * level, 1.0)
        replacement = world.torque_bias[axis] + rng.normal(
            0.0, config.noise_std, size=n_steps - t_star)
        out[t_star:, signal] = ((1.0 - magnitude) * out[t_star:, signal]
                                + magnitude * replacement)
    else:
        raise ValueError(f"unknown synthetic anomaly category {category}")
    return out, signal, t_star, float(magnitude)


def generate_synthetic(config: SynthConfig | None = None, seed: int = 0,
                       ) -> SyntheticDataset:
    """Seed-deterministic desk-scale dataset with labeled injected anomalies."""
    config = config or SynthConfig()
    rng = named_rng(seed, "synth")
    world = _World(config, rng)
    schema = synthetic_schema(config.n_signals)

    train = []
    for i in range(config.n_train):
        train.append(Sample(_normal_values(config, world, rng), sample_id=i,
                            native_hz=config.native_hz))
    test = []
    next_id = config.n_train
    for _ in range(config.n_test_normal):
        test.append(Sample(_normal_values(config, world, rng),
                           sample_id=next_id, native_hz=config.native_hz))
        next_id += 1

    injections = []
    for k in range(config.n_test_anomalies):
        category = config.anomaly_types[k % len(config.anomaly_types)]
        variant = 1 + (k // len(config.anomaly_types)) % 3
        base = _normal_values(config, world, rng)
        values, signal, t_star, magnitude = _inject(
            base, category, variant, config, world, rng)
        test.append(Sample(values, sample_id=next_id, category=category,
                           variant=variant, native_hz=config.native_hz))
        injections.append(Injection(next_id, category, variant, signal,
                                    t_star, magnitude))
        next_id += 1
    return SyntheticDataset(train, test, injections, schema, config, seed)


def write_dataset(root: str | Path, dataset: SyntheticDataset) -> None:
    """Materialize a generated dataset in the manifest+CSV layout."""
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    rows = []
    for split, samples in (("train", dataset.train), ("test", dataset.test)):
        for sample in samples:
            rel = f"samples/sample_{sample.sample_id:04d}.csv"
            write_sample_csv(root / rel, sample, dataset.schema)
            rows.append({"sample_id": sample.sample_id, "file": rel,
                         "split": split, "category": sample.category,
                         "variant": sample.variant})
    write_manifest(root / "manifest.csv", rows)
    with open(root / "injections.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("sample_id,category,variant,signal,t_star,magnitude\n")
        for inj in dataset.injections:
            fh.write(f"{inj.sample_id},{inj.category},{inj.variant},"
                     f"{inj.signal},{inj.t_star},{inj.magnitude!r}\n")


def read_injections(root: str | Path) -> list[Injection]:
    path = Path(root) / "injections.csv"
    if not path.exists():
        return []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return [Injection(int(r["sample_id"]), int(r["category"]),
                          int(r["variant"]), int(r["signal"]), int(r["t_star"]),
                          float(r["magnitude"]))
                for r in csv.DictReader(fh)]
