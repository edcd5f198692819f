"""Dataset generation, the ``.seq`` record format and training windows.

A dataset directory holds ``manifest.json`` plus one ``seq/NNNNN.seq`` file
per sequence. Sequence ``i`` is simulated from an RNG seeded by
``(master_seed, i, attempt)`` so its content never depends on generation order.
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import mechanics, optics
from .binio import Reader, pack_f64, pack_text, pack_u32
from .errors import ConfigError, FormatError, RlabError, ShapeError, SimulationError

SEQ_MAGIC = b"RSEQ"
SEQ_VERSION = 1
MAX_REJECTIONS = 100


@dataclass
class DatasetManifest:
    family: str = "hemispherical"
    n_objects: int = 1
    sequence_count: int = 200
    image_size: int = 64
    T0: int = 4
    ball_textured: bool = True
    split_fractions: tuple = (0.70, 0.15, 0.15)
    master_seed: int = 0
    speed_unit: float = 0.05
    rolling_resistance: float = 0.05
    max_raw_frames: int = 1500
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ConfigError(f"split fractions must be non-negative and sum to 1, "
                              f"got {self.split_fractions}")
        if self.family not in mechanics.FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if not 1 <= self.n_objects <= 3:
            raise ConfigError(f"n_objects must be 1..3, got {self.n_objects}")
        if self.sequence_count < 1:
            raise ConfigError("sequence_count must be positive")

    def scenario_config(self):
        return mechanics.ScenarioConfig(self.family, self.n_objects, self.speed_unit)

    def physics_config(self):
        return mechanics.PhysicsConfig(
            rolling_resistance=self.rolling_resistance, max_raw_frames=self.max_raw_frames
        )

    def to_json(self):
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_json(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def split_indices(n, fractions=(0.70, 0.15, 0.15)):
    """Contiguous train/val/test index ranges; rounding remainder goes to test."""
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    idx = list(range(n))
    return {
        "train": idx[:n_train],
        "val": idx[n_train:n_train + n_val],
        "test": idx[n_train + n_val:],
    }


@dataclass
class SequenceRecord:
    frames: np.ndarray  # (F, H, W, 3) uint8
    positions: np.ndarray  # (F, n_objects, 2) pixels
    angular_velocities: np.ndarray  # (F, n_objects, 3) rad/s
    scenario: dict = field(default_factory=dict)

    def __post_init__(self):
        f = self.frames.shape[0]
        if self.positions.shape[0] != f or self.angular_velocities.shape[0] != f:
            raise ShapeError("frames, positions and angular velocities differ in length")
        if self.positions.shape[1] != self.angular_velocities.shape[1]:
            raise ShapeError("positions and angular velocities differ in object count")

    @property
    def length(self):
        return self.frames.shape[0]

    @property
    def n_objects(self):
        return self.positions.shape[1]


# ------------------------------------------------------------------ format


def encode_sequence(record):
    f, h, w, c = record.frames.shape
    n = record.n_objects
    parts = [
        SEQ_MAGIC,
        pack_u32(SEQ_VERSION),
        pack_u32(f), pack_u32(n), pack_u32(h), pack_u32(w), pack_u32(c),
        pack_text(json.dumps(record.scenario, sort_keys=True)),
        np.ascontiguousarray(record.frames, dtype=np.uint8).tobytes(),
        pack_f64(record.positions),
        pack_f64(record.angular_velocities),
    ]
    return b"".join(parts)


def decode_sequence(buf, what="sequence file"):
    r = Reader(buf, what)
    r.magic(SEQ_MAGIC)
    version = r.u32()
    if version != SEQ_VERSION:
        raise FormatError(f"unsupported {what} version {version}", offset=4)
    f, n, h, w, c = (r.u32() for _ in range(5))
    start = r.pos
    try:
        scenario = json.loads(r.text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid scenario JSON in {what}", offset=start) from exc
    frames = r.u8(f * h * w * c).reshape(f, h, w, c)
    positions = r.f64(f * n * 2).reshape(f, n, 2)
    angvel = r.f64(f * n * 3).reshape(f, n, 3)
    r.finish()
    return SequenceRecord(frames, positions, angvel, scenario)


def save_sequence(path, record):
    with open(path, "wb") as fh:
        fh.write(encode_sequence(record))


def load_sequence(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_sequence(buf, f"sequence file {os.fspath(path)}")


# -------------------------------------------------------------- generation


def sequence_rng(master_seed, index, attempt):
    return np.random.default_rng(np.random.SeedSequence([master_seed, index, attempt]))


def _scenario_echo(scenario, light):
    return {
        "family": scenario.family,
        "surface": scenario.surface.describe(),
        "elasticity": scenario.elasticity,
        "wall_box": scenario.wall_box,
        "rng_seed": scenario.rng_seed,
        "light": {"kind": light.kind, "position": list(light.position)},
        "radii": [b.radius for b in scenario.balls],
        "samples": scenario.samples,
    }


def render_trajectory(scenario, traj, light, camera, ball_textured=True):
    terrain = optics.terrain_layer(scenario.surface, light, camera)
    frames = np.empty((traj.frame_count, camera.image_size, camera.image_size, 3), np.uint8)
    for k in range(traj.frame_count):
        balls = [
            mechanics.BallState(
                traj.positions[k, j], traj.velocities[k, j], traj.angular_velocities[k, j],
                float(traj.radii[j]), int(traj.color_indices[j]), traj.orientations[k, j],
            )
            for j in range(traj.positions.shape[1])
        ]
        frames[k] = optics.render_frame(
            scenario.surface, balls, light, camera, ball_textured, terrain=terrain
        )
    return frames


def simulate_trajectory(manifest, index):
    """First accepted ``(scenario, light, trajectory, attempt)`` for sequence ``index``."""
    cfg = manifest.scenario_config()
    phys = manifest.physics_config()
    for attempt in range(MAX_REJECTIONS + 1):
        rng = sequence_rng(manifest.master_seed, index, attempt)
        scenario = mechanics.sample_scenario(cfg, rng)
        light = (
            optics.sample_light(rng) if manifest.family == "heightfield" else optics.LightSpec()
        )
        traj = mechanics.simulate_sequence(scenario, phys)
        if traj.accepted:
            return scenario, light, traj, attempt
    raise SimulationError(
        f"sequence {index}: more than {MAX_REJECTIONS} consecutive rejected scenarios"
    )


def simulate_record(manifest, index):
    """Simulate and render sequence ``index``, resampling rejected scenarios."""
    scenario, light, traj, attempt = simulate_trajectory(manifest, index)
    camera = optics.camera_for(scenario.surface, manifest.image_size)
    frames = render_trajectory(scenario, traj, light, camera, manifest.ball_textured)
    echo = _scenario_echo(scenario, light)
    echo.update(attempt=attempt, raw_frame_count=traj.raw_frame_count,
                collisions=traj.collisions, pixels_per_metre=camera.pixels_per_metre)
    return SequenceRecord(
        frames,
        optics.screen_project(traj.positions, camera),
        traj.angular_velocities.copy(),
        echo,
    )


def _generate_one(args):
    manifest, index, path = args
    record = simulate_record(manifest, index)
    save_sequence(path, record)
    return index, record.length


def generate_dataset(manifest, out_dir, threads=1):
    """Write ``manifest.json`` and ``seq/NNNNN.seq`` under ``out_dir``."""
    seq_dir = os.path.join(out_dir, "seq")
    os.makedirs(seq_dir, exist_ok=True)
    jobs = [
        (manifest, i, os.path.join(seq_dir, f"{i:05d}.seq"))
        for i in range(manifest.sequence_count)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_generate_one, jobs))
    else:
        results = [_generate_one(j) for j in jobs]
    lengths = dict(results)
    manifest.splits = split_indices(manifest.sequence_count, manifest.split_fractions)
    doc = manifest.to_json()
    doc["format_version"] = SEQ_VERSION
    doc["sequences"] = [
        {"index": i, "file": f"seq/{i:05d}.seq", "frames": lengths[i]}
        for i in range(manifest.sequence_count)
    ]
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


class Dataset:
    """Read-only view of a generated dataset directory with a record cache."""

    def __init__(self, root):
        self.root = os.fspath(root)
        path = os.path.join(self.root, "manifest.json")
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise RlabError(f"no dataset manifest at {path}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON in {path}", offset=exc.pos) from exc
        self.doc = doc
        self.manifest = DatasetManifest.from_json(doc)
        self.files = {s["index"]: s["file"] for s in doc.get("sequences", [])}
        self._cache = {}

    def split(self, name):
        if name not in self.manifest.splits:
            raise ConfigError(f"dataset has no split {name!r}")
        return list(self.manifest.splits[name])

    def record(self, index):
        if index not in self._cache:
            self._cache[index] = load_sequence(os.path.join(self.root, self.files[index]))
        return self._cache[index]


def load_dataset(root):
    return Dataset(root)


# ----------------------------------------------------------------- windows


@dataclass
class TrainingWindow:
    """Observed frames and the ``T`` targets that follow them.

    Target ``t`` (0-based) is the state ``t + 1`` frames after the last
    observed frame; ``final_frame`` is the frame of the last target.
    """

    frames: np.ndarray  # (T0, H, W, 3) uint8
    positions: np.ndarray  # (T, n_objects, 2)
    angular_velocities: np.ndarray  # (T, n_objects, 3)
    final_frame: np.ndarray = None
    start: int = 0


def sample_window(record, T, mode="eval_fixed", rng=None, T0=4, with_final=False):
    need = T0 + T
    if record.length < need:
        raise ShapeError(
            f"sequence has {record.length} frames, window needs T0 + T = {need}"
        )
    if mode == "eval_fixed":
        start = 0
    elif mode == "train_random":
        start = int(rng.integers(0, record.length - need + 1))
    else:
        raise ConfigError(f"unknown window mode {mode!r}")
    obs_end = start + T0
    return TrainingWindow(
        frames=record.frames[start:obs_end],
        positions=record.positions[obs_end:obs_end + T],
        angular_velocities=record.angular_velocities[obs_end:obs_end + T],
        final_frame=record.frames[obs_end + T - 1] if with_final else None,
        start=start,
    )
