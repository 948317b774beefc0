"""Synthetic one-on-one half-court sequences.

An attacker starts anywhere on the half court and drives to the basket,
bending around a reactive point defender.  Each frame yields the true head
camera configuration plus a noisy first-person observation vector.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry as geo
from . import jsonio
from .errors import ParseError, ValidationError

SEQ_FORMAT = "egosynth-seq"
MANIFEST_FORMAT = "egosynth-manifest"
FORMAT_VERSION = 1
FPS = 5.0

GOAL_DISTANCE = 2.5
GOAL_VIEW_ANGLE = np.deg2rad(25.0)


@dataclass
class SimParams:
    court_width: float = 15.0
    court_length: float = 14.0
    basket: tuple = (7.5, 1.25, 3.05)
    min_length: int = 20
    max_length: int = 30
    count: int = 988
    split: float = 815 / 988
    head_height: tuple = (1.6, 2.0)
    start_clearance: float = 4.0
    goal_radius: tuple = (0.5, 1.5)
    deflection: tuple = (1.0, 2.5)
    shot_rise: tuple = (0.25, 0.45)
    defender_speed: float = 0.7
    path_jitter: float = 0.04
    gaze_noise_deg: float = 2.0
    obs_rotation_noise: float = 0.05
    obs_translation_noise: float = 0.3
    obs_feature_noise: float = 0.1
    max_step: float = 2.0
    d_obs: int = 20
    seed: int = 0

    def validate(self):
        if self.count <= 0:
            raise ValidationError("count must be positive")
        if not 0 < self.split < 1:
            raise ValidationError("split fraction must lie in (0, 1)")
        if not 2 <= self.min_length <= self.max_length:
            raise ValidationError("need 2 <= min_length <= max_length")
        if self.court_width <= 0 or self.court_length <= 0:
            raise ValidationError("court dimensions must be positive")
        if self.d_obs < 18:
            raise ValidationError("d_obs must be at least 18 to hold the observation features")
        if self.max_step <= 0:
            raise ValidationError("max_step must be positive")

    @property
    def basket_floor(self):
        return np.array(self.basket[:2], dtype=np.float64)

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown SimParams fields: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass
class Sequence:
    id: str
    configs: np.ndarray  # (M, 12)
    observations: np.ndarray | None = None  # (M, d_obs)

    def __post_init__(self):
        self.configs = np.asarray(self.configs, dtype=np.float64)
        if self.configs.ndim != 2 or self.configs.shape[1] != geo.CONFIG_DIM or len(self.configs) < 1:
            raise ValidationError(f"sequence {self.id}: configs must be an (M, 12) array")
        if self.observations is not None:
            self.observations = np.asarray(self.observations, dtype=np.float64)
            if self.observations.ndim != 2 or len(self.observations) != len(self.configs):
                raise ValidationError(f"sequence {self.id}: observations not aligned with configs")

    def __len__(self):
        return len(self.configs)

    @property
    def times(self):
        return frame_times(len(self))

    def centers(self):
        return np.array([geo.camera_center(c) for c in self.configs])


@dataclass
class Dataset:
    train: list
    test: list
    normalizer: geo.Normalizer
    obs_normalizer: geo.Normalizer
    params: SimParams = field(default_factory=SimParams)

    @property
    def d_obs(self):
        return self.params.d_obs

    def by_id(self):
        return {s.id: s for s in self.train + self.test}


def normalized_time(i, M):
    if M < 1 or i < 0 or i > M:
        raise ValidationError(f"need 0 <= i <= M and M >= 1, got i={i}, M={M}")
    return i / M


def frame_times(M):
    """Normalized time of each stored frame; frame k (0-based) is the (k+1)-th."""
    return np.array([normalized_time(k + 1, M) for k in range(M)])


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _sample_start(p, rng):
    floor = p.basket_floor
    while True:
        xy = rng.uniform([0.3, 0.3], [p.court_width - 0.3, p.court_length - 0.3])
        if np.linalg.norm(xy - floor) >= p.start_clearance:
            return xy


def _attempt(p, rng):
    floor = p.basket_floor
    basket = np.asarray(p.basket, dtype=np.float64)
    M = int(rng.integers(p.min_length, p.max_length + 1))
    head = rng.uniform(*p.head_height)
    start = _sample_start(p, rng)

    # finish point in front of the rim, on the attacker's side
    side = np.arctan2(start[1] - floor[1], start[0] - floor[0])
    theta = np.clip(side + rng.normal(0.0, 0.35), 0.12 * np.pi, 0.88 * np.pi)
    goal = floor + rng.uniform(*p.goal_radius) * np.array([np.cos(theta), np.sin(theta)])

    # defender stands between attacker and rim, offset to one side;
    # the attacker bends around the opposite side
    axis = goal - start
    length = np.linalg.norm(axis)
    axis /= length
    normal = np.array([-axis[1], axis[0]])
    frac = rng.uniform(0.3, 0.55)
    offset = rng.uniform(-1.2, 1.2)
    defender = start + frac * length * axis + offset * normal
    swerve = -np.sign(offset) if offset != 0 else 1.0
    control = start + frac * length * axis + swerve * rng.uniform(*p.deflection) * normal
    control = np.clip(control, [0.2, 0.2], [p.court_width - 0.2, p.court_length - 0.2])

    u = _smoothstep(np.arange(M) / (M - 1))
    path = ((1 - u) ** 2)[:, None] * start + (2 * u * (1 - u))[:, None] * control + (u**2)[:, None] * goal
    jitter = rng.normal(0.0, p.path_jitter, size=(M, 2))
    jitter[0] = jitter[-1] = 0.0
    path = path + jitter

    # defender drifts toward a guarding spot between attacker and rim
    defenders = np.empty((M, 2))
    facing = np.empty(M)
    d = defender.copy()
    for k in range(M):
        to_rim = floor - path[k]
        guard = path[k] + to_rim / max(np.linalg.norm(to_rim), 1e-9) * 1.0
        step = guard - d
        n = np.linalg.norm(step)
        if n > p.defender_speed:
            step *= p.defender_speed / n
        if k > 0:
            d = d + step
        defenders[k] = d
        facing[k] = np.arctan2(path[k, 1] - d[1], path[k, 0] - d[0])

    # sequences end on a shot: the head rises over the last frames
    progress = np.arange(M) / (M - 1)
    rise = rng.uniform(*p.shot_rise) * _smoothstep((progress - 0.86) / 0.14)

    # gaze blends from the defender's head to the rim as the drive progresses
    centers = np.column_stack([path, head + rise])
    blend = _smoothstep((np.arange(M) / (M - 1) - 0.2) / 0.6)
    yaw = np.empty(M)
    pitch = np.empty(M)
    noise = np.deg2rad(p.gaze_noise_deg)
    for k in range(M):
        target = (1 - blend[k]) * np.append(defenders[k], 1.8) + blend[k] * basket
        look = target - centers[k]
        y_k = np.arctan2(look[1], look[0])
        p_k = np.arctan2(look[2], np.linalg.norm(look[:2]))
        if k == 0:
            yaw[k], pitch[k] = y_k, p_k
        else:
            yaw[k] = yaw[k - 1] + 0.6 * _wrap(y_k - yaw[k - 1])
            pitch[k] = pitch[k - 1] + 0.6 * (p_k - pitch[k - 1])
    yaw += rng.normal(0.0, noise, size=M)
    pitch += rng.normal(0.0, noise, size=M)

    configs = np.empty((M, 12))
    for k in range(M):
        R = geo.look_rotation(yaw[k], pitch[k])
        configs[k] = geo.flatten_pose(geo.Pose(R, -R @ centers[k]))

    state = {"centers": centers, "yaw": yaw, "defenders": defenders, "facing": facing}
    return configs, state


def _acceptable(p, configs, state):
    centers = state["centers"]
    if np.any(np.linalg.norm(np.diff(centers[:, :2], axis=0), axis=1) >= p.max_step):
        return False
    if np.linalg.norm(centers[-1, :2] - p.basket_floor) > GOAL_DISTANCE:
        return False
    return end_view_angle(configs[-1], p.basket) <= GOAL_VIEW_ANGLE


def end_view_angle(config, basket):
    """Angle between the optical axis and the direction to the basket."""
    pose = geo.decompose(config, strict=False)
    c = -pose.R.T @ pose.t
    to_basket = np.asarray(basket, dtype=np.float64) - c
    cosang = geo.optical_axis(pose.R) @ to_basket / np.linalg.norm(to_basket)
    return float(np.arccos(np.clip(cosang, -1.0, 1.0)))


def _observe(p, configs, state, rng):
    M = len(configs)
    obs = np.zeros((M, p.d_obs))
    floor = p.basket_floor
    pose_noise = np.tile([p.obs_rotation_noise] * 3 + [p.obs_translation_noise], 3)
    for k in range(M):
        c = state["centers"][k, :2]
        yaw = state["yaw"][k]
        cos_y, sin_y = np.cos(yaw), np.sin(yaw)
        rel = state["defenders"][k] - c
        ego = np.array([cos_y * rel[0] + sin_y * rel[1], -sin_y * rel[0] + cos_y * rel[1]])
        to_rim = floor - c
        bearing = _wrap(np.arctan2(to_rim[1], to_rim[0]) - yaw)
        boundary = min(c[0], p.court_width - c[0], c[1], p.court_length - c[1])
        feats = np.array(
            [ego[0], ego[1], _wrap(state["facing"][k]), bearing, np.linalg.norm(to_rim), boundary]
        )
        obs[k, :12] = configs[k] + rng.normal(0.0, 1.0, size=12) * pose_noise
        obs[k, 12:18] = feats + rng.normal(0.0, p.obs_feature_noise, size=6)
    return obs


def generate_sequence(params, rng, seq_id="seq"):
    """One sequence and its per-frame observations.

    Samples that break the step bound or miss the goal region are redrawn.
    """
    params.validate()
    for _ in range(1000):
        configs, state = _attempt(params, rng)
        if _acceptable(params, configs, state):
            obs = _observe(params, configs, state, rng)
            return Sequence(seq_id, configs, obs)
    raise ValidationError("could not generate an acceptable sequence; check SimParams")


def split_counts(count, split):
    n_train = int(round(count * split))
    return n_train, count - n_train


def generate_dataset(params):
    params.validate()
    root = np.random.SeedSequence(params.seed)
    children = root.spawn(params.count)
    seqs = [
        generate_sequence(params, np.random.default_rng(child), f"seq{i:04d}")
        for i, child in enumerate(children)
    ]
    order = np.random.default_rng(root.spawn(1)[0]).permutation(params.count)
    n_train, _ = split_counts(params.count, params.split)
    train = sorted((seqs[i] for i in order[:n_train]), key=lambda s: s.id)
    test = sorted((seqs[i] for i in order[n_train:]), key=lambda s: s.id)
    return make_dataset(train, test, params)


def make_dataset(train, test, params):
    if not train:
        raise ValidationError("training split is empty")
    normalizer = geo.fit_normalizer(np.concatenate([s.configs for s in train]))
    obs_normalizer = geo.fit_normalizer(np.concatenate([s.observations for s in train]))
    return Dataset(train, test, normalizer, obs_normalizer, params)


def check_sequence(seq, max_step=2.0):
    """True when every rotation block is valid and steps respect ``max_step``."""
    if len(seq) < 2:
        return False
    for c in seq.configs:
        if not geo.is_rotation(c.reshape(3, 4)[:, :3]):
            return False
    centers = seq.centers()
    return bool(np.all(np.linalg.norm(np.diff(centers, axis=0), axis=1) < max_step))


def start_coverage(seqs, params):
    """Fraction of 1 m x 1 m court cells containing at least one start center."""
    nx, ny = int(np.ceil(params.court_width)), int(np.ceil(params.court_length))
    hit = np.zeros((nx, ny), dtype=bool)
    for s in seqs:
        x, y = geo.court_projection(s.configs[0])
        i, j = int(np.floor(x)), int(np.floor(y))
        if 0 <= i < nx and 0 <= j < ny:
            hit[i, j] = True
    return float(hit.mean())


def coverage_histogram(seqs, params):
    nx, ny = int(np.ceil(params.court_width)), int(np.ceil(params.court_length))
    counts = np.zeros((ny, nx), dtype=int)
    for s in seqs:
        x, y = geo.court_projection(s.configs[0])
        i, j = int(np.floor(x)), int(np.floor(y))
        if 0 <= i < nx and 0 <= j < ny:
            counts[j, i] += 1
    return counts


# -- persistence --------------------------------------------------------------


def _seq_record(seq):
    rec = {"id": seq.id, "configs": seq.configs}
    if seq.observations is not None:
        rec["observations"] = seq.observations
    return rec


def format_sequences(seqs):
    lines = [jsonio.dumps({"format": SEQ_FORMAT, "version": FORMAT_VERSION})]
    lines += [jsonio.dumps(_seq_record(s)) for s in seqs]
    return "\n".join(lines) + "\n"


def write_sequences(path, seqs):
    jsonio.atomic_write_text(path, format_sequences(seqs))


def _parse_vectors(value, arity, what, lineno, path):
    if not isinstance(value, list) or not value:
        raise ParseError(f"{what} must be a non-empty list", lineno, path)
    for row in value:
        if not isinstance(row, list) or len(row) != arity:
            n = len(row) if isinstance(row, list) else "?"
            raise ParseError(f"{what} entry has {n} numbers, expected {arity}", lineno, path)
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in row):
            raise ParseError(f"{what} entry has non-numeric values", lineno, path)
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{what} has non-finite values", lineno, path)
    return arr


def read_sequences(path, d_obs=None):
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing header", 1, path)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed header: {exc.msg}", 1, path) from exc
    if not isinstance(header, dict) or header.get("format") != SEQ_FORMAT:
        raise ParseError("missing or wrong format header", 1, path)
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {header.get('version')!r}", 1, path)
    seqs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed record: {exc.msg}", lineno, path) from exc
        if not isinstance(rec, dict) or not isinstance(rec.get("id"), str):
            raise ParseError("record needs a string id", lineno, path)
        configs = _parse_vectors(rec.get("configs"), geo.CONFIG_DIM, "config", lineno, path)
        obs = None
        if "observations" in rec:
            arity = d_obs if d_obs is not None else len(rec["observations"][0]) if rec["observations"] else 0
            obs = _parse_vectors(rec["observations"], arity, "observation", lineno, path)
            if len(obs) != len(configs):
                raise ParseError("observations not aligned with configs", lineno, path)
        seqs.append(Sequence(rec["id"], configs, obs))
    return seqs


def save_sequences(outdir, dataset):
    """Write ``sequences.jsonl`` and ``manifest.json`` into ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    write_sequences(os.path.join(outdir, "sequences.jsonl"), dataset.train + dataset.test)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": FORMAT_VERSION,
        "train": [s.id for s in dataset.train],
        "test": [s.id for s in dataset.test],
        "normalizer": dataset.normalizer.to_dict(),
        "obs_normalizer": dataset.obs_normalizer.to_dict(),
        "params": dataset.params.to_dict(),
    }
    jsonio.atomic_write_text(os.path.join(outdir, "manifest.json"), jsonio.dumps(manifest) + "\n")


def load_sequences(outdir):
    mpath = os.path.join(outdir, "manifest.json")
    try:
        with open(mpath, encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, mpath) from exc
    if manifest.get("format") != MANIFEST_FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise ParseError("unknown manifest format or version", 1, mpath)
    params = SimParams.from_dict(manifest["params"])
    seqs = {s.id: s for s in read_sequences(os.path.join(outdir, "sequences.jsonl"), params.d_obs)}
    try:
        train = [seqs[i] for i in manifest["train"]]
        test = [seqs[i] for i in manifest["test"]]
    except KeyError as exc:
        raise ParseError(f"manifest references unknown sequence {exc}", None, mpath) from exc
    if set(manifest["train"]) & set(manifest["test"]):
        raise ParseError("train and test ids overlap", None, mpath)
    return Dataset(
        train,
        test,
        geo.Normalizer.from_dict(manifest["normalizer"]),
        geo.Normalizer.from_dict(manifest["obs_normalizer"]),
        params,
    )
