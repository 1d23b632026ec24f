"""Trajectory files, sample windows and synthetic scenes.

Input files are whitespace separated ``frame_id agent_id x y`` records with
coordinates already in metres.  A window is 8 observed plus 12 future frames
of one target agent together with the states of the other agents present at
each observed frame.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OBS_LEN = 8
PRED_LEN = 12


class ParseError(ValueError):
    pass


@dataclass
class Trajectory:
    agent_id: int
    frames: np.ndarray  # (n,) int
    positions: np.ndarray  # (n, 2)

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Trajectory)
            and self.agent_id == other.agent_id
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.positions, other.positions)
        )


@dataclass
class Window:
    """One sample for a target agent.

    ``neighbors[t]`` is a ``(k, 4)`` array of ``(x, y, dx, dy)`` for every
    other agent present at observed step ``t``; offsets are backward
    differences to the agent's previous frame (zero if it was absent).
    """

    target_id: int
    start_frame: int
    observed: np.ndarray  # (8, 2)
    observed_offsets: np.ndarray  # (8, 2)
    neighbors: list
    future: np.ndarray | None = None  # (12, 2)
    scene: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def window_id(self) -> str:
        return f"{self.scene}/{self.target_id}/{self.start_frame}"

    @property
    def last_pos(self) -> np.ndarray:
        return self.observed[-1]

    @property
    def last_offset(self) -> np.ndarray:
        return self.observed_offsets[-1]

    def future_offsets(self) -> np.ndarray:
        full = np.vstack([self.observed[-1:], self.future])
        return np.diff(full, axis=0)


# ----------------------------------------------------------------------- files


def parse_lines(lines, source: str = "<input>") -> list[Trajectory]:
    rows: dict[int, dict[int, tuple[float, float]]] = defaultdict(dict)
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 4:
            raise ParseError(f"{source}:{lineno}: expected 4 fields, got {len(parts)}: {text!r}")
        try:
            frame = int(float(parts[0]))
            agent = int(float(parts[1]))
            x, y = float(parts[2]), float(parts[3])
        except ValueError:
            raise ParseError(f"{source}:{lineno}: malformed record {text!r}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ParseError(f"{source}:{lineno}: non-finite coordinate in {text!r}")
        if frame in rows[agent]:
            raise ParseError(f"{source}:{lineno}: duplicate frame {frame} for agent {agent}")
        rows[agent][frame] = (x, y)
    trajs = []
    for agent in sorted(rows):
        frames = sorted(rows[agent])
        trajs.append(
            Trajectory(
                agent_id=agent,
                frames=np.array(frames, dtype=np.int64),
                positions=np.array([rows[agent][f] for f in frames], dtype=np.float64).reshape(-1, 2),
            )
        )
    return trajs


def parse_file(path) -> list[Trajectory]:
    path = Path(path)
    with path.open() as fh:
        return parse_lines(fh, source=str(path))


def serialize(trajs) -> str:
    """Inverse of :func:`parse_lines`, frame-major ordering, full precision."""
    records = []
    for tr in trajs:
        for f, (x, y) in zip(tr.frames, tr.positions):
            records.append((int(f), int(tr.agent_id), float(x), float(y)))
    records.sort(key=lambda r: (r[0], r[1]))
    return "".join(f"{f} {a} {x!r} {y!r}\n" for f, a, x, y in records)


def write_file(path, trajs) -> None:
    Path(path).write_text(serialize(trajs))


def frame_step(trajs) -> int:
    """Most common positive frame delta across all trajectories."""
    deltas = Counter()
    for tr in trajs:
        d = np.diff(tr.frames)
        deltas.update(int(v) for v in d if v > 0)
    if not deltas:
        return 1
    best = max(deltas.values())
    return min(k for k, v in deltas.items() if v == best)


# --------------------------------------------------------------------- windows


def extract_windows(
    trajs,
    stride: int = 1,
    obs_len: int = OBS_LEN,
    pred_len: int = PRED_LEN,
    scene: str = "",
    step: int | None = None,
) -> list[Window]:
    """Sliding windows of ``obs_len + pred_len`` contiguous frames per agent."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    trajs = list(trajs)
    if step is None:
        step = frame_step(trajs)
    total = obs_len + pred_len

    # frame -> {agent: (x, y, dx, dy)}
    by_frame: dict[int, dict[int, tuple]] = defaultdict(dict)
    for tr in trajs:
        lookup = {int(f): p for f, p in zip(tr.frames, tr.positions)}
        for f, p in lookup.items():
            prev = lookup.get(f - step)
            d = (p - prev) if prev is not None else np.zeros(2)
            by_frame[f][tr.agent_id] = (p[0], p[1], d[0], d[1])

    windows = []
    for tr in sorted(trajs, key=lambda t: t.agent_id):
        frames = tr.frames
        n = len(frames)
        for s in range(0, n - total + 1, stride):
            seg = frames[s : s + total]
            if not np.all(np.diff(seg) == step):
                continue
            pos = tr.positions[s : s + total]
            obs = pos[:obs_len].copy()
            offsets = np.array([by_frame[int(f)][tr.agent_id][2:] for f in seg[:obs_len]])
            neighbors = []
            for f in seg[:obs_len]:
                present = by_frame[int(f)]
                rows = [present[a] for a in sorted(present) if a != tr.agent_id]
                neighbors.append(np.array(rows, dtype=np.float64).reshape(-1, 4))
            windows.append(
                Window(
                    target_id=tr.agent_id,
                    start_frame=int(seg[0]),
                    observed=obs,
                    observed_offsets=offsets,
                    neighbors=neighbors,
                    future=pos[obs_len:].copy() if pred_len else None,
                    scene=scene,
                )
            )
    return windows


def split_scenes(paths, train_fraction: float = 0.8):
    """Deterministic train/validation split of scene files by hashed filename."""
    ranked = sorted(paths, key=lambda p: hashlib.sha256(Path(p).name.encode()).hexdigest())
    n_train = max(1, int(round(train_fraction * len(ranked)))) if ranked else 0
    return ranked[:n_train], ranked[n_train:]


# ---------------------------------------------------------------- window cache

_CACHE_MAGIC = b"DCWIN001"


def save_windows(path, windows) -> None:
    """Flat little-endian cache.

    Header: magic ``DCWIN001``, uint32 window count.  Per window: uint32
    scene-name length + UTF-8 bytes, int64 target id, int64 start frame,
    uint32 observed length T, uint32 future length F (0 if absent), then
    float64 arrays observed (T*2), offsets (T*2), future (F*2), and for each
    of the T steps a uint32 neighbour count k followed by k*4 float64.
    """
    out = bytearray(_CACHE_MAGIC)
    out += struct.pack("<I", len(windows))
    for w in windows:
        name = w.scene.encode()
        fut = w.future if w.future is not None else np.zeros((0, 2))
        out += struct.pack("<I", len(name)) + name
        out += struct.pack("<qqII", w.target_id, w.start_frame, len(w.observed), len(fut))
        for arr in (w.observed, w.observed_offsets, fut):
            out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for nb in w.neighbors:
            out += struct.pack("<I", len(nb))
            out += np.ascontiguousarray(nb, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_windows(path) -> list[Window]:
    buf = Path(path).read_bytes()
    if buf[:8] != _CACHE_MAGIC:
        raise ValueError(f"{path}: not a window cache (magic {buf[:8]!r})")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    def floats(n):
        nonlocal pos
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        return arr

    (count,) = take("<I")
    windows = []
    for _ in range(count):
        (ln,) = take("<I")
        scene = buf[pos : pos + ln].decode()
        pos += ln
        tid, start, T, F = take("<qqII")
        obs = floats(2 * T).reshape(T, 2)
        offs = floats(2 * T).reshape(T, 2)
        fut = floats(2 * F).reshape(F, 2)
        neighbors = []
        for _ in range(T):
            (k,) = take("<I")
            neighbors.append(floats(4 * k).reshape(k, 4))
        windows.append(Window(tid, start, obs, offs, neighbors, fut if F else None, scene))
    return windows


# ------------------------------------------------------------ synthetic scenes

SCENE_KINDS = ("linear", "crossing", "bimodal-turn")


def _traj(agent_id, positions, start_frame=0) -> Trajectory:
    positions = np.asarray(positions, dtype=np.float64)
    return Trajectory(agent_id, np.arange(start_frame, start_frame + len(positions), dtype=np.int64), positions)


def _snap(x, grid: float = 1.0 / 64):
    # dyadic grid keeps constant-velocity extrapolation bit-exact
    return np.round(np.asarray(x) / grid) * grid


def turn_path(start, heading, speed, n_straight, n_turn, turn_rate):
    """``n_straight`` straight points then ``n_turn`` points on a constant-rate arc."""
    pts = [np.asarray(start, dtype=np.float64)]
    h = heading
    for i in range(1, n_straight + n_turn):
        if i >= n_straight:
            h += turn_rate
        pts.append(pts[-1] + speed * np.array([math.cos(h), math.sin(h)]))
    return np.array(pts)


def synth_scene(
    kind: str,
    n_agents: int,
    seed: int,
    length: int = OBS_LEN + PRED_LEN,
    speed: float | None = None,
) -> list[Trajectory]:
    """Deterministic synthetic scene.

    ``linear``: constant-velocity agents on random headings, spread far apart;
    positions and velocities lie on a 1/64 m grid so they are exact in float64.
    ``crossing``: agents in pairs whose straight paths meet mid-window at the
    first future frame plus a few steps; paired agents slow to half speed once
    the observation ends (they yield), an unpaired agent keeps its speed.
    ``bimodal-turn``: straight along +x for the observed part, then a
    constant-rate arc left or right with probability 1/2 each.
    """
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    rng = np.random.default_rng(seed)
    trajs = []
    if kind == "linear":
        for a in range(n_agents):
            v = 1.0 if speed is None else speed
            start = _snap(np.array([100.0 * a, rng.uniform(-5, 5)]))
            h = rng.uniform(0, 2 * math.pi)
            vel = _snap(v * np.array([math.cos(h), math.sin(h)]))
            trajs.append(_traj(a, start + np.arange(length)[:, None] * vel))
    elif kind == "crossing":
        for pair in range(0, n_agents, 2):
            base = np.array([100.0 * pair, 0.0])
            meet_step = OBS_LEN + 2
            heading = rng.uniform(0, 2 * math.pi)
            partners = [heading] if pair + 1 >= n_agents else [heading, heading + math.pi / 2 * rng.choice([-1, 1])]
            yielding = len(partners) == 2
            for k, h in enumerate(partners):
                v = rng.uniform(0.8, 1.2) if speed is None else speed
                d = np.array([math.cos(h), math.sin(h)])
                pts = [base - meet_step * v * d]
                for t in range(1, length):
                    step_v = v * 0.5 if (yielding and t >= OBS_LEN) else v
                    pts.append(pts[-1] + step_v * d)
                trajs.append(_traj(pair + k, np.array(pts)))
    else:
        for a in range(n_agents):
            v = rng.uniform(0.9, 1.1) if speed is None else speed
            start = np.array([0.0, 100.0 * a])
            side = 1 if rng.random() < 0.5 else -1
            path = turn_path(start, 0.0, v, OBS_LEN, length - OBS_LEN, side * TURN_RATE)
            trajs.append(_traj(a, path))
    return trajs


TURN_RATE = math.radians(12.0)


def turn_modes(window: Window, turn_rate: float = TURN_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Left- and right-turn continuations of a bimodal-turn window's observation."""
    speed = float(np.linalg.norm(window.observed_offsets[-1]))
    heading = math.atan2(*window.observed_offsets[-1][::-1])
    n = len(window.future) if window.future is not None else PRED_LEN
    start = window.observed[-1]
    left = turn_path(start, heading, speed, 1, n, turn_rate)[1:]
    right = turn_path(start, heading, speed, 1, n, -turn_rate)[1:]
    return left, right
