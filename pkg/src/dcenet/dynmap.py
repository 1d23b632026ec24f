"""Target-centred dynamic maps of neighbouring agents.

Each observed step yields an ``H x W x 3`` grid with an orientation, a speed
and a position layer.  Grid rows run along y and columns along x; the target
sits at cell ``(H/2, W/2)``.  A neighbour lands in the cell reached by its
relative position plus its relative offset.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

MAP_WIDTH = 32
MAP_HEIGHT = 32


@dataclass(frozen=True)
class MapConfig:
    width: int = MAP_WIDTH
    height: int = MAP_HEIGHT
    cell_size: float = 1.0
    # additionally flag the cell of the bare relative position
    mark_position_cell: bool = False

    @property
    def flat_size(self) -> int:
        return self.width * self.height * 3


@dataclass
class DynamicMap:
    orientation: np.ndarray
    speed: np.ndarray
    position: np.ndarray

    def as_array(self) -> np.ndarray:
        """``H x W x 3`` array with layers (orientation, speed, position)."""
        return np.stack([self.orientation, self.speed, self.position], axis=-1)

    def to_csv(self) -> str:
        """Three row-major blocks (O, S, P), each preceded by a ``# layer`` line."""
        buf = io.StringIO()
        for name, layer in (("O", self.orientation), ("S", self.speed), ("P", self.position)):
            buf.write(f"# {name}\n")
            np.savetxt(buf, layer, delimiter=",", fmt="%.17g")
        return buf.getvalue()


@dataclass
class DynamicMapStack:
    maps: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.maps)

    def as_array(self) -> np.ndarray:
        return np.stack([m.as_array() for m in self.maps])

    def flatten(self) -> np.ndarray:
        """``T x (H*W*3)`` row-major per step, ready for the map branch."""
        return self.as_array().reshape(len(self.maps), -1)


def orientation_of(dx: float, dy: float) -> float:
    """Heading of an offset in degrees, in ``[0, 360)``."""
    deg = math.degrees(math.atan2(dy, dx))
    if deg < 0:
        deg += 360.0
    # -tiny angles round up to exactly 360
    return 0.0 if deg >= 360.0 else deg


def cell_index(target_pos, target_offset, neighbor_pos, neighbor_offset, config: MapConfig = MapConfig()):
    """Grid cell ``(row, col)`` of a neighbour, or ``None`` if off the map."""
    cw = (neighbor_pos[0] - target_pos[0]) + (neighbor_offset[0] - target_offset[0])
    ch = (neighbor_pos[1] - target_pos[1]) + (neighbor_offset[1] - target_offset[1])
    return _to_cell(cw, ch, config)


def _to_cell(cw: float, ch: float, config: MapConfig):
    col = math.floor(cw / config.cell_size + config.width / 2)
    row = math.floor(ch / config.cell_size + config.height / 2)
    if 0 <= col < config.width and 0 <= row < config.height:
        return row, col
    return None


def _minmax_occupied(layer: np.ndarray, occupied: np.ndarray) -> np.ndarray:
    out = np.zeros_like(layer)
    if not occupied.any():
        return out
    vals = layer[occupied]
    lo, hi = vals.min(), vals.max()
    out[occupied] = 1.0 if hi == lo else (vals - lo) / (hi - lo)
    return out


def build_map(target_state, neighbors, config: MapConfig = MapConfig()) -> DynamicMap:
    """One normalised map for a target state ``(x, y, dx, dy)``.

    ``neighbors`` is an iterable of ``(x, y, dx, dy)`` rows.  When two
    neighbours share a cell the one closer to the target supplies speed and
    orientation.
    """
    H, W = config.height, config.width
    tx, ty, tdx, tdy = (float(v) for v in target_state)
    rows = np.asarray(neighbors, dtype=np.float64).reshape(-1, 4)

    # deterministic regardless of input order: nearest first, full state as tiebreak
    dist = np.hypot(rows[:, 0] - tx, rows[:, 1] - ty)
    order = np.lexsort((rows[:, 3], rows[:, 2], rows[:, 1], rows[:, 0], dist))

    orient = np.zeros((H, W))
    speed = np.zeros((H, W))
    pos = np.zeros((H, W))
    for k in order:
        nx, ny, ndx, ndy = rows[k]
        cells = [cell_index((tx, ty), (tdx, tdy), (nx, ny), (ndx, ndy), config)]
        if config.mark_position_cell:
            cells.append(_to_cell(nx - tx, ny - ty, config))
        for cell in cells:
            if cell is None or pos[cell]:
                continue
            pos[cell] = 1.0
            speed[cell] = math.hypot(ndx, ndy)
            orient[cell] = orientation_of(ndx, ndy)

    occupied = pos > 0
    return DynamicMap(
        orientation=orient / 360.0,
        speed=_minmax_occupied(speed, occupied),
        position=_minmax_occupied(pos, occupied),
    )


def build_stack(window, config: MapConfig = MapConfig()) -> DynamicMapStack:
    """Maps for every observed step of a :class:`~dcenet.data.Window`."""
    steps = len(window.observed)
    if steps == 0:
        raise ValueError("window has no observed steps")
    maps = []
    for t in range(steps):
        x, y = window.observed[t]
        dx, dy = window.observed_offsets[t]
        maps.append(build_map((x, y, dx, dy), window.neighbors[t], config))
    return DynamicMapStack(maps)
