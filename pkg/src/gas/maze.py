"""Desk-scale goal-conditioned maze environments.

Two dynamics over a shared wall grid:
  * PointMaze   — continuous point mass, per-axis sliding collisions.
  * Gridworld   — 4-connected cells; continuous actions quantize to the
                  dominant axis, one cell per step.

States are 2-vectors: (row, col) coordinates in length units for PointMaze,
integer-valued cell indices for Gridworld. Environments are immutable specs
plus pure step functions; nothing here holds episode state.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

Cell = tuple[int, int]


class MazeError(ValueError):
    pass


@dataclass(eq=False)
class MazeSpec:
    """Wall grid plus start/goal candidate cells. Treated as immutable."""

    walls: np.ndarray  # bool (rows, cols), True = wall
    cell_size: float = 1.0
    start_cells: tuple[Cell, ...] = ()
    goal_cells: tuple[Cell, ...] = ()

    def __post_init__(self):
        self.walls = np.asarray(self.walls, dtype=bool)
        if self.walls.ndim != 2:
            raise MazeError("wall grid must be 2-D")
        if self.cell_size <= 0:
            raise MazeError("cell_size must be positive")
        if not (~self.walls).any():
            raise MazeError("maze has no free cell")
        self.start_cells = tuple((int(r), int(c)) for r, c in self.start_cells)
        self.goal_cells = tuple((int(r), int(c)) for r, c in self.goal_cells)
        for cell in (*self.start_cells, *self.goal_cells):
            if not self.is_free_cell(cell):
                raise MazeError(f"candidate cell {cell} is not free")
        # every goal candidate must be reachable from every start candidate
        for start in self.start_cells:
            dists = bfs_distances(self, start)
            for goal in self.goal_cells:
                if not np.isfinite(dists[goal]):
                    raise MazeError(f"goal {goal} unreachable from start {start}")

    @property
    def rows(self) -> int:
        return self.walls.shape[0]

    @property
    def cols(self) -> int:
        return self.walls.shape[1]

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.rows and 0 <= c < self.cols

    def is_free_cell(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.walls[cell]

    def free_cells(self) -> list[Cell]:
        rr, cc = np.nonzero(~self.walls)
        return [(int(r), int(c)) for r, c in zip(rr, cc)]

    def cell_of(self, pos: np.ndarray) -> Cell:
        return (int(np.floor(pos[0] / self.cell_size)), int(np.floor(pos[1] / self.cell_size)))

    def cell_center(self, cell: Cell) -> np.ndarray:
        return (np.asarray(cell, dtype=np.float64) + 0.5) * self.cell_size

    def is_free_pos(self, pos: np.ndarray) -> bool:
        return self.is_free_cell(self.cell_of(pos))


def parse_maze_text(text: str, cell_size: float = 1.0) -> MazeSpec:
    """Grid file format: one row per line, '#' wall, '.' free,
    'S' start candidate, 'G' goal candidate."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MazeError("empty maze text")
    width = max(len(ln) for ln in lines)
    walls = np.zeros((len(lines), width), dtype=bool)
    starts, goals = [], []
    for r, ln in enumerate(lines):
        for c in range(width):
            ch = ln[c] if c < len(ln) else "#"
            if ch == "#":
                walls[r, c] = True
            elif ch == ".":
                pass
            elif ch == "S":
                starts.append((r, c))
            elif ch == "G":
                goals.append((r, c))
            else:
                raise MazeError(f"unknown maze character {ch!r} at row {r} col {c}")
    return MazeSpec(walls, cell_size=cell_size, start_cells=tuple(starts), goal_cells=tuple(goals))


def maze_to_text(maze: MazeSpec) -> str:
    starts, goals = set(maze.start_cells), set(maze.goal_cells)
    rows = []
    for r in range(maze.rows):
        row = []
        for c in range(maze.cols):
            if maze.walls[r, c]:
                row.append("#")
            elif (r, c) in starts:
                row.append("S")
            elif (r, c) in goals:
                row.append("G")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def load_maze_file(path, cell_size: float = 1.0) -> MazeSpec:
    with open(path, "r", encoding="utf-8") as f:
        return parse_maze_text(f.read(), cell_size=cell_size)


# --- success predicate -------------------------------------------------------


def _identity(x: np.ndarray) -> np.ndarray:
    return x


@dataclass(frozen=True)
class SuccessPredicate:
    """Sparse goal indicator: 1 iff the projected Euclidean gap is < epsilon."""

    epsilon: float = 0.5
    project: object = _identity

    def __post_init__(self):
        if self.epsilon <= 0:
            raise MazeError("epsilon must be positive")


def reward(next_state: np.ndarray, goal: np.ndarray, pred: SuccessPredicate) -> int:
    gap = np.linalg.norm(
        np.asarray(pred.project(next_state), dtype=np.float64)
        - np.asarray(pred.project(goal), dtype=np.float64)
    )
    return 1 if gap < pred.epsilon else 0


# --- dynamics ----------------------------------------------------------------


@dataclass(eq=False)
class PointMaze:
    """Continuous single-integrator dynamics with axis-separated sliding."""

    maze: MazeSpec
    a_max: float = 1.0
    state_dim: int = field(default=2, init=False)
    action_dim: int = field(default=2, init=False)

    def __post_init__(self):
        # per-axis collision check looks one cell boundary ahead at most
        if self.a_max > self.maze.cell_size:
            raise MazeError("a_max must not exceed cell_size")

    def clip_action(self, action: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(action, dtype=np.float64), -self.a_max, self.a_max)

    def step(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        pos = np.asarray(state, dtype=np.float64)
        d = self.clip_action(action)
        new0 = pos[0] + d[0]
        if not self.maze.is_free_pos(np.array([new0, pos[1]])):
            new0 = pos[0]
        new1 = pos[1] + d[1]
        if not self.maze.is_free_pos(np.array([new0, new1])):
            new1 = pos[1]
        return np.array([new0, new1], dtype=np.float32)

    def reset(self, rng: np.random.Generator, jitter: float = 0.3) -> np.ndarray:
        cells = self.maze.start_cells or tuple(self.maze.free_cells())
        cell = cells[int(rng.integers(len(cells)))]
        pos = self.maze.cell_center(cell)
        if jitter > 0:
            pos = pos + rng.uniform(-jitter, jitter, size=2) * self.maze.cell_size
        return pos.astype(np.float32)

    def state_cell(self, state: np.ndarray) -> Cell:
        return self.maze.cell_of(np.asarray(state, dtype=np.float64))

    def cell_state(self, cell: Cell) -> np.ndarray:
        return self.maze.cell_center(cell).astype(np.float32)


@dataclass(eq=False)
class Gridworld:
    """4-connected grid; a continuous action moves one cell along its
    dominant axis (blocked moves keep the agent in place)."""

    maze: MazeSpec
    a_max: float = 1.0
    state_dim: int = field(default=2, init=False)
    action_dim: int = field(default=2, init=False)

    def clip_action(self, action: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(action, dtype=np.float64), -self.a_max, self.a_max)

    def step(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        r, c = int(round(float(state[0]))), int(round(float(state[1])))
        a = self.clip_action(action)
        axis = 0 if abs(a[0]) >= abs(a[1]) else 1
        if abs(a[axis]) < 1e-9:
            return np.array([r, c], dtype=np.float32)
        move = 1 if a[axis] > 0 else -1
        nxt = (r + move, c) if axis == 0 else (r, c + move)
        if not self.maze.is_free_cell(nxt):
            nxt = (r, c)
        return np.array(nxt, dtype=np.float32)

    def reset(self, rng: np.random.Generator, jitter: float = 0.0) -> np.ndarray:
        cells = self.maze.start_cells or tuple(self.maze.free_cells())
        cell = cells[int(rng.integers(len(cells)))]
        return np.array(cell, dtype=np.float32)

    def state_cell(self, state: np.ndarray) -> Cell:
        return (int(round(float(state[0]))), int(round(float(state[1]))))

    def cell_state(self, cell: Cell) -> np.ndarray:
        return np.array(cell, dtype=np.float32)


# --- exact distances ---------------------------------------------------------


def bfs_distances(maze: MazeSpec, source: Cell) -> np.ndarray:
    """Exact 4-connected step counts from `source` to every cell (inf where
    unreachable or wall)."""
    if not maze.is_free_cell(source):
        raise MazeError(f"source cell {source} is not free")
    dist = np.full((maze.rows, maze.cols), np.inf)
    dist[source] = 0.0
    q = deque([source])
    while q:
        r, c = q.popleft()
        d = dist[r, c] + 1.0
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if maze.is_free_cell((nr, nc)) and d < dist[nr, nc]:
                dist[nr, nc] = d
                q.append((nr, nc))
    return dist


def bfs_distance(maze: MazeSpec, a: Cell, b: Cell) -> float:
    """Minimum 4-connected step count between free cells; inf if disconnected."""
    if not maze.is_free_cell(b):
        raise MazeError(f"target cell {b} is not free")
    return float(bfs_distances(maze, a)[b])


# --- built-in mazes ----------------------------------------------------------


def _open_grid_text(n: int) -> str:
    border = "#" * (n + 2)
    return "\n".join([border] + ["#" + "." * n + "#" for _ in range(n)] + [border])


# Two rooms joined only by a long top corridor (access shafts at the outer
# columns). Room interiors are >= 20 BFS steps apart, so short trajectory
# segments never touch both rooms.
_TWO_ROOM_TEXT = """\
#################
#...............#
#.#############.#
#.#############.#
#.S....###...G..#
#......###.G....#
#.S....###....G.#
#......###.G....#
#.S....###...G..#
#################
"""

# Stretched variant for end-to-end stitching runs: the corridor detour is
# long enough that reaching the far room composes several segment lengths.
_TWO_ROOM_WIDE_TEXT = """\
#########################
#.......................#
#.#####################.#
#.#####################.#
#.S.....###########...G.#
#.......###########.G...#
#.S.....###########....G#
#.......###########.G...#
#.S.....###########...G.#
#########################
"""

BUILTIN_MAZES: dict[str, str] = {
    "open_5": _open_grid_text(5),
    "open_10": _open_grid_text(10),
    "two_room": _TWO_ROOM_TEXT,
    "two_room_wide": _TWO_ROOM_WIDE_TEXT,
}


def builtin_maze(name: str, cell_size: float = 1.0) -> MazeSpec:
    if name not in BUILTIN_MAZES:
        raise MazeError(f"unknown builtin maze {name!r}; have {sorted(BUILTIN_MAZES)}")
    spec = parse_maze_text(BUILTIN_MAZES[name], cell_size=cell_size)
    if not spec.start_cells or not spec.goal_cells:
        free = spec.free_cells()
        spec = MazeSpec(
            spec.walls,
            cell_size=cell_size,
            start_cells=spec.start_cells or tuple(free),
            goal_cells=spec.goal_cells or tuple(free),
        )
    return spec


def resolve_maze(ref: str, cell_size: float = 1.0) -> MazeSpec:
    """Accepts 'builtin:<name>' or a path to a maze text file."""
    if ref.startswith("builtin:"):
        return builtin_maze(ref.split(":", 1)[1], cell_size=cell_size)
    return load_maze_file(ref, cell_size=cell_size)


def make_env(maze: MazeSpec, kind: str, a_max: float = 1.0):
    if kind == "point":
        return PointMaze(maze, a_max=a_max)
    if kind == "grid":
        return Gridworld(maze, a_max=a_max)
    raise MazeError(f"unknown environment kind {kind!r}")
