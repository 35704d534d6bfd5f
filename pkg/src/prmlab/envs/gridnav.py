"""Grid navigation with an optional key-before-goal detour.

The agent moves on an open W x H grid toward a goal cell. Tasks may place a
key and lock the goal: stepping onto a locked goal without the key is a
blocked no-op, so the only way to finish is to fetch the key first, even
when that means walking away from the goal. Timeouts pay 0 by default or
distance-based partial credit in graded mode.

Observations are local and relative (goal/key offsets, blocked-move bits,
last action result); the absolute layout stays hidden. Relative payloads
recur across tasks, which is what lets policies and reward models trained
on one task set transfer to held-out tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigurationError
from ..seeding import rng_from
from .core import Action, Environment, Task

MOVES = {
    "up": (0, -1),
    "down": (0, 1),
    "left": (-1, 0),
    "right": (1, 0),
    "stay": (0, 0),
}
ACTION_ORDER = ["up", "down", "left", "right", "stay"]

Cell = tuple[int, int]


@dataclass(frozen=True)
class GridSpec:
    """Per-task geometry. ``key`` locks the goal when present."""

    start: Cell
    goal: Cell
    key: Cell | None = None


def _manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


class GridNav(Environment):
    family = "gridnav"

    def __init__(
        self,
        width: int,
        height: int,
        specs: dict[str, tuple[Task, GridSpec]],
        graded: bool = False,
        offset_clip: int = 4,
    ):
        if width < 2 or height < 1:
            raise ConfigurationError("grid must be at least 2x1")
        self.width = width
        self.height = height
        self.graded = graded
        self.offset_clip = offset_clip
        self._specs = {tid: spec for tid, (_, spec) in specs.items()}
        super().__init__(task for _, (task, _) in specs.items())

    # -- construction --------------------------------------------------------

    @classmethod
    def generate(
        cls,
        width: int,
        height: int,
        horizon: int,
        n_tasks: int,
        seed: int,
        key_fraction: float = 0.0,
        graded: bool = False,
        offset_clip: int = 4,
    ) -> "GridNav":
        """Deterministically sample ``n_tasks`` solvable tasks."""
        probe = cls(width, height, {}, graded=graded, offset_clip=offset_clip)
        specs: dict[str, tuple[Task, GridSpec]] = {}
        for i in range(n_tasks):
            rng = rng_from("gridnav-task", seed, i)
            with_key = rng.random() < key_fraction
            for _ in range(200):
                spec = probe._sample_spec(rng, with_key)
                path = probe._expert_path(spec)
                if path is not None and len(path) <= horizon:
                    break
            else:
                raise ConfigurationError(
                    f"could not sample a solvable task within horizon {horizon}"
                )
            tid = f"gn-{i:04d}"
            specs[tid] = (Task(tid, _instruction(spec), horizon), spec)
        return cls(width, height, specs, graded=graded, offset_clip=offset_clip)

    @classmethod
    def from_layouts(
        cls,
        width: int,
        height: int,
        layouts: list[dict],
        graded: bool = False,
        offset_clip: int = 4,
    ) -> "GridNav":
        """Build from explicit task layouts (id, start, goal, key?, horizon)."""
        specs: dict[str, tuple[Task, GridSpec]] = {}
        for layout in layouts:
            spec = GridSpec(
                start=tuple(layout["start"]),
                goal=tuple(layout["goal"]),
                key=tuple(layout["key"]) if layout.get("key") is not None else None,
            )
            tid = layout["id"]
            specs[tid] = (Task(tid, _instruction(spec), int(layout["horizon"])), spec)
        return cls(width, height, specs, graded=graded, offset_clip=offset_clip)

    @classmethod
    def from_config(cls, cfg: dict) -> "GridNav":
        if "layouts" in cfg:
            return cls.from_layouts(
                cfg["width"],
                cfg["height"],
                cfg["layouts"],
                graded=cfg.get("graded", False),
                offset_clip=cfg.get("offset_clip", 4),
            )
        return cls.generate(
            cfg["width"],
            cfg["height"],
            cfg["horizon"],
            cfg["tasks"],
            cfg["seed"],
            key_fraction=cfg.get("key_fraction", 0.0),
            graded=cfg.get("graded", False),
            offset_clip=cfg.get("offset_clip", 4),
        )

    def _sample_spec(self, rng, with_key: bool) -> GridSpec:
        cells = [(x, y) for x in range(self.width) for y in range(self.height)]
        picks = rng.choice(len(cells), size=3 if with_key else 2, replace=False)
        start, goal = cells[picks[0]], cells[picks[1]]
        key = cells[picks[2]] if with_key else None
        return GridSpec(start=start, goal=goal, key=key)

    # -- environment protocol ------------------------------------------------

    @property
    def action_names(self) -> list[str]:
        return list(ACTION_ORDER)

    def _initial(self, task: Task, seed: int) -> tuple[tuple, str]:
        spec = self._specs[task.id]
        sim = (spec.start[0], spec.start[1], 0)
        return sim, self._observe(spec, sim, "start")

    def _transition(self, task: Task, sim: tuple, action: str) -> tuple[tuple, str, bool]:
        spec = self._specs[task.id]
        x, y, has_key = sim
        dx, dy = MOVES[action]
        nx, ny = x + dx, y + dy
        blocked = self._blocked(spec, (x, y), has_key, action)
        if blocked:
            nx, ny = x, y
        if spec.key is not None and not has_key and (nx, ny) == spec.key:
            has_key = 1
        sim2 = (nx, ny, has_key)
        goal_reached = (nx, ny) == spec.goal
        result = "blocked" if blocked else "ok"
        return sim2, self._observe(spec, sim2, result), goal_reached

    def _blocked(self, spec: GridSpec, pos: Cell, has_key: int, action: str) -> bool:
        dx, dy = MOVES[action]
        if dx == 0 and dy == 0:
            return False
        nx, ny = pos[0] + dx, pos[1] + dy
        if not (0 <= nx < self.width and 0 <= ny < self.height):
            return True
        if spec.key is not None and not has_key and (nx, ny) == spec.goal:
            return True  # goal is locked until the key is held
        return False

    def _observe(self, spec: GridSpec, sim: tuple, result: str) -> str:
        x, y, has_key = sim
        clip = self.offset_clip

        def rel(cell: Cell) -> str:
            cx = max(-clip, min(clip, cell[0] - x))
            cy = max(-clip, min(clip, cell[1] - y))
            return f"{cx},{cy}"

        if has_key:
            key_part = "H"
        elif spec.key is None:
            key_part = "N"
        else:
            key_part = rel(spec.key)
        bits = "".join(
            "1" if self._blocked(spec, (x, y), has_key, name) else "0"
            for name in ACTION_ORDER[:4]
        )
        return f"g{rel(spec.goal)} k{key_part} b{bits} r{result}"

    def _timeout_reward(self, task: Task, sim: tuple) -> float:
        if not self.graded:
            return 0.0
        spec = self._specs[task.id]
        dist = _manhattan((sim[0], sim[1]), spec.goal)
        return max(0.0, 1.0 - dist / (self.width + self.height))

    # -- scripted expert -------------------------------------------------------

    def expert_actions(self, task: Task) -> list[Action]:
        path = self._expert_path(self._specs[task.id])
        if path is None:
            raise ConfigurationError(f"task {task.id!r} has no expert solution")
        return [Action(name) for name in path]

    def _expert_path(self, spec: GridSpec) -> list[str] | None:
        if spec.key is None:
            legs = [(spec.start, spec.goal, None)]
        else:
            legs = [(spec.start, spec.key, spec.goal), (spec.key, spec.goal, None)]
        moves: list[str] = []
        for src, dst, forbidden in legs:
            leg = self._segment(src, dst, forbidden)
            if leg is None:
                return None
            moves.extend(leg)
        return moves

    def _segment(self, src: Cell, dst: Cell, forbidden: Cell | None) -> list[str] | None:
        """Axis-aligned walk src -> dst skirting around ``forbidden``."""
        moves: list[str] = []
        x, y = src
        budget = 4 * (self.width + self.height)
        while (x, y) != dst and budget > 0:
            budget -= 1
            options = []
            if x != dst[0]:
                options.append("right" if dst[0] > x else "left")
            if y != dst[1]:
                options.append("down" if dst[1] > y else "up")
            chosen = None
            for name in options:
                dx, dy = MOVES[name]
                if (x + dx, y + dy) != forbidden:
                    chosen = name
                    break
            if chosen is None:
                # lone axis move runs into the locked goal: sidestep
                for name in ("up", "down", "left", "right"):
                    dx, dy = MOVES[name]
                    nx, ny = x + dx, y + dy
                    if (
                        0 <= nx < self.width
                        and 0 <= ny < self.height
                        and (nx, ny) != forbidden
                        and name not in options
                    ):
                        chosen = name
                        break
                if chosen is None:
                    return None
            dx, dy = MOVES[chosen]
            x, y = x + dx, y + dy
            moves.append(chosen)
        return moves if (x, y) == dst else None


def _instruction(spec: GridSpec) -> str:
    base = f"reach ({spec.goal[0]},{spec.goal[1]}) from ({spec.start[0]},{spec.start[1]})"
    if spec.key is not None:
        base += f"; locked, key at ({spec.key[0]},{spec.key[1]})"
    return base
