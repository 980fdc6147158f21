"""Treasure-hunt gridworld: maps, dynamics, experts, instructions.

A task fixes a landmark type and an offset; every map of the task buries
the treasure at landmark cell + offset. The agent sees an egocentric
crop, moves in the four compass directions (blocked by water and map
edges), and ends the episode with DIG, scoring 3.0 exactly when it digs
on the treasure cell.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import ContractError, GenerationError
from ..protocol import LANG, TEST, TaskDataset
from ..seeding import derive_rng
from ..seq import Vocab

__all__ = [
    "LANDMARKS", "OFFSETS", "ACTIONS", "NORTH", "SOUTH", "EAST", "WEST",
    "DIG", "GRID_SIZE", "OBS_WINDOW", "OBS_CHANNELS", "STEP_CAP",
    "TREASURE_REWARD", "GridMap", "NavTask", "MapSampler", "NavEnv",
    "Rollout", "bfs_distances", "expert_action", "observe", "sample_start",
    "run_episode", "expert_policy", "generate_task", "generate_map",
    "render_instruction", "parse_instruction", "nav_vocab_tokens",
    "nav_vocab", "NavCorpusConfig", "build_nav_corpus", "map_to_record",
    "map_from_record", "task_to_record", "task_from_record",
]

LANDMARKS = ("star", "circle", "triangle", "heart", "spade", "square")
OFFSETS = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1))

NORTH, SOUTH, EAST, WEST, DIG = range(5)
ACTIONS = ("north", "south", "east", "west", "dig")
_DELTAS = {NORTH: (-1, 0), SOUTH: (1, 0), EAST: (0, 1), WEST: (0, -1)}

GRID_SIZE = 6
OBS_WINDOW = 5
# water + one channel per landmark type + out-of-bounds + agent position
OBS_CHANNELS = 1 + len(LANDMARKS) + 2
STEP_CAP = 50
TREASURE_REWARD = 3.0


# ---------------------------------------------------------------------------
# maps


def bfs_distances(water: np.ndarray, goal: tuple[int, int]) -> np.ndarray:
    """Shortest water-avoiding step counts to `goal`; -1 where unreachable."""
    n, m = water.shape
    dist = np.full((n, m), -1, dtype=np.int64)
    if water[goal]:
        return dist
    dist[goal] = 0
    queue = deque([goal])
    while queue:
        r, c = queue.popleft()
        for dr, dc in _DELTAS.values():
            nr, nc = r + dr, c + dc
            if 0 <= nr < n and 0 <= nc < m and not water[nr, nc] \
                    and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                queue.append((nr, nc))
    return dist


class GridMap:
    """Terrain, landmark placements, and the hidden treasure cell.

    Constructing one validates the world invariants: all cells of
    interest on land, landmark cells distinct, and every land cell
    connected to the treasure (so any start position is solvable).
    """

    __slots__ = ("water", "landmarks", "treasure", "__dict__")

    def __init__(self, water: np.ndarray,
                 landmarks: tuple[tuple[int, int, int], ...],
                 treasure: tuple[int, int]):
        water = np.asarray(water, dtype=bool)
        if water.ndim != 2:
            raise ContractError("terrain must be a 2-D water mask")
        if not landmarks:
            raise ContractError("a map needs at least one landmark")
        cells = [(r, c) for _, r, c in landmarks]
        if len(set(cells)) != len(cells):
            raise ContractError("landmark cells must be distinct")
        for kind, r, c in landmarks:
            if not 0 <= kind < len(LANDMARKS):
                raise ContractError(f"unknown landmark type {kind}")
            if not (0 <= r < water.shape[0] and 0 <= c < water.shape[1]):
                raise ContractError("landmark outside the map")
            if water[r, c]:
                raise ContractError("landmark placed on water")
        if water[treasure]:
            raise ContractError("treasure placed on water")
        dist = bfs_distances(water, tuple(treasure))
        if np.any((~water) & (dist < 0)):
            raise ContractError("some land cell cannot reach the treasure")
        self.water = water
        self.water.setflags(write=False)
        self.landmarks = tuple((int(k), int(r), int(c)) for k, r, c in landmarks)
        self.treasure = (int(treasure[0]), int(treasure[1]))
        self.distances = dist

    @property
    def shape(self) -> tuple[int, int]:
        return self.water.shape

    @cached_property
    def _padded(self) -> np.ndarray:
        """Static observation channels padded by the crop radius.

        Channel 0 water, 1..6 landmark one-hots, 7 out-of-bounds; the
        agent-position channel is added per observation.
        """
        n, m = self.water.shape
        chans = np.zeros((n, m, OBS_CHANNELS - 1), dtype=np.float64)
        chans[:, :, 0] = self.water
        for kind, r, c in self.landmarks:
            chans[r, c, 1 + kind] = 1.0
        pad = OBS_WINDOW // 2
        out = np.zeros((n + 2 * pad, m + 2 * pad, OBS_CHANNELS - 1))
        out[:, :, -1] = 1.0  # out-of-bounds everywhere, then carve the map
        out[pad:pad + n, pad:pad + m] = chans
        return out


def observe(grid: GridMap, pos: tuple[int, int]) -> np.ndarray:
    """Egocentric crop centered on the agent, agent channel at the middle."""
    r, c = pos
    crop = grid._padded[r:r + OBS_WINDOW, c:c + OBS_WINDOW]
    obs = np.zeros((OBS_WINDOW, OBS_WINDOW, OBS_CHANNELS))
    obs[:, :, :-1] = crop
    obs[OBS_WINDOW // 2, OBS_WINDOW // 2, -1] = 1.0
    return obs


def expert_action(grid: GridMap, pos: tuple[int, int]) -> int:
    """Next move along a shortest water-avoiding path; DIG on the treasure."""
    if pos == grid.treasure:
        return DIG
    here = grid.distances[pos]
    if here < 0:
        raise ContractError("expert asked to act from an unreachable cell")
    for action, (dr, dc) in _DELTAS.items():
        nr, nc = pos[0] + dr, pos[1] + dc
        if 0 <= nr < grid.shape[0] and 0 <= nc < grid.shape[1] \
                and grid.distances[nr, nc] == here - 1:
            return action
    raise ContractError("no distance-decreasing neighbor")  # unreachable


# ---------------------------------------------------------------------------
# dynamics


class NavEnv:
    """One episode: moves until DIG or the step cap."""

    def __init__(self, grid: GridMap, start: tuple[int, int],
                 step_cap: int = STEP_CAP):
        if grid.water[start]:
            raise ContractError("agent cannot start on water")
        self.grid = grid
        self.pos = (int(start[0]), int(start[1]))
        self.step_cap = step_cap
        self.steps = 0
        self.done = False

    def observe(self) -> np.ndarray:
        return observe(self.grid, self.pos)

    def step(self, action: int) -> tuple[float, bool]:
        if self.done:
            raise ContractError("episode is over")
        if not 0 <= action < len(ACTIONS):
            raise ContractError(f"unknown action {action}")
        reward = 0.0
        if action == DIG:
            self.done = True
            if self.pos == self.grid.treasure:
                reward = TREASURE_REWARD
        else:
            dr, dc = _DELTAS[action]
            nr, nc = self.pos[0] + dr, self.pos[1] + dc
            if 0 <= nr < self.grid.shape[0] and 0 <= nc < self.grid.shape[1] \
                    and not self.grid.water[nr, nc]:
                self.pos = (nr, nc)
        self.steps += 1
        if self.steps >= self.step_cap:
            self.done = True
        return reward, self.done


@dataclass
class Rollout:
    observations: list[np.ndarray]
    actions: list[int]
    rewards: list[float]
    total_reward: float  # undiscounted
    dug: bool


def sample_start(grid: GridMap, rng: np.random.Generator) -> tuple[int, int]:
    land = np.argwhere(~grid.water)
    r, c = land[rng.integers(len(land))]
    return (int(r), int(c))


def run_episode(grid: GridMap, start: tuple[int, int], policy,
                step_cap: int = STEP_CAP) -> Rollout:
    """Roll `policy(env) -> action` to termination."""
    env = NavEnv(grid, start, step_cap)
    obs, acts, rews = [], [], []
    while not env.done:
        obs.append(env.observe())
        a = policy(env)
        reward, _ = env.step(a)
        acts.append(a)
        rews.append(reward)
    return Rollout(obs, acts, rews, float(sum(rews)), DIG in acts)


def expert_policy(env: NavEnv) -> int:
    return expert_action(env.grid, env.pos)


# ---------------------------------------------------------------------------
# tasks and instructions

_OFFSET_PHRASES = {
    (0, 0): ("on",),
    (-1, 0): ("above",),
    (1, 0): ("below",),
    (0, -1): ("left", "of"),
    (0, 1): ("right", "of"),
    (-1, -1): ("above", "and", "left", "of"),
    (-1, 1): ("above", "and", "right", "of"),
    (1, -1): ("below", "and", "left", "of"),
    (1, 1): ("below", "and", "right", "of"),
}

_PREFIXES = (("reach", "cell"),
             ("go", "to", "the", "spot"),
             ("the", "treasure", "is"))


def render_instruction(landmark: int, offset: tuple[int, int],
                       template: int) -> tuple[str, ...]:
    return (_PREFIXES[template] + _OFFSET_PHRASES[offset]
            + ("the", LANDMARKS[landmark]))


def parse_instruction(words) -> tuple[int, tuple[int, int]] | None:
    """Inverse of render_instruction; None for anything else."""
    words = tuple(words)
    for prefix in _PREFIXES:
        if words[:len(prefix)] == prefix:
            body = words[len(prefix):]
            break
    else:
        return None
    if len(body) < 2 or body[-2] != "the" or body[-1] not in LANDMARKS:
        return None
    for offset, phrase in _OFFSET_PHRASES.items():
        if body[:-2] == phrase:
            return LANDMARKS.index(body[-1]), offset
    return None


def nav_vocab_tokens() -> list[str]:
    words = {w for p in _PREFIXES for w in p}
    words |= {w for p in _OFFSET_PHRASES.values() for w in p}
    return sorted(words) + list(LANDMARKS)


def nav_vocab() -> Vocab:
    return Vocab(nav_vocab_tokens())


@dataclass(frozen=True)
class NavTask:
    """Landmark type + offset, with one rendered instruction."""
    landmark: int
    offset: tuple[int, int]
    instruction: tuple[str, ...]

    def __post_init__(self):
        if self.offset not in OFFSETS:
            raise ContractError(f"offset {self.offset} outside the 3x3 box")
        if parse_instruction(self.instruction) != (self.landmark, self.offset):
            raise ContractError("instruction does not describe the task")


def generate_task(rng: np.random.Generator) -> NavTask:
    landmark = int(rng.integers(len(LANDMARKS)))
    offset = OFFSETS[rng.integers(len(OFFSETS))]
    instruction = render_instruction(landmark, offset,
                                     int(rng.integers(len(_PREFIXES))))
    return NavTask(landmark, offset, instruction)


def generate_map(rng: np.random.Generator, task: NavTask,
                 size: int = GRID_SIZE, water_p: float = 0.18,
                 budget: int = 1000) -> GridMap:
    """Rejection-sample a map satisfying the task's invariants.

    The target landmark appears exactly once, the treasure sits at
    landmark + offset, 1-3 other landmark types distract, and every land
    cell can reach the treasure.
    """
    for _ in range(budget):
        water = rng.random((size, size)) < water_p
        lr, lc = int(rng.integers(size)), int(rng.integers(size))
        tr, tc = lr + task.offset[0], lc + task.offset[1]
        if not (0 <= tr < size and 0 <= tc < size):
            continue
        water[lr, lc] = False
        water[tr, tc] = False
        dist = bfs_distances(water, (tr, tc))
        if np.any((~water) & (dist < 0)):
            continue
        used = {(lr, lc), (tr, tc)}
        landmarks = [(task.landmark, lr, lc)]
        other_types = [k for k in range(len(LANDMARKS)) if k != task.landmark]
        free = [(int(r), int(c)) for r, c in np.argwhere(~water)
                if (int(r), int(c)) not in used]
        n_extra = min(int(rng.integers(1, 4)), len(free))
        if n_extra == 0:
            continue
        picks = rng.choice(len(free), size=n_extra, replace=False)
        types = rng.choice(len(other_types), size=n_extra, replace=False)
        for p, t in zip(picks, types):
            landmarks.append((other_types[t], *free[p]))
        return GridMap(water, tuple(landmarks), (tr, tc))
    raise GenerationError(f"no valid map for {task} in {budget} attempts")


@dataclass(frozen=True)
class MapSampler:
    """Concept examples for a navigation task: fresh solvable maps."""
    task: NavTask
    size: int = GRID_SIZE
    water_p: float = 0.18
    step_cap: int = STEP_CAP
    map_budget: int = 1000

    def sample(self, rng: np.random.Generator) -> GridMap:
        return generate_map(rng, self.task, self.size, self.water_p,
                            self.map_budget)


# ---------------------------------------------------------------------------
# corpus


@dataclass
class NavCorpusConfig:
    n_lang: int = 100
    n_eval: int = 20
    size: int = GRID_SIZE
    water_p: float = 0.18
    step_cap: int = STEP_CAP
    map_budget: int = 1000


def build_nav_corpus(seed: int, cfg: NavCorpusConfig) -> list[TaskDataset]:
    """Annotated pretraining tasks plus a held-out evaluation set.

    Evaluation tasks are pairwise-distinct (landmark, offset) pairs;
    pretraining tasks may repeat a pair under a different instruction
    style, since the task space is only 6 x 9 concepts.
    """
    combos = len(LANDMARKS) * len(OFFSETS)
    if cfg.n_eval > combos:
        raise ContractError(f"at most {combos} distinct evaluation tasks")
    tasks: list[TaskDataset] = []
    rng = derive_rng(seed, "nav-lang")
    # cover every (landmark, offset) pair first when the budget allows,
    # mirroring the full coverage a paper-scale task count gives for free
    pool = [(lm, off) for lm in range(len(LANDMARKS)) for off in OFFSETS]
    rng.shuffle(pool)
    for i in range(cfg.n_lang):
        if i < min(cfg.n_lang, combos):
            lm, off = pool[i]
            task = NavTask(lm, off, render_instruction(
                lm, off, int(rng.integers(len(_PREFIXES)))))
        else:
            task = generate_task(rng)
        tasks.append(TaskDataset(
            f"nav-lang-{i:04d}",
            MapSampler(task, cfg.size, cfg.water_p, cfg.step_cap,
                       cfg.map_budget),
            LANG, annotation=list(task.instruction), info={"task": task}))

    rng = derive_rng(seed, "nav-eval")
    seen: set[tuple[int, tuple[int, int]]] = set()
    i = 0
    while len(seen) < cfg.n_eval:
        task = generate_task(rng)
        if (task.landmark, task.offset) in seen:
            continue
        seen.add((task.landmark, task.offset))
        tasks.append(TaskDataset(
            f"nav-eval-{i:04d}",
            MapSampler(task, cfg.size, cfg.water_p, cfg.step_cap,
                       cfg.map_budget),
            TEST, annotation=list(task.instruction), info={"task": task}))
        i += 1
    return tasks


# ---------------------------------------------------------------------------
# serialization


def map_to_record(grid: GridMap) -> dict:
    rows = ["".join("~" if w else "." for w in row) for row in grid.water]
    return {"terrain": rows,
            "landmarks": [[LANDMARKS[k], r, c] for k, r, c in grid.landmarks],
            "treasure": list(grid.treasure)}


def map_from_record(rec: dict) -> GridMap:
    water = np.array([[ch == "~" for ch in row] for row in rec["terrain"]])
    landmarks = tuple((LANDMARKS.index(name), r, c)
                      for name, r, c in rec["landmarks"])
    return GridMap(water, landmarks, tuple(rec["treasure"]))


def task_to_record(t: TaskDataset) -> dict:
    sampler: MapSampler = t.examples
    task = sampler.task
    return {"task_id": t.task_id, "split": t.split,
            "landmark": LANDMARKS[task.landmark],
            "offset": list(task.offset),
            "instruction": list(task.instruction),
            "size": sampler.size, "water_p": sampler.water_p,
            "step_cap": sampler.step_cap, "map_budget": sampler.map_budget}


def task_from_record(rec: dict) -> TaskDataset:
    task = NavTask(LANDMARKS.index(rec["landmark"]), tuple(rec["offset"]),
                   tuple(rec["instruction"]))
    sampler = MapSampler(task, rec["size"], rec["water_p"], rec["step_cap"],
                         rec["map_budget"])
    return TaskDataset(rec["task_id"], sampler, rec["split"],
                       annotation=rec["instruction"], info={"task": task})
