"""Procedural piecewise-constant terrain built from typed artifacts."""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .config import TerrainParams

GAP_DEPTH = float("-inf")

FLAT = "flat"
GAP = "gap"
HURDLE = "hurdle"
STAIRS = "stairs"
STEP = "step"

KINDS = (FLAT, GAP, HURDLE, STAIRS, STEP)
OBSTACLE_KINDS = (GAP, HURDLE, STAIRS, STEP)


class TerrainError(ValueError):
    pass


def _interp(lo_hi: tuple[float, float], difficulty: float) -> float:
    lo, hi = lo_hi
    return lo + (hi - lo) * difficulty


@dataclass
class ArtifactSpec:
    kind: str
    start_x: float
    length: float
    difficulty: float
    params: dict = field(default_factory=dict)

    @property
    def end_x(self) -> float:
        return self.start_x + self.length


@dataclass
class TerrainProfile:
    artifacts: list[ArtifactSpec]
    total_length: float
    # Flattened piecewise-constant representation: height is heights[i] on
    # [breaks[i], breaks[i+1]); breaks[0] == 0, breaks[-1] == total_length.
    breaks: list[float] = field(default_factory=list)
    heights: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.breaks:
            self._flatten()

    def _flatten(self):
        starts: list[float] = []
        hs: list[float] = []
        for art in self.artifacts:
            for off, h in _segments(art):
                starts.append(art.start_x + off)
                hs.append(h)
        if not starts or abs(starts[0]) > 1e-9:
            raise TerrainError("terrain must start at x = 0")
        if any(b > a + 1e-9 for a, b in zip(starts[1:], starts[:-1])):
            raise TerrainError("artifact spans must be ordered and contiguous")
        self.breaks = starts + [self.total_length]
        self.heights = hs

    def height_at(self, x: float) -> float:
        if x < -1e-9 or x > self.total_length + 1e-9:
            raise TerrainError(f"x={x} outside terrain [0, {self.total_length}]")
        i = bisect_right(self.breaks, x) - 1
        i = min(max(i, 0), len(self.heights) - 1)
        return self.heights[i]

    def height_clamped(self, x: float) -> float:
        return self.height_at(min(max(x, 0.0), self.total_length))

    def gap_floor_reference(self, x: float) -> float:
        """Ground level just before the gap containing x (the takeoff rim)."""
        i = bisect_right(self.breaks, x) - 1
        i = min(max(i, 0), len(self.heights) - 1)
        while i >= 0 and self.heights[i] == GAP_DEPTH:
            i -= 1
        return self.heights[i] if i >= 0 else 0.0

    def obstacles(self) -> list[ArtifactSpec]:
        return [a for a in self.artifacts if a.kind != FLAT]

    def next_obstacle(self, x: float) -> ArtifactSpec | None:
        for art in self.artifacts:
            if art.kind != FLAT and art.start_x > x:
                return art
        return None

    def obstacle_near(self, x: float, margin: float = 0.9) -> ArtifactSpec | None:
        """Obstacle whose span contains x or that starts within margin ahead."""
        for art in self.artifacts:
            if art.kind == FLAT:
                continue
            if art.start_x - margin <= x <= art.end_x + 2.0 * margin:
                return art
        return None


def _segments(art: ArtifactSpec) -> list[tuple[float, float]]:
    """(offset, height) pairs covering the artifact span, offsets ascending."""
    if art.kind == FLAT:
        return [(0.0, art.params.get("height", 0.0))]
    if art.kind == GAP:
        return [(0.0, GAP_DEPTH)]
    if art.kind == HURDLE:
        return [(0.0, art.params["hurdle_height"])]
    if art.kind == STEP:
        return [(0.0, art.params["step_height"])]
    if art.kind == STAIRS:
        rise = art.params["stair_rise"]
        runs = art.params["stair_runs"]
        n = (len(runs) + 1) // 2
        levels = list(range(1, n + 1)) + list(range(n - 1, 0, -1))
        segs = []
        off = 0.0
        for lvl, run in zip(levels, runs):
            segs.append((off, lvl * rise))
            off += run
        return segs
    raise TerrainError(f"unknown artifact kind {art.kind!r}")


def terrain_height(profile: TerrainProfile, x: float) -> float:
    """Ground height at x; -inf inside gaps; error outside the profile."""
    return profile.height_at(x)


def make_obstacle(
    kind: str, start_x: float, difficulty: float, rng: np.random.Generator,
    params: TerrainParams,
) -> ArtifactSpec:
    if kind == GAP:
        length = _interp(params.gap_length, difficulty)
        return ArtifactSpec(kind, start_x, length, difficulty,
                            {"gap_length": length})
    if kind == HURDLE:
        height = _interp(params.hurdle_height, difficulty)
        return ArtifactSpec(kind, start_x, params.hurdle_width, difficulty,
                            {"hurdle_height": height})
    if kind == STEP:
        height = _interp(params.step_height, difficulty)
        return ArtifactSpec(kind, start_x, params.step_length, difficulty,
                            {"step_height": height,
                             "step_length": params.step_length})
    if kind == STAIRS:
        rise = _interp(params.stair_rise, difficulty)
        n = params.stair_steps
        runs = [float(rng.uniform(*params.flat_box)) for _ in range(2 * n - 1)]
        return ArtifactSpec(kind, start_x, sum(runs), difficulty,
                            {"stair_rise": rise, "stair_runs": runs})
    raise TerrainError(f"cannot build obstacle of kind {kind!r}")


def _flat_run(rng: np.random.Generator, minimum: float,
              params: TerrainParams) -> float:
    """Stack flat boxes of U(flat_box) length until the run reaches minimum."""
    run = 0.0
    while run < minimum:
        run += float(rng.uniform(*params.flat_box))
    return run


def generate_sequence(
    rng: np.random.Generator,
    n_artifacts: int,
    kinds,
    difficulty: float,
    params: TerrainParams | None = None,
) -> TerrainProfile:
    """Randomized obstacle course: typed artifacts joined by flat runs.

    No two consecutive obstacles share a kind and each obstacle is preceded
    by at least `min_flat_before` of flat ground.
    """
    params = params or TerrainParams()
    kinds = sorted(set(kinds))
    if n_artifacts < 1:
        raise TerrainError("n_artifacts must be >= 1")
    if not kinds:
        raise TerrainError("kinds must be non-empty")
    if any(k not in OBSTACLE_KINDS for k in kinds):
        raise TerrainError(f"kinds must be drawn from {OBSTACLE_KINDS}")
    if len(kinds) == 1 and n_artifacts > 1:
        raise TerrainError(
            "cannot place multiple artifacts without repeating a kind; "
            "provide at least two kinds or use generate_uniform_sequence"
        )
    artifacts: list[ArtifactSpec] = []
    x = 0.0
    prev_kind = None
    for i in range(n_artifacts):
        minimum = params.min_flat_before + (params.lead_in if i == 0 else 0.0)
        run = _flat_run(rng, minimum, params)
        artifacts.append(ArtifactSpec(FLAT, x, run, difficulty))
        x += run
        choices = [k for k in kinds if k != prev_kind]
        kind = choices[int(rng.integers(len(choices)))]
        obstacle = make_obstacle(kind, x, difficulty, rng, params)
        artifacts.append(obstacle)
        x = obstacle.end_x
        prev_kind = kind
    artifacts.append(ArtifactSpec(FLAT, x, params.tail, difficulty))
    x += params.tail
    return TerrainProfile(artifacts, x)


def generate_uniform_sequence(
    rng: np.random.Generator,
    n_artifacts: int,
    kind: str,
    difficulty: float,
    params: TerrainParams | None = None,
) -> TerrainProfile:
    """Single-kind course used for per-kind training and data collection."""
    params = params or TerrainParams()
    if kind == FLAT:
        length = params.lead_in + n_artifacts * 1.5 + params.tail
        return TerrainProfile([ArtifactSpec(FLAT, 0.0, length, difficulty)],
                              length)
    artifacts: list[ArtifactSpec] = []
    x = 0.0
    for i in range(n_artifacts):
        minimum = params.min_flat_before + (params.lead_in if i == 0 else 0.0)
        run = _flat_run(rng, minimum, params)
        artifacts.append(ArtifactSpec(FLAT, x, run, difficulty))
        x += run
        obstacle = make_obstacle(kind, x, difficulty, rng, params)
        artifacts.append(obstacle)
        x = obstacle.end_x
    artifacts.append(ArtifactSpec(FLAT, x, params.tail, difficulty))
    x += params.tail
    return TerrainProfile(artifacts, x)


def profile_to_json(profile: TerrainProfile) -> str:
    doc = {
        "total_length": profile.total_length,
        "artifacts": [
            {
                "kind": a.kind,
                "start_x": a.start_x,
                "length": a.length,
                "difficulty": a.difficulty,
                "params": a.params,
            }
            for a in profile.artifacts
        ],
    }
    return json.dumps(doc, sort_keys=True)


def profile_from_json(text: str) -> TerrainProfile:
    doc = json.loads(text)
    artifacts = [
        ArtifactSpec(a["kind"], a["start_x"], a["length"], a["difficulty"],
                     a.get("params", {}))
        for a in doc["artifacts"]
    ]
    return TerrainProfile(artifacts, doc["total_length"])
