"""Scenario runner and report generator.

Reproduces the capture-scenario matrix on one scene: opportunistic
single-user and three-user sessions, the guided sweep, a dense
full-observation reference rig, and a no-context baseline.  Every run is
deterministic for a fixed seed and writes per-frame metrics CSVs plus
final environment-map images.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .envmap import EnvMap, coverage, estimate_envmap, psnr, save_pgm, save_ppm
from .geometry import CameraIntrinsics, EquirectGrid, look_at_pose
from .scene import SceneSpec, default_scene, load_scene, render_frame, render_panorama
from .service import Client, InMemoryTransport
from .store import ContextStore
from .trajectories import ScenarioParams, Trajectory, gen_guided, gen_look_around, gen_multi_user

SCENARIOS = ("single", "multi", "guided", "full", "baseline")

METRICS_CSV_HEADER = "placement,frame,timestamp,psnr_db,coverage,memory_bytes,scenario,seed"

FULL_RIG_POSES = 128
PLACEMENT_CLEARANCE = 2.1  # ring radius 1.5 + arm 0.5 + margin
PLACEMENT_MIN_SEPARATION = 0.3

# report thresholds mirroring the acceptance gates
MULTI_VS_SINGLE_MIN_REL = 0.15
GUIDED_VS_MULTI_MAX_DB_DEFICIT = 0.5
GUIDED_VS_SINGLE_MIN_REL = 0.10
GUIDED_MEMORY_MAX_RATIO = 0.40
BASELINE_POSITIVE_FRACTION = 10.0 / 12.0

__all__ = [
    "ExperimentConfig",
    "PlacementResult",
    "ScenarioResult",
    "sample_placements",
    "run_scenario",
    "run_experiment",
    "compare_report",
    "load_metrics_csv",
]


@dataclass
class ExperimentConfig:
    scene_path: str | None = None
    scenario: str = "all"
    n_users: int = 3
    n_placements: int = 12
    placements: list | None = None  # explicit (x, y) floor positions
    frame_count: int = 150
    map_width: int = 256
    camera_width: int = 160
    camera_height: int = 120
    camera_hfov_deg: float = 69.0
    voxel_size: float = 0.05
    seed: int = 0
    depth_noise_sigma: float = 0.0
    anchor_height: float = 0.3
    out_dir: str = "out"

    def validate(self):
        problems = []
        if self.scenario != "all" and self.scenario not in SCENARIOS:
            problems.append(f"scenario: must be one of {SCENARIOS + ('all',)}, got {self.scenario!r}")
        if self.n_users < 2:
            problems.append(f"n_users: must be >= 2, got {self.n_users}")
        if self.n_placements < 1:
            problems.append(f"n_placements: must be >= 1, got {self.n_placements}")
        if self.frame_count < 2:
            problems.append(f"frame_count: must be >= 2, got {self.frame_count}")
        if self.map_width % 2 or self.map_width <= 0:
            problems.append(f"map_width: must be a positive even number, got {self.map_width}")
        if self.camera_width <= 0 or self.camera_height <= 0:
            problems.append("camera_width/camera_height: must be positive")
        if not (10.0 <= self.camera_hfov_deg <= 170.0):
            problems.append(f"camera_hfov_deg: must be in [10, 170], got {self.camera_hfov_deg}")
        if self.voxel_size <= 0:
            problems.append(f"voxel_size: must be positive, got {self.voxel_size}")
        if self.depth_noise_sigma < 0:
            problems.append(f"depth_noise_sigma: must be >= 0, got {self.depth_noise_sigma}")
        if self.anchor_height <= 0:
            problems.append(f"anchor_height: must be positive, got {self.anchor_height}")
        if problems:
            raise ValueError("invalid experiment config:\n  " + "\n  ".join(problems))

    def scene(self) -> SceneSpec:
        return load_scene(self.scene_path) if self.scene_path else default_scene()

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_hfov(self.camera_width, self.camera_height, self.camera_hfov_deg)

    def grid(self) -> EquirectGrid:
        return EquirectGrid(self.map_width)

    def scenario_list(self) -> tuple[str, ...]:
        return SCENARIOS if self.scenario == "all" else (self.scenario,)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        with open(path, "r", encoding="utf-8") as f:
            cp.read_string(f.read())
        cfg = ExperimentConfig()
        exp = cp["experiment"] if "experiment" in cp else {}
        cam = cp["camera"] if "camera" in cp else {}

        def pick(section, key, cast, default):
            return cast(section[key]) if key in section else default

        placements = None
        if "placements" in exp:
            placements = []
            for chunk in exp["placements"].split(";"):
                chunk = chunk.strip()
                if chunk:
                    x, y = (float(v) for v in chunk.split())
                    placements.append((x, y))
        cfg = replace(
            cfg,
            scene_path=exp.get("scene") or None,
            scenario=pick(exp, "scenario", str, cfg.scenario).strip(),
            n_users=pick(exp, "n_users", int, cfg.n_users),
            n_placements=pick(exp, "n_placements", int, cfg.n_placements),
            placements=placements,
            frame_count=pick(exp, "frame_count", int, cfg.frame_count),
            map_width=pick(exp, "map_width", int, cfg.map_width),
            voxel_size=pick(exp, "voxel_size", float, cfg.voxel_size),
            seed=pick(exp, "seed", int, cfg.seed),
            depth_noise_sigma=pick(exp, "depth_noise", float, cfg.depth_noise_sigma),
            anchor_height=pick(exp, "anchor_height", float, cfg.anchor_height),
            out_dir=pick(exp, "out", str, cfg.out_dir).strip(),
            camera_width=pick(cam, "width", int, cfg.camera_width),
            camera_height=pick(cam, "height", int, cfg.camera_height),
            camera_hfov_deg=pick(cam, "hfov_deg", float, cfg.camera_hfov_deg),
        )
        cfg.validate()
        return cfg

    def to_file_text(self) -> str:
        lines = ["[experiment]"]
        if self.scene_path:
            lines.append(f"scene = {self.scene_path}")
        lines += [
            f"scenario = {self.scenario}",
            f"n_users = {self.n_users}",
            f"n_placements = {self.n_placements}",
            f"frame_count = {self.frame_count}",
            f"map_width = {self.map_width}",
            f"voxel_size = {self.voxel_size:g}",
            f"seed = {self.seed}",
            f"depth_noise = {self.depth_noise_sigma:g}",
            f"anchor_height = {self.anchor_height:g}",
            f"out = {self.out_dir}",
            "",
            "[camera]",
            f"width = {self.camera_width}",
            f"height = {self.camera_height}",
            f"hfov_deg = {self.camera_hfov_deg:g}",
        ]
        return "\n".join(lines) + "\n"


@dataclass
class MetricsRecord:
    placement: int
    frame_index: int
    timestamp: float
    psnr_db: float
    coverage: float
    memory_bytes: int
    scenario: str
    seed: int

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.placement),
                str(self.frame_index),
                repr(float(self.timestamp)),
                repr(float(self.psnr_db)),
                repr(float(self.coverage)),
                str(self.memory_bytes),
                self.scenario,
                str(self.seed),
            ]
        )


@dataclass
class PlacementResult:
    placement: int
    anchor: tuple
    records: list
    estimate: EnvMap
    truth: EnvMap
    final_points: int
    store_bytes: int

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]


@dataclass
class ScenarioResult:
    scenario: str
    seed: int
    placements: list  # of PlacementResult

    def mean_final(self, attr: str) -> float:
        return float(np.mean([getattr(p.final, attr) for p in self.placements]))

    def metrics_csv(self) -> str:
        out = io.StringIO()
        out.write(METRICS_CSV_HEADER + "\n")
        for p in self.placements:
            for r in p.records:
                out.write(r.csv_row() + "\n")
        return out.getvalue()


def sample_placements(scene: SceneSpec, n: int, seed: int, clearance: float = PLACEMENT_CLEARANCE,
                      min_separation: float = PLACEMENT_MIN_SEPARATION) -> list[tuple[float, float]]:
    """Deterministically sample floor positions far enough from walls and
    obstacles that a full user ring (plus arm reach) stays valid."""
    rng = np.random.default_rng([seed, 0x9C])
    lo = scene.room.lo[:2] + clearance
    hi = scene.room.hi[:2] - clearance
    if np.any(lo >= hi):
        raise ValueError("room too small for the placement clearance")
    accepted: list[tuple[float, float]] = []
    attempts = 0
    while len(accepted) < n:
        attempts += 1
        if attempts > 20000:
            raise ValueError("could not sample enough placements; relax the constraints")
        x, y = rng.uniform(lo, hi)
        ok = True
        for box, _ in scene.obstacles:
            dx = max(box.lo[0] - x, 0.0, x - box.hi[0])
            dy = max(box.lo[1] - y, 0.0, y - box.hi[1])
            if math.hypot(dx, dy) < clearance:
                ok = False
                break
        if ok and any(math.hypot(x - ax, y - ay) < min_separation for ax, ay in accepted):
            ok = False
        if ok:
            accepted.append((float(x), float(y)))
    return accepted


def _fibonacci_directions(n: int) -> np.ndarray:
    k = np.arange(n)
    z = 1.0 - 2.0 * (k + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    az = golden * k
    return np.stack([r * np.cos(az), r * np.sin(az), z], axis=1)


def _scenario_params(config: ExperimentConfig, scene: SceneSpec, placement_idx: int,
                     anchor: np.ndarray) -> ScenarioParams:
    rng = np.random.default_rng([config.seed, placement_idx, 0x5E])
    azimuth = rng.uniform(0.0, 2.0 * math.pi)
    user_xy = (anchor[0] + 1.5 * math.cos(azimuth), anchor[1] + 1.5 * math.sin(azimuth))
    return ScenarioParams(
        anchor=tuple(anchor),
        user_xy=user_xy,
        frame_count=config.frame_count,
        seed=config.seed * 1000 + placement_idx,
        room_lo=tuple(scene.room.lo),
        room_hi=tuple(scene.room.hi),
    )


def _noise_rng(config: ExperimentConfig, placement_idx: int, user_id: int):
    if config.depth_noise_sigma <= 0:
        return None
    return np.random.default_rng([config.seed, placement_idx, user_id, 0xD0])


def _run_placement(config: ExperimentConfig, scene: SceneSpec, scenario: str,
                   placement_idx: int, anchor_xy: tuple) -> PlacementResult:
    grid = config.grid()
    intr = config.intrinsics()
    anchor = np.array([anchor_xy[0], anchor_xy[1], config.anchor_height])
    truth = render_panorama(scene, anchor, grid)
    params = _scenario_params(config, scene, placement_idx, anchor)

    # (timestamp, user_id, pose) per capture step; a step may hold several users
    if scenario in ("single", "baseline"):
        trajectories = [gen_look_around(params)]
    elif scenario == "guided":
        trajectories = [gen_guided(params)]
    elif scenario == "multi":
        trajectories = gen_multi_user(params, config.n_users)
    elif scenario == "full":
        dirs = _fibonacci_directions(FULL_RIG_POSES)
        frames = [(i / params.fps, look_at_pose(anchor, anchor + d)) for i, d in enumerate(dirs)]
        trajectories = [Trajectory(frames=frames, user_id=1)]
    else:
        raise ValueError(f"unknown scenario {scenario!r}")

    store = ContextStore(voxel_size=config.voxel_size)
    transport = InMemoryTransport(store) if scenario == "multi" else None
    clients = []
    if transport is not None:
        for traj in trajectories:
            client = Client(transport.connect())
            client.hello(traj.user_id)
            clients.append(client)

    noise_rngs = {traj.user_id: _noise_rng(config, placement_idx, traj.user_id) for traj in trajectories}

    records: list[MetricsRecord] = []
    steps = len(trajectories[0])
    estimate = None
    for step in range(steps):
        if scenario == "baseline":
            store = ContextStore(voxel_size=config.voxel_size)
        for idx, traj in enumerate(trajectories):
            timestamp, pose = traj.frames[step]
            frame = render_frame(
                scene, pose, intr, timestamp=timestamp, user_id=traj.user_id,
                depth_noise_sigma=config.depth_noise_sigma, rng=noise_rngs[traj.user_id],
            )
            if clients:
                clients[idx].publish_frame(frame)
            else:
                store.ingest_observation(frame)
        _, cloud = store.shared_cloud()
        estimate = estimate_envmap(cloud, anchor, grid)
        records.append(
            MetricsRecord(
                placement=placement_idx,
                frame_index=step,
                timestamp=trajectories[0].frames[step][0],
                psnr_db=psnr(estimate, truth),
                coverage=coverage(estimate),
                memory_bytes=store.ingested_bytes,
                scenario=scenario,
                seed=config.seed,
            )
        )
    _, final_cloud = store.shared_cloud()
    return PlacementResult(
        placement=placement_idx,
        anchor=tuple(anchor),
        records=records,
        estimate=estimate,
        truth=truth,
        final_points=len(final_cloud),
        store_bytes=store.memory_usage(),
    )


def run_scenario(config: ExperimentConfig, scenario: str | None = None,
                 write_artifacts: bool = True) -> ScenarioResult:
    """Run one scenario over every placement (fresh store each) and,
    unless told otherwise, write its metrics CSV and final map images."""
    config.validate()
    scenario = scenario or config.scenario
    if scenario not in SCENARIOS:
        raise ValueError(f"run_scenario needs a concrete scenario, got {scenario!r}")
    scene = config.scene()
    if config.placements is not None:
        placements = [tuple(p) for p in config.placements]
    else:
        placements = sample_placements(scene, config.n_placements, config.seed)
    results = [
        _run_placement(config, scene, scenario, i, xy) for i, xy in enumerate(placements)
    ]
    result = ScenarioResult(scenario=scenario, seed=config.seed, placements=results)
    if write_artifacts:
        write_scenario_artifacts(config, result)
    return result


def write_scenario_artifacts(config: ExperimentConfig, result: ScenarioResult):
    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, f"{result.scenario}.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(result.metrics_csv())
    lines = [
        "placement anchor_x anchor_y anchor_z final_psnr_db final_coverage "
        "ingested_bytes store_bytes points"
    ]
    for p in result.placements:
        save_ppm(os.path.join(config.out_dir, f"{result.scenario}_p{p.placement:02d}.ppm"), p.estimate)
        save_pgm(os.path.join(config.out_dir, f"{result.scenario}_p{p.placement:02d}_mask.pgm"), p.estimate)
        truth_path = os.path.join(config.out_dir, f"truth_p{p.placement:02d}.ppm")
        save_ppm(truth_path, p.truth)
        lines.append(
            "%d %.6f %.6f %.6f %s %s %d %d %d"
            % (
                p.placement, p.anchor[0], p.anchor[1], p.anchor[2],
                repr(float(p.final.psnr_db)), repr(float(p.final.coverage)),
                p.final.memory_bytes, p.store_bytes, p.final_points,
            )
        )
    with open(os.path.join(config.out_dir, f"{result.scenario}_summary.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig, write_artifacts: bool = True) -> dict[str, ScenarioResult]:
    """Run every scenario the config names; returns scenario -> result."""
    return {
        name: run_scenario(config, name, write_artifacts=write_artifacts)
        for name in config.scenario_list()
    }


# -- reporting ----------------------------------------------------------------------


def load_metrics_csv(path) -> list[MetricsRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != METRICS_CSV_HEADER.split(","):
            raise ValueError(f"{path}: unexpected metrics CSV header {reader.fieldnames}")
        for row in reader:
            records.append(
                MetricsRecord(
                    placement=int(row["placement"]),
                    frame_index=int(row["frame"]),
                    timestamp=float(row["timestamp"]),
                    psnr_db=float(row["psnr_db"]),
                    coverage=float(row["coverage"]),
                    memory_bytes=int(row["memory_bytes"]),
                    scenario=row["scenario"],
                    seed=int(row["seed"]),
                )
            )
    return records


@dataclass
class ScenarioStats:
    scenario: str
    finals: dict  # placement -> MetricsRecord

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.finals.values()]))

    @property
    def mean_coverage(self) -> float:
        return float(np.mean([r.coverage for r in self.finals.values()]))

    @property
    def mean_memory(self) -> float:
        return float(np.mean([r.memory_bytes for r in self.finals.values()]))


def _scenario_stats(records: list[MetricsRecord]) -> dict[str, ScenarioStats]:
    by_scenario: dict[str, dict[int, MetricsRecord]] = {}
    for r in records:
        finals = by_scenario.setdefault(r.scenario, {})
        prev = finals.get(r.placement)
        if prev is None or r.frame_index > prev.frame_index:
            finals[r.placement] = r
    return {name: ScenarioStats(name, finals) for name, finals in by_scenario.items()}


def compare_report(csv_paths: list) -> tuple[str, str]:
    """Summarize >= 2 scenario CSVs: per-scenario means, pairwise relative
    PSNR/memory differences, and pass/fail flags against the report
    thresholds.  Returns (plain text, csv text)."""
    if len(csv_paths) < 2:
        raise ValueError("compare_report needs at least two scenario CSVs")
    records: list[MetricsRecord] = []
    for path in csv_paths:
        records.extend(load_metrics_csv(path))
    stats = _scenario_stats(records)
    placement_sets = {name: frozenset(s.finals.keys()) for name, s in stats.items()}
    if len(set(placement_sets.values())) != 1:
        raise ValueError(f"scenario CSVs cover mismatched placement sets: {placement_sets}")
    placements = sorted(next(iter(placement_sets.values())))

    text = io.StringIO()
    text.write("scenario          mean final PSNR   mean coverage   mean memory bytes\n")
    for name in sorted(stats):
        s = stats[name]
        text.write(f"{name:<16}  {s.mean_psnr:>14.3f}   {s.mean_coverage:>13.4f}   {s.mean_memory:>17.0f}\n")

    text.write("\npairwise (row vs column): relative PSNR difference\n")
    names = sorted(stats)
    for a in names:
        for b in names:
            if a < b:
                pa, pb = stats[a].mean_psnr, stats[b].mean_psnr
                rel = (pa - pb) / pb if pb else math.inf
                text.write(f"  {a} vs {b}: {rel * 100:+.1f}% PSNR, memory ratio {stats[a].mean_memory / max(stats[b].mean_memory, 1):.3f}\n")

    flags: list[tuple[str, bool, str]] = []

    def add_flag(name: str, ok: bool, detail: str):
        flags.append((name, ok, detail))

    if "single" in stats and "multi" in stats:
        ps, pm = stats["single"].mean_psnr, stats["multi"].mean_psnr
        rel = (pm - ps) / ps
        add_flag("multi_vs_single_rel_gain>=15%", rel >= MULTI_VS_SINGLE_MIN_REL, f"{rel * 100:.1f}%")
    if "guided" in stats and "multi" in stats:
        pg, pm = stats["guided"].mean_psnr, stats["multi"].mean_psnr
        add_flag("guided>=multi-0.5dB", pg >= pm - GUIDED_VS_MULTI_MAX_DB_DEFICIT, f"{pg - pm:+.3f} dB")
        ratios = [
            stats["guided"].finals[p].memory_bytes / stats["multi"].finals[p].memory_bytes
            for p in placements
        ]
        add_flag(
            "guided_memory<=40%_of_multi",
            all(r <= GUIDED_MEMORY_MAX_RATIO for r in ratios),
            f"max ratio {max(ratios):.3f}",
        )
    if "guided" in stats and "single" in stats:
        pg, ps = stats["guided"].mean_psnr, stats["single"].mean_psnr
        rel = (pg - ps) / ps
        add_flag("guided_vs_single_rel_gain>=10%", rel > GUIDED_VS_SINGLE_MIN_REL, f"{rel * 100:.1f}%")
    if "single" in stats and "baseline" in stats:
        gaps = [
            stats["single"].finals[p].psnr_db - stats["baseline"].finals[p].psnr_db
            for p in placements
        ]
        needed = math.ceil(BASELINE_POSITIVE_FRACTION * len(placements))
        mean_ok = stats["single"].mean_psnr >= stats["baseline"].mean_psnr
        add_flag(
            "single>=baseline",
            mean_ok and sum(g > 0 for g in gaps) >= needed,
            f"mean gap {float(np.mean(gaps)):+.3f} dB, positive on {sum(g > 0 for g in gaps)}/{len(gaps)}",
        )
    if "full" in stats and "guided" in stats:
        deficits = [
            stats["full"].finals[p].psnr_db - stats["guided"].finals[p].psnr_db for p in placements
        ]
        add_flag("full>=guided_everywhere", all(d >= 0 for d in deficits), f"min margin {min(deficits):+.3f} dB")

    text.write("\nflags:\n")
    for name, ok, detail in flags:
        text.write(f"  [{'PASS' if ok else 'FAIL'}] {name} ({detail})\n")

    csv_out = io.StringIO()
    csv_out.write("scenario,mean_final_psnr_db,mean_final_coverage,mean_final_memory_bytes\n")
    for name in sorted(stats):
        s = stats[name]
        csv_out.write(f"{name},{repr(s.mean_psnr)},{repr(s.mean_coverage)},{repr(s.mean_memory)}\n")
    for name, ok, detail in flags:
        csv_out.write(f"flag:{name},{'PASS' if ok else 'FAIL'},{detail.replace(',', ';')},\n")
    return text.getvalue(), csv_out.getvalue()
