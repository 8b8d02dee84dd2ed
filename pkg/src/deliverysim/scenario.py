"""Scenario files: one TOML document configures a whole run.

Every module's parameters live in their own table with conservative
defaults, so a minimal scenario is just a `[world]` and a duration. Parsing
is strict: unknown keys and malformed values are reported before the
simulation starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .control import Mission, PidController
from .geom import Extrinsics3D, Pose2D
from .mcl import SensorModelParams
from .perception import DEFAULT_WHITELIST, CameraIntrinsics
from .sensors import GpsParams, ImuParams, LidarParams
from .slam2d import ScanMatchOptions, SlamConfig
from .vehicle import VehicleParams
from .world import World2D, WorldFormatError, world_from_config


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be used."""


@dataclass(frozen=True)
class RunSettings:
    duration: float = 30.0
    dt: float = 0.02
    seed: int = 0
    start: Pose2D = field(default_factory=Pose2D)
    localization: str = "ekf"           # ekf | mcl | slam
    control_pose: str = "ekf"           # truth | ekf | mcl | slam


@dataclass(frozen=True)
class LidarSettings:
    params: LidarParams
    rate: float = 10.0
    mode: str = "planar"                # planar | cloud
    scan_bins: int = 360
    z_band: tuple[float, float] = (-0.2, 0.2)


@dataclass(frozen=True)
class OdomSettings:
    sigma_v: float = 0.05
    sigma_omega: float = 0.05


@dataclass(frozen=True)
class ImuSettings:
    params: ImuParams
    rate: float = 50.0


@dataclass(frozen=True)
class EkfSettings:
    q_diag: tuple[float, ...] = (1e-3, 1e-3, 1e-3, 0.5, 1.0)
    gate_chi2: float | None = None      # None: chi2(0.99, dof) per kind
    use_imu_yaw: bool = False
    init_cov_diag: tuple[float, ...] = (0.01, 0.01, 0.01, 0.04, 0.04)


@dataclass(frozen=True)
class MclSettings:
    n_min: int = 250
    n_max: int = 2000
    n_init: int = 1000
    alphas: tuple[float, float, float, float] = (0.2, 0.2, 0.1, 0.1)
    sensor: SensorModelParams = field(default_factory=SensorModelParams)
    init: str = "pose"                  # pose | uniform | gps
    init_std: tuple[float, float, float] = (0.3, 0.3, 0.2)
    resample: bool = True
    update_min_d: float = 0.2           # motion gate before a filter update
    update_min_a: float = 0.2
    recovery_alpha_slow: float = 0.0    # augmented-MCL injection; zeros = off
    recovery_alpha_fast: float = 0.0


@dataclass(frozen=True)
class ControlSettings:
    speed_pid: PidController = field(default_factory=lambda: PidController(
        kp=1.2, ki=0.3, kd=0.02, i_min=-1.0, i_max=1.0))
    steer_pid: PidController = field(default_factory=lambda: PidController(
        kp=2.0, ki=0.1, kd=0.05, i_min=-1.0, i_max=1.0))


@dataclass(frozen=True)
class SafetySettings:
    enabled: bool = True
    stop_dist: float = 2.0
    corridor_halfwidth: float = 0.6


@dataclass(frozen=True)
class ActorSettings:
    class_name: str
    start: tuple[float, float]
    velocity: tuple[float, float]
    t_start: float = 0.0
    t_end: float = math.inf

    def position_at(self, t: float) -> tuple[float, float] | None:
        if not self.t_start <= t <= self.t_end:
            return None
        dt = t - self.t_start
        return (self.start[0] + self.velocity[0] * dt,
                self.start[1] + self.velocity[1] * dt)


@dataclass(frozen=True)
class PerceptionSettings:
    min_conf: float = 0.25
    whitelist: frozenset[str] = DEFAULT_WHITELIST
    detections_file: str | None = None
    camera: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(
        fx=600.0, fy=600.0, cx=320.0, cy=240.0))
    cam_extrinsics: Extrinsics3D = field(default_factory=Extrinsics3D)


@dataclass(frozen=True)
class TeleopSettings:
    token: str = "operator"
    rate: float = 10.0
    watchdog_timeout: float = 0.5
    v_max: float = 1.0
    w_max: float = 1.0


@dataclass(frozen=True)
class Scenario:
    name: str
    run: RunSettings
    world: World2D
    vehicle: VehicleParams
    lidar: LidarSettings
    imu: ImuSettings
    gps: GpsParams
    gps_rate: float
    odom: OdomSettings
    ekf: EkfSettings
    mcl: MclSettings
    slam: SlamConfig
    control: ControlSettings
    mission: Mission | None
    safety: SafetySettings
    actors: tuple[ActorSettings, ...]
    perception: PerceptionSettings
    teleop: TeleopSettings
    map_file: str | None


def _table(doc: dict, key: str, allowed: set[str]) -> dict:
    t = doc.get(key, {})
    if not isinstance(t, dict):
        raise ScenarioError(f"[{key}] must be a table")
    unknown = set(t) - allowed
    if unknown:
        raise ScenarioError(f"[{key}] has unknown keys: {sorted(unknown)}")
    return t


def _num(t: dict, key: str, default, where: str):
    v = t.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _vec(t: dict, key: str, default, n: int, where: str) -> tuple:
    v = t.get(key, default)
    if not isinstance(v, (list, tuple)) or len(v) != n \
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ScenarioError(f"{where}.{key}: expected {n} numbers, got {v!r}")
    return tuple(float(x) for x in v)


def _pid(values: tuple, limits: tuple[float, float] = (-1.0, 1.0)) -> PidController:
    kp, ki, kd = values
    return PidController(kp=kp, ki=ki, kd=kd, out_min=limits[0], out_max=limits[1],
                         i_min=limits[0], i_max=limits[1])


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ScenarioError(f"scenario parse error: {e}") from e

    known_sections = {"name", "run", "world", "vehicle", "sensors", "ekf", "mcl",
                      "slam", "control", "mission", "safety", "actors",
                      "perception", "teleop", "map"}
    unknown = set(doc) - known_sections
    if unknown:
        raise ScenarioError(f"unknown top-level sections: {sorted(unknown)}")

    run_t = _table(doc, "run", {"duration", "dt", "seed", "start", "localization",
                                "control_pose"})
    duration = _num(run_t, "duration", 30.0, "run")
    dt = _num(run_t, "dt", 0.02, "run")
    if dt <= 0:
        raise ScenarioError(f"run.dt must be positive, got {dt}")
    if duration < 0:
        raise ScenarioError(f"run.duration must be non-negative, got {duration}")
    seed = run_t.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError(f"run.seed must be an integer, got {seed!r}")
    start = Pose2D(*_vec(run_t, "start", (0.0, 0.0, 0.0), 3, "run"))
    localization = run_t.get("localization", "ekf")
    control_pose = run_t.get("control_pose", "ekf")
    for field_name, value in (("localization", localization),
                              ("control_pose", control_pose)):
        if value not in ("truth", "ekf", "mcl", "slam"):
            raise ScenarioError(f"run.{field_name}: unknown source {value!r}")
    if localization == "truth":
        raise ScenarioError("run.localization cannot be 'truth'")
    run = RunSettings(duration=duration, dt=dt, seed=seed, start=start,
                      localization=localization, control_pose=control_pose)

    try:
        world = world_from_config(_table(doc, "world", {"rect", "segment", "glass"}))
    except WorldFormatError as e:
        raise ScenarioError(str(e)) from e

    veh_t = _table(doc, "vehicle", {"wheelbase", "max_speed", "max_steer",
                                    "speed_tau", "steer_tau", "ticks_per_rev",
                                    "wheel_radius"})
    try:
        vehicle = VehicleParams(
            wheelbase=_num(veh_t, "wheelbase", 1.0, "vehicle"),
            max_speed=_num(veh_t, "max_speed", 2.0, "vehicle"),
            max_steer=_num(veh_t, "max_steer", 0.95, "vehicle"),
            speed_tau=_num(veh_t, "speed_tau", 0.3, "vehicle"),
            steer_tau=_num(veh_t, "steer_tau", 0.15, "vehicle"),
            ticks_per_rev=int(_num(veh_t, "ticks_per_rev", 1024, "vehicle")),
            wheel_radius=_num(veh_t, "wheel_radius", 0.15, "vehicle"),
        )
    except ValueError as e:
        raise ScenarioError(f"vehicle: {e}") from e

    sensors_t = _table(doc, "sensors", {"lidar", "imu", "gps", "odom"})
    lidar_t = _table(sensors_t, "lidar", {"mode", "rate", "rings", "beams",
                                          "range_max", "v_fov_deg", "mount_height",
                                          "noise_sigma", "z_band", "scan_bins"})
    mode = lidar_t.get("mode", "planar")
    if mode not in ("planar", "cloud"):
        raise ScenarioError(f"sensors.lidar.mode: expected planar|cloud, got {mode!r}")
    lidar_params = LidarParams(
        range_max=_num(lidar_t, "range_max", 120.0, "sensors.lidar"),
        v_fov=math.radians(_num(lidar_t, "v_fov_deg", 45.0, "sensors.lidar")),
        rings=int(_num(lidar_t, "rings", 32, "sensors.lidar")),
        beams_per_ring=int(_num(lidar_t, "beams", 360, "sensors.lidar")),
        mount_height=_num(lidar_t, "mount_height", 0.3, "sensors.lidar"),
        noise_sigma=_num(lidar_t, "noise_sigma", 0.02, "sensors.lidar"),
    )
    lidar = LidarSettings(
        params=lidar_params,
        rate=_num(lidar_t, "rate", 10.0, "sensors.lidar"),
        mode=mode,
        scan_bins=int(_num(lidar_t, "scan_bins", 360, "sensors.lidar")),
        z_band=_vec(lidar_t, "z_band", (-0.2, 0.2), 2, "sensors.lidar"),
    )

    imu_t = _table(sensors_t, "imu", {"rate", "gyro_sigma", "bias_walk_sigma",
                                      "accel_sigma"})
    imu = ImuSettings(
        params=ImuParams(
            gyro_sigma=_num(imu_t, "gyro_sigma", 0.005, "sensors.imu"),
            bias_walk_sigma=_num(imu_t, "bias_walk_sigma", 1e-4, "sensors.imu"),
            accel_sigma=_num(imu_t, "accel_sigma", 0.02, "sensors.imu"),
        ),
        rate=_num(imu_t, "rate", 50.0, "sensors.imu"),
    )

    gps_t = _table(sensors_t, "gps", {"rate", "sigma", "dropout_prob",
                                      "origin_lat", "origin_lon"})
    gps = GpsParams(
        sigma=_num(gps_t, "sigma", 0.05, "sensors.gps"),
        dropout_prob=_num(gps_t, "dropout_prob", 0.0, "sensors.gps"),
        rate=_num(gps_t, "rate", 5.0, "sensors.gps"),
        origin_lat=_num(gps_t, "origin_lat", 48.3, "sensors.gps"),
        origin_lon=_num(gps_t, "origin_lon", 14.3, "sensors.gps"),
    )

    odom_t = _table(sensors_t, "odom", {"sigma_v", "sigma_omega"})
    odom = OdomSettings(
        sigma_v=_num(odom_t, "sigma_v", 0.05, "sensors.odom"),
        sigma_omega=_num(odom_t, "sigma_omega", 0.05, "sensors.odom"),
    )

    ekf_t = _table(doc, "ekf", {"q_diag", "gate_chi2", "use_imu_yaw",
                                "init_cov_diag"})
    gate = ekf_t.get("gate_chi2")
    ekf = EkfSettings(
        q_diag=_vec(ekf_t, "q_diag", (1e-3, 1e-3, 1e-3, 0.5, 1.0), 5, "ekf"),
        gate_chi2=None if gate is None else float(gate),
        use_imu_yaw=bool(ekf_t.get("use_imu_yaw", False)),
        init_cov_diag=_vec(ekf_t, "init_cov_diag",
                           (0.01, 0.01, 0.01, 0.04, 0.04), 5, "ekf"),
    )

    mcl_t = _table(doc, "mcl", {"n_min", "n_max", "n_init", "alphas", "sigma_hit",
                                "z_hit", "z_rand", "max_beams", "init", "init_std",
                                "resample", "update_min_d", "update_min_a",
                                "recovery_alpha_slow", "recovery_alpha_fast"})
    init_mode = mcl_t.get("init", "pose")
    if init_mode not in ("pose", "uniform", "gps"):
        raise ScenarioError(f"mcl.init: expected pose|uniform|gps, got {init_mode!r}")
    try:
        mcl = MclSettings(
            n_min=int(_num(mcl_t, "n_min", 250, "mcl")),
            n_max=int(_num(mcl_t, "n_max", 2000, "mcl")),
            n_init=int(_num(mcl_t, "n_init", 1000, "mcl")),
            alphas=_vec(mcl_t, "alphas", (0.2, 0.2, 0.1, 0.1), 4, "mcl"),
            sensor=SensorModelParams(
                sigma_hit=_num(mcl_t, "sigma_hit", 0.2, "mcl"),
                z_hit=_num(mcl_t, "z_hit", 0.9, "mcl"),
                z_rand=_num(mcl_t, "z_rand", 0.1, "mcl"),
                max_beams=int(_num(mcl_t, "max_beams", 60, "mcl")),
            ),
            init=init_mode,
            init_std=_vec(mcl_t, "init_std", (0.3, 0.3, 0.2), 3, "mcl"),
            resample=bool(mcl_t.get("resample", True)),
            update_min_d=_num(mcl_t, "update_min_d", 0.2, "mcl"),
            update_min_a=_num(mcl_t, "update_min_a", 0.2, "mcl"),
            recovery_alpha_slow=_num(mcl_t, "recovery_alpha_slow", 0.0, "mcl"),
            recovery_alpha_fast=_num(mcl_t, "recovery_alpha_fast", 0.0, "mcl"),
        )
    except ValueError as e:
        raise ScenarioError(f"mcl: {e}") from e

    slam_t = _table(doc, "slam", {"resolution", "extent", "n_levels", "l_occ",
                                  "l_free", "update_trans", "update_rot",
                                  "divergence_residual", "max_iterations"})
    slam = SlamConfig(
        resolution=_num(slam_t, "resolution", 0.05, "slam"),
        extent=_vec(slam_t, "extent", (-15.0, -15.0, 15.0, 15.0), 4, "slam"),
        n_levels=int(_num(slam_t, "n_levels", 3, "slam")),
        l_occ=_num(slam_t, "l_occ", 0.9, "slam"),
        l_free=_num(slam_t, "l_free", -0.4, "slam"),
        update_trans=_num(slam_t, "update_trans", 0.2, "slam"),
        update_rot=_num(slam_t, "update_rot", 0.15, "slam"),
        divergence_residual=_num(slam_t, "divergence_residual", 0.7, "slam"),
        match=ScanMatchOptions(
            max_iterations=int(_num(slam_t, "max_iterations", 30, "slam"))),
    )

    control_t = _table(doc, "control", {"speed_pid", "steer_pid"})
    control = ControlSettings(
        speed_pid=_pid(_vec(control_t, "speed_pid", (1.2, 0.3, 0.02), 3, "control")),
        steer_pid=_pid(_vec(control_t, "steer_pid", (2.0, 0.1, 0.05), 3, "control")),
    )

    mission = None
    if "mission" in doc:
        mission_t = _table(doc, "mission", {"waypoints", "goal_tol_xy",
                                            "goal_tol_theta_deg", "cruise",
                                            "lookahead", "corner_radius"})
        raw_wps = mission_t.get("waypoints", [])
        if not isinstance(raw_wps, list) or not raw_wps:
            raise ScenarioError("mission.waypoints must be a non-empty list")
        wps = []
        for i, wp in enumerate(raw_wps):
            if not isinstance(wp, list) or len(wp) not in (2, 3):
                raise ScenarioError(f"mission.waypoints[{i}]: expected [x, y] "
                                    f"or [x, y, theta]")
            wps.append(Pose2D(float(wp[0]), float(wp[1]),
                              float(wp[2]) if len(wp) == 3 else 0.0))
        try:
            mission = Mission(
                waypoints=tuple(wps),
                goal_tol_xy=_num(mission_t, "goal_tol_xy", 0.7, "mission"),
                goal_tol_theta=math.radians(
                    _num(mission_t, "goal_tol_theta_deg", 20.0, "mission")),
                cruise_speed=_num(mission_t, "cruise", 1.0, "mission"),
                lookahead=_num(mission_t, "lookahead", 1.5, "mission"),
                corner_radius=_num(mission_t, "corner_radius", 1.0, "mission"),
            )
        except ValueError as e:
            raise ScenarioError(f"mission: {e}") from e

    safety_t = _table(doc, "safety", {"enabled", "stop_dist", "corridor_halfwidth"})
    safety = SafetySettings(
        enabled=bool(safety_t.get("enabled", True)),
        stop_dist=_num(safety_t, "stop_dist", 2.0, "safety"),
        corridor_halfwidth=_num(safety_t, "corridor_halfwidth", 0.6, "safety"),
    )

    actors = []
    raw_actors = doc.get("actors", [])
    if not isinstance(raw_actors, list):
        raise ScenarioError("[[actors]] must be an array of tables")
    for i, actor_t in enumerate(raw_actors):
        unknown = set(actor_t) - {"class", "start", "velocity", "t_start", "t_end"}
        if unknown:
            raise ScenarioError(f"actors[{i}] has unknown keys: {sorted(unknown)}")
        actors.append(ActorSettings(
            class_name=str(actor_t.get("class", "person")),
            start=_vec(actor_t, "start", None, 2, f"actors[{i}]"),
            velocity=_vec(actor_t, "velocity", (0.0, 0.0), 2, f"actors[{i}]"),
            t_start=_num(actor_t, "t_start", 0.0, f"actors[{i}]"),
            t_end=_num(actor_t, "t_end", math.inf, f"actors[{i}]"),
        ))

    perc_t = _table(doc, "perception", {"min_conf", "whitelist", "detections_file",
                                        "camera", "cam_extrinsics"})
    whitelist = perc_t.get("whitelist")
    cam_t = perc_t.get("camera", {})
    perception = PerceptionSettings(
        min_conf=_num(perc_t, "min_conf", 0.25, "perception"),
        whitelist=DEFAULT_WHITELIST if whitelist is None
        else frozenset(str(w) for w in whitelist),
        detections_file=perc_t.get("detections_file"),
        camera=CameraIntrinsics(
            fx=_num(cam_t, "fx", 600.0, "perception.camera"),
            fy=_num(cam_t, "fy", 600.0, "perception.camera"),
            cx=_num(cam_t, "cx", 320.0, "perception.camera"),
            cy=_num(cam_t, "cy", 240.0, "perception.camera"),
        ),
        cam_extrinsics=Extrinsics3D(
            *_vec(perc_t, "cam_extrinsics", (0, 0, 0, 0, 0, 0), 6, "perception")),
    )

    teleop_t = _table(doc, "teleop", {"token", "rate", "watchdog_timeout",
                                      "v_max", "w_max"})
    teleop = TeleopSettings(
        token=str(teleop_t.get("token", "operator")),
        rate=_num(teleop_t, "rate", 10.0, "teleop"),
        watchdog_timeout=_num(teleop_t, "watchdog_timeout", 0.5, "teleop"),
        v_max=_num(teleop_t, "v_max", 1.0, "teleop"),
        w_max=_num(teleop_t, "w_max", 1.0, "teleop"),
    )

    map_t = _table(doc, "map", {"file"})
    map_file = map_t.get("file")

    return Scenario(name=str(doc.get("name", name)), run=run, world=world,
                    vehicle=vehicle, lidar=lidar, imu=imu, gps=gps,
                    gps_rate=gps.rate, odom=odom, ekf=ekf, mcl=mcl, slam=slam,
                    control=control, mission=mission, safety=safety,
                    actors=tuple(actors), perception=perception, teleop=teleop,
                    map_file=map_file)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from e
    return parse_scenario(text, name=path.stem)
