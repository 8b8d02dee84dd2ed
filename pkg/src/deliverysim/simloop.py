"""Deterministic fixed-step simulation loop wiring the whole stack.

One tick: sample sensors from ground truth, fuse (EKF), localize or map
(MCL / SLAM) on lidar ticks, decide the command (mission, teleop session,
safety gate), run the two PIDs, step the vehicle. All randomness comes from
per-stream generators spawned off the scenario seed, so a seed reproduces
every artifact byte for byte.
"""

from __future__ import annotations

import json
import math
import queue
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fusion, mcl
from .bridge import BridgeSession, Mode, TelemetryFrame, decode_command
from .bridge import MapStreamEncoder, ProtocolError, downsample_scan, \
    encode_telemetry, error_frame
from .control import Twist2D, mission_step, pid_step
from .geom import Pose2D, se2_between, se2_compose
from .mapio import OCCUPIED_THRESH, FREE_THRESH
from .perception import ObstaclePoint, filter_classes, parse_detection_log, \
    project_obstacle, safety_gate
from .scenario import Scenario, ScenarioError
from .sensors import ImuState, cloud_to_scan, sample_gps, sample_imu, \
    simulate_cloud, simulate_scan
from .slam2d import Slam2D
from .vehicle import VehicleState, read_encoders, step_bicycle
from .world import OccupancyGrid

TRAJECTORY_HEADER = ("stamp,truth_x,truth_y,truth_th,ekf_x,ekf_y,ekf_th,"
                     "mcl_x,mcl_y,mcl_th,slam_x,slam_y,slam_th,cmd_v,cmd_w,mode")
EVENTS_HEADER = "stamp,kind,detail"

MODES = ("sim", "slam", "localize")


@dataclass(frozen=True)
class TrajectoryRow:
    stamp: float
    truth: tuple[float, float, float]
    ekf: tuple[float, float, float]
    mcl: tuple[float, float, float]
    slam: tuple[float, float, float]
    cmd_v: float
    cmd_w: float
    mode: str


@dataclass
class RunLog:
    dt: float
    rows: list[TrajectoryRow] = field(default_factory=list)
    events: list[tuple[float, str, str]] = field(default_factory=list)

    def trajectory_csv(self) -> str:
        lines = [TRAJECTORY_HEADER]
        for r in self.rows:
            vals = [r.stamp, *r.truth, *r.ekf, *r.mcl, *r.slam, r.cmd_v, r.cmd_w]
            lines.append(",".join(repr(float(v)) for v in vals) + f",{r.mode}")
        return "\n".join(lines) + "\n"

    def events_csv(self) -> str:
        lines = [EVENTS_HEADER]
        for stamp, kind, detail in self.events:
            lines.append(f"{stamp!r},{kind},{detail}")
        return "\n".join(lines) + "\n"

    def column(self, name: str) -> np.ndarray:
        """Pose triples for 'truth' | 'ekf' | 'mcl' | 'slam' as an (N, 3) array."""
        return np.array([getattr(r, name) for r in self.rows], dtype=float)


def parse_trajectory_csv(text: str) -> RunLog:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != TRAJECTORY_HEADER:
        raise ScenarioError("not a trajectory CSV (bad header)")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 16:
            raise ScenarioError(f"trajectory row has {len(parts)} fields, wanted 16")
        nums = [float(v) for v in parts[:15]]
        rows.append(TrajectoryRow(
            stamp=nums[0], truth=tuple(nums[1:4]), ekf=tuple(nums[4:7]),
            mcl=tuple(nums[7:10]), slam=tuple(nums[10:13]),
            cmd_v=nums[13], cmd_w=nums[14], mode=parts[15]))
    dt = rows[1].stamp - rows[0].stamp if len(rows) > 1 else 0.0
    return RunLog(dt=dt, rows=rows)


@dataclass(frozen=True)
class AteReport:
    rmse_xy: float
    rmse_theta: float
    max_xy: float


def compute_ate(est: np.ndarray, truth: np.ndarray) -> AteReport:
    """Absolute trajectory error between time-aligned (N, 3) pose arrays."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"trajectory shapes differ: {est.shape} vs {truth.shape}")
    if len(est) == 0:
        raise ValueError("empty trajectories")
    dxy = est[:, :2] - truth[:, :2]
    d2 = (dxy ** 2).sum(axis=1)
    dth = np.arctan2(np.sin(est[:, 2] - truth[:, 2]),
                     np.cos(est[:, 2] - truth[:, 2]))
    return AteReport(rmse_xy=float(np.sqrt(d2.mean())),
                     rmse_theta=float(np.sqrt((dth ** 2).mean())),
                     max_xy=float(np.sqrt(d2.max())))


def _period_ticks(rate: float, dt: float) -> int | None:
    """Tick period for a sensor rate; None disables the stream."""
    if rate <= 0:
        return None
    return max(1, int(round(1.0 / (rate * dt))))


def grid_tristate(g: OccupancyGrid) -> np.ndarray:
    """Thresholded cells in grid row order (PGM byte values)."""
    from .mapio import PIXEL_FREE, PIXEL_OCCUPIED, PIXEL_UNKNOWN

    p = g.probabilities()
    out = np.full(p.shape, PIXEL_UNKNOWN, dtype=np.uint8)
    out[p >= OCCUPIED_THRESH] = PIXEL_OCCUPIED
    out[p <= FREE_THRESH] = PIXEL_FREE
    return out


@dataclass
class RunResult:
    runlog: RunLog
    slam_map: OccupancyGrid | None = None
    mission_done: bool = False
    command_record: list[tuple[int, str, str | None]] = field(default_factory=list)


class SimRunner:
    """Owns all simulation state; single-threaded and deterministic.

    `mode` picks the localization branch: plain EKF ("sim"), map building
    ("slam"), or particle localization on a known map ("localize").
    """

    def __init__(self, scenario: Scenario, mode: str = "sim",
                 known_map: OccupancyGrid | None = None,
                 session: BridgeSession | None = None,
                 command_trace: dict[int, list[tuple[str, str | None]]] | None = None,
                 command_queue: "queue.Queue[tuple[str, str | None]] | None" = None,
                 telemetry_sink=None,
                 particle_dump_dir: str | Path | None = None):
        if mode not in MODES:
            raise ScenarioError(f"unknown run mode {mode!r}")
        if mode == "localize" and known_map is None:
            raise ScenarioError("localize mode needs a map")
        self.sc = scenario
        self.mode = mode
        self.dt = scenario.run.dt
        self.n_ticks = int(round(scenario.run.duration / self.dt))
        self.tick_index = 0

        ss = np.random.SeedSequence(scenario.run.seed)
        lidar_ss, imu_ss, gps_ss, mcl_ss = ss.spawn(4)
        self._rng_lidar = np.random.default_rng(lidar_ss)
        self._rng_imu = np.random.default_rng(imu_ss)
        self._rng_gps = np.random.default_rng(gps_ss)
        self._rng_mcl = np.random.default_rng(mcl_ss)

        start = scenario.run.start
        self.vehicle = VehicleState(pose=start)
        self._prev_speed = 0.0
        self._prev_enc = read_encoders(self.vehicle, self.vehicle,
                                       scenario.vehicle, 0.0)
        self.ekf = fusion.make_state(start.x, start.y, start.theta,
                                     cov_diag=scenario.ekf.init_cov_diag, stamp=0.0)
        self._q = np.diag(scenario.ekf.q_diag).astype(float)
        self._imu_state = ImuState()
        self._ekf_at_last_scan = self.ekf

        self.slam: Slam2D | None = None
        self.particles: mcl.ParticleSet | None = None
        self._lf: mcl.LikelihoodField | None = None
        self.mcl_pose: Pose2D | None = None
        self.mcl_cov: np.ndarray | None = None
        self._mcl_pending = Pose2D()
        self.known_map = known_map
        if mode == "slam":
            self.slam = Slam2D(self._slam_config_in_start_frame())
        elif mode == "localize":
            self._lf = mcl.build_likelihood_field(known_map)
            self.particles = self._init_particles(known_map)

        self.speed_pid = scenario.control.speed_pid
        self.steer_pid = scenario.control.steer_pid
        self.mission_active = 0
        self.mission_done = scenario.mission is None
        self._leg_start = start

        self.session = session
        self.command_trace = command_trace or {}
        self.command_queue = command_queue
        self.telemetry_sink = telemetry_sink
        self._telemetry_period = _period_ticks(scenario.teleop.rate, self.dt)
        self._lidar_period = _period_ticks(scenario.lidar.rate, self.dt)
        self._imu_period = _period_ticks(scenario.imu.rate, self.dt)
        self._gps_period = _period_ticks(scenario.gps.rate, self.dt)
        self._map_encoder: MapStreamEncoder | None = None
        map_grid = self._telemetry_grid()
        if map_grid is not None:
            self._map_encoder = MapStreamEncoder(map_grid.width, map_grid.height)

        self.log = RunLog(dt=self.dt)
        self.ekf_log_rows: list[str] = [fusion.estimate_log_row(self.ekf)]
        self.command_record: list[tuple[int, str, str | None]] = []
        self.last_scan = None
        self._gate_active = False
        self.particle_dump_dir = Path(particle_dump_dir) if particle_dump_dir else None

        self._file_detections = []
        if scenario.perception.detections_file:
            text = Path(scenario.perception.detections_file).read_text("utf-8")
            dets = filter_classes(parse_detection_log(text),
                                  scenario.perception.whitelist,
                                  scenario.perception.min_conf)
            self._file_detections = [d for d in dets if d.depth is not None]

    def _slam_config_in_start_frame(self):
        """Scenario extents are world coordinates; the map grid lives in the
        start frame (the first scan seeds the map at its origin)."""
        from dataclasses import replace as dc_replace

        from .geom import se2_apply, se2_inverse

        cfg = self.sc.slam
        xmin, ymin, xmax, ymax = cfg.extent
        corners = np.array([[xmin, ymin], [xmin, ymax], [xmax, ymin], [xmax, ymax]])
        local = se2_apply(se2_inverse(self.sc.run.start), corners)
        extent = (float(local[:, 0].min()), float(local[:, 1].min()),
                  float(local[:, 0].max()), float(local[:, 1].max()))
        return dc_replace(cfg, extent=extent)

    def _init_particles(self, grid: OccupancyGrid) -> mcl.ParticleSet:
        s = self.sc.mcl
        kwargs = dict(n_min=s.n_min, n_max=s.n_max, alphas=s.alphas, sensor=s.sensor,
                      recovery=(s.recovery_alpha_slow, s.recovery_alpha_fast))
        n = min(max(s.n_init, s.n_min), s.n_max)
        if s.init == "uniform":
            extent = (grid.origin.x, grid.origin.y,
                      grid.origin.x + grid.width * grid.resolution,
                      grid.origin.y + grid.height * grid.resolution)
            return mcl.uniform_particles(extent, n, self._rng_mcl, **kwargs)
        if s.init == "gps":
            fix = sample_gps((self.sc.run.start.x, self.sc.run.start.y),
                             self.sc.gps, self._rng_gps, 0.0)
            center = Pose2D(fix.east, fix.north, self.sc.run.start.theta) \
                if fix is not None else self.sc.run.start
            std = (max(self.sc.gps.sigma, 0.1), max(self.sc.gps.sigma, 0.1), 0.3)
            return mcl.gaussian_particles(center, std, n, self._rng_mcl, **kwargs)
        return mcl.gaussian_particles(self.sc.run.start, s.init_std, n,
                                      self._rng_mcl, **kwargs)

    def _particle_injector(self, n: int, rng: np.random.Generator) -> np.ndarray:
        g = self.known_map
        return np.column_stack([
            rng.uniform(g.origin.x, g.origin.x + g.width * g.resolution, n),
            rng.uniform(g.origin.y, g.origin.y + g.height * g.resolution, n),
            rng.uniform(-math.pi, math.pi, n),
        ])

    def _telemetry_grid(self) -> OccupancyGrid | None:
        if self.mode == "slam":
            return self.slam.grid
        if self.mode == "localize":
            return self.known_map
        return None

    def _fires(self, period: int | None) -> bool:
        return period is not None and self.tick_index % period == 0

    def _event(self, stamp: float, kind: str, detail: str) -> None:
        self.log.events.append((stamp, kind, detail.replace(",", ";")))

    # ---- estimation ------------------------------------------------------

    def _ekf_step(self, t: float) -> None:
        sc = self.sc
        self.ekf = fusion.ekf_predict(self.ekf, self.dt, self._q)
        self.ekf_log_rows.append(fusion.estimate_log_row(self.ekf))

        enc = read_encoders(self.vehicle, self.vehicle, sc.vehicle, t)
        m = fusion.odometry_from_encoders(self._prev_enc, enc, sc.vehicle,
                                          sigma_v=sc.odom.sigma_v,
                                          sigma_omega=sc.odom.sigma_omega)
        self._prev_enc = enc
        self._apply_measurement(m, t)

        if self._fires(self._imu_period):
            true_rate = self.vehicle.speed * math.tan(self.vehicle.steer_delta) \
                / sc.vehicle.wheelbase
            accel = ((self.vehicle.speed - self._prev_speed) / self.dt,
                     self.vehicle.speed * true_rate)
            sample, self._imu_state = sample_imu(true_rate, accel, self._imu_state,
                                                 sc.imu.params, self.dt,
                                                 self._rng_imu, t)
            if sc.ekf.use_imu_yaw:
                m = fusion.Measurement(
                    fusion.MeasurementKind.IMU,
                    np.array([sample.yaw, sample.yaw_rate]),
                    np.diag([0.05 ** 2, sc.imu.params.gyro_sigma ** 2]),
                    stamp=t, includes_yaw=True)
            else:
                m = fusion.Measurement(
                    fusion.MeasurementKind.IMU, np.array([sample.yaw_rate]),
                    np.array([[sc.imu.params.gyro_sigma ** 2]]), stamp=t)
            self._apply_measurement(m, t)

        if self._fires(self._gps_period):
            fix = sample_gps((self.vehicle.pose.x, self.vehicle.pose.y),
                             sc.gps, self._rng_gps, t)
            if fix is not None:
                m = fusion.Measurement(fusion.MeasurementKind.GPS,
                                       np.array([fix.east, fix.north]),
                                       np.diag([fix.sigma ** 2, fix.sigma ** 2]),
                                       stamp=t)
                self._apply_measurement(m, t)

    def _apply_measurement(self, m: fusion.Measurement, t: float) -> None:
        self.ekf, accepted = fusion.ekf_update(self.ekf, m, self.sc.ekf.gate_chi2)
        self.ekf_log_rows.append(fusion.estimate_log_row(self.ekf))
        if not accepted:
            self._event(t, "ekf_gated", m.kind.value)

    def _make_scan(self, t: float):
        sc = self.sc
        pose = self.vehicle.pose
        if sc.lidar.mode == "cloud":
            cloud = simulate_cloud(sc.world, pose, sc.lidar.params,
                                   self._rng_lidar, stamp=t)
            inc = 2 * math.pi / sc.lidar.scan_bins
            return cloud_to_scan(cloud, sc.lidar.z_band, inc,
                                 range_max=sc.lidar.params.range_max, stamp=t)
        return simulate_scan(sc.world, pose, sc.lidar.scan_bins,
                             sc.lidar.params.range_max,
                             sc.lidar.params.noise_sigma, self._rng_lidar, stamp=t)

    def _lidar_step(self, t: float) -> None:
        scan = self._make_scan(t)
        self.last_scan = scan
        ekf_pose = Pose2D(*self.ekf.pose_tuple())
        delta = se2_between(Pose2D(*self._ekf_at_last_scan.pose_tuple()), ekf_pose)
        self._ekf_at_last_scan = self.ekf

        if self.mode == "slam":
            prior = se2_compose(self.slam.pose, delta) if self.slam.initialized \
                else Pose2D()
            info = self.slam.step(scan, prior)
            if info.diverged:
                self._event(t, "slam_diverged",
                            f"residual={info.match.final_residual:.3f}"
                            if info.match else "no-match")
        elif self.mode == "localize":
            # AMCL-style motion gate: accumulate odometry between filter
            # updates so correlated back-to-back scans cannot deplete the set
            self._mcl_pending = se2_compose(self._mcl_pending, delta)
            moved = math.hypot(self._mcl_pending.x, self._mcl_pending.y)
            turned = abs(self._mcl_pending.theta)
            first = self.mcl_pose is None
            if not (first or moved > self.sc.mcl.update_min_d
                    or turned > self.sc.mcl.update_min_a):
                return
            self.particles = mcl.mcl_motion_update(self.particles,
                                                   self._mcl_pending, self._rng_mcl)
            self._mcl_pending = Pose2D()
            self.particles, healthy = mcl.mcl_sensor_update(self.particles, scan,
                                                            self._lf)
            if not healthy:
                self._event(t, "mcl_degenerate", "uniform weight reset")
            # estimate from the weighted posterior, then resample: injected
            # recovery particles only matter once a later update weights them
            pose, cov = mcl.mcl_estimate(self.particles)
            self.mcl_pose, self.mcl_cov = pose, cov
            if self.sc.mcl.resample:
                self.particles = mcl.mcl_resample(self.particles, self._rng_mcl,
                                                  injector=self._particle_injector)
            if self.particle_dump_dir is not None:
                path = self.particle_dump_dir / f"particles_{self.tick_index:06d}.csv"
                mcl.dump_particles(self.particles, path)

    # ---- command pipeline ------------------------------------------------

    def _control_pose(self) -> Pose2D:
        source = self.sc.run.control_pose
        if source == "truth":
            return self.vehicle.pose
        if source == "mcl" and self.mcl_pose is not None:
            return self.mcl_pose
        if source == "slam" and self.slam is not None and self.slam.initialized:
            return se2_compose(self.sc.run.start, self.slam.pose)
        return Pose2D(*self.ekf.pose_tuple())

    def _obstacles(self, t: float) -> list[ObstaclePoint]:
        out = []
        for actor in self.sc.actors:
            if actor.class_name.lower() not in self.sc.perception.whitelist:
                continue
            pos = actor.position_at(t)
            if pos is not None:
                out.append(ObstaclePoint(position=pos, class_name=actor.class_name,
                                         stamp=t))
        for d in self._file_detections:
            if abs(d.stamp - t) <= self.dt / 2:
                out.append(project_obstacle(d, self.sc.perception.camera,
                                            self.sc.perception.cam_extrinsics,
                                            self._control_pose()))
        return out

    def _auto_twist(self) -> Twist2D:
        if self.sc.mission is None or self.mission_done:
            return Twist2D(0.0, 0.0)
        status = mission_step(self.sc.mission, self._control_pose(),
                              self.mission_active, leg_start=self._leg_start)
        self.mission_active = status.active_waypoint
        self.mission_done = status.done
        return status.twist

    def _command(self, t: float) -> tuple[Twist2D, str]:
        if self.session is not None:
            for item in self.command_trace.get(self.tick_index, []):
                self._ingest_command_item(item, t)
            if self.command_queue is not None:
                while True:
                    try:
                        item = self.command_queue.get_nowait()
                    except queue.Empty:
                        break
                    self._ingest_command_item(item, t)
            self.session.check_watchdog(t)

        mode = self.session.mode if self.session is not None else Mode.AUTO
        twist = self._auto_twist() if mode is Mode.AUTO else Twist2D(0.0, 0.0)
        if self.session is not None:
            twist = self.session.effective_twist(twist)

        if self.sc.safety.enabled and mode is not Mode.ESTOP:
            gated = safety_gate(self._obstacles(t), self._control_pose(), twist,
                                self.sc.safety.stop_dist,
                                self.sc.safety.corridor_halfwidth)
            if gated is not twist and (twist.v != 0.0 or twist.omega != 0.0):
                if not self._gate_active:
                    self._event(t, "safety_stop", "obstacle in stop rectangle")
                self._gate_active = True
            else:
                self._gate_active = False
            twist = gated
        return twist, mode.value

    def _ingest_command_item(self, item: tuple[str, str | None], t: float) -> None:
        kind, payload = item
        if kind == "connect":
            self.session.on_connect(t)
            if self._map_encoder is not None:
                self._map_encoder.reset()
            self.command_record.append((self.tick_index, "connect", None))
            return
        if kind == "disconnect":
            self.session.on_disconnect(t)
            self.command_record.append((self.tick_index, "disconnect", None))
            return
        try:
            cmd = decode_command(payload)
        except ProtocolError as e:
            self._event(t, "protocol_error", str(e).splitlines()[0])
            if self.telemetry_sink is not None:
                self.telemetry_sink(error_frame(str(e).splitlines()[0]))
            return
        reply = self.session.handle_command(cmd, t)
        if reply is None:
            self.command_record.append((self.tick_index, "line", payload.strip()))
        else:
            self._event(t, "command_rejected", f"seq={cmd.seq}")
            if self.telemetry_sink is not None:
                self.telemetry_sink(reply)

    def _actuate(self, twist: Twist2D, mode: str) -> None:
        sc = self.sc
        if mode == Mode.ESTOP.value:
            # safety dominance: zero actuation, controllers wound down
            self.speed_pid = sc.control.speed_pid
            self.steer_pid = sc.control.steer_pid
            speed_set, steer_set = 0.0, 0.0
        else:
            # kinematic feedforward carries the setpoint; the PIDs trim the
            # residual velocity errors with normalized effort
            measured_omega = self.vehicle.speed \
                * math.tan(self.vehicle.steer_delta) / sc.vehicle.wheelbase
            u_v, self.speed_pid = pid_step(self.speed_pid, twist.v,
                                           self.vehicle.speed, self.dt)
            u_w, self.steer_pid = pid_step(self.steer_pid, twist.omega,
                                           measured_omega, self.dt)
            ff_v = twist.v / sc.vehicle.max_speed
            v_ref = max(abs(twist.v), 0.1)
            ff_steer = math.atan(twist.omega * sc.vehicle.wheelbase / v_ref) \
                / sc.vehicle.max_steer
            speed_set = max(-1.0, min(1.0, ff_v + u_v)) * sc.vehicle.max_speed
            steer_set = max(-1.0, min(1.0, ff_steer + u_w)) * sc.vehicle.max_steer
        self._prev_speed = self.vehicle.speed
        self.vehicle = step_bicycle(self.vehicle, speed_set, steer_set,
                                    self.dt, sc.vehicle)

    # ---- telemetry -------------------------------------------------------

    def _active_waypoint_xy(self) -> list[float] | None:
        m = self.sc.mission
        if m is None or self.mission_active >= len(m.waypoints):
            return None
        wp = m.waypoints[self.mission_active]
        return [round(wp.x, 4), round(wp.y, 4)]

    def _emit_telemetry(self, t: float, twist: Twist2D, mode: str) -> None:
        if self.telemetry_sink is None or not self._fires(self._telemetry_period):
            return
        if self.session is not None and not self.session.connected:
            return
        map_payload = None
        if self._map_encoder is not None:
            grid = self._telemetry_grid()
            map_payload = self._map_encoder.next_payload(grid_tristate(grid))
            if map_payload is not None:
                map_payload.res = grid.resolution
                map_payload.ox = grid.origin.x
                map_payload.oy = grid.origin.y
        scan = downsample_scan(self.last_scan.ranges) if self.last_scan is not None \
            else []
        pose = self.vehicle.pose
        mcl_pose = self.mcl_pose
        frame = TelemetryFrame(
            stamp=round(t, 6), mode=mode,
            truth=[round(pose.x, 4), round(pose.y, 4), round(pose.theta, 4)],
            ekf=[round(v, 4) for v in self.ekf.pose_tuple()],
            mcl=None if mcl_pose is None else
            [round(mcl_pose.x, 4), round(mcl_pose.y, 4), round(mcl_pose.theta, 4)],
            mcl_cov=None if self.mcl_cov is None
            else round(float(np.trace(self.mcl_cov)), 6),
            scan=scan, map=map_payload,
            wp=None if self.sc.mission is None else self.mission_active,
            wp_xy=self._active_waypoint_xy(),
            echo=None if self.session is None else self.session.applied_seq)
        self.telemetry_sink(encode_telemetry(frame))

    # ---- main loop -------------------------------------------------------

    def tick(self) -> bool:
        """Advance one step; False once the scenario duration is exhausted."""
        if self.tick_index >= self.n_ticks:
            return False
        t = self.tick_index * self.dt
        if self.tick_index > 0:
            self._ekf_step(t)
        if self._fires(self._lidar_period):
            self._lidar_step(t)

        twist, mode = self._command(t)
        pose = self.vehicle.pose
        ekf_pose = self.ekf.pose_tuple()
        nan3 = (math.nan, math.nan, math.nan)
        slam_world = nan3
        if self.slam is not None and self.slam.initialized:
            sw = se2_compose(self.sc.run.start, self.slam.pose)
            slam_world = (sw.x, sw.y, sw.theta)
        self.log.rows.append(TrajectoryRow(
            stamp=t, truth=(pose.x, pose.y, pose.theta), ekf=ekf_pose,
            mcl=nan3 if self.mcl_pose is None else
            (self.mcl_pose.x, self.mcl_pose.y, self.mcl_pose.theta),
            slam=slam_world, cmd_v=twist.v, cmd_w=twist.omega, mode=mode))
        self._emit_telemetry(t, twist, mode)

        self._actuate(twist, mode)
        self.tick_index += 1
        return True

    def result(self) -> RunResult:
        """Snapshot the run output for however far the loop has advanced."""
        if self.session is not None:
            merged = {id(e) for e in self.log.events}
            for e in self.session.events:
                if id(e) not in merged:
                    self.log.events.append(e)
            self.log.events.sort(key=lambda e: e[0])
            self.session.events.clear()
        return RunResult(runlog=self.log,
                         slam_map=self.world_frame_map(),
                         mission_done=self.mission_done,
                         command_record=self.command_record)

    def run(self) -> RunResult:
        while self.tick():
            pass
        return self.result()

    def world_frame_map(self) -> OccupancyGrid | None:
        """The SLAM grid re-anchored from the start frame into the world frame."""
        if self.slam is None:
            return None
        g = self.slam.grid.copy()
        g.origin = se2_compose(self.sc.run.start, g.origin)
        return g


def run_scenario(scenario: Scenario, mode: str = "sim",
                 known_map: OccupancyGrid | None = None,
                 out_dir: str | Path | None = None,
                 **runner_kwargs) -> RunResult:
    """Run a scenario and optionally write the artifact set to `out_dir`."""
    runner = SimRunner(scenario, mode=mode, known_map=known_map, **runner_kwargs)
    result = runner.run()
    if out_dir is not None:
        write_artifacts(result, runner, Path(out_dir))
    return result


def write_artifacts(result: RunResult, runner: SimRunner, out_dir: Path) -> None:
    from .mapio import write_map

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trajectory.csv").write_text(result.runlog.trajectory_csv(), "utf-8")
    (out_dir / "events.csv").write_text(result.runlog.events_csv(), "utf-8")
    (out_dir / "ekf_log.csv").write_text(
        fusion.ESTIMATE_LOG_HEADER + "\n" + "\n".join(runner.ekf_log_rows) + "\n",
        "utf-8")
    if result.slam_map is not None:
        write_map(result.slam_map, out_dir / "map.pgm")
    if result.command_record:
        lines = []
        for tick, kind, payload in result.command_record:
            entry: dict = {"tick": tick, "kind": kind}
            if payload is not None:
                entry["data"] = payload
            lines.append(json.dumps(entry, separators=(",", ":")))
        (out_dir / "commands.jsonl").write_text("\n".join(lines) + "\n", "utf-8")
