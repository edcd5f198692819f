"""Rolling-sphere dynamics on bowls and heightfields.

Balls roll without slipping while in contact: the centre moves on the
surface offset by the ball radius, tangential gravity is scaled by 5/7 (solid
sphere), rolling resistance decelerates at ``mu_r * g`` and the spin is slaved
to the velocity through ``omega = n x v / radius``. Off the surface the ball
is ballistic with constant spin. The integrator is semi-implicit Euler at
120 Hz, followed by a projection back onto the contact manifold.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import noise
from .errors import ConfigError, DomainError, SimulationError

GRAVITY = 9.81
FAMILIES = ("hemispherical", "ellipsoidal", "heightfield")
BALL_RADII = (0.04, 0.225)


def _rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# ------------------------------------------------------------------ surfaces


class SurfaceModel:
    """Common interface: ``height``, ``contains``, ``normal``, ``project``."""

    kind = "abstract"
    #: horizontal half-extent of the square the camera frames
    view_half_extent = 1.0

    def height(self, x, y):
        raise NotImplementedError

    def contains(self, x, y):
        raise NotImplementedError

    def normal(self, x, y):
        """Unit normal at the surface point above (x, y), pointing to the open side."""
        raise NotImplementedError

    def project(self, center, radius):
        """Foot point and normal of the contact for a ball centred near ``center``."""
        raise NotImplementedError

    def signed_gap(self, center, radius):
        foot, n = self.project(center, radius)
        return float(np.dot(center - foot, n)) - radius

    def describe(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Plane(SurfaceModel):
    """Flat ground z = 0; used for calibration runs and tests."""

    kind = "plane"
    view_half_extent = 1.0

    def height(self, x, y):
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def contains(self, x, y):
        return True

    def normal(self, x, y):
        return np.array([0.0, 0.0, 1.0])

    def project(self, center, radius):
        return np.array([center[0], center[1], 0.0]), np.array([0.0, 0.0, 1.0])

    def describe(self):
        return {"kind": "plane"}


@dataclass(frozen=True)
class Bowl(SurfaceModel):
    """Lower half of ``x^2/a^2 + y^2 + (z-1)^2 = 1`` rotated about z."""

    a: float = 1.0
    z_rotation: float = 0.0
    kind = "bowl"
    view_half_extent = 1.0

    @property
    def _rot(self):
        return _rot_z(self.z_rotation)

    def _local_xy(self, x, y):
        c, s = math.cos(self.z_rotation), math.sin(self.z_rotation)
        return c * x + s * y, -s * x + c * y

    def _footprint(self, x, y):
        lx, ly = self._local_xy(x, y)
        return lx * lx / (self.a * self.a) + ly * ly

    def contains(self, x, y):
        return self._footprint(x, y) <= 1.0

    def height(self, x, y):
        r = self._footprint(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        with np.errstate(invalid="ignore"):
            return np.where(r <= 1.0, 1.0 - np.sqrt(np.maximum(1.0 - r, 0.0)), np.nan)

    def _normal_local(self, lp):
        g = np.array([lp[0] / (self.a * self.a), lp[1], lp[2] - 1.0])
        return -g / np.linalg.norm(g)

    def normal(self, x, y):
        lx, ly = self._local_xy(x, y)
        lz = float(self.height(x, y))
        return self._rot @ self._normal_local(np.array([lx, ly, lz]))

    def project(self, center, radius):
        rot = self._rot
        local = rot.T @ center
        q = np.array([local[0], local[1], local[2] - 1.0])
        foot = _ellipsoid_closest(q, (self.a, 1.0, 1.0))
        foot[2] += 1.0
        n = self._normal_local(foot)
        return rot @ foot, rot @ n

    def describe(self):
        return {"kind": "bowl", "a": self.a, "z_rotation": self.z_rotation}


def _ellipsoid_closest(q, axes):
    """Closest point to interior point ``q`` on the ellipsoid with semi-axes ``axes``."""
    e = np.asarray(axes, dtype=np.float64)
    if e[0] == e[1] == e[2]:
        nq = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2])
        if nq == 0.0:
            return np.array([0.0, 0.0, -e[0]])
        return q * (e[0] / nq)
    e2 = e * e
    eq = e * q

    def f(t):
        d = t + e2
        return (eq[0] / d[0]) ** 2 + (eq[1] / d[1]) ** 2 + (eq[2] / d[2]) ** 2 - 1.0

    lo = -float(e2.min())
    hi = 0.0 if f(0.0) <= 0.0 else float(e2.max())
    if f(hi) > 0.0:
        hi = 2.0 * float(np.linalg.norm(eq))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    d = t + e2
    y = np.where(d != 0.0, e2 * q / np.where(d != 0.0, d, 1.0), 0.0)
    resid = float(np.sum((y / e) ** 2))
    if abs(resid - 1.0) > 1e-9:
        # Degenerate (medial-axis) case: fill in the axis the formula dropped.
        k = int(np.argmin(e2))
        rest = resid - (y[k] / e[k]) ** 2
        y[k] = math.copysign(e[k] * math.sqrt(max(0.0, 1.0 - rest)), q[k] if q[k] else 1.0)
    return y


@dataclass(frozen=True)
class Heightfield(SurfaceModel):
    """``z = amplitude * noise(texture coords / noise_scale)`` over a moving window.

    ``window_offset`` is ``(u0, v0, angle)``: world (x, y) maps to texture
    coordinates ``R(angle) (x, y) + (u0, v0)`` inside the 8 x 8 noise texture.
    """

    noise_seed: int = 0
    noise_scale: float = 0.5
    window_offset: tuple = (4.0, 4.0, 0.0)
    amplitude: float = 0.25
    view_half_extent: float = 1.25
    fd_step: float = 1e-5
    _perm: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    kind = "heightfield"

    def __post_init__(self):
        perm = noise.permutation(self.noise_seed)
        object.__setattr__(self, "_perm", perm)
        object.__setattr__(self, "_perm_list", [int(v) for v in perm])

    def _tex(self, x, y):
        u0, v0, ang = self.window_offset
        c, s = math.cos(ang), math.sin(ang)
        return (c * x - s * y + u0) / self.noise_scale, (s * x + c * y + v0) / self.noise_scale

    def height_scalar(self, x, y):
        u, v = self._tex(x, y)
        return self.amplitude * noise.noise2(self._perm_list, u, v)

    def height(self, x, y):
        u, v = self._tex(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        return self.amplitude * noise.noise2_grid(self._perm, u, v)

    def contains(self, x, y):
        h = self.view_half_extent
        return abs(x) <= h and abs(y) <= h

    def normal(self, x, y):
        e = self.fd_step
        hx = (self.height_scalar(x + e, y) - self.height_scalar(x - e, y)) / (2 * e)
        hy = (self.height_scalar(x, y + e) - self.height_scalar(x, y - e)) / (2 * e)
        n = np.array([-hx, -hy, 1.0])
        return n / np.linalg.norm(n)

    def project(self, center, radius):
        # Solve center = foot + radius * n(foot) for the foot's (x, y).
        u = np.array(center[:2], dtype=np.float64)
        jac_step = 1e-4
        for _ in range(30):
            n = self.normal(u[0], u[1])
            r = u + radius * n[:2] - center[:2]
            if abs(r[0]) < 1e-13 and abs(r[1]) < 1e-13:
                break
            nx = self.normal(u[0] + jac_step, u[1])
            ny = self.normal(u[0], u[1] + jac_step)
            jac = np.eye(2) + radius * np.column_stack(
                [(nx[:2] - n[:2]) / jac_step, (ny[:2] - n[:2]) / jac_step]
            )
            try:
                delta = np.linalg.solve(jac, r)
            except np.linalg.LinAlgError:
                delta = r
            step = min(1.0, 0.1 / max(float(np.abs(delta).max()), 1e-300))
            u = u - step * delta
        n = self.normal(u[0], u[1])
        foot = np.array([u[0], u[1], self.height_scalar(u[0], u[1])])
        return foot, n

    def describe(self):
        return {
            "kind": "heightfield",
            "noise_seed": self.noise_seed,
            "noise_scale": self.noise_scale,
            "window_offset": list(self.window_offset),
            "amplitude": self.amplitude,
        }


def make_bowl(a=1.0, z_rotation=0.0):
    if not 0.5 <= a <= 1.0:
        raise DomainError(f"bowl axis ratio must lie in [0.5, 1], got {a}")
    return Bowl(a=float(a), z_rotation=float(z_rotation))


def make_heightfield(seed, noise_scale, window=(4.0, 4.0, 0.0), amplitude=0.25):
    if not 0.2 <= noise_scale <= 0.7:
        raise DomainError(f"noise scale must lie in [0.2, 0.7], got {noise_scale}")
    return Heightfield(
        noise_seed=int(seed),
        noise_scale=float(noise_scale),
        window_offset=tuple(float(v) for v in window),
        amplitude=float(amplitude),
    )


def surface_from_dict(d):
    kind = d["kind"]
    if kind == "bowl":
        return make_bowl(d["a"], d["z_rotation"])
    if kind == "heightfield":
        return make_heightfield(
            d["noise_seed"], d["noise_scale"], tuple(d["window_offset"]), d["amplitude"]
        )
    if kind == "plane":
        return Plane()
    raise ConfigError(f"unknown surface kind {kind!r}")


# --------------------------------------------------------------------- balls


@dataclass
class BallState:
    position: np.ndarray
    velocity: np.ndarray
    angular_velocity: np.ndarray
    radius: float
    color_index: int = 0
    euler_orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    in_contact: bool = True

    def copy(self):
        return replace(
            self,
            position=self.position.copy(),
            velocity=self.velocity.copy(),
            angular_velocity=self.angular_velocity.copy(),
            euler_orientation=self.euler_orientation.copy(),
        )


def euler_to_matrix(angles):
    """Rotation matrix for extrinsic x-y-z Euler angles."""
    ax, ay, az = angles
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def matrix_to_euler(m):
    sy = -m[2, 0]
    ay = math.asin(max(-1.0, min(1.0, sy)))
    if abs(sy) < 1.0 - 1e-12:
        ax = math.atan2(m[2, 1], m[2, 2])
        az = math.atan2(m[1, 0], m[0, 0])
    else:
        ax = math.atan2(-m[1, 2], m[1, 1])
        az = 0.0
    return np.array([ax, ay, az])


def _rotvec_matrix(w):
    angle = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    if angle < 1e-15:
        return np.eye(3)
    k = w / angle
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * (kx @ kx)


def _advance_orientation(ball, dt):
    m = _rotvec_matrix(ball.angular_velocity * dt) @ euler_to_matrix(ball.euler_orientation)
    ball.euler_orientation = matrix_to_euler(m)


def rolling_energy(ball, gravity=GRAVITY):
    """Mechanical energy per unit mass: translation + spin + potential."""
    v2 = float(np.dot(ball.velocity, ball.velocity))
    w2 = float(np.dot(ball.angular_velocity, ball.angular_velocity))
    return 0.5 * v2 + 0.2 * ball.radius ** 2 * w2 + gravity * float(ball.position[2])


# ----------------------------------------------------------------- stepping


@dataclass(frozen=True)
class PhysicsConfig:
    dt: float = 1.0 / 120.0
    gravity: float = GRAVITY
    rolling_resistance: float = 0.05
    stop_speed: float = 1e-3
    max_raw_frames: int = 1500
    min_raw_frames: int = 250
    subsample: int = 3


def _settle(ball, surface, foot, n):
    ball.position = foot + ball.radius * n
    ball.velocity = ball.velocity - np.dot(ball.velocity, n) * n
    ball.angular_velocity = np.cross(n, ball.velocity) / ball.radius
    ball.in_contact = True


def step(state, surface, dt=1.0 / 120.0, config=PhysicsConfig()):
    """Advance one ball by ``dt``; returns a new BallState."""
    ball = state.copy()
    g = config.gravity
    gvec = np.array([0.0, 0.0, -g])
    if ball.in_contact:
        ballistic = ball.position + dt * (ball.velocity + dt * gvec)
        if surface.signed_gap(ballistic, ball.radius) > 1e-12:
            ball.in_contact = False
    if not ball.in_contact:
        ball.velocity = ball.velocity + dt * gvec
        ball.position = ball.position + dt * ball.velocity
        _advance_orientation(ball, dt)
        if surface.signed_gap(ball.position, ball.radius) < 0.0:
            _land(ball, surface)
        return ball

    # Spin is slaved to velocity while rolling, so budget with 7/10 v^2.
    e_old = 0.7 * float(np.dot(state.velocity, state.velocity)) + g * float(state.position[2])
    _, n = surface.project(ball.position, ball.radius)
    g_t = gvec - np.dot(gvec, n) * n
    v = ball.velocity + dt * (5.0 / 7.0) * g_t
    speed = float(np.linalg.norm(v))
    brake = config.rolling_resistance * g * dt
    v = v * (1.0 - brake / speed) if speed > brake else np.zeros(3)
    ball.velocity = v
    foot, n = surface.project(ball.position + dt * v, ball.radius)
    _settle(ball, surface, foot, n)
    e_new = rolling_energy(ball, g)
    if e_new > e_old + 1e-12:
        kinetic = e_old - g * float(ball.position[2])
        if kinetic >= 0.0:
            # Discretisation gained energy: rescale speed to the old budget.
            vv = float(np.dot(ball.velocity, ball.velocity))
            if vv > 0.0:
                ball.velocity = ball.velocity * math.sqrt(kinetic / (0.7 * vv))
            ball.angular_velocity = np.cross(n, ball.velocity) / ball.radius
        else:
            ball.position = state.position.copy()
            ball.velocity = np.zeros(3)
            ball.angular_velocity = np.zeros(3)
    _advance_orientation(ball, dt)
    return ball


def _land(ball, surface, elasticity=0.0):
    foot, n = surface.project(ball.position, ball.radius)
    vn = float(np.dot(ball.velocity, n))
    vt = ball.velocity - vn * n
    # Impulsive transition to rolling conserves angular momentum about the contact.
    v_roll = (5.0 * vt + 2.0 * ball.radius * np.cross(ball.angular_velocity, n)) / 7.0
    ball.position = foot + ball.radius * n
    ball.velocity = v_roll - elasticity * min(vn, 0.0) * n
    ball.angular_velocity = np.cross(n, ball.velocity) / ball.radius
    ball.in_contact = True


def resolve_collisions(balls, restitution, wall_box=None):
    """Equal-mass impulse collisions between balls plus elastic box walls.

    ``wall_box`` is a half extent h: centres stay within |x|, |y| <= h - radius.
    Returns new states; the inputs are not modified.
    """
    out = [b.copy() for b in balls]
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            bi, bj = out[i], out[j]
            d = bj.position - bi.position
            dist = float(np.linalg.norm(d))
            reach = bi.radius + bj.radius
            if dist >= reach or dist == 0.0:
                continue
            n = d / dist
            vrel = float(np.dot(bj.velocity - bi.velocity, n))
            if vrel < 0.0:
                jimp = 0.5 * (1.0 + restitution) * vrel
                bi.velocity = bi.velocity + jimp * n
                bj.velocity = bj.velocity - jimp * n
            push = 0.5 * (reach - dist) + 1e-9
            bi.position = bi.position - push * n
            bj.position = bj.position + push * n
    if wall_box is not None:
        for b in out:
            for k in range(2):
                lim = wall_box - b.radius
                if b.position[k] > lim:
                    b.position[k] = lim
                    b.velocity[k] = -abs(b.velocity[k])
                elif b.position[k] < -lim:
                    b.position[k] = -lim
                    b.velocity[k] = abs(b.velocity[k])
    return out


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    """Sampling family. ``speed_unit`` converts sampled speeds to m/s."""

    family: str = "hemispherical"
    n_balls: int = 1
    speed_unit: float = 0.05
    radii: tuple = BALL_RADII

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not 1 <= self.n_balls <= 3:
            raise ConfigError(f"n_balls must be 1..3, got {self.n_balls}")


@dataclass
class Scenario:
    surface: SurfaceModel
    balls: list
    elasticity: float
    wall_box: float = None
    rng_seed: int = 0
    family: str = "hemispherical"
    # raw sampled quantities, kept for auditing the sampling supports
    samples: dict = field(default_factory=dict)


def _bowl_point(surface, elevation, azimuth):
    d = np.array(
        [math.cos(elevation) * math.cos(azimuth), math.cos(elevation) * math.sin(azimuth),
         math.sin(elevation)]
    )
    local = np.array([surface.a * d[0], d[1], 1.0 + d[2]])
    return _rot_z(surface.z_rotation) @ local


def _tangential(v, n):
    return v - np.dot(v, n) * n


def _sample_direction_components(rng):
    comps = rng.uniform(5.0, 10.0, size=2)
    signs = 2 * rng.integers(0, 2, size=2) - 1
    return comps, signs


def sample_scenario(config, rng, max_attempts=100):
    """Draw initial conditions for one episode from the configured family."""
    seed = int(rng.integers(0, 2**63 - 1))
    rng = np.random.default_rng(seed)
    if config.family == "heightfield":
        return _sample_heightfield(config, rng, seed, max_attempts)
    a = 1.0 if config.family == "hemispherical" else float(rng.uniform(0.5, 1.0))
    surface = make_bowl(a, float(rng.uniform(-math.pi, math.pi)) if a != 1.0 else 0.0)
    balls, samples = [], {"elevation": [], "azimuth": [], "speed_components": [],
                          "speed_magnitude": []}
    for idx in range(config.n_balls):
        for _ in range(max_attempts):
            radius = float(config.radii[int(rng.integers(0, len(config.radii)))])
            elevation = float(rng.uniform(-0.9 * math.pi, -0.5 * math.pi))
            azimuth = float(rng.uniform(-math.pi, math.pi))
            foot = _bowl_point(surface, elevation, azimuth)
            foot, n = surface.project(foot + 1e-3 * np.array([0, 0, 1.0]), radius)
            pos = foot + radius * n
            if all(np.linalg.norm(pos - b.position) > radius + b.radius + 1e-6 for b in balls):
                break
        else:
            raise SimulationError(f"could not place ball {idx} after {max_attempts} attempts")
        comps, signs = _sample_direction_components(rng)
        raw = np.array([comps[0] * signs[0], comps[1] * signs[1], 0.0])
        if config.n_balls > 1:
            magnitude = float(rng.uniform(10.0, 15.0))
            raw = raw / np.linalg.norm(raw) * magnitude
            samples["speed_magnitude"].append(magnitude)
        v = _tangential(raw * config.speed_unit, n)
        orient = rng.uniform(-math.pi, math.pi, size=3)
        balls.append(BallState(pos, v, np.cross(n, v) / radius, radius, idx, orient))
        samples["elevation"].append(elevation)
        samples["azimuth"].append(azimuth)
        samples["speed_components"].append(comps.tolist())
    elasticity = 0.7 if config.n_balls > 1 else 1.0
    return Scenario(surface, balls, elasticity, None, seed, config.family, samples)


def _sphere_trace(surface, x, y, radius, z_start=2.0, lipschitz=None):
    """March a ball straight down from the camera plane until it touches."""
    if lipschitz is None:
        lipschitz = 4.0
    z = z_start
    for _ in range(10000):
        gap = z - float(surface.height_scalar(x, y)) - radius
        if gap < 1e-9:
            break
        z -= max(gap / math.sqrt(1.0 + lipschitz * lipschitz), 1e-9)
    foot, n = surface.project(np.array([x, y, z]), radius)
    return foot + radius * n, n


def _sample_heightfield(config, rng, seed, max_attempts):
    scale = float(rng.uniform(0.2, 0.7))
    half_diag = 1.25 * math.sqrt(2.0)
    window = (
        float(rng.uniform(half_diag, 8.0 - half_diag)),
        float(rng.uniform(half_diag, 8.0 - half_diag)),
        float(rng.uniform(-math.pi, math.pi)),
    )
    surface = make_heightfield(int(rng.integers(0, 2**31 - 1)), scale, window)
    half = surface.view_half_extent
    balls, samples = [], {"speed": [], "noise_scale": scale}
    for idx in range(config.n_balls):
        for _ in range(max_attempts):
            radius = float(config.radii[int(rng.integers(0, len(config.radii)))])
            x, y = rng.uniform(-half + radius, half - radius, size=2)
            pos, n = _sphere_trace(surface, float(x), float(y), radius)
            inside = abs(pos[0]) <= half - radius and abs(pos[1]) <= half - radius
            if inside and all(
                np.linalg.norm(pos - b.position) > radius + b.radius + 1e-6 for b in balls
            ):
                break
        else:
            raise SimulationError(f"could not place ball {idx} after {max_attempts} attempts")
        speed = float(rng.uniform(2.0, 4.0))
        heading = float(rng.uniform(-math.pi, math.pi))
        raw = speed * config.speed_unit * np.array([math.cos(heading), math.sin(heading), 0.0])
        v = _tangential(raw, n)
        orient = rng.uniform(-math.pi, math.pi, size=3)
        balls.append(BallState(pos, v, np.cross(n, v) / radius, radius, idx, orient))
        samples["speed"].append(speed)
    elasticity = 0.7 if config.n_balls > 1 else 1.0
    return Scenario(surface, balls, elasticity, half, seed, config.family, samples)


# --------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    """Per-frame ball states at the recorded rate (raw rate / subsample)."""

    positions: np.ndarray  # (frames, balls, 3)
    velocities: np.ndarray
    angular_velocities: np.ndarray
    orientations: np.ndarray
    radii: np.ndarray
    color_indices: np.ndarray
    raw_frame_count: int
    rejected: str = None
    collisions: int = 0

    @property
    def accepted(self):
        return self.rejected is None

    @property
    def frame_count(self):
        return self.positions.shape[0]


def _left_bowl(surface, ball):
    if not isinstance(surface, Bowl):
        return False
    p = ball.position
    return p[2] >= 1.0 or not surface.contains(p[0], p[1])


def _check_finite(balls):
    for b in balls:
        if not (np.all(np.isfinite(b.position)) and np.all(np.isfinite(b.velocity))):
            raise SimulationError("non-finite ball state during integration")


def simulate_sequence(scenario, config=PhysicsConfig()):
    """Integrate a scenario at the raw rate and subsample it."""
    balls = [b.copy() for b in scenario.balls]
    _check_finite(balls)
    raw = [balls]
    rejected = None
    collisions = 0
    for _ in range(config.max_raw_frames - 1):
        with np.errstate(invalid="ignore", over="ignore"):
            balls = [step(b, scenario.surface, config.dt, config) for b in balls]
            collisions += _approaching_pairs(balls)
            balls = resolve_collisions(balls, scenario.elasticity, scenario.wall_box)
        _check_finite(balls)
        if any(_left_bowl(scenario.surface, b) for b in balls):
            rejected = "left_surface"
            raw.append(balls)
            break
        raw.append(balls)
        if all(np.linalg.norm(b.velocity) < config.stop_speed for b in balls):
            break
    if rejected is None and len(raw) < config.min_raw_frames:
        rejected = "too_short"
    kept = raw[:: config.subsample]
    return Trajectory(
        positions=np.array([[b.position for b in f] for f in kept]),
        velocities=np.array([[b.velocity for b in f] for f in kept]),
        angular_velocities=np.array([[b.angular_velocity for b in f] for f in kept]),
        orientations=np.array([[b.euler_orientation for b in f] for f in kept]),
        radii=np.array([b.radius for b in scenario.balls]),
        color_indices=np.array([b.color_index for b in scenario.balls]),
        raw_frame_count=len(raw),
        rejected=rejected,
        collisions=collisions,
    )


def _approaching_pairs(balls):
    hits = 0
    for i in range(len(balls)):
        for j in range(i + 1, len(balls)):
            d = balls[j].position - balls[i].position
            if np.linalg.norm(d) < balls[i].radius + balls[j].radius and np.dot(
                balls[j].velocity - balls[i].velocity, d
            ) < 0.0:
                hits += 1
    return hits
