"""Orthographic software renderer for the simulated scenes.

The camera looks straight down, so every pixel is a vertical ray and a point
(x, y, z) lands on the pixel grid through an affine map of (x, y) alone.
Pixel ``(i, j)`` of an image covers ``[i, i+1) x [j, j+1)`` in pixel units,
with the column index following world x and the row index following world y.
"""

import math
from dataclasses import dataclass

import numpy as np

from .mechanics import Bowl, Heightfield, euler_to_matrix

# Ball base colours in the order objects are indexed: red, green, blue.
BALL_COLORS = np.array([[0.9, 0.15, 0.1], [0.15, 0.8, 0.2], [0.15, 0.3, 0.95]])
# Body-fixed octant palette for textured balls.
OCTANT_COLORS = np.array(
    [
        [1.0, 1.0, 1.0], [0.1, 0.1, 0.1], [1.0, 0.85, 0.1], [0.1, 0.75, 0.9],
        [0.9, 0.2, 0.8], [0.2, 0.9, 0.3], [1.0, 0.5, 0.1], [0.35, 0.2, 0.9],
    ]
)
CHECKER_COLORS = (0.85, 0.35)
CHECKER_FREQ = 4.0  # squares per metre
TERRAIN_ALBEDO = np.array([0.75, 0.7, 0.6])
AMBIENT = 0.2
CAMERA_HEIGHT = 2.0


@dataclass(frozen=True)
class Camera:
    image_size: int = 64
    half_extent: float = 1.0
    height: float = CAMERA_HEIGHT

    @property
    def world_window(self):
        return 2.0 * self.half_extent

    @property
    def pixels_per_metre(self):
        return self.image_size / self.world_window

    def pixel_centres(self):
        """World (X, Y) grids of pixel centres, indexed ``[row, col]``."""
        idx = (np.arange(self.image_size) + 0.5) / self.pixels_per_metre - self.half_extent
        return np.meshgrid(idx, idx, indexing="xy")


def camera_for(surface, image_size=64):
    return Camera(image_size=image_size, half_extent=float(surface.view_half_extent))


@dataclass(frozen=True)
class LightSpec:
    kind: str = "ambient_only"
    position: tuple = (0.0, 0.0, CAMERA_HEIGHT)


def sample_light(rng):
    """Point light above a heightfield: x, y = (2B - 1) * U[1, 1.5], z = 2."""
    signs = 2 * rng.integers(0, 2, size=2) - 1
    mags = rng.uniform(1.0, 1.5, size=2)
    xy = signs * mags
    return LightSpec("ambient_plus_point", (float(xy[0]), float(xy[1]), CAMERA_HEIGHT))


def screen_project(position, camera):
    """World point(s) ``(..., 3)`` to pixel coordinates ``(..., 2)``; z is ignored."""
    p = np.asarray(position, dtype=np.float64)
    return (p[..., :2] + camera.half_extent) * camera.pixels_per_metre


def _bowl_layer(surface, X, Y):
    z = surface.height(X, Y)
    inside = np.isfinite(z)
    c, s = math.cos(surface.z_rotation), math.sin(surface.z_rotation)
    lx, ly = c * X + s * Y, -s * X + c * Y
    zz = np.where(inside, z, 0.0)
    parity = (
        np.floor(CHECKER_FREQ * lx) + np.floor(CHECKER_FREQ * ly) + np.floor(CHECKER_FREQ * zz)
    ).astype(np.int64) & 1
    grey = np.where(parity == 0, CHECKER_COLORS[0], CHECKER_COLORS[1])
    rgb = np.where(inside[..., None], grey[..., None] * np.ones(3), 0.0)
    return rgb, np.where(inside, z, -np.inf)


def _heightfield_layer(surface, X, Y, light):
    z = surface.height(X, Y)
    e = surface.fd_step
    hx = (surface.height(X + e, Y) - surface.height(X - e, Y)) / (2 * e)
    hy = (surface.height(X, Y + e) - surface.height(X, Y - e)) / (2 * e)
    n = np.stack([-hx, -hy, np.ones_like(z)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    shade = np.full(z.shape, AMBIENT)
    if light.kind == "ambient_plus_point":
        to_light = np.asarray(light.position) - np.stack([X, Y, z], axis=-1)
        to_light /= np.linalg.norm(to_light, axis=-1, keepdims=True)
        shade = shade + np.maximum(np.sum(n * to_light, axis=-1), 0.0)
    return TERRAIN_ALBEDO * shade[..., None], z


def terrain_layer(surface, light, camera):
    """Colour and height of the terrain seen by every pixel (static per scene)."""
    X, Y = camera.pixel_centres()
    if isinstance(surface, Bowl):
        return _bowl_layer(surface, X, Y)
    if isinstance(surface, Heightfield):
        return _heightfield_layer(surface, X, Y, light)
    z = surface.height(X, Y)
    return np.full(z.shape + (3,), CHECKER_COLORS[0]), z


def _composite_balls(rgb, depth, balls, camera, ball_textured):
    X, Y = camera.pixel_centres()
    rgb = rgb.copy()
    depth = depth.copy()
    for ball in balls:
        cx, cy, cz = ball.position
        r2 = ball.radius * ball.radius
        d2 = (X - cx) ** 2 + (Y - cy) ** 2
        hit = d2 <= r2
        if not hit.any():
            continue
        top = cz + np.sqrt(np.maximum(r2 - d2, 0.0))
        hit &= top > depth
        if not hit.any():
            continue
        nrm = np.stack(
            [X[hit] - cx, Y[hit] - cy, top[hit] - cz], axis=-1
        ) / ball.radius
        base = BALL_COLORS[ball.color_index % len(BALL_COLORS)]
        if ball_textured:
            body = nrm @ euler_to_matrix(ball.euler_orientation)
            octant = (
                (body[:, 0] > 0).astype(np.int64) * 4
                + (body[:, 1] > 0).astype(np.int64) * 2
                + (body[:, 2] > 0).astype(np.int64)
            )
            albedo = 0.5 * OCTANT_COLORS[octant] + 0.5 * base
        else:
            albedo = np.broadcast_to(base, (nrm.shape[0], 3))
        shade = 0.5 + 0.5 * np.clip(nrm[:, 2], 0.0, 1.0)
        rgb[hit] = albedo * shade[:, None]
        depth[hit] = top[hit]
    return rgb


def to_rgb8(rgb):
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_frame(surface, balls, light, camera, ball_textured=True, terrain=None):
    """Render one ``(H, W, 3)`` uint8 frame; ``terrain`` may cache :func:`terrain_layer`."""
    if terrain is None:
        terrain = terrain_layer(surface, light, camera)
    rgb, depth = terrain
    return to_rgb8(_composite_balls(rgb, depth, balls, camera, ball_textured))


def ball_mask(balls, camera):
    """Pixels whose vertical ray meets any ball (ignoring terrain occlusion)."""
    X, Y = camera.pixel_centres()
    mask = np.zeros(X.shape, dtype=bool)
    for ball in balls:
        cx, cy = ball.position[:2]
        mask |= (X - cx) ** 2 + (Y - cy) ** 2 <= ball.radius ** 2
    return mask


def save_png(path, frame):
    """Write an RGB8 frame with north (world +y) at the top."""
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(frame[::-1])).save(path)
