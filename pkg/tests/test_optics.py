import importlib.util
import pathlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlab import mechanics, optics

DATA = pathlib.Path(__file__).parent / "data"
_spec = importlib.util.spec_from_file_location(
    "make_golden", pathlib.Path(__file__).parent.parent / "scripts" / "make_golden.py"
)
make_golden = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(make_golden)

CAM = optics.Camera(image_size=64, half_extent=1.0)


def ball(x, y, r=0.1, idx=0, z=0.2, orient=(0.0, 0.0, 0.0)):
    return mechanics.BallState(np.array([x, y, z]), np.zeros(3), np.zeros(3), r, idx,
                               np.array(orient))


def centroid(mask):
    rows, cols = np.nonzero(mask)
    # column follows x, row follows y; pixel j covers [j, j+1)
    return np.array([cols.mean() + 0.5, rows.mean() + 0.5])


def flat_scene(balls, textured=False):
    return optics.render_frame(mechanics.Plane(), balls, optics.LightSpec(), CAM, textured)


def ball_pixels(balls):
    return (flat_scene(balls) != flat_scene([])).any(-1)


def test_screen_project_endpoints():
    assert np.array_equal(optics.screen_project([0.0, 0.0, 0.3], CAM), [32.0, 32.0])
    assert np.array_equal(optics.screen_project([-1.0, -1.0, 0.0], CAM), [0.0, 0.0])
    assert np.array_equal(optics.screen_project([1.0, 1.0, 0.0], CAM), [64.0, 64.0])


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-5, 5), st.floats(-5, 5))
def test_screen_project_ignores_z(x, y, z1, z2):
    a = optics.screen_project([x, y, z1], CAM)
    b = optics.screen_project([x, y, z2], CAM)
    assert np.array_equal(a, b)


@settings(max_examples=30)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
def test_screen_project_affine(x, y):
    p = optics.screen_project([x, y, 0.0], CAM)
    assert p == pytest.approx([(x + 1) * 32, (y + 1) * 32], abs=1e-12)


def test_centred_ball_centroid():
    mask = ball_pixels([ball(0.0, 0.0)])
    assert np.abs(centroid(mask) - [32, 32]).max() <= 0.5


def test_translation_moves_centroid():
    ref = centroid(ball_pixels([ball(0.0, 0.0)]))
    for dx in (0.1, 0.37, -0.52):
        moved = centroid(ball_pixels([ball(dx, 0.0)]))
        assert abs(moved[0] - ref[0] - dx * CAM.pixels_per_metre) <= 0.5
        assert abs(moved[1] - ref[1]) <= 0.5


def test_projected_centre_matches_render_centroid():
    b = ball(0.31, -0.42, r=0.2)
    c = centroid(ball_pixels([b]))
    assert np.abs(c - optics.screen_project(b.position, CAM)).max() <= 0.5


def test_texture_toggle_changes_only_ball_pixels():
    surface = mechanics.make_bowl(0.7, 0.2)
    balls = [ball(0.1, 0.2, r=0.225, orient=(0.4, 0.2, 1.0)), ball(-0.3, -0.2, r=0.04, idx=1)]
    cam = optics.camera_for(surface)
    a = optics.render_frame(surface, balls, optics.LightSpec(), cam, True)
    b = optics.render_frame(surface, balls, optics.LightSpec(), cam, False)
    mask = optics.ball_mask(balls, cam)
    assert np.array_equal(a[~mask], b[~mask])
    assert not np.array_equal(a[mask], b[mask])


def test_plain_ball_uses_flat_colour():
    frame = flat_scene([ball(0.0, 0.0, r=0.3, idx=1)])
    hue = frame[32, 32].astype(float)
    assert hue.argmax() == 1  # green ball


def test_light_sampling_support():
    rng = np.random.default_rng(0)
    for _ in range(500):
        light = optics.sample_light(rng)
        x, y, z = light.position
        assert 1.0 <= abs(x) <= 1.5 and 1.0 <= abs(y) <= 1.5
        assert z == 2.0
        assert light.kind == "ambient_plus_point"


def test_heightfield_shading_bounds():
    hf = mechanics.make_heightfield(3, 0.5)
    light = optics.sample_light(np.random.default_rng(1))
    frame = optics.render_frame(hf, [], light, optics.camera_for(hf))
    albedo = optics.TERRAIN_ALBEDO
    # ambient floor; ambient plus full Lambert as the ceiling
    assert np.all(frame >= np.floor(optics.AMBIENT * albedo * 255) - 1)
    assert np.all(frame <= np.ceil(np.minimum((1 + optics.AMBIENT) * albedo, 1) * 255) + 1)
    assert frame.std() > 1.0


def test_bowl_background_black_outside_rim():
    bowl = mechanics.make_bowl(0.5)
    frame = optics.render_frame(bowl, [], optics.LightSpec(), optics.camera_for(bowl))
    assert np.all(frame[32, 0] == 0)  # x = -0.98 lies outside a = 0.5
    assert frame[32, 32].sum() > 0


@pytest.mark.parametrize("name", ["golden_bowl", "golden_heightfield"])
def test_golden_frames(name):
    a, b = make_golden.render(name), make_golden.render(name)
    assert a.dtype == np.uint8 and a.shape == (64, 64, 3)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() == np.load(DATA / f"{name}.npy").tobytes()


def test_png_export_flips_rows(tmp_path):
    from PIL import Image

    frame = flat_scene([ball(0.0, 0.6, r=0.2)])
    optics.save_png(tmp_path / "f.png", frame)
    back = np.asarray(Image.open(tmp_path / "f.png"))
    assert np.array_equal(back, frame[::-1])
