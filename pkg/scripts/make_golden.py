"""Regenerate the golden frames used by tests/test_optics.py.

Run only when the renderer changes on purpose; commit the new files.
"""

import pathlib

import numpy as np

from rlab import mechanics, optics

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data"


def golden_scenes():
    bowl = mechanics.make_bowl(0.8, 0.4)
    b1 = mechanics.BallState(np.array([0.2, -0.1, 0.1]), np.zeros(3), np.zeros(3), 0.225, 0,
                             np.array([0.3, -0.7, 1.2]))
    b2 = mechanics.BallState(np.array([-0.4, 0.3, 0.2]), np.zeros(3), np.zeros(3), 0.04, 2)
    hf = mechanics.make_heightfield(17, 0.4, (3.0, 4.5, 0.6))
    light = optics.sample_light(np.random.default_rng(5))
    return {
        "golden_bowl": (bowl, [b1, b2], optics.LightSpec(), 64),
        "golden_heightfield": (hf, [b2], light, 64),
    }


def render(name):
    surface, balls, light, size = golden_scenes()[name]
    return optics.render_frame(surface, balls, light, optics.camera_for(surface, size))


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name in golden_scenes():
        np.save(OUT / f"{name}.npy", render(name))
        print("wrote", OUT / f"{name}.npy")
