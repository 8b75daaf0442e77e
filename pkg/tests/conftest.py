"""Shared fixtures: cameras, rigs, and canonical synthetic scenes."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from mvsbisect.geometry import Camera
from mvsbisect.scenegen import SceneSpec, render


def make_camera(fx=100.0, fy=None, cx=None, cy=None, R=None, t=None,
                width=64, height=64) -> Camera:
    fy = fx if fy is None else fy
    cx = (width - 1) / 2.0 if cx is None else cx
    cy = (height - 1) / 2.0 if cy is None else cy
    K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    R = np.eye(3) if R is None else np.asarray(R, dtype=np.float64)
    t = np.zeros(3) if t is None else np.asarray(t, dtype=np.float64)
    return Camera(K=K, Rt=np.hstack([R, t.reshape(3, 1)]), width=width, height=height)


def random_rig(rng, width=64, height=64, max_angle=0.25, max_shift=0.4):
    """Two cameras with random intrinsics and a modest relative pose."""
    fx = rng.uniform(80.0, 140.0)
    ref = make_camera(fx=fx, width=width, height=height)
    rotvec = rng.uniform(-max_angle, max_angle, size=3)
    R = Rotation.from_rotvec(rotvec).as_matrix()
    t = rng.uniform(-max_shift, max_shift, size=3)
    src = make_camera(fx=rng.uniform(80.0, 140.0), R=R, t=t, width=width, height=height)
    return ref, src


def rectified_pair(fx=100.0, baseline=0.2, width=64, height=64):
    """Side-by-side pair: source displaced along +x, identical K, no rotation."""
    ref = make_camera(fx=fx, width=width, height=height)
    src = make_camera(fx=fx, t=np.array([-baseline, 0.0, 0.0]),
                      width=width, height=height)
    return ref, src


PLANE_SPEC = {
    "width": 96, "height": 96, "focal": 110.0, "seed": 5, "ref_index": 2,
    "rig": {"count": 5, "baseline": 0.12, "look_at": [0.0, 0.0, 2.2]},
    "objects": [
        {"kind": "plane", "point": [0.0, 0.0, 2.2], "normal": [0.0, 0.0, -1.0],
         "texture": {"kind": "noise", "seed": 11, "scale": 0.08, "octaves": 3}},
    ],
}

OCCLUSION_SPEC = {
    "width": 96, "height": 96, "focal": 90.0, "seed": 3, "ref_index": 2,
    "rig": {"count": 5, "baseline": 0.16, "look_at": [0.0, 0.0, 2.2]},
    "objects": [
        {"kind": "plane", "point": [0.0, 0.0, 2.6], "normal": [0.0, 0.0, -1.0],
         "texture": {"kind": "noise", "seed": 11, "scale": 0.2, "octaves": 3}},
        {"kind": "rect", "point": [0.3, 0.0, 1.8], "normal": [0.0, 0.0, -1.0],
         "half_extent": [0.22, 0.4],
         "texture": {"kind": "noise", "seed": 5, "scale": 0.1, "octaves": 3}},
    ],
}


@pytest.fixture(scope="session")
def plane_scene():
    return render(SceneSpec.from_dict(PLANE_SPEC))


@pytest.fixture(scope="session")
def occlusion_scene():
    return render(SceneSpec.from_dict(OCCLUSION_SPEC))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
