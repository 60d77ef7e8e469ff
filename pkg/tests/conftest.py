from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import strategies as st

from vgreg.core import CorrespondenceSet, RigidTransform


def rodrigues(axis, angle):
    """Rotation matrix from axis/angle written out term by term (test oracle)."""
    x, y, z = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def random_transform(rng: np.random.Generator, max_angle=math.pi, max_shift=1.0) -> RigidTransform:
    axis = rng.normal(size=3)
    angle = rng.uniform(0.0, max_angle)
    return RigidTransform(rodrigues(axis, angle), rng.uniform(-max_shift, max_shift, 3))


def homogeneous_apply(t: RigidTransform, p):
    """Apply through an explicit 4x4 built by hand."""
    m = np.eye(4)
    m[:3, :3] = t.rotation
    m[:3, 3] = t.translation
    p = np.atleast_2d(p)
    h = np.hstack([p, np.ones((len(p), 1))])
    return (m @ h.T).T[:, :3]


def exact_set(rng, t: RigidTransform, n: int, spread=1.0) -> CorrespondenceSet:
    p = rng.uniform(-spread, spread, (n, 3))
    return CorrespondenceSet.build(p, homogeneous_apply(t, p))


def rotation_angle(r) -> float:
    """Angle of rotation ``r``; ‖R − I‖_F = 2√2 sin(θ/2) keeps precision near zero."""
    s = np.linalg.norm(np.asarray(r) - np.eye(3)) / (2.0 * math.sqrt(2.0))
    return 2.0 * math.asin(min(1.0, s))


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
