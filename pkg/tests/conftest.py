import time

import numpy as np
import pytest

from stabshape import quat
from stabshape.skeleton import PoseArrays, bundled_skeleton, zero_pose


@pytest.fixture(scope="session")
def human():
    return bundled_skeleton("human")


def random_unit_quats(rng, n):
    return quat.canonical(quat.normalize(rng.normal(size=(n, 4))))


def random_arrays(skeleton, rng, T=1, angle_sigma=0.5, rot_sigma=0.5, root_sigma=0.3):
    """Random (non-degenerate) pose arrays for ``skeleton``."""
    n_rev, n_sph = len(skeleton.revolute), len(skeleton.spherical)
    return PoseArrays(
        rng.normal(scale=root_sigma, size=(T, 3)),
        quat.canonical(quat.exp(rng.normal(scale=rot_sigma, size=(T, 3)))),
        rng.normal(scale=angle_sigma, size=(T, n_rev)),
        quat.canonical(quat.exp(rng.normal(scale=rot_sigma, size=(T, n_sph, 3)))),
    )


PELVIS_HEIGHT = 0.93  # puts the human's toes on the ground in the zero pose


def standing_arrays(skeleton, T):
    arrays = PoseArrays.from_poses(skeleton, [zero_pose(skeleton)] * T).copy()
    arrays.root_translation[:, 2] = PELVIS_HEIGHT
    return arrays


def noisy_human_arrays(skeleton, rng, T=145):
    """Standing human with white noise on root placement, tilt and every joint."""
    a = standing_arrays(skeleton, T)
    a.root_translation[:, :2] += rng.normal(0, 0.05, (T, 2))
    tilt = rng.normal(0, 0.15, (T, 3))
    tilt[:, 2] = 0.0
    a.root_orientation[:] = quat.exp(tilt)
    a.angles[:] += rng.normal(0, 0.3, a.angles.shape)
    a.spherical[:] = quat.exp(rng.normal(0, 0.2, (T, a.spherical.shape[1], 3)))
    return a


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict = {}


def record_criterion(number, title, ok, detail=""):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE[number] = line
    print(line)
    return ok


class criterion:
    """Times a criterion body and records PASS, or FAIL with the first error."""

    def __init__(self, number, title, limit_s):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.notes = []

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, kind, err, tb):
        wall = time.perf_counter() - self.t0
        detail = "; ".join([*self.notes, f"{wall:.1f} s (limit {self.limit_s:g} s)"])
        if err is not None:
            msg = str(err).splitlines()[0] if str(err) else type(err).__name__
            record_criterion(self.number, self.title, False, f"{msg}; {detail}")
            return False
        ok = wall < self.limit_s
        record_criterion(self.number, self.title, ok, detail)
        assert ok, f"criterion {self.number} took {wall:.1f} s, limit {self.limit_s} s"
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
