from __future__ import annotations

import numpy as np
import pytest

from instlift import geometry as geo
from instlift import scene as sc

SMOKE_SPEC = ("sphere 1 -0.45 -0.2 0 0.3; box 2 0.1 -0.5 -0.3 0.5 -0.1 0.3; "
              "sphere 3 0.1 0.45 -0.05 0.25; box 4 -0.7 -0.7 -0.45 0.7 0.7 -0.3")


@pytest.fixture(scope="session")
def two_spheres():
    return sc.build_scene([("sphere", 1, (-0.4, 0.0, 0.0), 0.3), ("sphere", 2, (0.4, 0.1, 0.0), 0.35)])


@pytest.fixture(scope="session")
def quad_scene():
    return sc.parse_scene_text(SMOKE_SPEC)


def orbit_frames(scene, n, size=64, radius=2.6, height=1.3, arc_deg=360.0):
    f = 0.5 * size / np.tan(np.radians(30.0))
    k = geo.Intrinsics(f, f, (size - 1) / 2, (size - 1) / 2, size, size)
    poses = sc.generate_trajectory("orbit", n, {"radius": radius, "height": height, "arc_deg": arc_deg}, scene)
    return [sc.ray_cast(scene, (p, k)) for p in poses]


# acceptance outcomes, keyed by criterion id, printed after the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(key: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE[key] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:>3} {'PASS' if ok else 'FAIL'}  {detail}")
