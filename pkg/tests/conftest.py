import numpy as np
import pytest

from sbperfusion.harness import solve_scene
from sbperfusion.scene import builtin


@pytest.fixture(scope="session")
def straight_02():
    scene = builtin("straight", eps=0.02)
    sol, kmat = solve_scene(scene)
    return scene, sol, kmat


@pytest.fixture(scope="session")
def near_loop_02():
    scene = builtin("near_loop", eps=0.02)
    sol, kmat = solve_scene(scene)
    return scene, sol, kmat


@pytest.fixture(scope="session")
def planar_small():
    """Curved scene on a coarse mesh for the cheaper field tests."""
    scene = builtin("planar", eps=0.02, nodes=160)
    sol, kmat = solve_scene(scene)
    return scene, sol, kmat


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def figures_run(tmp_path_factory):
    """One ``figures`` run shared by the harness and acceptance tests."""
    from sbperfusion.harness import RunConfig, run

    out = tmp_path_factory.mktemp("figures")
    report = run(RunConfig(scene="straight", mode="figures", out=str(out)))
    return out, report
