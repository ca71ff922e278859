import numpy as np
import pytest

from relightfield.bsdf import AlbedoTexture, BlendedBsdf
from relightfield.envmap import EnvironmentMap
from relightfield.geometry import TriangleMesh, build_bvh
from relightfield.pathtracer import Scene
from relightfield.sceneio import make_probe_mesh, make_uv_sphere

PROBE_DIR = None


def repo_scene_dir():
    from pathlib import Path

    return Path(__file__).resolve().parent.parent / "scenes" / "probe"


@pytest.fixture(scope="session")
def probe_scene_dir():
    d = repo_scene_dir()
    if not (d / "probe.toml").exists():
        pytest.skip("bundled probe scene missing (run scripts/gen_probe_scene.py)")
    return d


@pytest.fixture(scope="session")
def sphere_mesh():
    return make_uv_sphere(n_theta=16, n_phi=24, radius=1.0)


@pytest.fixture(scope="session")
def sphere_bvh(sphere_mesh):
    return build_bvh(sphere_mesh)


@pytest.fixture(scope="session")
def probe_mesh():
    return make_probe_mesh()


@pytest.fixture(scope="session")
def probe_scene(probe_mesh):
    return Scene(probe_mesh)


@pytest.fixture(scope="session")
def plane_mesh():
    verts = np.array(
        [[-20, -20, 0], [20, -20, 0], [20, 20, 0], [-20, 20, 0]], dtype=np.float64
    )
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    normals = np.tile([0.0, 0.0, 1.0], (4, 1))
    uvs = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
    return TriangleMesh(verts, tris, normals, uvs)


@pytest.fixture(scope="session")
def plane_scene(plane_mesh):
    return Scene(plane_mesh)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def gray_bsdf():
    return BlendedBsdf(
        w=0.0, alpha=0.2, albedo=AlbedoTexture.constant((0.6, 0.6, 0.6), 16, 16)
    )


@pytest.fixture(scope="session")
def mixed_bsdf():
    return BlendedBsdf(
        w=0.3, alpha=0.15, albedo=AlbedoTexture.constant((0.55, 0.4, 0.3), 16, 16)
    )


@pytest.fixture(scope="session")
def uniform_env():
    return EnvironmentMap.constant((1.0, 1.0, 1.0), 16, 8)
