import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from raybundle.rays import PinholeCamera


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_intrinsics(rng) -> np.ndarray:
    fx, fy = rng.uniform(0.8, 3.0, size=2)
    skew, cx, cy = rng.uniform(-0.1, 0.1, size=3)
    return np.array([[fx, skew, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def random_camera(rng, intrinsics=True) -> PinholeCamera:
    K = random_intrinsics(rng) if intrinsics else np.eye(3)
    return PinholeCamera(random_rotation(rng), rng.normal(size=3) * 2.0, K)


def rotation_about(axis, degrees) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return Rotation.from_rotvec(np.deg2rad(degrees) * axis / np.linalg.norm(axis)).as_matrix()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- desk-scale training shared by the acceptance and trend suites -------------

ACCEPTANCE_LINES: list[str] = []

TOY_SCENES = 2000
TOY_STEPS = 3000
TOY_BATCH = 16
HELDOUT_SCENES = 100


def report(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _train_toy(mode: str):
    import time

    import torch

    from raybundle.denoiser import TrainConfig, train
    from raybundle.experiments import make_dataset

    torch.set_num_threads(1)
    start = time.perf_counter()
    data = make_dataset(TOY_SCENES, p=8)
    model = train(data, TrainConfig(steps=TOY_STEPS, batch_size=TOY_BATCH, lr=1e-3, mode=mode, seed=0))
    return model, time.perf_counter() - start


@pytest.fixture(scope="session")
def heldout():
    from raybundle.experiments import HELDOUT_SEED_BASE, make_viewsets
    return make_viewsets(HELDOUT_SCENES, p=8, seed_base=HELDOUT_SEED_BASE)


@pytest.fixture(scope="session")
def diffusion_model():
    """Four-block, width-128 denoiser trained in diffusion mode, with its wall time."""
    return _train_toy("diffusion")


@pytest.fixture(scope="session")
def regression_model():
    return _train_toy("regression")
