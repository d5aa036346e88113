import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from springgrasp import (GaussianProcessImplicitSurface, PointCloud,
                         load_hand, sample_synthetic)


def random_spring_system(rng, m=None):
    from springgrasp.spring import SpringSystem
    m = m or int(rng.integers(3, 6))
    contacts = rng.uniform(-0.1, 0.1, size=(m, 3))
    targets = contacts + rng.uniform(-0.05, 0.05, size=(m, 3))
    gains = rng.uniform(10.0, 500.0, size=m)
    return SpringSystem(contacts=contacts, targets=targets, gains=gains)


@pytest.fixture(scope="session")
def sphere_cloud():
    cloud = sample_synthetic("sphere", (0.05,), n=200,
                             rng=np.random.default_rng(3))
    # rest the sphere on the z = 0 table
    return PointCloud(points=cloud.points + [0.0, 0.0, 0.05],
                      normals=cloud.normals)


@pytest.fixture(scope="session")
def sphere_model(sphere_cloud):
    return GaussianProcessImplicitSurface().fit_point_cloud(sphere_cloud)


@pytest.fixture(scope="session")
def hand():
    return load_hand("four_finger")
