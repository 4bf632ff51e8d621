import pytest

from barw import ModelParams, hitting_profile, threshold_u, tilted_kernel


@pytest.fixture(scope="session")
def profile_2_50_u10():
    return hitting_profile(ModelParams(2.0, 50), 10)


@pytest.fixture(scope="session")
def kernel_2_50_u10(profile_2_50_u10):
    return tilted_kernel(profile_2_50_u10)


@pytest.fixture(scope="session")
def profile_2_200_low():
    params = ModelParams(2.0, 200)
    return hitting_profile(params, threshold_u(params, 0.05, "low"))


@pytest.fixture(scope="session")
def profile_15_300_window():
    params = ModelParams(1.5, 300)
    return hitting_profile(params, threshold_u(params, 0.05, "window"))


@pytest.fixture(scope="session")
def kernel_15_300_window(profile_15_300_window):
    return tilted_kernel(profile_15_300_window)
