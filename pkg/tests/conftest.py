"""Shared fixtures: group instances and seeded RNGs."""

import random

import pytest

from secagg.groups import GroupSpec, bench_group, production_group, test_group

# A mid-size group for scale and distinctness tests: 128-bit prime order,
# 160-bit modulus. Too small for real security, large enough that hash or
# mask collisions are astronomically unlikely, and fast enough to run the
# full simulation grids. Generated the same way as the production set.
SIM_Q = 0x8E71D2567D170CB9A3B488BD1A756271
SIM_P = 0x83C8FF7FED01034E147A59DF3CC16FC5A9202DAB
SIM_G = 0x5973CF006941DCCC6CE6AFA95540BC62C598E558


@pytest.fixture(scope="session")
def tiny_group() -> GroupSpec:
    return test_group()


@pytest.fixture(scope="session")
def sim_group() -> GroupSpec:
    return GroupSpec.from_params("sim", SIM_P, SIM_Q, SIM_G)


@pytest.fixture(scope="session")
def prod_group() -> GroupSpec:
    return production_group()


@pytest.fixture(scope="session")
def scale_group() -> GroupSpec:
    return bench_group()


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xC0FFEE)
