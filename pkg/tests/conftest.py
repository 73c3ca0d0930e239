import numpy as np
import pytest

import opfdiag as od


@pytest.fixture
def ex1():
    return od.example1(1.0)


@pytest.fixture
def ex2():
    return od.example2()


@pytest.fixture
def ex3():
    return od.example3()


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
