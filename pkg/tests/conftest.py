import pytest

from retmil.tensor import set_precision


@pytest.fixture(autouse=True)
def default_precision():
    # Commands set the precision globally; every test starts from 32 bit.
    set_precision("f32")
    yield
    set_precision("f32")
