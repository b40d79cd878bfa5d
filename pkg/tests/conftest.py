import importlib

import pytest

from opbayes import _pykernels


def compiled_kernels():
    try:
        return importlib.import_module("opbayes._kernels")
    except ImportError:
        return None


@pytest.fixture(params=["python", "cython"])
def kernels(request):
    """Each available kernel backend in turn."""
    if request.param == "python":
        return _pykernels
    mod = compiled_kernels()
    if mod is None:
        pytest.skip("compiled kernels not built")
    return mod


@pytest.fixture
def both_kernels():
    mod = compiled_kernels()
    if mod is None:
        pytest.skip("compiled kernels not built")
    return _pykernels, mod
