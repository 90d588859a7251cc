import os

import pytest

from asyncschwarz.decomposition import build_coarse, partition_box
from asyncschwarz.problem import PoissonSpec, assemble_poisson
from asyncschwarz.subdomains import SchwarzSystem


def make_system(grid, procs, overlap=1, weights="multiplicity", reduced=False, coarse=True, **kw):
    A, b = assemble_poisson(PoissonSpec(grid, reduced=reduced))
    d = partition_box(grid, procs, overlap, weights)
    return SchwarzSystem(A, b, d, build_coarse(d, A) if coarse else None, **kw)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ASYNCSCHWARZ_FULL_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="set ASYNCSCHWARZ_FULL_SCALE=1 to run 80^3 cases")
    for item in items:
        if "full_scale" in item.keywords:
            item.add_marker(skip)
