import pytest

from core.models.lattice import GeometryParams


@pytest.fixture
def gp3():
    """d=4, L=3 の円柱パラメータ（既定の c2 と自然対数）"""
    return GeometryParams(L=3, d=4)


@pytest.fixture
def results_dir(tmp_path):
    out = tmp_path / "results"
    out.mkdir()
    return out
