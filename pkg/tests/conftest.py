import pytest

from stomax.model import Box, NoiseSpec, ProblemSpec, SigmaField


@pytest.fixture
def unit_box():
    return Box.cube(1.0)


@pytest.fixture
def small_spec(unit_box):
    """Full-noise problem on the unit cube with a compact spectrum."""
    q1 = NoiseSpec.default(unit_box, per_axis=2, decay_r=3.0, trace=0.5)
    q2 = NoiseSpec.default(unit_box, per_axis=2, decay_r=3.0, trace=1.0)
    return ProblemSpec(box=unit_box, sigma=SigmaField.constant(1.0), lambda1=0.3,
                       lambda2=(1.0, 0.5, 0.25), q1=q1, q2=q2, trunc_b=4.0)


@pytest.fixture
def additive_spec(unit_box):
    q = NoiseSpec.default(unit_box, per_axis=2, decay_r=3.0, trace=1.0)
    return ProblemSpec(box=unit_box, sigma=SigmaField.constant(1.0), lambda1=0.0,
                       lambda2=(1.0, 1.0, 1.0), q1=q, q2=q, trunc_b=4.0)
