import pytest

from hopcl.data import ClassSpec, SynthProblemSpec, SynthSpec, generate_synthetic
from hopcl.model import BackboneSpec, ModelState
from hopcl.pooling import PoolingSpec


def mean_separable_spec(t=2, q=4, seed=9, n_train=80, n_val=30, n_test=40,
                        gap=2.0):
    """Problems whose classes differ by mean only: easy for any pooling."""
    problems = [
        SynthProblemSpec(
            name=f"prob{p}",
            classes=[ClassSpec(mean=-gap / 2, scale=0.5),
                     ClassSpec(mean=gap / 2, scale=0.5)],
        )
        for p in range(t)
    ]
    return SynthSpec(problems=problems, n_train=n_train, n_val=n_val,
                     n_test=n_test, min_len=6, max_len=10, channels=q, seed=seed)


def variance_separable_spec(t=2, q=8, seed=13, jitter=2.5, **sizes):
    """Classes share their mean; only moments of order >= 2 separate them."""
    problems = [
        SynthProblemSpec(
            name=f"var{p}",
            classes=[ClassSpec(mean=0.0, scale=0.45),
                     ClassSpec(mean=0.0, scale=1.05)],
        )
        for p in range(t)
    ]
    defaults = dict(n_train=200, n_val=60, n_test=100)
    defaults.update(sizes)
    return SynthSpec(problems=problems, min_len=24, max_len=24, channels=q,
                     mean_jitter=jitter, neutral_first_token=True, seed=seed,
                     **defaults)


@pytest.fixture
def two_problems():
    return generate_synthetic(mean_separable_spec(t=2))


@pytest.fixture
def til_state():
    return ModelState(
        backbone=BackboneSpec(kind="FILE", channels=4, max_len=16),
        pooling=PoolingSpec("MOMENTS", 3),
        mode="TIL",
        baseline="HOP",
        bottleneck=6,
    )
