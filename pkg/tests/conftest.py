import pytest

from actar.config import PipelineConfig, apply_overrides
from actar.synth import generate_dataset


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    return generate_dataset(root / "data", per_class=4, seed=3, num_frames=16, reference_count=200)


def quick_config(manifest, root, **extra) -> PipelineConfig:
    base = {
        "manifest": str(manifest), "output_dir": str(root / "out"), "model_dir": str(root / "models"),
        "filter.epochs": 5, "cluster.epochs": 3, "classifier.epochs": 3, "classifier.hidden": 8,
    }
    base.update(extra)
    return apply_overrides(PipelineConfig(), base)


@pytest.fixture
def quick(small_manifest, tmp_path):
    return lambda **extra: quick_config(small_manifest, tmp_path, **extra)
