import numpy as np
import pytest

from volumetry_cli.manifest import ManifestRow, write_manifest
from volumetry_core.phantom import PhantomSpec, default_kidneys, generate, write_phantom
from volumetry_core.volgrid import VolumeGrid

# Small two-station geometry: 64x48x20 stations overlapping by 12 slices. After trimming 3 slices per
# end the stations share 6 slices and the fused volume keeps 22.
SMALL_DIMS = (64, 48, 20)
SMALL_OVERLAP = 12
SCANNER_SPACING = (2.232, 2.232, 4.5)
SMALL_SEMI_AXES = (15.0, 12.0, 25.0)


def small_spec_with(**changes) -> PhantomSpec:
    values = {
        "station_dims": SMALL_DIMS,
        "spacing": SCANNER_SPACING,
        "overlap_slices": SMALL_OVERLAP,
        "kidneys": default_kidneys(distance_mm=70.0, semi_axes=SMALL_SEMI_AXES),
    }
    values.update(changes)
    return PhantomSpec(**values)


@pytest.fixture
def small_spec():
    return small_spec_with()


@pytest.fixture
def small_phantom(small_spec):
    return generate(small_spec, seed=7, subject_id="S001")


@pytest.fixture
def label_grid():
    """Factory for label grids from a list of labelled voxel indices."""

    def build(dims, voxels, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        values = np.zeros(dims, dtype=np.uint8)
        for index in voxels:
            values[index] = 1
        return VolumeGrid(values, spacing, origin)

    return build


@pytest.fixture(autouse=True)
def _no_env_overrides(monkeypatch):
    # Settings read LOG_LEVEL and LOG_DIR from the environment
    monkeypatch.delenv("LOG_LEVEL", raising=False)
    monkeypatch.delenv("LOG_DIR", raising=False)


@pytest.fixture
def spec_with():
    """Factory for variants of the small phantom spec."""
    return small_spec_with


@pytest.fixture
def phantom_manifest(tmp_path):
    """
    Factory that renders small phantoms to ``tmp_path/cohort`` and writes their manifest.

    Subjects are named S001, S002, ...; ``specs`` maps a subject id to a non-default phantom spec.
    """

    def build(count: int = 3, specs=None, seed: int = 0, with_masks: bool = True):
        specs = specs or {}
        out_dir = tmp_path / "cohort"
        rows = []
        for i in range(count):
            subject_id = f"S{i + 1:03d}"
            phantom = generate(specs.get(subject_id, small_spec_with()), seed=seed + i, subject_id=subject_id)
            files = write_phantom(phantom, out_dir)
            reference = {k: v for k, v in phantom.reference_measurements().items() if v is not None}
            masks = (files.mask2, files.mask3) if with_masks else (None, None)
            rows.append(ManifestRow(subject_id, files.station2, files.station3, *masks, reference=reference))
        return write_manifest(rows, out_dir / "manifest.csv")

    return build
