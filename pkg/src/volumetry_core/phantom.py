"""
Synthetic two-station kidney phantoms with analytic ground truth.

A phantom is rendered once on the union grid of both stations and then cropped into station 2
(upper) and station 3 (lower), so the overlap content of the two stations is identical unless an
artifact is injected. Membership is decided at voxel centres, which keeps the ground truth
integer-exact. Besides the station images the phantom carries the masks a segmenter would have
produced: the ground truth plus any spurious islands, with the same motion artifact as the images.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .constants import (
    DEFAULT_OVERLAP_SLICES,
    MM3_PER_CM3,
    N_TRIM,
    STATION_DIMS,
    STATION_INDICES,
    STATION_SPACING,
    Side,
)
from .exceptions import PhantomSpecError
from .volgrid import GridGeometry, IndexTriple, StationPair, Triple, VolumeGrid
from .volume_io import save_volume

logger = logging.getLogger(__name__)

# Sub-samples per axis when a cyst only partly overlaps its kidney
CYST_SUPERSAMPLING = 96
# Surface points used to decide whether a cyst lies entirely inside a kidney
CYST_SURFACE_SAMPLES = 4096
# Islands keep this many voxels (Chebyshev) away from kidneys and from each other
ISLAND_CLEARANCE = 2
ISLAND_PLACEMENT_ATTEMPTS = 2000

ARTIFACT_KINDS = ("motion", "islands", "cyst", "location", "missing_kidney")


@dataclass(frozen=True)
class Kidney:
    side: Side
    center: Triple
    semi_axes: Triple
    intensity: float = 0.9

    def __post_init__(self):
        if any(a <= 0 for a in self.semi_axes):
            raise PhantomSpecError(f"{self.side.value} kidney semi-axes must be positive, got {self.semi_axes}")

    @property
    def volume_mm3(self) -> float:
        a, b, c = self.semi_axes
        return 4.0 / 3.0 * math.pi * a * b * c

    def inside(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        a, b, c = self.semi_axes
        cx, cy, cz = self.center
        return ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2 <= 1.0


@dataclass(frozen=True)
class Cyst:
    center: Triple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise PhantomSpecError(f"cyst radius must be positive, got {self.radius}")

    def inside(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        cx, cy, cz = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= self.radius**2


@dataclass(frozen=True)
class Artifacts:
    # Whole-voxel shift of station 3's content (images and masks)
    motion_shift_voxels: IndexTriple = (0, 0, 0)
    island_count: int = 0
    # Edge length of each cubic island, in voxels
    island_size: int = 1
    cysts: tuple[Cyst, ...] = ()
    delete_kidney: Side | None = None

    @property
    def present(self) -> bool:
        if any(self.motion_shift_voxels) or self.island_count > 0:
            return True
        return bool(self.cysts) or self.delete_kidney is not None


def default_kidneys(distance_mm: float = 153.0, center_z: float = 0.0, semi_axes: Triple = (30.0, 25.0, 50.0)):
    """A left/right kidney pair centred on the midline, ``distance_mm`` apart along x."""
    half = distance_mm / 2.0
    return (
        Kidney(Side.LEFT, (half, 0.0, center_z), semi_axes),
        Kidney(Side.RIGHT, (-half, 0.0, center_z), semi_axes),
    )


@dataclass(frozen=True)
class PhantomSpec:
    station_dims: IndexTriple = STATION_DIMS
    spacing: Triple = STATION_SPACING
    overlap_slices: int = DEFAULT_OVERLAP_SLICES
    kidneys: tuple[Kidney, ...] = field(default_factory=default_kidneys)
    background: float = 0.1
    noise_sigma: float = 0.0
    artifacts: Artifacts = field(default_factory=Artifacts)
    # Slices the pipeline will trim; islands stay inside the retained slices
    n_trim: int = N_TRIM
    # Allow kidneys that leave the scanned volume (location-cost tests)
    allow_outside: bool = False

    def __post_init__(self):
        nz = self.station_dims[2]
        if not 0 <= self.overlap_slices < nz:
            raise PhantomSpecError(f"overlap_slices must be in [0, {nz}), got {self.overlap_slices}")
        if self.noise_sigma < 0:
            raise PhantomSpecError(f"noise sigma must be non-negative, got {self.noise_sigma}")
        for kidney in self.kidneys:
            if kidney.intensity <= self.background:
                raise PhantomSpecError(f"{kidney.side.value} kidney intensity must exceed the background")
        sides = [k.side for k in self.kidneys]
        if len(set(sides)) != len(sides):
            raise PhantomSpecError("at most one kidney per side")
        if self.artifacts.island_count < 0 or self.artifacts.island_size < 1:
            raise PhantomSpecError("island count must be non-negative and island size at least 1")
        cysts = self.artifacts.cysts
        for i, first in enumerate(cysts):
            for second in cysts[i + 1 :]:
                if math.dist(first.center, second.center) < first.radius + second.radius:
                    raise PhantomSpecError("cysts must not overlap each other")

    @property
    def union_geometry(self) -> GridGeometry:
        """Raw grid spanning both stations, centred on the scanner origin."""
        nx, ny, nz = self.station_dims
        nz_union = 2 * nz - self.overlap_slices
        dims = (nx, ny, nz_union)
        origin = tuple(-(n - 1) / 2.0 * s for n, s in zip(dims, self.spacing, strict=True))
        return GridGeometry(dims, self.spacing, origin)

    @property
    def fused_geometry(self) -> GridGeometry:
        """The union grid without the trimmed slices, which is what fusion of the trimmed stations yields."""
        union = self.union_geometry
        return union.crop_z(self.n_trim, union.dims[2] - self.n_trim)


@dataclass(frozen=True, eq=False)
class Phantom:
    spec: PhantomSpec
    stations: StationPair
    # What a segmenter would have returned per station: ground truth plus islands, same motion as the images
    masks: StationPair
    # Binary ground truth on the raw union grid
    ground_truth: VolumeGrid
    analytic_volumes_cm3: dict[Side, float]
    voxel_volumes_cm3: dict[Side, float]
    analytic_coms: dict[Side, Triple | None]
    island_voxels: int

    def fused_ground_truth(self) -> VolumeGrid:
        """Ground truth restricted to the slices the pipeline keeps."""
        nz = self.ground_truth.dims[2]
        n_trim = self.spec.n_trim
        geometry = self.ground_truth.geometry.crop_z(n_trim, nz - n_trim)
        return VolumeGrid.from_geometry(geometry, self.ground_truth.values[:, :, n_trim : nz - n_trim])

    @property
    def analytic_total_cm3(self) -> float:
        return sum(self.analytic_volumes_cm3.values())

    @property
    def analytic_distance_mm(self) -> float | None:
        left, right = self.analytic_coms[Side.LEFT], self.analytic_coms[Side.RIGHT]
        if left is None or right is None:
            return None
        return math.dist(left, right)

    def reference_measurements(self) -> dict[str, float | None]:
        return {
            "vol_left_cm3": self.analytic_volumes_cm3[Side.LEFT],
            "vol_right_cm3": self.analytic_volumes_cm3[Side.RIGHT],
            "vol_total_cm3": self.analytic_total_cm3,
            "distance_mm": self.analytic_distance_mm,
        }


def _world_axes(geometry: GridGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        geometry.world_axis(0)[:, None, None],
        geometry.world_axis(1)[None, :, None],
        geometry.world_axis(2)[None, None, :],
    )


def voxelize(kidneys: tuple[Kidney, ...], geometry: GridGeometry, cysts: tuple[Cyst, ...] = ()) -> VolumeGrid:
    """Label grid of the voxels whose centres lie inside any kidney and outside every cyst."""
    x, y, z = _world_axes(geometry)
    labels = np.zeros(geometry.dims, dtype=bool)
    for kidney in kidneys:
        labels |= kidney.inside(x, y, z)
    for cyst in cysts:
        labels &= ~cyst.inside(x, y, z)
    return VolumeGrid.from_geometry(geometry, labels.astype(np.uint8))


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / count)
    azimuth = math.pi * (1.0 + 5**0.5) * i
    return np.stack(
        [np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)],
        axis=1,
    )


def _cyst_overlap(kidney: Kidney, cyst: Cyst) -> tuple[float, np.ndarray]:
    """Volume (mm³) and centroid of the part of ``cyst`` inside ``kidney``."""
    surface = np.asarray(cyst.center) + cyst.radius * _fibonacci_sphere(CYST_SURFACE_SAMPLES)
    inside = kidney.inside(surface[:, 0], surface[:, 1], surface[:, 2])
    if inside.all():
        return 4.0 / 3.0 * math.pi * cyst.radius**3, np.asarray(cyst.center, dtype=np.float64)

    n = CYST_SUPERSAMPLING
    step = 2.0 * cyst.radius / n
    offsets = -cyst.radius + step * (np.arange(n) + 0.5)
    x = cyst.center[0] + offsets[:, None, None]
    y = cyst.center[1] + offsets[None, :, None]
    z = cyst.center[2] + offsets[None, None, :]
    both = cyst.inside(x, y, z) & kidney.inside(x, y, z)
    count = int(np.count_nonzero(both))
    if count == 0:
        return 0.0, np.asarray(cyst.center, dtype=np.float64)
    idx = np.argwhere(both)
    centroid = np.asarray(cyst.center) - cyst.radius + step * (idx.mean(axis=0) + 0.5)
    return count * step**3, centroid


def _analytic(kidney: Kidney, cysts: tuple[Cyst, ...]) -> tuple[float, Triple]:
    volume = kidney.volume_mm3
    moment = volume * np.asarray(kidney.center, dtype=np.float64)
    for cyst in cysts:
        carved, centroid = _cyst_overlap(kidney, cyst)
        volume -= carved
        moment -= carved * centroid
    com = moment / volume
    return volume / MM3_PER_CM3, (float(com[0]), float(com[1]), float(com[2]))


def _check_inside(spec: PhantomSpec, kidneys: tuple[Kidney, ...]) -> None:
    if spec.allow_outside:
        return
    geometry = spec.union_geometry
    low, high = geometry.extent_min, geometry.extent_max
    for kidney in kidneys:
        for axis in range(3):
            if (
                kidney.center[axis] - kidney.semi_axes[axis] < low[axis]
                or kidney.center[axis] + kidney.semi_axes[axis] > high[axis]
            ):
                side = kidney.side.value
                raise PhantomSpecError(f"{side} kidney extends outside both stations along axis {'xyz'[axis]}")


def _place_islands(
    occupied: np.ndarray,
    count: int,
    size: int,
    z_range: tuple[int, int],
    rng: np.random.Generator,
) -> list[IndexTriple]:
    forbidden = ndimage.binary_dilation(occupied, structure=np.ones((3, 3, 3), dtype=bool), iterations=ISLAND_CLEARANCE)
    nx, ny, _ = occupied.shape
    margin = ISLAND_CLEARANCE
    upper = (nx - size - margin, ny - size - margin, z_range[1] - size)
    lower = (margin, margin, z_range[0])
    if any(hi < lo for lo, hi in zip(lower, upper, strict=True)):
        raise PhantomSpecError(f"islands of size {size} do not fit the retained field of view")

    corners: list[IndexTriple] = []
    for _ in range(ISLAND_PLACEMENT_ATTEMPTS):
        if len(corners) == count:
            break
        x, y, z = (int(rng.integers(lo, hi + 1)) for lo, hi in zip(lower, upper, strict=True))
        if forbidden[x : x + size, y : y + size, z : z + size].any():
            continue
        corners.append((x, y, z))
        forbidden[
            max(0, x - margin) : x + size + margin,
            max(0, y - margin) : y + size + margin,
            max(0, z - margin) : z + size + margin,
        ] = True
    if len(corners) < count:
        raise PhantomSpecError(f"could only place {len(corners)} of {count} islands")
    return corners


def generate(spec: PhantomSpec, seed: int = 0, subject_id: str = "phantom") -> Phantom:
    """
    Render a phantom. The same spec and seed always give bit-identical volumes.

    Raises:
        PhantomSpecError: If a kidney leaves the scanned volume (unless allowed) or islands cannot be placed.
    """
    artifacts = spec.artifacts
    kidneys = tuple(k for k in spec.kidneys if k.side is not artifacts.delete_kidney)
    _check_inside(spec, kidneys)
    rng = np.random.default_rng(seed)

    union = spec.union_geometry
    x, y, z = _world_axes(union)
    truth = voxelize(kidneys, union, artifacts.cysts).values.astype(bool)

    image = np.full(union.dims, spec.background, dtype=np.float32)
    for kidney in kidneys:
        image[np.broadcast_to(kidney.inside(x, y, z), union.dims) & truth] = kidney.intensity

    simulated = truth.copy()
    island_voxels = 0
    if artifacts.island_count:
        retained = (spec.n_trim, union.dims[2] - spec.n_trim)
        corners = _place_islands(truth, artifacts.island_count, artifacts.island_size, retained, rng)
        brightest = max((k.intensity for k in kidneys), default=1.0)
        s = artifacts.island_size
        for cx, cy, cz in corners:
            simulated[cx : cx + s, cy : cy + s, cz : cz + s] = True
            image[cx : cx + s, cy : cy + s, cz : cz + s] = brightest
        island_voxels = len(corners) * s**3

    if spec.noise_sigma > 0:
        image += rng.normal(0.0, spec.noise_sigma, union.dims).astype(np.float32)

    nz = spec.station_dims[2]
    upper_start = union.dims[2] - nz
    upper_geometry = union.crop_z(upper_start, union.dims[2])
    lower_geometry = union.crop_z(0, nz)

    lower_image = image[:, :, :nz]
    lower_mask = simulated[:, :, :nz].astype(np.uint8)
    if any(artifacts.motion_shift_voxels):
        shift = artifacts.motion_shift_voxels
        lower_image = ndimage.shift(lower_image, shift, order=0, mode="constant", cval=spec.background)
        lower_mask = ndimage.shift(lower_mask, shift, order=0, mode="constant", cval=0)

    stations = StationPair(
        subject_id,
        VolumeGrid.from_geometry(upper_geometry, image[:, :, upper_start:]),
        VolumeGrid.from_geometry(lower_geometry, lower_image),
    )
    masks = StationPair(
        subject_id,
        VolumeGrid.from_geometry(upper_geometry, simulated[:, :, upper_start:].astype(np.uint8)),
        VolumeGrid.from_geometry(lower_geometry, lower_mask),
    )

    analytic_volumes = {Side.LEFT: 0.0, Side.RIGHT: 0.0}
    voxel_volumes = {Side.LEFT: 0.0, Side.RIGHT: 0.0}
    coms: dict[Side, Triple | None] = {Side.LEFT: None, Side.RIGHT: None}
    for kidney in kidneys:
        analytic_volumes[kidney.side], coms[kidney.side] = _analytic(kidney, artifacts.cysts)
        side_count = int(np.count_nonzero(np.broadcast_to(kidney.inside(x, y, z), union.dims) & truth))
        voxel_volumes[kidney.side] = side_count * union.voxel_volume_mm3 / MM3_PER_CM3

    logger.debug(f"Generated phantom {subject_id} with seed {seed} ({island_voxels} island voxels)")
    return Phantom(
        spec=spec,
        stations=stations,
        masks=masks,
        ground_truth=VolumeGrid.from_geometry(union, truth.astype(np.uint8)),
        analytic_volumes_cm3=analytic_volumes,
        voxel_volumes_cm3=voxel_volumes,
        analytic_coms=coms,
        island_voxels=island_voxels,
    )


@dataclass(frozen=True)
class ArtifactRecord:
    subject_id: str
    kind: str
    # 1 (mild) to 4 (severe)
    severity: int
    description: str


@dataclass(frozen=True)
class CohortMember:
    subject_id: str
    spec: PhantomSpec
    seed: int
    artifact: ArtifactRecord | None = None


def _subject_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _with_artifact(spec: PhantomSpec, kind: str, severity: int) -> tuple[PhantomSpec, str]:
    match kind:
        case "motion":
            return replace(spec, artifacts=Artifacts(motion_shift_voxels=(0, 0, severity))), (
                f"station 3 shifted {severity} slice(s)"
            )
        case "islands":
            count, size = 2 * severity, 2 + severity // 2
            return replace(spec, artifacts=Artifacts(island_count=count, island_size=size)), (
                f"{count} islands of {size}^3 voxels"
            )
        case "cyst":
            kidney = spec.kidneys[0]
            radius = 6.0 + 3.0 * severity
            return replace(spec, artifacts=Artifacts(cysts=(Cyst(kidney.center, radius),))), (
                f"{radius:.0f} mm cyst in the {kidney.side.value} kidney"
            )
        case "location":
            half_extent = (spec.fused_geometry.dims[2] - 1) * spec.spacing[2] / 2.0
            fraction = 0.3 + 0.1 * severity
            dz = fraction * half_extent
            moved = tuple(replace(k, center=(k.center[0], k.center[1], k.center[2] + dz)) for k in spec.kidneys)
            return replace(spec, kidneys=moved), f"kidneys moved {fraction:.0%} of the half extent toward the head"
        case "missing_kidney":
            side = Side.LEFT if severity % 2 else Side.RIGHT
            return replace(spec, artifacts=Artifacts(delete_kidney=side)), f"{side.value} kidney deleted"
        case _:
            raise PhantomSpecError(f"unknown artifact kind {kind!r}")


def generate_cohort(
    count: int,
    seed: int,
    artifact_count: int = 0,
    base: PhantomSpec | None = None,
) -> list[CohortMember]:
    """
    Plan a synthetic cohort: per-subject anatomy jitter, plus artifacts on a random subset.

    Artifact subjects cycle through :data:`ARTIFACT_KINDS` with rising severity. Only specs and seeds
    are returned; phantoms are rendered by :func:`generate` one subject at a time.
    """
    if count < 1:
        raise PhantomSpecError(f"cohort needs at least one subject, got {count}")
    if not 0 <= artifact_count <= count:
        raise PhantomSpecError(f"artifact count must be in [0, {count}], got {artifact_count}")
    base = base or PhantomSpec()
    rng = np.random.default_rng(seed)
    chosen = sorted(int(i) for i in rng.choice(count, size=artifact_count, replace=False))
    kinds = len(ARTIFACT_KINDS)
    plan = {index: (ARTIFACT_KINDS[order % kinds], 1 + (order // kinds) % 4) for order, index in enumerate(chosen)}

    members = []
    for index in range(count):
        subject_id = f"PH{index:05d}"
        jitter = np.random.default_rng([seed, index])
        kidneys = []
        for kidney in base.kidneys:
            # Lateral jitter moves the kidney away from or toward the midline
            outward = float(jitter.uniform(-6.0, 6.0)) * (1.0 if kidney.side is Side.LEFT else -1.0)
            dy = float(jitter.uniform(-5.0, 5.0))
            scale_x, scale_y = jitter.uniform(0.9, 1.1, size=2)
            a, b, c = kidney.semi_axes
            kidneys.append(
                replace(
                    kidney,
                    center=(kidney.center[0] + outward, kidney.center[1] + dy, kidney.center[2]),
                    semi_axes=(a * float(scale_x), b * float(scale_y), c),
                )
            )
        spec = replace(base, kidneys=tuple(kidneys))

        artifact = None
        if index in plan:
            kind, severity = plan[index]
            spec, description = _with_artifact(spec, kind, severity)
            artifact = ArtifactRecord(subject_id, kind, severity, description)
        members.append(CohortMember(subject_id, spec, _subject_seed(seed, index), artifact))

    logger.info(f"Planned {count} phantom subjects, {artifact_count} with artifacts")
    return members


@dataclass(frozen=True)
class PhantomFiles:
    subject_id: str
    station2: Path
    station3: Path
    mask2: Path
    mask3: Path


def write_phantom(phantom: Phantom, out_dir: str | Path) -> PhantomFiles:
    """
    Write station images to ``<out_dir>/images`` and simulated masks to ``<out_dir>/masks``.

    Mask names follow the keyed lookup of the external-mask segmenter.
    """
    out_dir = Path(out_dir)
    subject_id = phantom.stations.subject_id
    paths = {}
    for index in STATION_INDICES:
        paths[f"station{index}"] = save_volume(
            phantom.stations.station(index), out_dir / "images" / f"{subject_id}_station{index}.nii"
        )
        paths[f"mask{index}"] = save_volume(
            phantom.masks.station(index), out_dir / "masks" / f"{subject_id}_station{index}_mask.nii"
        )
    return PhantomFiles(subject_id=subject_id, **paths)
