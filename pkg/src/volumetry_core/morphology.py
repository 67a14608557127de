import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .constants import Axis
from .volgrid import CenterOfMass, VolumeGrid

logger = logging.getLogger(__name__)

CONNECTIVITY_RANK = {6: 1, 26: 3}


@dataclass(frozen=True)
class Component:
    # 1-based label in ComponentSet.labeled; 1 is the largest component
    label: int
    size: int
    com: CenterOfMass


@dataclass(frozen=True, eq=False)
class ComponentSet:
    """
    Connected components of a label grid, sorted by size (descending).

    ``labeled`` is canonically relabelled so that component ``k`` in ``components`` carries label
    ``k + 1``; the labelling is independent of voxel visitation order.
    """

    labeled: np.ndarray
    components: list[Component]
    connectivity: int
    spacing: tuple[float, float, float]

    @property
    def total_voxels(self) -> int:
        return sum(c.size for c in self.components)

    def mask(self, component: Component) -> np.ndarray:
        return self.labeled == component.label


@dataclass(frozen=True)
class KidneyPair:
    left: Component | None
    right: Component | None
    # Labelled voxels in neither of the two largest components
    scrap_voxels: int
    total_voxels: int

    def __post_init__(self):
        if self.left is not None and self.right is not None and self.left.label == self.right.label:
            raise ValueError("left and right kidney cannot be the same component")


def connected_components(labels: VolumeGrid, connectivity: int = 6) -> ComponentSet:
    """Partition the labelled voxels into maximal 6- or 26-connected sets."""
    if connectivity not in CONNECTIVITY_RANK:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")

    structure = ndimage.generate_binary_structure(3, CONNECTIVITY_RANK[connectivity])
    raw, count = ndimage.label(labels.mask(), structure=structure)
    if count == 0:
        return ComponentSet(np.zeros(labels.dims, dtype=np.int32), [], connectivity, labels.spacing)

    ids = np.arange(1, count + 1)
    sizes = np.bincount(raw.ravel(), minlength=count + 1)[1:]
    index_coms = np.asarray(ndimage.center_of_mass(raw > 0, raw, ids), dtype=np.float64).reshape(count, 3)
    world_coms = np.asarray(labels.origin) + index_coms * np.asarray(labels.spacing)

    # Size descending, then smaller x-COM first; the remaining keys make the order total
    order = np.lexsort((world_coms[:, 2], world_coms[:, 1], world_coms[:, Axis.X], -sizes))

    relabel = np.zeros(count + 1, dtype=np.int32)
    relabel[ids[order]] = np.arange(1, count + 1, dtype=np.int32)
    components = [
        Component(
            label=rank + 1,
            size=int(sizes[i]),
            com=CenterOfMass(tuple(float(v) for v in world_coms[i]), int(sizes[i])),
        )
        for rank, i in enumerate(order)
    ]
    return ComponentSet(relabel[raw], components, connectivity, labels.spacing)


def split_pair(components: ComponentSet, midline_x: float) -> KidneyPair:
    """
    Take the two largest components as kidneys and assign sides by COM x.

    The component further toward +x (the subject's left) is the left kidney. A lone component
    is left when its COM lies beyond ``midline_x``, right otherwise.
    """
    total = components.total_voxels
    largest = components.components[:2]
    left = right = None

    if len(largest) == 2:
        first, second = largest
        if first.com.position[Axis.X] > second.com.position[Axis.X]:
            left, right = first, second
        else:
            left, right = second, first
    elif len(largest) == 1:
        only = largest[0]
        if only.com.position[Axis.X] > midline_x:
            left = only
        else:
            right = only

    kept = sum(c.size for c in (left, right) if c is not None)
    return KidneyPair(left=left, right=right, scrap_voxels=total - kept, total_voxels=total)


def volume_midline_x(labels: VolumeGrid) -> float:
    """World x coordinate of the grid's lateral centre."""
    geometry = labels.geometry
    return float((geometry.extent_min[Axis.X] + geometry.extent_max[Axis.X]) / 2.0)
