"""Grid-cell labels and templated reference answers.

The location label is the 3x3 grid cell containing the centroid of the
binary mask; a centroid exactly on a cell boundary resolves to the lower
cell index. Answers come from fixed templates over a closed vocabulary.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

CATEGORIES = ("grid", "stripes", "blobs", "noisefield", "checker", "rings")
DEFECT_TYPES = ("scratch", "hole", "stain", "crack", "contamination", "missing-patch")
TASKS = ("location", "analysis", "decision", "defect_type")

# area-ratio bucket edges: small < 0.02 <= medium < 0.06 <= large
SIZE_BUCKETS = (0.02, 0.06)

_ROW_WORDS = ("top", "middle", "bottom")
_COL_WORDS = ("left", "center", "right")


class GridCell(NamedTuple):
    row: int
    col: int

    @property
    def phrase(self) -> str:
        if (self.row, self.col) == (1, 1):
            return "center"
        return f"{_ROW_WORDS[self.row]}-{_COL_WORDS[self.col]}"


def _axis_cell(coord_sum: int, count: int, size: int) -> int:
    # centroid = coord_sum / count; cell = floor(centroid * 3 / size) with
    # exact boundaries resolving to the lower index; integer arithmetic only
    num = 3 * coord_sum
    den = size * count
    idx = num // den
    if num % den == 0 and idx > 0:
        idx -= 1
    return min(idx, 2)


def grid_label_from_mask(gt_mask: np.ndarray) -> GridCell:
    """Grid cell of the binary-mask centroid.

    Raises:
        ValueError: if the mask is empty.
    """
    mask = np.asarray(gt_mask).astype(bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("grid label of an empty mask is undefined")
    h, w = mask.shape
    return GridCell(
        row=_axis_cell(int(rows.sum()), rows.size, h),
        col=_axis_cell(int(cols.sum()), cols.size, w),
    )


def size_bucket(area_ratio: float) -> str:
    if area_ratio < SIZE_BUCKETS[0]:
        return "small"
    if area_ratio < SIZE_BUCKETS[1]:
        return "medium"
    return "large"


def make_answer_text(
    category: str,
    defect_type: str | None,
    grid_cell: GridCell | None,
    area_ratio: float,
    task: str,
) -> str:
    """Reference answer string for one understanding task.

    Raises:
        ValueError: unknown task, or location/defect_type asked of a normal
            sample.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    anomalous = defect_type is not None
    if task == "decision":
        return "anomalous" if anomalous else "normal"
    if task == "analysis":
        if not anomalous:
            return f"the {category} surface is normal with no visible defect"
        assert grid_cell is not None
        return (
            f"the {category} surface shows a {size_bucket(area_ratio)} "
            f"{defect_type} in the {grid_cell.phrase} region"
        )
    if not anomalous:
        raise ValueError(f"task {task!r} is undefined for a normal sample")
    if task == "location":
        assert grid_cell is not None
        return f"the defect is located at the {grid_cell.phrase} region"
    return str(defect_type)  # defect_type task
