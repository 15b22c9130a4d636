"""Discrete interface geometry shared by the minimizers and the diagnostics.

Free-boundary faces are cell interfaces separating a positive trace cell
from a zero one; points live at face midpoints.  Normals in 2D come from the
gradient of a mollified indicator (5-cell triangular smoothing per axis),
since the measure-theoretic normal has no direct discrete counterpart.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .mesh import Array, ExtensionGrid

_SMOOTH_KERNEL = np.array([1.0, 2.0, 3.0, 2.0, 1.0])
_SMOOTH_KERNEL = _SMOOTH_KERNEL / _SMOOTH_KERNEL.sum()


def shift_bool(mask: Array, axis: int, delta: int) -> Array:
    """Boolean shift without wraparound (vacated cells become False)."""
    out = np.zeros_like(mask)
    src = [slice(None)] * mask.ndim
    dst = [slice(None)] * mask.ndim
    if delta > 0:
        src[axis] = slice(0, mask.shape[axis] - delta)
        dst[axis] = slice(delta, None)
    elif delta < 0:
        src[axis] = slice(-delta, None)
        dst[axis] = slice(0, mask.shape[axis] + delta)
    else:
        return mask.copy()
    out[tuple(dst)] = mask[tuple(src)]
    return out


def dilate(mask: Array) -> Array:
    """One-cell dilation by face adjacency."""
    out = mask.copy()
    for ax in range(mask.ndim):
        out |= shift_bool(mask, ax, 1)
        out |= shift_bool(mask, ax, -1)
    return out


def interface_faces(positive: Array, counted_zero_region: Array):
    """Faces between a positive cell and a zero cell inside the counted region.

    Returns (pos_cells, zero_cells, axes): integer index arrays of shape
    (k, ndim) for both cells and the axis each face is orthogonal to.  The
    zero-side cell must lie in `counted_zero_region` (typically the
    complement of the fixed-data region).
    """
    ndim = positive.ndim
    pos_list, zero_list, ax_list = [], [], []
    for ax in range(ndim):
        for sgn in (+1, -1):
            nbr_zero = shift_bool(~positive & counted_zero_region, ax, sgn)
            hit = positive & nbr_zero
            idx = np.argwhere(hit)
            if idx.size == 0:
                continue
            zidx = idx.copy()
            zidx[:, ax] -= sgn
            pos_list.append(idx)
            zero_list.append(zidx)
            ax_list.append(np.full(idx.shape[0], ax))
    if not pos_list:
        empty = np.zeros((0, ndim), dtype=int)
        return empty, empty.copy(), np.zeros(0, dtype=int)
    return (np.concatenate(pos_list), np.concatenate(zero_list),
            np.concatenate(ax_list))


def face_midpoints(grid: ExtensionGrid, pos_cells: Array, zero_cells: Array) -> Array:
    """Trace coordinates of the face midpoints, shape (k, trace_dim)."""
    xs = grid.x_nodes
    return 0.5 * (xs[pos_cells] + xs[zero_cells])


def smoothed_indicator(mask: Array) -> Array:
    """Separable 5-cell triangular mollification of a boolean trace mask."""
    out = mask.astype(float)
    for ax in range(mask.ndim):
        out = ndimage.correlate1d(out, _SMOOTH_KERNEL, axis=ax, mode="nearest")
    return out


def outward_normals(grid: ExtensionGrid, positive: Array,
                    pos_cells: Array, zero_cells: Array) -> Array:
    """Unit outward normals of the positivity set at face midpoints.

    1D: the sign pointing from the positive cell to the zero cell.
    2D: negative gradient of the mollified indicator, averaged over the two
    cells adjacent to the face.
    """
    k = pos_cells.shape[0]
    if grid.trace_dim == 1:
        sign = np.sign(zero_cells[:, 0] - pos_cells[:, 0]).astype(float)
        return sign.reshape(k, 1)
    smooth = smoothed_indicator(positive)
    g0, g1 = np.gradient(smooth, grid.x_spacing, grid.x_spacing)
    nrm = np.zeros((k, 2))
    for j, g in enumerate((g0, g1)):
        ga = g[pos_cells[:, 0], pos_cells[:, 1]]
        gb = g[zero_cells[:, 0], zero_cells[:, 1]]
        nrm[:, j] = -(ga + gb) / 2.0
    lens = np.linalg.norm(nrm, axis=1)
    lens[lens == 0.0] = 1.0
    return nrm / lens[:, None]
