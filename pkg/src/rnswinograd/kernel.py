"""Single-tile 2-D fast convolution over one modulus, and over a full RNS.

All functions accept stacked tiles: an array of shape (..., r, r) or
(..., n, n) is transformed tile by tile over the leading dimensions.  Matrix
products accumulate in int32 with a symmetric reduction after each product;
for n <= 20 and 15-bit moduli the intermediate sums stay far below int32
limits (asserted, not silently assumed).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import gemm, residue
from .errors import DynamicRangeExceeded, ShapeMismatch
from .transforms import ModularTransformSet


def _sandwich_mod(left: np.ndarray, x: np.ndarray, right: np.ndarray, m: int) -> np.ndarray:
    """left @ x @ right with a reduction mod m after each matrix product."""
    half = (m - 1) // 2
    assert left.shape[1] * half * max(half, 127) < gemm.INT32_MAX
    t = left.astype(np.int32) @ x.astype(np.int32)
    gemm.reduce_mod_inplace(t, m)
    assert right.shape[0] * half * half < gemm.INT32_MAX
    t = t @ right.astype(np.int32)
    gemm.reduce_mod_inplace(t, m)
    return t.astype(gemm.dtype_for_modulus(m))


def _check_tile(x: np.ndarray, side: int, what: str) -> None:
    if x.ndim < 2 or x.shape[-2:] != (side, side):
        raise ShapeMismatch(f"{what} must end in ({side}, {side}), got {x.shape}")


def filter_transform_mod(g: np.ndarray, mt: ModularTransformSet) -> np.ndarray:
    """G g G^T mod m for one or a stack of r x r filter tiles."""
    _check_tile(g, mt.r, "filter tile")
    return _sandwich_mod(mt.g, g, mt.g.T, mt.modulus)


def input_transform_mod(d: np.ndarray, mt: ModularTransformSet) -> np.ndarray:
    """B^T d B mod m for one or a stack of n x n input tiles."""
    _check_tile(d, mt.n, "input tile")
    return _sandwich_mod(mt.bt, d, mt.bt.T, mt.modulus)


def backward_transform_mod(t: np.ndarray, mt: ModularTransformSet) -> np.ndarray:
    """A^T t A mod m, collapsing an n x n product tile to m_out x m_out."""
    _check_tile(t, mt.n, "product tile")
    return _sandwich_mod(mt.at, t, mt.at.T, mt.modulus)


def tile_conv_mod(g: np.ndarray, d: np.ndarray, mt: ModularTransformSet) -> np.ndarray:
    """One fast correlation tile modulo one modulus.

    g: (..., r, r) filter residues, d: (..., n, n) input residues; returns
    (..., m, m) output residues.  Exactly congruent to the direct correlation
    of the same tiles.
    """
    u = filter_transform_mod(g, mt)
    v = input_transform_mod(d, mt)
    prod = u.astype(np.int32) * v.astype(np.int32)
    gemm.reduce_mod_inplace(prod, mt.modulus)
    return backward_transform_mod(prod, mt)


def rns_tile_conv(
    g: np.ndarray,
    d: np.ndarray,
    system: residue.RnsSystem,
    mts: Sequence[ModularTransformSet],
) -> np.ndarray:
    """One full-precision tile: per-modulus fast correlation, then MRC.

    g and d are signed integer tiles (int8 range); the result is the exact
    integer correlation provided it fits the system's dynamic range, which is
    checked against the worst case r*r*127**2 up front.
    """
    if len(mts) != len(system.moduli):
        raise ShapeMismatch(
            f"expected {len(system.moduli)} transform sets, got {len(mts)}"
        )
    for mt, m in zip(mts, system.moduli):
        if mt.modulus != m:
            raise ShapeMismatch(
                f"transform set for modulus {mt.modulus} does not match system {system}"
            )
    r = mts[0].r
    worst = r * r * 127 * 127
    if worst > system.signed_bound:
        raise DynamicRangeExceeded(
            f"worst case output {worst} exceeds signed bound {system.signed_bound}"
        )
    outs = [
        tile_conv_mod(
            residue_encode_array(g, mt.modulus),
            residue_encode_array(d, mt.modulus),
            mt,
        )
        for mt in mts
    ]
    return residue.mrc_reconstruct_arrays(outs, system).astype(np.int32)


def residue_encode_array(x: np.ndarray, m: int) -> np.ndarray:
    """Symmetric-range residues of an integer array, in the narrow dtype."""
    out = x.astype(np.int32, copy=True)
    gemm.reduce_mod_inplace(out, m)
    return out.astype(gemm.dtype_for_modulus(m))
