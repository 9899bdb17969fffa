"""Low-precision integer GEMM with 32-bit accumulation.

Operands are int8 or int16 (residues in symmetric range), accumulators are
int32.  Reduction back into residue range happens after accumulation, not per
multiply; callers accumulating over a dimension longer than
accumulation_chunk(m) must reduce between chunks.
"""

from __future__ import annotations

import numpy as np

from .errors import OverflowRisk, ShapeMismatch

INT32_MAX = 2**31 - 1

# Inner-dimension block size.  numpy's integer matmul degrades badly once the
# shared dimension blows the cache; blocking restores throughput and never
# changes the exact result.
_CACHE_CHUNK = 512

_OPERAND_DTYPES = (np.dtype(np.int8), np.dtype(np.int16))


def dtype_for_modulus(m: int) -> np.dtype:
    """Narrowest signed dtype holding the symmetric residue range of m."""
    return np.dtype(np.int8) if m < 256 else np.dtype(np.int16)


def accumulation_chunk(m: int) -> int:
    """Longest dot product of residues mod m that cannot overflow int32."""
    half = (m - 1) // 2
    return (INT32_MAX - half) // (half * half)


def _abs_peak(x: np.ndarray) -> int:
    """max(|x|) as a Python int, without materializing a widened |x|."""
    if x.size == 0:
        return 0
    return max(-int(x.min()), int(x.max()))


def gemm_acc(a: np.ndarray, b: np.ndarray, acc: np.ndarray | None = None) -> np.ndarray:
    """acc += a @ b exactly, int8/int16 operands, int32 accumulator.

    Checks (from the actual operand magnitudes) that no intermediate sum can
    exceed int32 before doing any work, and raises OverflowRisk otherwise.
    Operands may carry leading stack dimensions with matmul broadcasting; the
    guard and the widening casts then cover the whole stack in one call.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"need at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"inner dimensions differ: {a.shape} @ {b.shape}")
    if a.dtype not in _OPERAND_DTYPES or b.dtype not in _OPERAND_DTYPES:
        raise ShapeMismatch(f"operands must be int8 or int16, got {a.dtype}, {b.dtype}")
    try:
        stack = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(f"stack dimensions differ: {a.shape} @ {b.shape}") from None
    out_shape = stack + (a.shape[-2], b.shape[-1])
    if acc is None:
        acc = np.zeros(out_shape, dtype=np.int32)
    else:
        if acc.dtype != np.int32:
            raise ShapeMismatch(f"accumulator must be int32, got {acc.dtype}")
        if acc.shape != out_shape:
            raise ShapeMismatch(
                f"accumulator shape {acc.shape} does not match {a.shape} @ {b.shape}"
            )

    k = a.shape[-1]
    if k == 0 or acc.size == 0:
        return acc
    amax = _abs_peak(a)
    bmax = _abs_peak(b)
    accmax = _abs_peak(acc)
    if k * amax * bmax + accmax > INT32_MAX:
        raise OverflowRisk(
            f"dot length {k} with operand peaks {amax}*{bmax} and accumulated "
            f"peak {accmax} can overflow int32"
        )
    for k0 in range(0, k, _CACHE_CHUNK):
        k1 = min(k0 + _CACHE_CHUNK, k)
        acc += np.matmul(
            a[..., k0:k1].astype(np.int32), b[..., k0:k1, :].astype(np.int32)
        )
    return acc


def reduce_mod_inplace(acc: np.ndarray, m: int) -> np.ndarray:
    """Fold an integer array into the symmetric residue range of m, in place."""
    if m < 3 or m % 2 == 0:
        raise ValueError(f"modulus must be odd and >= 3, got {m}")
    np.mod(acc, m, out=acc)
    acc[acc > (m - 1) // 2] -= m
    return acc
