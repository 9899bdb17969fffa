"""Whole-layer convolution: tiling, amortized transforms, per-residue GEMM.

Data layout is NHWC for activations and (r, r, c_in, c_out) for weights, both
int8.  The fast path decomposes the padded input into overlapping n x n
patches at stride m, transforms patches and filters once per modulus, runs
one (patches x c_in) @ (c_in x c_out) GEMM per transform-domain position,
transforms back and reconstructs full-precision int32 outputs by mixed radix
conversion.  Outputs are bit-identical to direct_conv whenever the layer
passes range_check.
"""

from __future__ import annotations

import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil
from typing import Sequence

import numpy as np

from . import gemm, kernel, residue, transforms
from .errors import DynamicRangeExceeded, ShapeMismatch, UnsupportedStride

INT8_PEAK = 127


@dataclass(frozen=True)
class LayerSpec:
    """Geometry of one convolution layer (square images, square filters)."""

    h: int
    w: int
    c: int
    k: int
    r: int
    batch: int = 1
    padding: int = 0
    stride: int = 1
    tile_m: int | None = None

    def __post_init__(self):
        for name in ("h", "w", "c", "k", "r", "batch", "stride"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.padding, int) or self.padding < 0:
            raise ValueError(f"padding must be a non-negative integer, got {self.padding!r}")
        if self.h + 2 * self.padding < self.r or self.w + 2 * self.padding < self.r:
            raise ValueError("padded input smaller than the filter")
        if self.tile_m is not None and (not isinstance(self.tile_m, int) or self.tile_m < 1):
            raise ValueError(f"tile_m must be a positive integer, got {self.tile_m!r}")

    @property
    def out_h(self) -> int:
        return (self.h + 2 * self.padding - self.r) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.w + 2 * self.padding - self.r) // self.stride + 1

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.r, self.r, self.c, self.k)

    def input_shape(self) -> tuple[int, int, int, int]:
        return (self.batch, self.h, self.w, self.c)


def _check_operands(spec: LayerSpec, weights: np.ndarray, x: np.ndarray) -> None:
    if weights.shape != spec.weight_shape():
        raise ShapeMismatch(f"weights {weights.shape} do not match {spec.weight_shape()}")
    if x.shape != spec.input_shape():
        raise ShapeMismatch(f"input {x.shape} does not match {spec.input_shape()}")
    if weights.dtype != np.int8 or x.dtype != np.int8:
        raise ShapeMismatch(f"operands must be int8, got {weights.dtype} and {x.dtype}")


def im2col(x: np.ndarray, r: int, stride: int, padding: int) -> np.ndarray:
    """Unfold NHWC input into rows of flattened r x r x c receptive fields."""
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (r, r), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    bo, ho, wo = win.shape[:3]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        bo * ho * wo, r * r * c
    )


def direct_conv(spec: LayerSpec, weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Reference convolution: im2col plus int32-accumulated GEMM.

    Exact by construction (the overflow guard in gemm_acc covers the full
    r*r*c dot length), used as the oracle the fast path is compared against.
    """
    _check_operands(spec, weights, x)
    cols = im2col(x, spec.r, spec.stride, spec.padding)
    wmat = weights.reshape(-1, spec.k)
    out = gemm.gemm_acc(cols, wmat)
    return out.reshape(spec.batch, spec.out_h, spec.out_w, spec.k)


@dataclass(frozen=True)
class TilePlacement:
    """Where one patch's outputs land in the layer output plane."""

    row: int
    col: int
    out_h0: int
    out_h1: int
    out_w0: int
    out_w1: int


def tile_decompose(
    x: np.ndarray, tile_m: int, r: int, padding: int
) -> tuple[np.ndarray, list[TilePlacement]]:
    """Cut padded NHWC input into overlapping n x n patches at stride tile_m.

    n = tile_m + r - 1; neighbouring patches overlap by r - 1 so every
    sliding window falls inside exactly one patch.  The canvas is zero padded
    on the right/bottom so the last row and column of patches is full sized;
    placements record the (possibly cropped) output rectangle of each patch.
    """
    b, h, w, c = x.shape
    n = tile_m + r - 1
    out_h = h + 2 * padding - r + 1
    out_w = w + 2 * padding - r + 1
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch("padded input smaller than the filter")
    th = ceil(out_h / tile_m)
    tw = ceil(out_w / tile_m)
    canvas = np.zeros(
        (b, (th - 1) * tile_m + n, (tw - 1) * tile_m + n, c), dtype=x.dtype
    )
    canvas[:, padding : padding + h, padding : padding + w] = x
    win = np.lib.stride_tricks.sliding_window_view(canvas, (n, n), axis=(1, 2))
    win = win[:, ::tile_m, ::tile_m]
    patches = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    placements = []
    for ti in range(th):
        for tj in range(tw):
            h0 = ti * tile_m
            w0 = tj * tile_m
            placements.append(
                TilePlacement(
                    row=ti,
                    col=tj,
                    out_h0=h0,
                    out_h1=min(h0 + tile_m, out_h),
                    out_w0=w0,
                    out_w1=min(w0 + tile_m, out_w),
                )
            )
    return patches, placements


def precompute_filter_transforms(
    weights: np.ndarray, mts: Sequence[transforms.ModularTransformSet]
) -> dict[int, np.ndarray]:
    """Transform (r, r, c, k) filters once per modulus.

    Returns {modulus: (n, n, c, k) residue array}; layout puts the transform-
    domain position first so each position's (c, k) slice is one GEMM operand.
    """
    modstack = {}
    for mt in mts:
        g = kernel.residue_encode_array(weights.transpose(2, 3, 0, 1), mt.modulus)
        u = kernel.filter_transform_mod(g, mt)
        modstack[mt.modulus] = np.ascontiguousarray(u.transpose(2, 3, 0, 1))
    return modstack


@dataclass(frozen=True)
class RangeReport:
    """Outcome of the pre-flight dynamic range check."""

    static_bound: int
    declared_bound: int | None
    bound: int
    signed_bound: int

    @property
    def fits(self) -> bool:
        return self.bound <= self.signed_bound


def range_check(
    spec: LayerSpec, system: residue.RnsSystem, declared_bound: int | None = None
) -> RangeReport:
    """Compare the layer's worst-case output against the RNS dynamic range.

    The static bound assumes every product hits the int8 peak; callers that
    know their data (quantized networks in particular stay orders of
    magnitude below worst case) may declare a tighter bound, which is then
    what the reconstruction is trusted up to.
    """
    static = spec.r * spec.r * spec.c * INT8_PEAK * INT8_PEAK
    bound = static if declared_bound is None else declared_bound
    return RangeReport(
        static_bound=static,
        declared_bound=declared_bound,
        bound=bound,
        signed_bound=system.signed_bound,
    )


@dataclass
class StageTimings:
    """Seconds spent in each phase of the fast path, summed over moduli."""

    tiling: float = 0.0
    filter_transform: float = 0.0
    input_transform: float = 0.0
    gemm: float = 0.0
    backward_transform: float = 0.0
    mrc: float = 0.0
    scatter: float = 0.0

    def total(self) -> float:
        return (
            self.tiling
            + self.filter_transform
            + self.input_transform
            + self.gemm
            + self.backward_transform
            + self.mrc
            + self.scatter
        )


def _worker_count(n_tasks: int) -> int:
    raw = os.environ.get("RNSW_THREADS", "")
    try:
        cap = int(raw)
    except ValueError:
        cap = n_tasks
    if cap < 1:
        cap = 1
    return min(cap, n_tasks)


# Transform positions batched into one GEMM call; 64 keeps the widened int32
# operand copies to a few tens of MB even for 512-channel layers.
_POSITION_GROUP = 64


def _modular_gemm(a: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    """(a @ b) mod m with reductions spaced to keep int32 exact.

    Accepts stacked operands like gemm_acc does.
    """
    chunk = gemm.accumulation_chunk(m)
    stack = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    acc = np.zeros(stack + (a.shape[-2], b.shape[-1]), dtype=np.int32)
    depth = a.shape[-1]
    for c0 in range(0, depth, chunk):
        gemm.gemm_acc(a[..., c0 : c0 + chunk], b[..., c0 : c0 + chunk, :], acc)
        gemm.reduce_mod_inplace(acc, m)
    return acc


def _modulus_pass(
    patches: np.ndarray,
    u: np.ndarray,
    mt: transforms.ModularTransformSet,
) -> tuple[np.ndarray, StageTimings]:
    """Forward transform, per-position GEMM and backward transform, one modulus."""
    t = StageTimings()
    b, th, tw, n, _, c = patches.shape
    n_pos = n * n
    p = b * th * tw
    k = u.shape[3]

    t0 = time.perf_counter()
    d = kernel.residue_encode_array(patches.transpose(0, 1, 2, 5, 3, 4), mt.modulus)
    v = kernel.input_transform_mod(d, mt)
    # (b, th, tw, c, n, n) -> (n*n, p, c): one GEMM operand per position
    vpos = np.ascontiguousarray(v.transpose(4, 5, 0, 1, 2, 3)).reshape(n_pos, p, c)
    t.input_transform += time.perf_counter() - t0

    t0 = time.perf_counter()
    upos = u.reshape(n_pos, c, k)
    acc = np.empty((n_pos, p, k), dtype=np.int32)
    for pos in range(0, n_pos, _POSITION_GROUP):
        hi = min(pos + _POSITION_GROUP, n_pos)
        acc[pos:hi] = _modular_gemm(vpos[pos:hi], upos[pos:hi], mt.modulus)
    t.gemm += time.perf_counter() - t0

    t0 = time.perf_counter()
    prod = acc.reshape(n, n, p, k).transpose(2, 3, 0, 1)
    prod = np.ascontiguousarray(prod).astype(gemm.dtype_for_modulus(mt.modulus))
    y = kernel.backward_transform_mod(prod, mt)
    t.backward_transform += time.perf_counter() - t0
    return y, t


def winograd_layer_conv(
    spec: LayerSpec,
    weights: np.ndarray,
    x: np.ndarray,
    system: residue.RnsSystem,
    declared_bound: int | None = None,
    transform_set: transforms.ExactTransformSet | None = None,
    filters: dict[int, np.ndarray] | None = None,
    timings: StageTimings | None = None,
) -> np.ndarray:
    """Exact integer convolution through the tiled RNS fast path.

    filters, when given, is the precompute_filter_transforms output for these
    weights; passing it amortizes the filter transform across calls that
    reuse the same weights, exactly as repeated inference does.

    Raises DynamicRangeExceeded when range_check fails and UnsupportedStride
    for stride > 1 (the tiling only covers unit stride; callers wanting a
    silent fallback use layer_conv).
    """
    _check_operands(spec, weights, x)
    if spec.stride != 1:
        raise UnsupportedStride(f"fast path needs stride 1, got {spec.stride}")
    tile_m = spec.tile_m
    if tile_m is None:
        raise ValueError("spec.tile_m must be set for the fast path")
    report = range_check(spec, system, declared_bound)
    if not report.fits:
        raise DynamicRangeExceeded(
            f"worst case {report.bound} exceeds signed bound {report.signed_bound}"
        )
    if transform_set is None:
        transform_set = transforms.cached_transforms(tile_m, spec.r)
    if transform_set.m != tile_m or transform_set.r != spec.r:
        raise ShapeMismatch(
            f"transform set is for ({transform_set.m}, {transform_set.r}), "
            f"layer needs ({tile_m}, {spec.r})"
        )
    mts = transforms.reduce_for_system(transform_set, system)
    if timings is None:
        timings = StageTimings()

    t0 = time.perf_counter()
    patches, placements = tile_decompose(x, tile_m, spec.r, spec.padding)
    timings.tiling += time.perf_counter() - t0

    t0 = time.perf_counter()
    if filters is None:
        filters = precompute_filter_transforms(weights, mts)
    else:
        n = tile_m + spec.r - 1
        for mt in mts:
            f = filters.get(mt.modulus)
            if f is None or f.shape != (n, n, spec.c, spec.k):
                raise ShapeMismatch(
                    f"precomputed filters for modulus {mt.modulus} missing or "
                    f"not shaped ({n}, {n}, {spec.c}, {spec.k})"
                )
    timings.filter_transform += time.perf_counter() - t0

    workers = _worker_count(len(mts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda mt: _modulus_pass(patches, filters[mt.modulus], mt), mts)
            )
    else:
        results = [_modulus_pass(patches, filters[mt.modulus], mt) for mt in mts]
    for _, st in results:
        timings.input_transform += st.input_transform
        timings.gemm += st.gemm
        timings.backward_transform += st.backward_transform

    t0 = time.perf_counter()
    y = residue.mrc_reconstruct_arrays([r for r, _ in results], system).astype(np.int32)
    timings.mrc += time.perf_counter() - t0

    t0 = time.perf_counter()
    b, th, tw = patches.shape[:3]
    tiles = y.reshape(b, th, tw, spec.k, tile_m, tile_m)
    out = np.empty((spec.batch, spec.out_h, spec.out_w, spec.k), dtype=np.int32)
    for pl in placements:
        hh = pl.out_h1 - pl.out_h0
        ww = pl.out_w1 - pl.out_w0
        out[:, pl.out_h0 : pl.out_h1, pl.out_w0 : pl.out_w1] = tiles[
            :, pl.row, pl.col, :, :hh, :ww
        ].transpose(0, 2, 3, 1)
    timings.scatter += time.perf_counter() - t0
    return out


def layer_conv(
    spec: LayerSpec,
    weights: np.ndarray,
    x: np.ndarray,
    system: residue.RnsSystem,
    declared_bound: int | None = None,
    filters: dict[int, np.ndarray] | None = None,
    timings: StageTimings | None = None,
) -> np.ndarray:
    """winograd_layer_conv with a direct fallback for strided layers."""
    if spec.stride != 1:
        return direct_conv(spec, weights, x)
    return winograd_layer_conv(
        spec,
        weights,
        x,
        system,
        declared_bound=declared_bound,
        filters=filters,
        timings=timings,
    )


@dataclass(frozen=True)
class OperationCounts:
    """Multiplication counts for one layer, direct versus tiled fast path."""

    direct_mults: int
    winograd_mults: int
    tiles: int
    reduction_ratio: Fraction


def count_operations(
    spec: LayerSpec, system: residue.RnsSystem, tile_m: int | None = None
) -> OperationCounts:
    """Count GEMM multiplications only.

    The fast path spends its multiplications in the transform-domain GEMMs:
    n**2 positions, c * k products each, per tile and per modulus.  The
    transform stages themselves are additions and shifts amortized over c * k
    and are excluded, matching the usual minimal-filtering accounting.
    """
    if tile_m is None:
        tile_m = spec.tile_m
    if tile_m is None:
        raise ValueError("tile_m must be given (argument or spec.tile_m)")
    n = tile_m + spec.r - 1
    th = ceil(spec.out_h / tile_m)
    tw = ceil(spec.out_w / tile_m)
    tiles = spec.batch * th * tw
    direct = spec.batch * spec.out_h * spec.out_w * spec.k * spec.c * spec.r * spec.r
    wino = tiles * n * n * spec.c * spec.k * len(system.moduli)
    return OperationCounts(
        direct_mults=direct,
        winograd_mults=wino,
        tiles=tiles,
        reduction_ratio=Fraction(direct, wino),
    )


QTNS_MAGIC = b"QTNS"
QTNS_VERSION = 1
_QTNS_DTYPES = {8: np.dtype("int8"), 32: np.dtype("<i4")}


def write_tensor(path, arr: np.ndarray) -> None:
    """Serialize an int8 or int32 tensor: magic, version, rank, dims, data.

    Dims and int32 payloads are little endian regardless of host order.
    """
    if arr.dtype == np.int8:
        bits = 8
    elif arr.dtype == np.int32:
        bits = 32
    else:
        raise ShapeMismatch(f"only int8/int32 tensors are serialized, got {arr.dtype}")
    if arr.ndim > 255:
        raise ShapeMismatch("rank too large")
    with open(path, "wb") as f:
        f.write(QTNS_MAGIC)
        f.write(struct.pack("<BB", QTNS_VERSION, arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<i", d))
        f.write(struct.pack("<B", bits))
        f.write(np.ascontiguousarray(arr, dtype=_QTNS_DTYPES[bits]).tobytes())


def read_tensor(path) -> np.ndarray:
    """Inverse of write_tensor."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != QTNS_MAGIC:
        raise ValueError(f"{path}: not a QTNS tensor file")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != QTNS_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 6
    dims = struct.unpack_from(f"<{rank}i", raw, off) if rank else ()
    off += 4 * rank
    (bits,) = struct.unpack_from("<B", raw, off)
    off += 1
    if bits not in _QTNS_DTYPES:
        raise ValueError(f"{path}: unsupported element width {bits}")
    dt = _QTNS_DTYPES[bits]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = count * dt.itemsize
    if len(raw) - off != expected:
        raise ValueError(f"{path}: payload is {len(raw) - off} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(dims)
    if bits == 32:
        arr = arr.astype(np.int32)
    return arr.copy() if bits == 8 else arr
