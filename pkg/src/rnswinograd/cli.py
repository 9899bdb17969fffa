"""Command line front end.

Subcommands:
  gen-transforms   print or dump exact and modular transform matrices
  verify           bit-exact comparison of the fast path against direct conv
  bench            timed layer sweep (default: the packaged VGG16 config)
  analyze          multiplication-reduction and data-width tables

Exit codes: 0 success, 1 usage or configuration errors, 2 verification
mismatch or dynamic range failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

import numpy as np

from . import gemm, layer, residue, transforms
from .errors import DynamicRangeExceeded, NotCoprime, RnsError

DEFAULT_SEED = 2020


class ConfigError(ValueError):
    """A config file or argument combination does not make sense."""


# ---------------------------------------------------------------------------
# shared helpers


def parse_points(text: str) -> tuple:
    """Comma list of rationals, 'inf' allowed last: '0,1,-1,1/2,inf'."""
    pts = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok.lower() == "inf":
            pts.append(transforms.INF)
        else:
            try:
                pts.append(Fraction(tok))
            except (ValueError, ZeroDivisionError) as e:
                raise ConfigError(f"bad interpolation point {tok!r}: {e}") from None
    return tuple(pts)


def parse_moduli(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t.strip()) for t in text.split(","))
    except ValueError as e:
        raise ConfigError(f"bad moduli list {text!r}: {e}") from None


def _json_scalar(v):
    if isinstance(v, transforms._InfinityPoint):
        return "inf"
    f = Fraction(v)
    return int(f) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def _json_matrix(rows):
    return [[_json_scalar(v) for v in row] for row in rows]


def _fmt_matrix(rows, indent: str = "  ") -> str:
    cells = [[str(v) for v in row] for row in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(cells[0]))]
    return "\n".join(
        indent + "  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells
    )


def make_rng(*entropy) -> np.random.Generator:
    """Seeded PCG64 generator; identical streams on every platform.

    Entropy items may be ints or strings; strings are folded to ints so
    labels can salt independent streams.
    """
    words = []
    for item in entropy:
        if isinstance(item, str):
            words.append(int.from_bytes(item.encode(), "little") % (1 << 64))
        else:
            words.append(int(item) % (1 << 64))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def random_int8(rng: np.random.Generator, shape) -> np.ndarray:
    # [-127, 127]: keeps |x| within the symmetric analysis peak
    return rng.integers(-127, 128, size=shape, dtype=np.int8)


# ---------------------------------------------------------------------------
# config files


@dataclass(frozen=True)
class LayerEntry:
    name: str
    spec: layer.LayerSpec
    algorithm: str = "winograd"
    declared_bound: int | None = None


@dataclass(frozen=True)
class BenchConfig:
    rns: tuple[int, ...]
    tile_m: int
    seed: int
    iterations: int
    layers: tuple[LayerEntry, ...]
    declared_bound: int | None = None


def load_config(path) -> BenchConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return config_from_dict(doc, str(path))


def config_from_dict(doc: dict, where: str = "config") -> BenchConfig:
    try:
        rns = tuple(int(m) for m in doc["rns"])
        tile_m = int(doc.get("tile_m", 14))
        seed = int(doc.get("seed", DEFAULT_SEED))
        iterations = int(doc.get("iterations", 1))
        top_bound = doc.get("declared_bound")
        entries = []
        for ent in doc["layers"]:
            spec = layer.LayerSpec(
                h=int(ent["h"]),
                w=int(ent["w"]),
                c=int(ent["c"]),
                k=int(ent["k"]),
                r=int(ent["r"]),
                batch=int(ent.get("batch", 1)),
                padding=int(ent.get("padding", 0)),
                stride=int(ent.get("stride", 1)),
                tile_m=int(ent.get("tile_m", tile_m)),
            )
            algorithm = ent.get("algorithm", "winograd")
            if algorithm not in ("winograd", "direct"):
                raise ConfigError(
                    f"{where}: layer {ent.get('name')!r} has unknown algorithm {algorithm!r}"
                )
            entries.append(
                LayerEntry(
                    name=str(ent.get("name", f"layer{len(entries)}")),
                    spec=spec,
                    algorithm=algorithm,
                    declared_bound=ent.get("declared_bound", top_bound),
                )
            )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e!r}") from None
    if not entries:
        raise ConfigError(f"{where}: no layers")
    if iterations < 1:
        raise ConfigError(f"{where}: iterations must be >= 1")
    return BenchConfig(
        rns=rns,
        tile_m=tile_m,
        seed=seed,
        iterations=iterations,
        layers=tuple(entries),
        declared_bound=top_bound,
    )


def default_bench_config_path():
    return resources.files("rnswinograd").joinpath("configs/vgg16.cfg")


# ---------------------------------------------------------------------------
# gen-transforms


def cmd_gen_transforms(args) -> int:
    points = parse_points(args.points) if args.points else None
    ts = transforms.derive_transforms(args.m, args.r, points)
    moduli = parse_moduli(args.moduli) if args.moduli else ()
    denlcm = transforms.denominator_lcm(ts)
    for m in moduli:
        shared = math.gcd(m, denlcm)
        if shared != 1:
            raise ConfigError(
                f"modulus {m} shares factor {shared} with transform "
                f"denominator {denlcm}; pick other points or another modulus"
            )
        residue.check_modulus(m)
    modular = [transforms.reduce_transforms_mod(ts, m) for m in moduli]

    if args.json:
        docs = [
            {
                "M": ts.m,
                "R": ts.r,
                "points": [_json_scalar(p) for p in ts.points],
                "AT": _json_matrix(ts.at),
                "G": _json_matrix(ts.g),
                "BT": _json_matrix(ts.bt),
                "alpha": _json_scalar(ts.alpha),
                "Gprime": _json_matrix(ts.gprime),
            }
        ]
        for mt in modular:
            docs.append(
                {
                    "M": ts.m,
                    "R": ts.r,
                    "points": [_json_scalar(p) for p in ts.points],
                    "modulus": mt.modulus,
                    "AT": _json_matrix(mt.at.tolist()),
                    "G": _json_matrix(mt.g.tolist()),
                    "BT": _json_matrix(mt.bt.tolist()),
                }
            )
        text = json.dumps(docs, indent=2)
        if args.json == "-":
            print(text)
        else:
            with open(args.json, "w") as f:
                f.write(text + "\n")
        return 0

    print(f"F({ts.m}x{ts.m}, {ts.r}x{ts.r}),  n = {ts.n}")
    print("points: " + ", ".join(str(p) for p in ts.points))
    print("\nAT (exact):\n" + _fmt_matrix(ts.at))
    print("\nG (exact):\n" + _fmt_matrix(ts.g))
    print("\nBT (exact):\n" + _fmt_matrix(ts.bt))
    print(f"\nalpha = {ts.alpha}")
    print("\nG' = G / alpha:\n" + _fmt_matrix(ts.gprime))
    for mt in modular:
        print(f"\nmodulus {mt.modulus}:")
        print("AT:\n" + _fmt_matrix(mt.at.tolist()))
        print("G:\n" + _fmt_matrix(mt.g.tolist()))
        print("BT:\n" + _fmt_matrix(mt.bt.tolist()))
    return 0


# ---------------------------------------------------------------------------
# verify


@dataclass(frozen=True)
class VerifyCase:
    label: str
    spec: layer.LayerSpec
    moduli: tuple[int, ...]
    entropy: tuple
    declared_bound: int | None = None


VERIFY_RNS = ((253, 251, 247), (251, 241, 239), (4001, 4331))
VERIFY_TILES = (
    (2, 3), (4, 3), (8, 3), (10, 3), (12, 3), (14, 3),
    (2, 5), (4, 5), (8, 5), (10, 5), (12, 5), (14, 5),
)
_GEOMETRIES_PER_COMBO = 7


def default_verify_cases(seed: int) -> list[VerifyCase]:
    """Randomized sweep over tile sizes, filter sizes and RNS systems.

    Combos whose transform denominators collide with a modulus factor are
    excluded up front (they are unrepresentable, not failing).  Geometries
    are drawn deterministically from the seed.
    """
    cases = []
    geo = make_rng(seed, "geometry")
    for tile_m, r in VERIFY_TILES:
        ts = transforms.cached_transforms(tile_m, r)
        for moduli in VERIFY_RNS:
            if not all(transforms.check_modulus_compatibility(ts, m) for m in moduli):
                continue
            for g in range(_GEOMETRIES_PER_COMBO):
                h = int(geo.integers(r, 33))
                w = int(geo.integers(r, 33))
                c = int(geo.integers(1, 17))
                k = int(geo.integers(1, 9))
                padding = int(geo.integers(0, 3))
                batch = int(geo.integers(1, 3))
                spec = layer.LayerSpec(
                    h=h, w=w, c=c, k=k, r=r,
                    batch=batch, padding=padding, tile_m=tile_m,
                )
                cases.append(
                    VerifyCase(
                        label=(
                            f"F({tile_m}x{tile_m},{r}x{r}) rns={moduli} "
                            f"h={h} w={w} c={c} k={k} pad={padding} b={batch}"
                        ),
                        spec=spec,
                        moduli=moduli,
                        entropy=(seed, tile_m, r, *moduli, g),
                    )
                )
    return cases


def run_verify_case(case: VerifyCase) -> tuple[bool, str]:
    """Run one case; returns (passed, report line)."""
    rng = make_rng(*case.entropy)
    weights = random_int8(rng, case.spec.weight_shape())
    x = random_int8(rng, case.spec.input_shape())
    system = residue.RnsSystem(case.moduli)
    want = layer.direct_conv(case.spec, weights, x)
    got = layer.layer_conv(
        case.spec, weights, x, system, declared_bound=case.declared_bound
    )
    if np.array_equal(want, got):
        return True, f"PASS {case.label}"
    bad = np.argwhere(want != got)
    first = tuple(int(v) for v in bad[0])
    return False, (
        f"FAIL {case.label} mismatches={len(bad)} first at {first}: "
        f"got {int(got[first])}, want {int(want[first])}"
    )


def cmd_verify(args) -> int:
    if args.input or args.weights:
        if not (args.input and args.weights):
            raise ConfigError("file mode needs both --input and --weights")
        return _verify_files(args)
    if args.config:
        cfg = load_config(args.config)
        cases = []
        for ent in cfg.layers:
            if ent.algorithm != "winograd":
                continue
            cases.append(
                VerifyCase(
                    label=f"{ent.name} rns={cfg.rns}",
                    spec=ent.spec,
                    moduli=cfg.rns,
                    entropy=(args.seed if args.seed is not None else cfg.seed, ent.name),
                    declared_bound=ent.declared_bound,
                )
            )
        if not cases:
            raise ConfigError(f"{args.config}: no winograd layers to verify")
    else:
        cases = default_verify_cases(args.seed if args.seed is not None else DEFAULT_SEED)

    failures = 0
    for case in cases:
        try:
            ok, line = run_verify_case(case)
        except DynamicRangeExceeded as e:
            system = residue.RnsSystem(case.moduli)
            report = layer.range_check(case.spec, system, case.declared_bound)
            print(f"FAIL {case.label} dynamic range: {e}")
            print(
                f"     static bound {report.static_bound}, declared "
                f"{report.declared_bound}, signed bound {report.signed_bound}"
            )
            failures += 1
            continue
        print(line)
        failures += 0 if ok else 1
    print(f"{len(cases) - failures}/{len(cases)} cases passed")
    return 0 if failures == 0 else 2


def _verify_files(args) -> int:
    x = layer.read_tensor(args.input)
    weights = layer.read_tensor(args.weights)
    if weights.ndim != 4 or x.ndim != 4:
        raise ConfigError("tensors must be rank 4: input NHWC, weights (r, r, c, k)")
    r, r2, c, k = weights.shape
    if r != r2 or x.shape[3] != c:
        raise ConfigError(
            f"weights {weights.shape} do not describe square filters on "
            f"{x.shape[3]} input channels"
        )
    spec = layer.LayerSpec(
        h=x.shape[1], w=x.shape[2], c=c, k=k, r=r,
        batch=x.shape[0], padding=args.padding, tile_m=args.tile,
    )
    system = residue.RnsSystem(parse_moduli(args.moduli))
    want = layer.direct_conv(spec, weights, x)
    got = layer.winograd_layer_conv(
        spec, weights, x, system, declared_bound=args.declared_bound
    )
    if args.output:
        layer.write_tensor(args.output, got)
    if np.array_equal(want, got):
        print(f"PASS {args.input} * {args.weights}: outputs match direct conv")
        return 0
    bad = np.argwhere(want != got)
    first = tuple(int(v) for v in bad[0])
    print(
        f"FAIL {args.input} * {args.weights}: {len(bad)} mismatches, first at "
        f"{first}: got {int(got[first])}, want {int(want[first])}"
    )
    return 2


# ---------------------------------------------------------------------------
# bench


@dataclass
class BenchRow:
    name: str
    algorithm: str
    spec: layer.LayerSpec
    direct_ms: float
    rns_ms: float
    timings: layer.StageTimings
    reduction: Fraction
    exact: bool

    @property
    def speedup(self) -> float:
        return self.direct_ms / self.rns_ms if self.rns_ms else float("nan")


def run_bench(cfg: BenchConfig) -> list[BenchRow]:
    system = residue.RnsSystem(cfg.rns)
    rows = []
    children = np.random.SeedSequence(cfg.seed).spawn(len(cfg.layers))
    for ent, child in zip(cfg.layers, children):
        rng = np.random.Generator(np.random.PCG64(child))
        weights = random_int8(rng, ent.spec.weight_shape())
        x = random_int8(rng, ent.spec.input_shape())

        direct_best = float("inf")
        for _ in range(cfg.iterations):
            t0 = time.perf_counter()
            want = layer.direct_conv(ent.spec, weights, x)
            direct_best = min(direct_best, time.perf_counter() - t0)

        timings = layer.StageTimings()
        rns_best = float("inf")
        if ent.algorithm == "direct":
            for _ in range(cfg.iterations):
                t0 = time.perf_counter()
                got = layer.direct_conv(ent.spec, weights, x)
                rns_best = min(rns_best, time.perf_counter() - t0)
        else:
            # Filter transforms depend only on the weights, so inference reuses
            # them across every input; precompute outside the timed region.
            ts = transforms.cached_transforms(ent.spec.tile_m, ent.spec.r)
            mts = transforms.reduce_for_system(ts, system)
            filters = layer.precompute_filter_transforms(weights, mts)
            for i in range(cfg.iterations):
                timings = layer.StageTimings()
                t0 = time.perf_counter()
                got = layer.winograd_layer_conv(
                    ent.spec, weights, x, system,
                    declared_bound=ent.declared_bound, filters=filters,
                    timings=timings,
                )
                rns_best = min(rns_best, time.perf_counter() - t0)

        counts = layer.count_operations(ent.spec, system)
        rows.append(
            BenchRow(
                name=ent.name,
                algorithm=ent.algorithm,
                spec=ent.spec,
                direct_ms=direct_best * 1e3,
                rns_ms=rns_best * 1e3,
                timings=timings,
                reduction=counts.reduction_ratio,
                exact=bool(np.array_equal(want, got)),
            )
        )
    return rows


def _bench_pcts(row: BenchRow) -> tuple[float, float, float, float, float, float]:
    """Stage shares of the fast path: tiling, input, gemm, backward, mrc, scatter."""
    total = row.timings.total()
    if total <= 0 or row.algorithm == "direct":
        return (0.0,) * 6
    return (
        100.0 * row.timings.tiling / total,
        100.0 * row.timings.input_transform / total,
        100.0 * row.timings.gemm / total,
        100.0 * row.timings.backward_transform / total,
        100.0 * row.timings.mrc / total,
        100.0 * row.timings.scatter / total,
    )


def cmd_bench(args) -> int:
    path = args.config if args.config else default_bench_config_path()
    cfg = load_config(path)
    if args.iterations is not None:
        cfg = BenchConfig(
            rns=cfg.rns, tile_m=cfg.tile_m, seed=cfg.seed,
            iterations=args.iterations, layers=cfg.layers,
            declared_bound=cfg.declared_bound,
        )
    if args.seed is not None:
        cfg = BenchConfig(
            rns=cfg.rns, tile_m=cfg.tile_m, seed=args.seed,
            iterations=cfg.iterations, layers=cfg.layers,
            declared_bound=cfg.declared_bound,
        )
    rows = run_bench(cfg)

    print(f"rns={cfg.rns}  tile_m={cfg.tile_m}  seed={cfg.seed}  iterations={cfg.iterations}")
    print("filter transforms are precomputed per layer and excluded from rns ms")
    header = (
        f"{'layer':<10} {'alg':<8} {'direct ms':>10} {'rns ms':>10} {'speedup':>8} "
        f"{'mult red':>9} {'tile%':>6} {'inp%':>6} {'gemm%':>6} {'bwd%':>6} "
        f"{'mrc%':>6} {'scat%':>6}  exact"
    )
    print(header)
    print("-" * len(header))
    for row in rows:
        tile, inp, gm, bwd, mrc, scat = _bench_pcts(row)
        print(
            f"{row.name:<10} {row.algorithm:<8} {row.direct_ms:>10.1f} "
            f"{row.rns_ms:>10.1f} {row.speedup:>8.2f} {float(row.reduction):>9.2f} "
            f"{tile:>6.1f} {inp:>6.1f} {gm:>6.1f} {bwd:>6.1f} {mrc:>6.1f} "
            f"{scat:>6.1f}  {row.exact}"
        )
    total_direct = sum(r.direct_ms for r in rows)
    total_rns = sum(r.rns_ms for r in rows)
    print(
        f"{'total':<10} {'':<8} {total_direct:>10.1f} {total_rns:>10.1f} "
        f"{total_direct / total_rns:>8.2f}"
    )

    if args.csv:
        with open(args.csv, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(
                [
                    "layer", "algorithm", "h", "w", "c", "k", "r",
                    "direct_ms", "rns_ms", "speedup", "mult_reduction",
                    "tiling_pct", "input_transform_pct", "gemm_pct",
                    "backward_pct", "mrc_pct", "scatter_pct", "exact",
                ]
            )
            for row in rows:
                tile, inp, gm, bwd, mrc, scat = _bench_pcts(row)
                wr.writerow(
                    [
                        row.name, row.algorithm, row.spec.h, row.spec.w,
                        row.spec.c, row.spec.k, row.spec.r,
                        f"{row.direct_ms:.3f}", f"{row.rns_ms:.3f}",
                        f"{row.speedup:.4f}", f"{float(row.reduction):.4f}",
                        f"{tile:.2f}", f"{inp:.2f}", f"{gm:.2f}",
                        f"{bwd:.2f}", f"{mrc:.2f}", f"{scat:.2f}",
                        int(row.exact),
                    ]
                )
    return 0 if all(r.exact for r in rows) else 2


# ---------------------------------------------------------------------------
# analyze


REDUCTION_TILES = (
    (2, 3), (4, 3), (6, 3), (8, 3), (8, 5), (9, 3), (9, 5),
    (10, 3), (10, 5), (11, 3), (11, 5), (12, 3), (12, 5), (14, 3),
)
WIDTH_TILES = ((2, 3), (4, 3), (6, 3), (8, 3), (8, 5), (10, 3), (10, 5))
STANDARD_SYSTEMS = ((253, 251, 247), (251, 241, 239), (4001, 4331))


def cmd_analyze(args) -> int:
    print("multiplication reduction per output tile (direct / fast):")
    print(f"{'tile':<16} {'n':>4} {'2 moduli':>10} {'3 moduli':>10}")
    for m, r in REDUCTION_TILES:
        n = m + r - 1
        red2 = float(transforms.arithmetic_reduction(m, r, 2))
        red3 = float(transforms.arithmetic_reduction(m, r, 3))
        print(f"F({m}x{m},{r}x{r})".ljust(16) + f" {n:>4} {red2:>10.2f} {red3:>10.2f}")

    print(f"\ntransform growth at {args.input_bits}-bit inputs:")
    print(f"{'tile':<16} {'filter mag':>11} {'input mag':>10} {'bits':>5}")
    for m, r in WIDTH_TILES:
        ts = transforms.cached_transforms(m, r)
        rep = transforms.data_width_analysis(ts, args.input_bits)
        print(
            f"F({m}x{m},{r}x{r})".ljust(16)
            + f" {rep.filter_magnification:>11.4g} {rep.input_magnification:>10.4g} "
            f"{rep.required_bits:>5}"
        )
    print(
        "\n(growth bounds assume worst-case inputs; residue channels replace"
        "\nwide words, so the fast path never materializes these widths)"
    )

    print("\nstandard residue systems:")
    for moduli in STANDARD_SYSTEMS:
        system = residue.RnsSystem(moduli)
        print(
            f"  {moduli}: dynamic range {system.dynamic_range}, "
            f"signed +/-{system.signed_bound}"
        )
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnswino",
        description="Exact integer Winograd convolution over residue number systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-transforms", help="derive transform matrices")
    p.add_argument("--m", type=int, required=True, help="outputs per tile side")
    p.add_argument("--r", type=int, required=True, help="filter taps per side")
    p.add_argument("--points", help="comma list of interpolation points, e.g. 0,1,-1,inf")
    p.add_argument("--moduli", help="also print matrices reduced mod each modulus")
    p.add_argument("--json", help="write JSON to this path ('-' for stdout)")
    p.set_defaults(func=cmd_gen_transforms)

    p = sub.add_parser("verify", help="compare fast path against direct convolution")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="verify the layers of a bench config")
    p.add_argument("--input", help="QTNS int8 input tensor (NHWC)")
    p.add_argument("--weights", help="QTNS int8 weight tensor (r, r, c, k)")
    p.add_argument("--output", help="write the verified output tensor here")
    p.add_argument("--tile", type=int, default=14, help="tile size for file mode")
    p.add_argument("--padding", type=int, default=0, help="padding for file mode")
    p.add_argument("--moduli", default="251,241,239", help="moduli for file mode")
    p.add_argument("--declared-bound", type=int, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="timed sweep over a layer config")
    p.add_argument("--config", help="JSON layer config (default: packaged VGG16)")
    p.add_argument("--csv", help="also write results to this CSV file")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="reduction and data width tables")
    p.add_argument("--input-bits", type=int, default=8)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; fold into our scheme
        code = e.code if isinstance(e.code, int) else 1
        return 0 if code == 0 else 1
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DynamicRangeExceeded as e:
        print(f"dynamic range failure: {e}", file=sys.stderr)
        return 2
    except (RnsError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
