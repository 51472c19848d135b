"""``psvb`` command line.

Every command prints ``key=value`` lines. Exit codes: 0 success, 1 a
verification or stability check failed, 2 bad input, 3 the solver diverged.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .builders import chain_compile
from .inverse import (
    FbsConfig, IdentityModel, MaskedFourier, PeriodicBlur, SamplingMask, SolverDivergence,
    add_noise, check_forward_stability, check_solution_stability, fbs_solve, make_mask, phantom,
    psnr,
)
from .lipschitz import (
    AveragedDenoiser, FrameThresholdDenoiser, IdentityResidual, as_array_map, certify_network,
    dct_frame, haar_frame,
)
from .multifilter import MultiFilter, compose_all
from .signal import DimensionError, Grid, MultiSignal
from .spectral import gram_projector_check, is_parseval, operator_norm, oversampled_norm

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_DIVERGED = 3

DEFAULT_DENOISER = "haar:2"
DEFAULT_TAU = 0.015


class InputError(Exception):
    pass


def _emit(out, key, value):
    if isinstance(value, float):
        value = f"{value:.15g}"
    elif isinstance(value, bool):
        value = int(value)
    print(f"{key}={value}", file=out)


def _grid(text: str | None, fallback: Grid | None = None) -> Grid:
    if text is None:
        if fallback is None:
            raise InputError("--grid is required")
        return fallback
    try:
        return Grid.parse(text)
    except ValueError as exc:
        raise InputError(f"bad grid {text!r}: {exc}") from exc


def _load_filter(path: str) -> MultiFilter:
    """A filter container or a JSON chain description."""
    if path.endswith(".json"):
        return chain_compile(io.load_chain_spec(path))
    return io.load(path, "filter")


# ---------------------------------------------------------------------------
# denoisers and masks from short text specs
# ---------------------------------------------------------------------------


def make_residual(spec: str, grid: Grid, tau: float, policy: str = "reject", out=None):
    """Residual operator ``R`` from a spec.

    ``haar[:levels]``, ``dct[:size]``
        frame soft-thresholding with threshold ``tau`` (lowpass kept).
    ``identity``
        ``R = Id``.
    anything else
        path to a weights container, certified on ``grid``.
    """
    name, _, arg = spec.partition(":")
    if name in ("haar", "dct"):
        try:
            n = int(arg) if arg else (1 if name == "haar" else 3)
        except ValueError as exc:
            raise InputError(f"bad denoiser spec {spec!r}") from exc
        T = haar_frame(n, grid.dims) if name == "haar" else dct_frame(n, grid.dims)
        return FrameThresholdDenoiser(T, tau, grid, keep=(0,))
    if name == "identity":
        return IdentityResidual()
    net = io.load(spec, "weights")
    net, audit = certify_network(net, grid, policy)
    if out is not None:
        for line in audit:
            print(f"audit: {line}", file=out)
    return net


def make_mask_from_spec(spec: str, grid: Grid, seed: int, symmetric: bool = False) -> SamplingMask:
    """``cartesian:A``, ``radial:LINES``, ``random:RATE``, ``full`` or a mask file."""
    name, _, arg = spec.partition(":")
    try:
        if name == "cartesian":
            return make_mask("cartesian", grid, acceleration=int(arg or 4), symmetric=symmetric)
        if name == "radial":
            return make_mask("radial", grid, num_lines=int(arg or 20), symmetric=symmetric)
        if name == "random":
            return make_mask("random", grid, rate=float(arg or 0.3), seed=seed, symmetric=symmetric)
        if name == "full":
            return make_mask("full", grid)
    except ValueError as exc:
        raise InputError(f"bad mask spec {spec!r}: {exc}") from exc
    mask = io.load(spec, "mask")
    if mask.mask.shape != grid.sizes:
        raise InputError(f"mask {mask.mask.shape} does not match grid {grid.sizes}")
    return mask


def _image(spec: str, grid_text: str | None) -> MultiSignal:
    if spec.startswith("phantom"):
        _, _, n = spec.partition(":")
        g = _grid(grid_text, Grid((int(n or 64),) * 2))
        if g.dims != 2 or g.sizes[0] != g.sizes[1]:
            raise InputError("the phantom needs a square 2-d grid")
        return MultiSignal(g, phantom(g.sizes[0])[None])
    return io.read_image(spec)


def _write_signal(x: MultiSignal, path: str):
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".pnm"):
        io.write_pgm(x, path)
    elif suffix == ".csv":
        io.export_csv(x, path)
    else:
        io.save(path, x)


def _write_trace(trace, path):
    lines = ["iteration,gap"] + [f"{i + 1},{g:.17g}" for i, g in enumerate(trace)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_verify(args, out) -> int:
    chain = io.load_chain_spec(args.chain)
    H = chain_compile(chain)
    grid = _grid(args.grid, Grid((32,) * H.dims))
    _emit(out, "modules", len(chain))
    _emit(out, "in_channels", H.in_channels)
    _emit(out, "out_channels", H.out_channels)
    _emit(out, "taps", H.num_taps)
    _emit(out, "grid", str(grid))
    report = is_parseval(H, grid, args.tol)
    for line in report.lines():
        print(line, file=out)
    ok = report.passed
    if args.gram:
        g = gram_projector_check(H, grid, seed=args.seed)
        _emit(out, "gram_idempotence_defect", g.idempotence_defect)
        _emit(out, "gram_symmetry_defect", g.symmetry_defect)
        _emit(out, "gram_singular_value_defect", g.singular_value_defect)
        ok = ok and g.max_defect <= max(args.tol, 1e-10)
    if args.out:
        io.save(args.out, H.with_grid_hint(grid))
        _emit(out, "wrote", args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_norm(args, out) -> int:
    H = _load_filter(args.filter)
    grid = _grid(args.grid, H.grid_hint or Grid((32,) * H.dims))
    _emit(out, "grid", str(grid))
    _emit(out, "operator_norm", operator_norm(H, grid))
    if args.oversample > 1:
        nrm, spacing = oversampled_norm(H, grid, args.oversample)
        _emit(out, "oversample", args.oversample)
        _emit(out, "oversampled_norm", nrm)
        _emit(out, "frequency_spacing", ",".join(f"{s:.15g}" for s in spacing))
    return EXIT_OK


def cmd_compose(args, out) -> int:
    """Inputs are given in application order: the first acts first."""
    filters = [_load_filter(p) for p in args.inputs]
    try:
        H = compose_all(filters)
    except DimensionError as exc:
        raise InputError(str(exc)) from exc
    if args.grid:
        H = H.with_grid_hint(_grid(args.grid))
    io.save(args.out, H)
    _emit(out, "in_channels", H.in_channels)
    _emit(out, "out_channels", H.out_channels)
    _emit(out, "taps", H.num_taps)
    _emit(out, "wrote", args.out)
    return EXIT_OK


def cmd_denoise(args, out) -> int:
    clean = io.read_image(args.input)
    if clean.channels != 1 or clean.is_complex:
        raise InputError("denoise expects a real single-channel image")
    noisy = clean.with_data(add_noise(clean.data, args.sigma, seed=args.seed))
    R = make_residual(args.denoiser, clean.grid, args.tau, args.policy, out)
    fn = as_array_map(R)
    if args.beta is not None:
        fn = AveragedDenoiser(R, args.beta).apply_array
    result = noisy.with_data(fn(noisy.data))
    _write_signal(result, args.output)
    _emit(out, "sigma", float(args.sigma))
    _emit(out, "tau", float(args.tau))
    _emit(out, "psnr_noisy", psnr(clean.data, noisy.data))
    _emit(out, "psnr_denoised", psnr(clean.data, result.data))
    _emit(out, "wrote", args.output)
    return EXIT_OK


DEFAULT_BETA = 0.4


def _beta(args) -> float:
    return DEFAULT_BETA if args.beta is None else args.beta


def _config(args) -> FbsConfig:
    return FbsConfig(alpha=args.alpha, beta=_beta(args), max_iters=args.max_iters, tol=args.tol)


def cmd_reconstruct(args, out) -> int:
    truth = _image(args.image, args.grid)
    if truth.grid.dims != 2 or truth.channels != 1:
        raise InputError("reconstruct needs a single-channel 2-d image")
    grid = truth.grid
    mask = make_mask_from_spec(args.mask, grid, args.seed)
    A = MaskedFourier(grid, mask)
    y = add_noise(A.forward(truth.data[0]), args.sigma, seed=args.seed)
    zero_fill = np.real(A.adjoint(y))
    R = make_residual(args.denoiser, grid, args.tau, args.policy, out)
    D = AveragedDenoiser(R, _beta(args))
    try:
        res = fbs_solve(A, y, D, _config(args))
    except SolverDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _emit(out, "grid", str(grid))
    _emit(out, "mask_fraction", mask.fraction)
    _emit(out, "alpha", res.alpha)
    _emit(out, "beta", _beta(args))
    _emit(out, "iterations", res.iterations)
    _emit(out, "converged", res.converged)
    _emit(out, "final_gap", res.final_gap)
    _emit(out, "psnr_zero_fill", psnr(truth.data[0], zero_fill))
    _emit(out, "psnr_pnp", psnr(truth.data[0], res.solution.data[0]))
    if args.out:
        _write_signal(res.solution, args.out)
        _emit(out, "wrote", args.out)
    if args.zero_fill_out:
        _write_signal(MultiSignal(grid, zero_fill[None]), args.zero_fill_out)
        _emit(out, "wrote", args.zero_fill_out)
    if args.trace_out:
        _write_trace(res.trace, args.trace_out)
        _emit(out, "wrote", args.trace_out)
    return EXIT_OK


def _model(args, grid: Grid):
    if args.model == "identity":
        return IdentityModel(grid)
    if args.model == "blur":
        offs = np.zeros((2, grid.dims), np.int64)
        offs[1, 0] = 1
        kernel = MultiFilter(offs, np.full((2, 1, 1), 0.5))
        return PeriodicBlur(grid, kernel)
    return MaskedFourier(grid, make_mask_from_spec(args.mask, grid, args.seed))


def cmd_stability(args, out) -> int:
    beta = _beta(args)
    if beta > 0.5:
        raise InputError(f"the forward-stability audit needs beta <= 1/2, got {beta}")
    grid = _grid(args.grid, Grid((32, 32)))
    A = _model(args, grid)
    R = make_residual(args.denoiser, grid, args.tau, args.policy, out)
    D = AveragedDenoiser(R, beta)
    cfg = _config(args)
    rng = np.random.default_rng(args.seed)
    s_true = phantom(grid.sizes[0]) if grid.dims == 2 and grid.sizes[0] == grid.sizes[1] \
        else rng.random(grid.sizes)
    y0 = A.forward(s_true)
    all_ok = True
    for t in range(args.trials):
        y1 = add_noise(y0, args.sigma, seed=int(rng.integers(2**31)))
        y2 = add_noise(y1, args.perturbation, seed=int(rng.integers(2**31)))
        try:
            fwd = check_forward_stability(A, D, cfg, y1, y2)
            sol = check_solution_stability(A, D, cfg, y1, y2, args.L0) if args.L0 is not None else None
        except SolverDivergence as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        line = (f"trial={t} forward_lhs={fwd.lhs:.15g} forward_rhs={fwd.rhs:.15g} "
                f"slack={fwd.slack:.3e} converged={int(fwd.converged)} pass={int(fwd.passed)}")
        ok = fwd.passed or not fwd.converged
        if sol is not None:
            line += (f" solution_lhs={sol.lhs:.15g} solution_rhs={sol.rhs:.15g} "
                     f"solution_converged={int(sol.converged)} solution_pass={int(sol.passed)}")
            ok = ok and (sol.passed or not sol.converged)
        print(line, file=out)
        all_ok = all_ok and ok
    _emit(out, "model", A.kind)
    _emit(out, "trials", args.trials)
    _emit(out, "passed", all_ok)
    return EXIT_OK if all_ok else EXIT_FAIL


def cmd_mask(args, out) -> int:
    grid = _grid(args.grid, Grid((64, 64)))
    try:
        m = make_mask_from_spec(args.scheme, grid, args.seed, args.symmetric)
    except (TypeError, ValueError, DimensionError) as exc:
        raise InputError(str(exc)) from exc
    _emit(out, "grid", str(grid))
    _emit(out, "scheme", m.scheme)
    _emit(out, "sampled", int(m.mask.sum()))
    _emit(out, "fraction", m.fraction)
    if args.out:
        io.save(args.out, m)
        _emit(out, "wrote", args.out)
    return EXIT_OK


def cmd_convert(args, out) -> int:
    """Convert signals between container, CSV and graymap; re-save any container."""
    src = Path(args.input)
    if src.suffix.lower() in (".pgm", ".pnm", ".csv"):
        obj = io.read_image(src)
    else:
        obj = io.load(src)
    if isinstance(obj, MultiSignal):
        _write_signal(obj, args.output)
    else:
        if Path(args.output).suffix.lower() in (".pgm", ".pnm", ".csv"):
            raise InputError("only signals can be written as CSV or graymap")
        io.save(args.output, obj)
    _emit(out, "kind", type(obj).__name__)
    _emit(out, "wrote", args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", help="grid sizes, e.g. 64x64")
    common.add_argument("--seed", type=int, default=0)

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--alpha", type=float, default=None, help="step size (default 1/L)")
    solver.add_argument("--beta", type=float, default=None,
                        help="averaging weight (default 0.4; denoise applies R alone when unset)")
    solver.add_argument("--tau", type=float, default=DEFAULT_TAU)
    solver.add_argument("--max-iters", type=int, default=1000)
    solver.add_argument("--tol", type=float, default=1e-6, help="relative fixed-point gap")
    solver.add_argument("--sigma", type=float, default=10 / 255)
    solver.add_argument("--denoiser", default=DEFAULT_DENOISER,
                        help="haar[:levels], dct[:size], identity or a weights file")
    solver.add_argument("--renormalize", dest="policy", action="store_const", const="renormalize",
                        default="reject", help="repair uncertified weights instead of rejecting them")

    p = argparse.ArgumentParser(prog="psvb", description="Parseval filter banks and PnP reconstruction")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify", parents=[common], help="Parseval test of a chain description")
    s.add_argument("chain")
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--gram", action="store_true", help="also check that H H* is a projector")
    s.add_argument("--out", help="write the compiled filter")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("norm", parents=[common], help="operator norm of a filter")
    s.add_argument("filter")
    s.add_argument("--oversample", type=int, default=1)
    s.set_defaults(func=cmd_norm)

    s = sub.add_parser("compose", parents=[common], help="compose filters (application order)")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compose)

    s = sub.add_parser("denoise", parents=[common, solver], help="add noise and denoise an image")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("reconstruct", parents=[common, solver], help="simulated MRI reconstruction")
    s.add_argument("--image", default="phantom", help="image file or phantom[:size]")
    s.add_argument("--mask", default="cartesian:4")
    s.add_argument("--out")
    s.add_argument("--zero-fill-out")
    s.add_argument("--trace-out")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("stability", parents=[common, solver], help="stability audits")
    s.add_argument("--model", choices=("identity", "mri", "blur"), default="mri")
    s.add_argument("--mask", default="cartesian:4")
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--perturbation", type=float, default=0.05)
    s.add_argument("--L0", type=float, default=None, help="also audit an L0-contracted denoiser")
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("mask", parents=[common], help="build a sampling mask")
    s.add_argument("scheme", help="cartesian:A, radial:LINES, random:RATE or full")
    s.add_argument("--symmetric", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("convert", help="convert between container, CSV and PGM")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_convert)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (InputError, io.FileFormatError, io.ChainSpecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
