"""Command line interface: ``fit``, ``normalize``, ``inspect`` and ``synth``.

Exit status is 0 on success, 1 on usage errors and 2 when processing fails
(including a batch in which some images could not be normalized).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import StainError
from .io import (
    ProfileDocument,
    ensure_dir,
    list_images,
    load_image,
    load_profile,
    output_path,
    save_image,
    save_profile,
)
from .macenko import EstimatorParams
from .multi_target import ReferenceSet, StochasticProfile, Strategy, fit
from .normalizer import normalize
from .synth import SynthSpec, random_stain_matrix, rotate_stain_basis, synthesize

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multimacenko", description="Macenko stain normalization with multiple references.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a normalization profile from reference images")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.AVG_POST.value)
    p.add_argument("--refs", nargs="+", required=True, help="reference image files and/or directories")
    p.add_argument("--beta", type=float, default=0.15)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--i0", type=float, default=255.0)
    p.add_argument("--min-tissue", type=int, default=100, dest="min_tissue")
    p.add_argument("--seed", type=int, default=0, help="draw seed for the stochastic strategy")
    p.add_argument("--out", required=True, help="profile JSON to write")

    p = sub.add_parser("normalize", help="normalize images against a fitted profile")
    p.add_argument("--profile", required=True)
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report", help="write a JSON list of {file, error} for failed images")

    p = sub.add_parser("inspect", help="print a profile's stain vectors and maxC")
    p.add_argument("--profile", required=True)
    p.add_argument("--figure", help="also render the profile to this image file")

    p = sub.add_parser("synth", help="render a synthetic stained image with known stains")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--background", type=float, default=0.0, help="fraction of white pixels")
    p.add_argument("--rotate-deg", type=float, default=0.0, dest="rotate_deg",
                   help="rotate the stains within their plane by this many degrees")
    p.add_argument("--lo", type=float, default=0.2)
    p.add_argument("--hi", type=float, default=1.5)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="write ground-truth stains and concentrations as JSON")
    return parser


def _collect(paths) -> list[Path]:
    files: list[Path] = []
    for p in paths:
        files.extend(list_images(p))
    return files


def cmd_fit(args) -> int:
    try:
        params = EstimatorParams(beta=args.beta, alpha=args.alpha, min_tissue_pixels=args.min_tissue, i0=args.i0)
    except ValueError as err:
        raise UsageError(str(err)) from err
    try:
        files = _collect(args.refs)
    except FileNotFoundError as err:
        raise UsageError(str(err)) from err
    if not files:
        raise UsageError("no reference images found")
    strategy = Strategy(args.strategy)
    if strategy is Strategy.MACENKO and len(files) != 1:
        raise UsageError(f"--strategy macenko takes exactly one reference image, got {len(files)}")
    refs = ReferenceSet([load_image(f) for f in files])
    try:
        profile = fit(refs, strategy, params, seed=args.seed)
    except StainError as err:
        where = f" ({files[err.index]})" if err.index is not None else ""
        print(f"error: {type(err).__name__}{where}: {err}", file=sys.stderr)
        return EXIT_FAILED
    save_profile(ProfileDocument(profile, params), args.out)
    print(f"strategy={strategy.value}")
    print(f"source_count={profile.source_count}")
    print(f"profile={args.out}")
    return EXIT_OK


def cmd_normalize(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    doc = load_profile(args.profile)
    try:
        files = list_images(args.input)
    except FileNotFoundError as err:
        raise UsageError(str(err)) from err
    out_dir = ensure_dir(args.output)

    def job(k: int):
        src = files[k]
        try:
            result = normalize(load_image(src), doc.profile, doc.params, draw_index=k)
            dest = output_path(src, out_dir)
            save_image(result.image, dest)
            return src, dest, result.chosen_reference_index, None
        except (StainError, OSError) as err:
            return src, None, None, f"{type(err).__name__}: {err}"

    if args.jobs == 1:
        outcomes = [job(k) for k in range(len(files))]
    else:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(job, range(len(files))))

    failures = []
    for src, dest, ref, error in outcomes:
        if error is None:
            extra = f"\treference={ref}" if ref is not None else ""
            print(f"ok\t{src}\t{dest}{extra}")
        else:
            print(f"failed\t{src}\t{error}", file=sys.stderr)
            failures.append({"file": str(src), "error": error})
    print(f"normalized={len(files) - len(failures)}\tfailed={len(failures)}")
    if args.report:
        Path(args.report).write_text(json.dumps(failures, indent=2) + "\n", encoding="utf-8")
    return EXIT_FAILED if failures else EXIT_OK


def _fmt(values) -> str:
    return "\t".join(f"{float(x):.6f}" for x in values)


def cmd_inspect(args) -> int:
    doc = load_profile(args.profile)
    profile = doc.profile
    print(f"strategy\t{profile.strategy.value}")
    print(f"source_count\t{profile.source_count}")
    print(f"params\tbeta={doc.params.beta}\talpha={doc.params.alpha}\ti0={doc.params.i0}")
    if doc.seed is not None:
        print(f"seed\t{doc.seed}")
    if doc.created_at:
        print(f"created_at\t{doc.created_at}")
    print("target\tstain\tR\tG\tB\tmax_c")
    targets = profile.candidates if isinstance(profile, StochasticProfile) else [profile]
    for k, prof in enumerate(targets):
        label = f"reference{k}" if isinstance(profile, StochasticProfile) else "profile"
        for j, name in enumerate(("H", "E")):
            print(f"{label}\t{name}\t{_fmt(prof.stain_matrix[:, j])}\t{prof.max_c[j]:.6f}")
    if args.figure:
        from .plotting import plot_profile

        plot_profile(profile, args.figure, doc.params.i0)
        print(f"figure\t{args.figure}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.size < 1:
        raise UsageError("--size must be positive")
    v = random_stain_matrix(args.seed)
    if args.rotate_deg:
        v = rotate_stain_basis(v, None, np.radians(args.rotate_deg))
    try:
        spec = SynthSpec(v, width=args.size, height=args.size, lo=args.lo, hi=args.hi,
                         rng_seed=args.seed, background_fraction=args.background)
    except StainError as err:
        raise UsageError(str(err)) from err
    image, conc = synthesize(spec)
    save_image(image, args.out)
    if args.truth:
        truth = {
            "seed": args.seed,
            "size": args.size,
            "background": args.background,
            "rotate_deg": args.rotate_deg,
            "lo": args.lo,
            "hi": args.hi,
            "v_true": [[float(x) for x in col] for col in spec.v_true.T],
            "concentrations": [[float(x) for x in row] for row in conc],
        }
        Path(args.truth).write_text(json.dumps(truth) + "\n", encoding="utf-8")
    print(f"image={args.out}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "normalize": cmd_normalize, "inspect": cmd_inspect, "synth": cmd_synth}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (StainError, OSError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAILED


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
