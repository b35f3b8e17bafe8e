"""CLI: export an upstream checkpoint and record a parity fixture.

    xmodal-export export --model facebook/wav2vec2-base --out enc.checkpoint \
        --fixture-out enc.fixture --fixture-len 400

The resulting pair validates with the consuming toolkit's
`verify-checkpoint` command.
"""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportManifest, detect_family, export, load_upstream
from .fixtures import DEFAULT_TOLERANCE, emit_fixture, fixture_waveform, save_fixture


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xmodal-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="convert a pretrained model to a container")
    p.add_argument("--model", required=True, help="hub id or local model path")
    p.add_argument("--out", required=True, help="output checkpoint container")
    p.add_argument("--mapping", help="mapping JSON (default: bundled, by family)")
    p.add_argument("--fixture-out", dest="fixture_out",
                   help="also record a parity fixture here")
    p.add_argument("--fixture-len", dest="fixture_len", type=int, default=400)
    p.add_argument("--fixture-seed", dest="fixture_seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--taps", default="all", help='comma layer indices or "all"')
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        model = load_upstream(args.model)
        manifest = (
            ExportManifest.load(args.mapping)
            if args.mapping
            else ExportManifest.for_family(detect_family(model))
        )
        config = export(model, manifest, args.out, provenance=f"exported from {args.model}")
        print(
            f"exported {args.model}: {config['n_transformer_layers']} layers, "
            f"d_model {config['d_model']} -> {args.out}"
        )
        if args.fixture_out:
            n_layers = config["n_transformer_layers"]
            taps = (
                list(range(n_layers + 1))
                if args.taps == "all"
                else [int(t) for t in args.taps.split(",")]
            )
            fixture = emit_fixture(
                model,
                fixture_waveform(args.fixture_len, args.fixture_seed),
                taps,
                tolerance=args.tolerance,
            )
            save_fixture(args.fixture_out, fixture)
            print(f"fixture with taps {taps} -> {args.fixture_out}")
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
