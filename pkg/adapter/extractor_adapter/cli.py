import argparse
import logging
import sys

from extractor_adapter.export import AdapterConfig, AdapterError, extract_shard


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract.py",
        description="Export ViT embeddings from an image directory as an EMB1 shard.",
    )
    parser.add_argument("--model", required=True, help="checkpoint name or local path")
    parser.add_argument("--input", required=True, help="directory of images")
    parser.add_argument("--out", required=True, help="output shard path")
    parser.add_argument(
        "--kind",
        default="cls768",
        choices=["cls768", "tokens_raw", "dct64_tokens_raw"],
        help="cls768 stores the CLS vector; the raw-token kinds store the 256x768 patch matrix",
    )
    parser.add_argument("--batch", type=int, default=16, help="images per forward pass")
    return parser


def main(argv: list[str] | None = None) -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        result = extract_shard(
            AdapterConfig(
                model_id=args.model,
                input_dir=args.input,
                output_path=args.out,
                kind=args.kind,
                batch_size=args.batch,
            )
        )
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(2)
    print(f"wrote {result.output_path} ({result.record_count} records, {len(result.skipped)} skipped)")


if __name__ == "__main__":
    main()
