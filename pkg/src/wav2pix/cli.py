"""Command-line entry point.

Exit codes: 0 on success, 1 on a runtime failure (one-line diagnostic on
stderr), 2 on a usage error. Successful commands print one JSON line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

DEFAULT_SEED = 0


def _json(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _require_file(path, what):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


def cmd_synth_fixture(args):
    from .dataset import MANIFEST_NAME, make_synthetic_fixture

    m = make_synthetic_fixture(args.identities, args.per_identity, args.out, seed=args.seed)
    _json({"manifest": str(Path(args.out) / MANIFEST_NAME), "records": len(m), "identities": m.num_identities})


def cmd_prepare(args):
    from .prepare import prepare_directory

    if not Path(args.input).is_dir():
        raise FileNotFoundError(f"input directory not found: {args.input}")
    m = prepare_directory(args.input, args.out, context_seconds=args.context_seconds)
    _json({"manifest": str(Path(args.out) / "manifest.jsonl"), "records": len(m), "identities": m.num_identities})


def cmd_train(args):
    from .dataset import load_manifest
    from .evaluation import chunk_samples_for
    from .trainer import TrainConfig, train

    if args.config is not None:
        _require_file(args.config, "config file")
    _require_file(args.manifest, "manifest")
    if args.resume is not None:
        _require_file(args.resume, "checkpoint")
    config = TrainConfig.from_json(args.config).to_dict() if args.config else TrainConfig().to_dict()
    overrides = {
        "seed": args.seed, "max_steps": args.max_steps, "batch_size": args.batch_size,
        "image_size": args.image_size, "checkpoint_every": args.checkpoint_every,
        "lambda": args.lam,
    }
    if args.chunk_ms is not None:
        overrides["chunk_samples"] = chunk_samples_for(args.chunk_ms)
    config.update({k: v for k, v in overrides.items() if v is not None})
    config = TrainConfig.from_dict(config)
    manifest = load_manifest(args.manifest, config.image_size, config.chunk_samples)
    ckpt = train(config, manifest, args.out, resume=args.resume)
    _json({"checkpoint": str(ckpt), "metrics": str(Path(args.out) / "metrics.csv"), "steps": config.max_steps})


def cmd_generate(args):
    from .synthesis import generate_from_wav

    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.audio, "audio file")
    info = generate_from_wav(args.checkpoint, args.audio, args.out, args.dropout_seed, args.chunk_ms)
    _json(info)


def cmd_evaluate(args):
    from .dataset import load_manifest
    from .evaluation import evaluate_model, load_oracle
    from .synthesis import load_model

    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.manifest, "manifest")
    model = load_model(args.checkpoint)
    manifest = load_manifest(args.manifest, model.config.image_size)
    report = evaluate_model(
        model, manifest, chunk_ms=args.chunk_ms, per_record=args.per_record, seed=args.seed,
        landmark_oracle=load_oracle(args.landmark_oracle) if args.landmark_oracle else None,
        identity_oracle=load_oracle(args.identity_oracle) if args.identity_oracle else None,
    )
    if args.out:
        Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    _json(report)


def cmd_gradcheck(args):
    from .gradcheck import gradcheck_report

    r = gradcheck_report(seed=args.seed, epsilon=args.epsilon)
    _json({k: r[k] for k in ("max_rel_error", "n_checked", "n_skipped_kinks", "n_parameters")})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wav2pix", description="Speech-conditioned face generation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth-fixture", help="write a synthetic audio/face dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--identities", type=int, default=4)
    s.add_argument("--per-identity", type=int, default=8)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.set_defaults(func=cmd_synth_fixture)

    s = sub.add_parser("prepare", help="build a manifest from a directory of WAV/PNG pairs")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--context-seconds", type=float, default=4.0)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train on a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--resume")
    s.add_argument("--seed", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--image-size", type=int, choices=(64, 128))
    s.add_argument("--checkpoint-every", type=int)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--chunk-ms", type=float, choices=(300, 700, 1000))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate a face from a WAV file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--audio", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dropout-seed", type=int, default=0)
    s.add_argument("--chunk-ms", type=float, choices=(300, 700, 1000))
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="score generated faces for a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--chunk-ms", type=float, choices=(300, 700, 1000))
    s.add_argument("--per-record", type=int, default=2)
    s.add_argument("--landmark-oracle", help="module:factory returning an object with detect(image)")
    s.add_argument("--identity-oracle", help="module:factory returning an object with classify(image)")
    s.add_argument("--out", help="also write the report to this file")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    s.add_argument("--epsilon", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit status 1
        print(f"wav2pix {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


dispatch = main

if __name__ == "__main__":
    sys.exit(main())
