"""Command-line frontend.

Subcommands: attribute, evaluate, sanity, train-toy, gen-data, render.
Errors print one machine-parsable line to stderr ("error[<code>]: <message>")
and become the exit code: 2 validation, 3 I/O, 4 numeric. Success keeps
stderr empty. HEDGEGRAD_SEED overrides the default seed 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from hedgegrad import ght
from hedgegrad.attribution import (
    BASELINE_METHODS,
    HedgeConfig,
    attribute,
    attribute_baseline,
    save_attribution,
)
from hedgegrad.benchmark import BenchmarkConfig, format_table, run_benchmark, write_results
from hedgegrad.data import (
    SHAPE_CLASSES,
    decode_image,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)
from hedgegrad.errors import HedgegradError, ValidationError
from hedgegrad.metrics import sanity_check
from hedgegrad.model import forward_model, load_model, normalize_input, save_model
from hedgegrad.render import render_heatmap
from hedgegrad.train import model_accuracy, train_toy_model

COMPONENT_NAMES = ("C", "A", "U", "Psi")


def _default_seed() -> int:
    raw = os.environ.get("HEDGEGRAD_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"HEDGEGRAD_SEED must be an integer, got '{raw}'")


def _resolve_seed(args) -> int:
    return _default_seed() if args.seed is None else args.seed


def _parse_components(text: str) -> dict:
    if text.strip() == "":
        return {name: False for name in COMPONENT_NAMES}
    picked = [part.strip() for part in text.split(",")]
    for part in picked:
        if part not in COMPONENT_NAMES:
            raise ValidationError(
                f"unknown component '{part}' (choose from {', '.join(COMPONENT_NAMES)})"
            )
    return {name: name in picked for name in COMPONENT_NAMES}


def _load_normalized_input(model, path):
    image = decode_image(path, channels=model.input_shape[1])
    if image.shape[1:] != tuple(model.input_shape[2:]):
        raise ValidationError(
            f"image size {image.shape[1:]} does not match model input "
            f"{tuple(model.input_shape[2:])}"
        )
    return normalize_input(model, image)[None]


def _resolve_target(model, x, raw: str) -> int:
    if raw == "pred":
        return int(np.argmax(forward_model(model, x)[0]))
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"target must be a class index or 'pred', got '{raw}'")


def cmd_attribute(args) -> int:
    model = load_model(args.model)
    x = _load_normalized_input(model, args.input)
    target = _resolve_target(model, x, args.target)
    if args.method == "hedge":
        comps = _parse_components(args.components)
        config = HedgeConfig(
            gamma=args.gamma,
            epsilon=args.epsilon,
            enable_C=comps["C"],
            enable_A=comps["A"],
            enable_U=comps["U"],
            enable_Psi=comps["Psi"],
        )
        result = attribute(model, x, target, config=config)
    else:
        result = attribute_baseline(
            model, x, target, args.method,
            alpha=args.alpha, beta=args.beta, epsilon=args.epsilon,
        )
    sidecar = save_attribution(result, args.output)
    if args.heatmap:
        render_heatmap(result.map2d, args.heatmap)
    print(f"wrote {args.output} and {sidecar}")
    return 0


def cmd_evaluate(args) -> int:
    config = BenchmarkConfig.from_json(args.config)
    if args.jobs is not None:
        config = BenchmarkConfig(**{**config.__dict__, "jobs": args.jobs})
    records = run_benchmark(config)
    json_path, csv_path = write_results(records, args.output_dir, config)
    print(format_table(records))
    print(f"wrote {json_path} and {csv_path}")
    return 0


def cmd_sanity(args) -> int:
    model = load_model(args.model)
    image = decode_image(args.input, channels=model.input_shape[1])
    x = normalize_input(model, image)[None]
    target = _resolve_target(model, x, args.target)
    result = sanity_check(model, image, target, seed=_resolve_seed(args))
    os.makedirs(args.output_dir, exist_ok=True)
    for stage, map2d in enumerate(result.maps):
        ght.save(os.path.join(args.output_dir, f"stage_{stage}.ght"), map2d.astype(np.float32))
        render_heatmap(map2d, os.path.join(args.output_dir, f"stage_{stage}.png"))
    doc = {
        "correlations": list(result.correlations),
        "stage_layers": [list(s) for s in result.stage_layers],
        "target": target,
    }
    out = os.path.join(args.output_dir, "correlations.json")
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out} and {len(result.maps)} stage maps")
    return 0


def cmd_train_toy(args) -> int:
    samples, class_names = load_dataset(args.data)
    model = train_toy_model(
        samples,
        preset=args.preset,
        epochs=args.epochs,
        lr=args.lr,
        seed=_resolve_seed(args),
        batch_size=args.batch_size,
        class_names=class_names,
    )
    manifest = save_model(model, args.output)
    accuracy = model_accuracy(model, samples)
    print(f"wrote {manifest} (full-set accuracy {accuracy:.3f})")
    return 0


def cmd_gen_data(args) -> int:
    samples = generate_synthetic_dataset(
        args.n,
        image_size=args.size,
        class_names=SHAPE_CLASSES,
        seed=_resolve_seed(args),
        objects=args.objects,
    )
    save_dataset(samples, args.output)
    print(f"wrote {args.n} samples to {args.output}")
    return 0


def cmd_render(args) -> int:
    map2d = ght.load(args.input)
    if map2d.ndim == 3:
        map2d = map2d.sum(axis=0)
    render_heatmap(map2d, args.output)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hedgegrad",
        description="Gradient-hedged relevance attribution for small CNNs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_attr = sub.add_parser("attribute", help="attribute one image for one class")
    p_attr.add_argument("--model", required=True)
    p_attr.add_argument("--input", required=True)
    p_attr.add_argument("--target", required=True, help="class index or 'pred'")
    p_attr.add_argument(
        "--method", default="hedge", choices=("hedge",) + BASELINE_METHODS
    )
    p_attr.add_argument("--gamma", type=float, default=1.0)
    p_attr.add_argument("--epsilon", type=float, default=1e-9)
    p_attr.add_argument(
        "--components", default="C,A,U,Psi", help="comma list of hedge components"
    )
    p_attr.add_argument("--alpha", type=float, default=None)
    p_attr.add_argument("--beta", type=float, default=None)
    p_attr.add_argument("--output", default="attr.ght")
    p_attr.add_argument("--heatmap", default=None)
    p_attr.set_defaults(func=cmd_attribute)

    p_eval = sub.add_parser("evaluate", help="run a benchmark config")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--output-dir", required=True)
    p_eval.add_argument("--jobs", type=int, default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    p_san = sub.add_parser("sanity", help="cascading weight-randomization check")
    p_san.add_argument("--model", required=True)
    p_san.add_argument("--input", required=True)
    p_san.add_argument("--target", required=True)
    p_san.add_argument("--output-dir", required=True)
    p_san.add_argument("--seed", type=int, default=None)
    p_san.set_defaults(func=cmd_sanity)

    p_train = sub.add_parser("train-toy", help="train a preset CNN on a dataset")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--preset", default="tiny-cnn")
    p_train.add_argument("--epochs", type=int, default=30)
    p_train.add_argument("--lr", type=float, default=0.1)
    p_train.add_argument("--batch-size", type=int, default=32)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--output", required=True)
    p_train.set_defaults(func=cmd_train_toy)

    p_gen = sub.add_parser("gen-data", help="generate the synthetic shape dataset")
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--size", type=int, default=32)
    p_gen.add_argument("--objects", default="mixed", choices=("single", "double", "mixed"))
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--output", required=True)
    p_gen.set_defaults(func=cmd_gen_data)

    p_render = sub.add_parser("render", help="render a stored map as a heatmap PNG")
    p_render.add_argument("--input", required=True)
    p_render.add_argument("--output", required=True)
    p_render.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HedgegradError as exc:
        print(f"error[{exc.exit_code}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
