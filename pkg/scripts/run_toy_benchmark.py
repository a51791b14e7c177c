"""Train the toy shape classifier and benchmark attribution methods on it.

Writes the trained model, the held-out dataset, results.json/csv, and a few
rendered heatmaps under --out, then prints the aggregate table.
"""

import argparse
import pathlib

from hedgegrad.attribution import HedgeConfig, attribute
from hedgegrad.benchmark import BenchmarkConfig, format_table, run_benchmark, write_results
from hedgegrad.data import generate_synthetic_dataset, save_dataset
from hedgegrad.model import normalize_input, save_model
from hedgegrad.render import render_heatmap
from hedgegrad.train import model_accuracy, train_toy_model


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/toy")
    p.add_argument("--train-size", type=int, default=240)
    p.add_argument("--eval-size", type=int, default=200)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gammas", default="1.0,2.0")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--render", type=int, default=4, help="heatmaps to render")
    return p.parse_args()


def main():
    args = parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train_set = generate_synthetic_dataset(
        args.train_size, seed=args.seed + 101, objects="single"
    )
    eval_set = generate_synthetic_dataset(
        args.eval_size, seed=args.seed + 202, objects="single"
    )
    model = train_toy_model(
        train_set, preset="tiny-cnn", epochs=args.epochs, seed=args.seed
    )
    print(f"held-out accuracy: {model_accuracy(model, eval_set):.3f}")

    save_model(model, out / "model")
    save_dataset(eval_set, out / "data")

    config = BenchmarkConfig(
        model_path=str(out / "model"),
        dataset_path=str(out / "data"),
        methods=("hedge", "random", "generic_lrp", "lrp_alpha_beta", "grad_activation"),
        metrics=("pointing_game", "positive_ratio", "outside_inside", "morf"),
        gammas=tuple(float(g) for g in args.gammas.split(",")),
        mode="L",
        jobs=args.jobs,
        seed=args.seed,
    )
    records = run_benchmark(config)
    write_results(records, out, config)
    print(format_table(records))

    maps_dir = out / "maps"
    maps_dir.mkdir(exist_ok=True)
    for i, sample in enumerate(eval_set[: args.render]):
        x = normalize_input(model, sample.image)[None]
        result = attribute(model, x, sample.labels[0], config=HedgeConfig(gamma=1.0))
        render_heatmap(result.map2d, maps_dir / f"sample_{i:02d}.png")
    print(f"artifacts under {out}")


if __name__ == "__main__":
    main()
