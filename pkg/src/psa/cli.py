"""End-to-end command-line driver.

Subcommands: gen, train, psa, sparse, pairwise, render.  Every run writes
its artifacts plus a manifest.json (resolved config, SHA-256 of inputs and
outputs, timings) into the output directory, so identical configs can be
audited byte for byte.  Exit codes: 0 success, 1 validation failure, 2 I/O
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (DESK_SIZES, FULL_SIZES, NOISE_SIGMA, gen_dataset,
                   load_dataset, save_dataset)
from .errors import DomainError, IoError, PsaError
from .mlp import (DEFAULT_DROPOUT, MlpConfig, gradient_field, load_model,
                  save_model, train_sgd)
from .psa import (kernel_from_gradients, load_decomposition, load_kernel,
                  pairwise_table, psa, save_decomposition, save_kernel,
                  standard_map, write_pairwise_csv)
from .render import (STYLE_DIVERGING, STYLE_SEQUENTIAL, montage, render_map,
                     write_image, write_ppm)
from .sparse import SparsePsaConfig, save_sparse_model, sparse_psa

OUT_DIR_ENV = "PSA_OUT_DIR"


class _Parser(argparse.ArgumentParser):
    # argument validation failures are exit code 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PsaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> _Parser:
    parser = _Parser(prog="psa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(required=True, metavar="command")

    p = sub.add_parser("gen", parser_class=_Parser,
                       help="generate the synthetic noisy-digit splits")
    p.add_argument("--sizes", default=None,
                   help="train,valid,test sample counts (default desk scale)")
    p.add_argument("--full-scale", action="store_true",
                   help="use the 50000/10000/10000 splits")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=NOISE_SIGMA)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parser_class=_Parser, help="train a classifier")
    p.add_argument("--train", required=True, dest="train_path")
    p.add_argument("--valid", required=True, dest="valid_path")
    p.add_argument("--arch", default="784-100-10", help="layer sizes, e.g. 784-100-10")
    p.add_argument("--unit", default="logistic", choices=("logistic", "relu"))
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--dropout", default="off",
                   help='"off" or input_keep,hidden_keep (e.g. 0.8,0.5); "on" uses 0.8,0.5')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("psa", parser_class=_Parser,
                       help="kernel, principal maps, and map images for one class")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--class", required=True, type=int, dest="class_index")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_psa)

    p = sub.add_parser("sparse", parser_class=_Parser,
                       help="sparse sensitivity atoms for one class")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--class", required=True, type=int, dest="class_index")
    p.add_argument("--atoms", type=int, default=3)
    p.add_argument("--penalty", type=float, default=5.0)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--convention", default="atoms", choices=("atoms", "transposed"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sparse)

    p = sub.add_parser("pairwise", parser_class=_Parser,
                       help="pairwise local sensitivity table")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--classes", required=True, help="comma list, e.g. 0,9")
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pairwise)

    p = sub.add_parser("render", parser_class=_Parser,
                       help="render map images from saved kernels/decompositions")
    p.add_argument("--eig", default=None, help="decomposition file (.psae)")
    p.add_argument("--kernel", default=None, help="kernel file (.psak)")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--shape", default="28,28")
    p.add_argument("--png", action="store_true", help="also write PNG copies")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_render)
    return parser


def _out_dir(args, command: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(OUT_DIR_ENV, "psa-out")) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(out, command, config, inputs, outputs, started, timings=None):
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "started_unix": round(started, 3),
        "elapsed_seconds": round(time.time() - started, 3),
        "timings": timings or {},
        "version": __version__,
    }
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_gen(args) -> int:
    started = time.time()
    if args.sizes and args.full_scale:
        raise DomainError("--sizes and --full-scale are mutually exclusive")
    if args.full_scale:
        sizes = FULL_SIZES
    elif args.sizes:
        sizes = tuple(int(x) for x in args.sizes.split(","))
    else:
        sizes = DESK_SIZES
    out = _out_dir(args, "gen")
    splits = gen_dataset(sizes, seed=args.seed, noise_sigma=args.noise_sigma)
    outputs = []
    for split in splits:
        path = out / f"{split.split}.psad"
        save_dataset(path, split)
        outputs.append(path)
        print(f"wrote {path} ({len(split)} samples)")
    config = {"sizes": list(sizes), "seed": args.seed, "noise_sigma": args.noise_sigma}
    _write_manifest(out, "gen", config, [], outputs, started)
    return 0


def cmd_train(args) -> int:
    started = time.time()
    train = load_dataset(args.train_path)
    valid = load_dataset(args.valid_path)
    layer_sizes = tuple(int(x) for x in args.arch.split("-"))
    if args.dropout == "off":
        dropout = None
    elif args.dropout == "on":
        dropout = DEFAULT_DROPOUT
    else:
        keep = tuple(float(x) for x in args.dropout.split(","))
        if len(keep) != 2:
            raise DomainError(f"--dropout expects two keep probabilities, got {args.dropout!r}")
        dropout = keep
    config = MlpConfig(layer_sizes, unit_kind=args.unit, dropout=dropout,
                       learning_rate=args.lr, epochs=args.epochs,
                       batch_size=args.batch_size, seed=args.seed)
    t0 = time.time()
    model, log = train_sgd(config, train, valid)
    train_seconds = time.time() - t0
    out = _out_dir(args, "train")
    model_path = out / "model.psam"
    save_model(model_path, model)
    log_path = out / "training_log.csv"
    with open(log_path, "w", encoding="ascii", newline="\n") as f:
        f.write("epoch,train_loss,train_error,valid_error\n")
        for row in log:
            f.write(f"{row.epoch},{row.train_loss:.17g},"
                    f"{row.train_error:.17g},{row.valid_error:.17g}\n")
    final = log[-1]
    print(f"wrote {model_path} (final train_err={final.train_error:.4f} "
          f"valid_err={final.valid_error:.4f})")
    cfg = {"layer_sizes": list(layer_sizes), "unit_kind": args.unit,
           "dropout": list(dropout) if dropout else None, "learning_rate": args.lr,
           "epochs": args.epochs, "batch_size": args.batch_size, "seed": args.seed}
    _write_manifest(out, "train", cfg, [args.train_path, args.valid_path],
                    [model_path, log_path], started,
                    timings={"train_seconds": round(train_seconds, 3)})
    return 0


def _square_grid(count: int):
    cols = min(count, 5)
    return (math.ceil(count / cols), cols)


def _map_shape(dim: int, spec: str):
    shape = tuple(int(x) for x in spec.split(","))
    if len(shape) != 2 or shape[0] * shape[1] != dim:
        raise DomainError(f"shape {spec!r} does not cover {dim} features")
    return shape


def cmd_psa(args) -> int:
    started = time.time()
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    if args.top_k < 1 or args.top_k > dataset.dim:
        raise DomainError(f"--top-k must be in 1..{dataset.dim}")
    out = _out_dir(args, "psa")
    rows = gradient_field(model, dataset, args.class_index, threads=args.threads)
    kernel = kernel_from_gradients(rows)
    decomposition = psa(kernel)
    shape = _map_shape(dataset.dim, "28,28" if dataset.dim == 784 else
                       f"1,{dataset.dim}")

    outputs = []
    kernel_path = out / f"kernel_c{args.class_index}.psak"
    save_kernel(kernel_path, kernel)
    eig_path = out / f"decomposition_c{args.class_index}.psae"
    save_decomposition(eig_path, decomposition)
    outputs += [kernel_path, eig_path]

    csv_path = out / f"eigenvalues_c{args.class_index}.csv"
    with open(csv_path, "w", encoding="ascii", newline="\n") as f:
        f.write("k,eigenvalue\n")
        for k, value in enumerate(decomposition.eigenvalues, start=1):
            f.write(f"{k},{value:.17g}\n")
    outputs.append(csv_path)

    std_path = out / f"standard_map_c{args.class_index}.ppm"
    write_ppm(std_path, render_map(standard_map(kernel), shape, STYLE_SEQUENTIAL))
    outputs.append(std_path)

    tiles = []
    for k in range(args.top_k):
        image = render_map(decomposition.eigenvectors[:, k], shape, STYLE_DIVERGING)
        map_path = out / f"psm_c{args.class_index}_k{k + 1:02d}.ppm"
        write_ppm(map_path, image)
        outputs.append(map_path)
        tiles.append(image)
    montage_path = out / f"psm_montage_c{args.class_index}.ppm"
    write_ppm(montage_path, montage(tiles, _square_grid(len(tiles))))
    outputs.append(montage_path)

    print(f"wrote {eig_path} and {args.top_k} map images")
    cfg = {"class": args.class_index, "top_k": args.top_k, "threads": args.threads}
    _write_manifest(out, "psa", cfg, [args.model, args.data], outputs, started)
    return 0


def cmd_sparse(args) -> int:
    started = time.time()
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    out = _out_dir(args, "sparse")
    rows = gradient_field(model, dataset, args.class_index, threads=args.threads)
    config = SparsePsaConfig(args.atoms, penalty=args.penalty,
                             max_outer_iters=args.max_iters, tol=args.tol,
                             seed=args.seed, convention=args.convention)
    fitted = sparse_psa(rows, config)
    shape = _map_shape(dataset.dim, "28,28" if dataset.dim == 784 else
                       f"1,{dataset.dim}")

    outputs = []
    model_path = out / f"sparse_c{args.class_index}.psas"
    save_sparse_model(model_path, fitted)
    outputs.append(model_path)
    trace_path = out / f"objective_c{args.class_index}.csv"
    with open(trace_path, "w", encoding="ascii", newline="\n") as f:
        f.write("iteration,objective\n")
        for n, value in enumerate(fitted.objective_trace):
            f.write(f"{n},{value:.17g}\n")
    outputs.append(trace_path)

    tiles = []
    for k in range(args.atoms):
        image = render_map(fitted.atoms[:, k], shape, STYLE_DIVERGING)
        atom_path = out / f"atom_c{args.class_index}_k{k + 1:02d}.ppm"
        write_ppm(atom_path, image)
        outputs.append(atom_path)
        tiles.append(image)
    montage_path = out / f"atom_montage_c{args.class_index}.ppm"
    write_ppm(montage_path, montage(tiles, _square_grid(len(tiles))))
    outputs.append(montage_path)

    print(f"wrote {model_path} ({len(fitted.objective_trace)} objective points)")
    cfg = {"class": args.class_index, "atoms": args.atoms, "penalty": args.penalty,
           "max_iters": args.max_iters, "tol": args.tol, "seed": args.seed,
           "convention": args.convention, "threads": args.threads}
    _write_manifest(out, "sparse", cfg, [args.model, args.data], outputs, started)
    return 0


def cmd_pairwise(args) -> int:
    started = time.time()
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    classes = tuple(int(x) for x in args.classes.split(","))
    out = _out_dir(args, "pairwise")
    table = pairwise_table(model, dataset, classes, args.k_max, threads=args.threads)
    table.model_id = _sha256(args.model)
    table.dataset_id = _sha256(args.data)
    csv_path = out / "pairwise.csv"
    write_pairwise_csv(csv_path, table)
    print(f"wrote {csv_path} ({len(table.entries)} entries)")
    cfg = {"classes": list(classes), "k_max": args.k_max, "threads": args.threads}
    _write_manifest(out, "pairwise", cfg, [args.model, args.data], [csv_path], started)
    return 0


def cmd_render(args) -> int:
    started = time.time()
    if (args.eig is None) == (args.kernel is None):
        raise DomainError("give exactly one of --eig or --kernel")
    out = _out_dir(args, "render")
    outputs = []
    if args.kernel:
        kernel = load_kernel(args.kernel)
        shape = _map_shape(kernel.dim, args.shape)
        image = render_map(standard_map(kernel), shape, STYLE_SEQUENTIAL)
        path = out / "standard_map.ppm"
        write_ppm(path, image)
        outputs.append(path)
        if args.png:
            path = out / "standard_map.png"
            write_image(path, image)
            outputs.append(path)
        inputs = [args.kernel]
    else:
        decomposition = load_decomposition(args.eig)
        if args.top_k < 1 or args.top_k > decomposition.dim:
            raise DomainError(f"--top-k must be in 1..{decomposition.dim}")
        shape = _map_shape(decomposition.dim, args.shape)
        tiles = []
        for k in range(args.top_k):
            image = render_map(decomposition.eigenvectors[:, k], shape, STYLE_DIVERGING)
            path = out / f"psm_k{k + 1:02d}.ppm"
            write_ppm(path, image)
            outputs.append(path)
            tiles.append(image)
            if args.png:
                path = out / f"psm_k{k + 1:02d}.png"
                write_image(path, image)
                outputs.append(path)
        path = out / "psm_montage.ppm"
        write_ppm(path, montage(tiles, _square_grid(len(tiles))))
        outputs.append(path)
        inputs = [args.eig]
    print(f"wrote {len(outputs)} image files to {out}")
    cfg = {"top_k": args.top_k, "shape": args.shape, "png": bool(args.png)}
    _write_manifest(out, "render", cfg, inputs, outputs, started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
