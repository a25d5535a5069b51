"""Command-line pipeline: synth | train | encode | eval.

Precedence for option values: explicit flags beat config-file entries,
which beat built-in defaults.  The config file holds `key = value` lines
(UTF-8, `#` starts a comment); keys are flag names with `-` or `_`.

Exit codes: 0 success, 2 usage, 3 data or format error, 4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datamodel import Dataset, build_similarity, load_dataset, save_dataset, synth_dataset
from .errors import ContractError, DivergenceError, FormatError, ShapeError
from .networks import load_models, save_models
from .retrieval import encode, evaluate, load_codes, result_to_dict, save_codes
from .trainer import TrainConfig, train


class UsageError(Exception):
    """Bad flag combination detected after argparse parsing."""


def _int_at_least(minimum: int):
    def convert(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be at least {minimum}, got {value}")
        return value

    return convert


def _float_at_least(minimum: float, exclusive: bool = False):
    def convert(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
        if not np.isfinite(value):
            raise argparse.ArgumentTypeError(f"must be finite, got {value}")
        if value < minimum or (exclusive and value == minimum):
            bound = "greater than" if exclusive else "at least"
            raise argparse.ArgumentTypeError(f"must be {bound} {minimum}, got {value}")
        return value

    return convert


@dataclass(frozen=True)
class RunConfig:
    """One resolved invocation: subcommand, file paths, and parameters.

    The checkpoint path is an input for encode but a product of train;
    checkpoint_is_output records which role it plays here.
    """

    subcommand: str
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    codes: Optional[str] = None
    metrics_out: Optional[str] = None
    out: Optional[str] = None
    extra_inputs: Tuple[str, ...] = ()
    checkpoint_is_output: bool = False
    train_config: Optional[TrainConfig] = None
    synth_params: Optional[dict] = None

    def validate_paths(self) -> None:
        """Check inputs exist and output directories exist, before any work."""
        inputs = [self.dataset, *self.extra_inputs]
        outputs = [self.codes, self.metrics_out, self.out]
        if self.checkpoint_is_output:
            outputs.append(self.checkpoint)
        else:
            inputs.append(self.checkpoint)
        for path in inputs:
            if path is not None and not os.path.isfile(path):
                raise FileNotFoundError(f"input file not found: {path}")
        for path in outputs:
            if path is not None:
                parent = os.path.dirname(os.path.abspath(path))
                if not os.path.isdir(parent):
                    raise FileNotFoundError(f"output directory does not exist: {parent}")


def _build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser], Dict[str, dict]]:
    parser = argparse.ArgumentParser(
        prog="xmhash",
        description="Cross-modal hashing: generate data, train, encode, evaluate.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    subs: Dict[str, argparse.ArgumentParser] = {}
    registries: Dict[str, dict] = {}

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", help="key = value file of option defaults")
        subs[name] = sub
        registries[name] = {}
        return sub

    def opt(sub, *names, **kwargs):
        action = sub.add_argument(*names, **kwargs)
        registries[sub.prog.split()[-1]][action.dest] = action

    synth = command("synth", "generate a synthetic multi-label dataset file")
    opt(synth, "--n", type=_int_at_least(2), default=500, help="instances (default %(default)s)")
    opt(synth, "--c", type=_int_at_least(2), default=4, help="label classes (default %(default)s)")
    opt(synth, "--dv", type=_int_at_least(1), default=64, help="image feature width (default %(default)s)")
    opt(synth, "--dt", type=_int_at_least(1), default=128, help="text feature width (default %(default)s)")
    opt(synth, "--noise", type=_float_at_least(0.0), default=0.1, help="feature noise scale (default %(default)s)")
    opt(synth, "--seed", type=int, default=0, help="generator seed (default %(default)s)")
    opt(synth, "--out", required=True, help="output dataset path")
    synth.set_defaults(func=cmd_synth)

    tr = command("train", "train the networks on a dataset file")
    opt(tr, "--data", required=True, help="input dataset path")
    opt(tr, "--out", required=True, help="output checkpoint path")
    opt(tr, "--log", default=None, help="epoch metrics JSON-lines path (default: <out base>.log.jsonl)")
    opt(tr, "--k", type=_int_at_least(1), default=16, help="code length in bits (default %(default)s)")
    opt(tr, "--alpha", type=_float_at_least(0.0), default=1.0, help="semantic pairwise weight (default %(default)s)")
    opt(tr, "--gamma", type=_float_at_least(0.0), default=1.0, help="hash pairwise weight (default %(default)s)")
    opt(tr, "--eta", type=_float_at_least(0.0), default=1e-4, help="quantization weight (default %(default)s)")
    opt(tr, "--beta", type=_float_at_least(0.0), default=1e-4, help="label reconstruction weight (default %(default)s)")
    opt(tr, "--lr", type=_float_at_least(0.0, exclusive=True), default=1e-4, help="learning rate (default %(default)s)")
    opt(tr, "--batch-size", type=_int_at_least(1), default=128, help="minibatch size (default %(default)s)")
    opt(tr, "--epochs", type=_int_at_least(0), default=100, help="training epochs (default %(default)s)")
    opt(tr, "--inner-iters", type=_int_at_least(1), default=1, help="discriminator steps per batch (default %(default)s)")
    opt(tr, "--width-factor", type=_float_at_least(0.0, exclusive=True), default=1.0, help="hidden width multiplier (default %(default)s)")
    opt(tr, "--seed", type=int, default=0, help="initialization and shuffling seed (default %(default)s)")
    tr.set_defaults(func=cmd_train)

    enc = command("encode", "hash one modality of a dataset with a checkpoint")
    opt(enc, "--model", required=True, help="checkpoint path")
    opt(enc, "--data", required=True, help="dataset path")
    opt(enc, "--modality", choices=("img", "txt", "lab"), required=True, help="which network encodes")
    opt(enc, "--out", required=True, help="output codes path")
    enc.set_defaults(func=cmd_encode)

    ev = command("eval", "cross-modal retrieval metrics from code files")
    opt(ev, "--query-data", required=True, help="dataset file providing query labels")
    opt(ev, "--db-data", required=True, help="dataset file providing database labels")
    opt(ev, "--query-img-codes", help="image codes of the query set (needed for i2t)")
    opt(ev, "--query-txt-codes", help="text codes of the query set (needed for t2i)")
    opt(ev, "--db-img-codes", help="image codes of the database set (needed for t2i)")
    opt(ev, "--db-txt-codes", help="text codes of the database set (needed for i2t)")
    opt(ev, "--directions", nargs="+", choices=("i2t", "t2i"), default=["i2t", "t2i"],
        help="retrieval directions to report (default: both)")
    opt(ev, "--p-at", nargs="+", type=_int_at_least(1), default=[],
        help="precision cutoffs to include")
    opt(ev, "--top-r", type=_int_at_least(1), default=None, help="rank MAP only over the top R items")
    opt(ev, "--threads", type=_int_at_least(1), default=None,
        help="evaluation threads (default: XMH_THREADS or machine cores)")
    opt(ev, "--out", required=True, help="output metrics JSON path")
    opt(ev, "--csv", default=None, help="PR points CSV path (default: <out base>.csv)")
    ev.set_defaults(func=cmd_eval)

    return parser, subs, registries


def parse_config_file(path: str) -> Dict[str, str]:
    """Read `key = value` lines; `#` comments and blank lines are skipped."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = f.read()
    except UnicodeDecodeError as exc:
        raise FormatError(f"config file is not UTF-8: {exc}") from exc
    values: Dict[str, str] = {}
    for number, line in enumerate(raw.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise FormatError(f"config line {number}: expected 'key = value', got {line!r}")
        key, value = body.split("=", 1)
        key = key.strip().replace("-", "_")
        value = value.strip()
        if not key or not value:
            raise FormatError(f"config line {number}: empty key or value")
        values[key] = value
    return values


def _apply_config(sub: argparse.ArgumentParser, registry: dict, values: Dict[str, str]) -> None:
    for key, text in values.items():
        action = registry.get(key)
        if action is None:
            raise ContractError(f"config key {key!r} is not an option of this subcommand")
        if action.dest == "config":
            raise ContractError("config files cannot nest another config file")
        if action.nargs is not None or action.choices is not None:
            raise ContractError(f"config key {key!r} must be given as a flag, not in the file")
        convert = action.type if action.type is not None else str
        try:
            converted = convert(text)
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ContractError(f"config key {key!r}: {exc}") from exc
        sub.set_defaults(**{key: converted})


def _label_histogram(dataset: Dataset) -> str:
    counts = np.bincount(dataset.labels.sum(axis=1).astype(np.int64))
    return " ".join(f"{k}:{counts[k]}" for k in range(len(counts)) if counts[k])


def cmd_synth(args: argparse.Namespace) -> int:
    run = RunConfig(
        subcommand="synth",
        out=args.out,
        synth_params=dict(n=args.n, c=args.c, d_v=args.dv, d_t=args.dt,
                          noise=args.noise, seed=args.seed),
    )
    run.validate_paths()
    dataset = synth_dataset(**run.synth_params)
    save_dataset(dataset, args.out)
    print(f"wrote {args.out}: n={dataset.n} d_v={dataset.d_v} d_t={dataset.d_t} c={dataset.c}")
    print(f"labels per instance: {_label_histogram(dataset)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    log_path = args.log
    if log_path is None:
        log_path = os.path.splitext(args.out)[0] + ".log.jsonl"
    config = TrainConfig(
        code_length=args.k,
        alpha=args.alpha,
        gamma=args.gamma,
        eta=args.eta,
        beta=args.beta,
        lr=args.lr,
        batch_size=args.batch_size,
        t_max=args.epochs,
        inner_iters=args.inner_iters,
        width_factor=args.width_factor,
        seed=args.seed,
    )
    run = RunConfig(subcommand="train", dataset=args.data, checkpoint=args.out,
                    checkpoint_is_output=True, metrics_out=log_path,
                    train_config=config)
    run.validate_paths()
    dataset = load_dataset(args.data)
    with open(log_path, "w", encoding="utf-8") as log_stream:
        state = train(dataset, config, log_stream=log_stream)
    save_models(state.models, args.out)
    print(f"wrote {args.out} after {state.epoch} epochs (log: {log_path})")
    if state.history:
        last = state.history[-1]
        print(f"final losses: l_gen={last.l_gen:.6g} l_adv={last.l_adv:.6g}")
    return 0


_MODALITY_INPUT = {
    "img": lambda ds: ds.images,
    "txt": lambda ds: ds.texts,
    "lab": lambda ds: ds.labels.astype(np.float64),
}


def cmd_encode(args: argparse.Namespace) -> int:
    run = RunConfig(subcommand="encode", dataset=args.data,
                    checkpoint=args.model, codes=args.out)
    run.validate_paths()
    models = load_models(args.model)
    dataset = load_dataset(args.data)
    codes = encode(models, args.modality, _MODALITY_INPUT[args.modality](dataset))
    save_codes(codes, args.out)
    print(f"wrote {args.out}: {codes.n} codes of {codes.n_bits} bits ({args.modality})")
    return 0


_DIRECTION_FILES = {
    "i2t": ("query_img_codes", "db_txt_codes"),
    "t2i": ("query_txt_codes", "db_img_codes"),
}


def _direction_paths(args: argparse.Namespace, direction: str) -> Tuple[str, str]:
    query_attr, db_attr = _DIRECTION_FILES[direction]
    for attr in (query_attr, db_attr):
        if getattr(args, attr) is None:
            flag = "--" + attr.replace("_", "-")
            raise UsageError(f"direction {direction} requires {flag}")
    return getattr(args, query_attr), getattr(args, db_attr)


def cmd_eval(args: argparse.Namespace) -> int:
    csv_path = args.csv
    if csv_path is None:
        csv_path = os.path.splitext(args.out)[0] + ".csv"
    directions = list(dict.fromkeys(args.directions))
    code_paths = {d: _direction_paths(args, d) for d in directions}
    inputs = [args.db_data]
    for query_path, db_path in code_paths.values():
        inputs.extend((query_path, db_path))
    run = RunConfig(subcommand="eval", dataset=args.query_data,
                    extra_inputs=tuple(inputs), out=csv_path, metrics_out=args.out)
    run.validate_paths()
    query_ds = load_dataset(args.query_data)
    db_ds = load_dataset(args.db_data)
    relevance = build_similarity(query_ds.labels, db_ds.labels)

    document: dict = {"directions": {}}
    pr_rows: List[Tuple[str, int, float, float]] = []
    for direction in directions:
        query_path, db_path = code_paths[direction]
        query_codes, db_codes = load_codes(query_path), load_codes(db_path)
        if query_codes.n_bits != db_codes.n_bits:
            raise ContractError(
                f"code length mismatch for {direction}: query {query_codes.n_bits} "
                f"bits vs database {db_codes.n_bits} bits"
            )
        if query_codes.n != query_ds.n:
            raise ContractError(
                f"{direction}: query codes hold {query_codes.n} rows but the "
                f"query dataset has {query_ds.n}"
            )
        if db_codes.n != db_ds.n:
            raise ContractError(
                f"{direction}: database codes hold {db_codes.n} rows but the "
                f"database dataset has {db_ds.n}"
            )
        result = evaluate(query_codes, db_codes, relevance,
                          p_at=args.p_at, top_r=args.top_r, threads=args.threads)
        document["directions"][direction] = result_to_dict(result)
        for radius, precision, recall in result.pr_curve:
            pr_rows.append((direction, radius, precision, recall))
        print(f"{direction}: map={result.map:.6f} skipped={result.skipped_queries}")

    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["direction", "radius", "precision", "recall"])
        writer.writerows(pr_rows)
    print(f"wrote {args.out} and {csv_path}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser, subs, registries = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            if not os.path.isfile(args.config):
                raise FileNotFoundError(f"config file not found: {args.config}")
            values = parse_config_file(args.config)
            _apply_config(subs[args.command], registries[args.command], values)
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ContractError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
