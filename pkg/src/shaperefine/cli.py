"""Command-line surface: synth, build-dict, train-sae, retrieve, refine, eval.

Machine-readable JSON goes to stdout; progress and diagnostics go to stderr.
Exit codes: 0 success, 1 operational error (JSON error object on stdout),
2 usage error.  A --config JSON file supplies pipeline defaults; explicit
flags override file values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .autoencoder import SAEConfig, init_model, load_model, save_model
from .descriptor import compute_descriptor
from .dictionary import build_dictionary, load_dictionary, retrieve_nearest, save_dictionary
from .errors import ConfigError, ShapeRefineError
from .pipeline import PipelineConfig, config_from_dict, evaluate_pair, refine
from .synth import SynthParams, synth_corpus
from .training import train_sae
from .volume import extract_middle_slice, read_volume, write_volume


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=1))


def _load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def _ensure_parent(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _expand_labels(paths) -> list[str]:
    out: list[str] = []
    for p in paths:
        if os.path.isdir(p):
            found = sorted(str(q) for q in Path(p).glob("*.mvol"))
            if not found:
                raise ConfigError(f"directory {p} contains no .mvol files")
            out.extend(found)
        else:
            out.append(p)
    return out


def _cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    synth = cfg.synth
    if args.count is not None:
        synth = replace(synth, count=args.count)
    if args.seed is not None:
        synth = replace(synth, seed=args.seed)
    paths = synth_corpus(synth, args.out)
    _emit({
        "dir": str(args.out),
        "count": len(paths),
        "manifest": str(Path(args.out) / "manifest.json"),
    })
    return 0


def _cmd_build_dict(args) -> int:
    cfg = _load_config(args.config)
    labels = _expand_labels(args.labels)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    # store label paths relative to the dictionary file so the directory
    # relocates as a unit; refine resolves them against the file's parent
    stored = [os.path.relpath(os.path.abspath(p), out_dir) for p in labels]
    axis = args.axis if args.axis is not None else cfg.axis
    resample = args.resample_m if args.resample_m is not None else cfg.resample_m
    d = build_dictionary(labels, axis=axis, resample_m=resample)
    d = replace(
        d,
        entries=tuple(replace(e, label_path=rel) for e, rel in zip(d.entries, stored)),
    )
    _ensure_parent(args.out)
    save_dictionary(d, args.out)
    _emit({"dictionary": args.out, "entries": len(d.entries)})
    return 0


def _cmd_train_sae(args) -> int:
    cfg = _load_config(args.config)
    train = cfg.train
    if args.iterations is not None:
        train = replace(train, iterations=args.iterations)
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if args.batch_size is not None:
        train = replace(train, batch_size=args.batch_size)
    corpus_paths = _expand_labels(args.corpus)
    corpus = [read_volume(p) for p in corpus_paths]
    dims = corpus[0].voxels.shape
    preset = {
        "desk": SAEConfig.desk_default,
        "tiny": SAEConfig.tiny,
        "paper": SAEConfig.paper_scale,
    }[args.sae_preset]()
    sae_cfg = replace(preset, input_dims=dims)
    model = init_model(sae_cfg, seed=train.seed)
    print(
        f"training on {len(corpus)} volumes of {dims} for {train.iterations} iterations",
        file=sys.stderr,
        flush=True,
    )
    _ensure_parent(args.out)
    if args.trace:
        _ensure_parent(args.trace)
    result = train_sae(
        model, corpus, train,
        transform=cfg.transform, noise=cfg.noise,
        trace_path=args.trace, log_every=args.log_every,
    )
    save_model(model, args.out)
    payload = {
        "model": args.out,
        "iterations": train.iterations,
        "final_loss": result.losses[-1] if result.losses else None,
        "diverged_at": result.diverged_at,
    }
    if args.trace:
        payload["trace"] = args.trace
    _emit(payload)
    return 0


def _cmd_retrieve(args) -> int:
    d = load_dictionary(args.dict)
    seg = read_volume(args.infile)
    query = compute_descriptor(extract_middle_slice(seg, d.meta.axis), d.meta.resample_m)
    entry, dist = retrieve_nearest(d, query)
    _emit({"retrieved_id": entry.id, "distance": dist, "label_path": entry.label_path})
    return 0


def _cmd_refine(args) -> int:
    cfg = _load_config(args.config)
    d = load_dictionary(args.dict)
    # follow the artifact's own conventions unless explicitly overridden
    cfg = replace(
        cfg,
        axis=args.axis if args.axis is not None else d.meta.axis,
        resample_m=args.resample_m if args.resample_m is not None else d.meta.resample_m,
        tau=args.tau if args.tau is not None else cfg.tau,
        passthrough_empty=args.passthrough_empty or cfg.passthrough_empty,
    )
    model = load_model(args.model)
    seg = read_volume(args.infile)
    result = refine(seg, d, model, cfg, label_root=os.path.dirname(os.path.abspath(args.dict)))
    _ensure_parent(args.out)
    write_volume(result.refined, args.out)
    _emit({
        "retrieved_id": result.retrieved_id,
        "distance": result.distance,
        "slabs": result.slabs,
        "passthrough": result.passthrough,
        "out": args.out,
    })
    return 0


def _cmd_eval(args) -> int:
    pred = read_volume(args.pred)
    gt = read_volume(args.gt)
    report = evaluate_pair(pred, gt)
    _emit(report.to_dict())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shaperefine",
        description="Shape-dictionary retrieval and autoencoder mask refinement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic label corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--count", type=int, help="number of volumes")
    p.add_argument("--seed", type=int, help="corpus seed")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("build-dict", help="build a shape dictionary from labels")
    p.add_argument("labels", nargs="+", help=".mvol files or directories of them")
    p.add_argument("--out", required=True, help="dictionary JSON path")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--axis", choices=("x", "y", "z"), help="middle-slice axis")
    p.add_argument("--resample-m", type=int, help="contour resampling count")
    p.set_defaults(func=_cmd_build_dict)

    p = sub.add_parser("train-sae", help="train the autoencoder on a label corpus")
    p.add_argument("corpus", nargs="+", help=".mvol files or directories of them")
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument(
        "--sae-preset", choices=("desk", "tiny", "paper"), default="desk",
        help="network geometry; slab dims always follow the corpus",
    )
    p.add_argument("--trace", help="loss trace CSV path")
    p.add_argument("--log-every", type=int, default=100, help="stderr progress cadence")
    p.set_defaults(func=_cmd_train_sae)

    p = sub.add_parser("retrieve", help="look up the nearest dictionary shape")
    p.add_argument("--dict", required=True)
    p.add_argument("--in", dest="infile", required=True, help="segmentation .mvol")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("refine", help="refine a segmentation mask")
    p.add_argument("--model", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--in", dest="infile", required=True, help="segmentation .mvol")
    p.add_argument("--out", required=True, help="refined .mvol path")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--axis", choices=("x", "y", "z"))
    p.add_argument("--resample-m", type=int)
    p.add_argument("--tau", type=float, help="binarization threshold")
    p.add_argument("--passthrough-empty", action="store_true")
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("eval", help="metrics for a prediction/ground-truth pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ShapeRefineError as exc:
        _emit({"error": {"type": type(exc).__name__, "message": str(exc)}})
        return 1
    except OSError as exc:
        _emit({"error": {"type": "IOError", "message": str(exc)}})
        return 1


if __name__ == "__main__":
    sys.exit(main())
