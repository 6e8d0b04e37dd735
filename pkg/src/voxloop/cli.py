"""Operator command line: loop runs, data generation, evaluation, serving."""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from . import parser as parser_mod
from . import vision as vision_mod
from .grammar import GeneratorGrammar
from .lf import from_canonical
from .loop import LoopConfig, derive_seed, run_loop
from .vision import SceneConfig, VisionExample
from .workers import WorkerProfile


def _load_worker_profiles(path: str) -> tuple[WorkerProfile, ...]:
    profiles = []
    with open(path) as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                profiles.append(WorkerProfile(**row.get("profile", row)))
    return tuple(profiles)


def cmd_run_loop(args: argparse.Namespace) -> int:
    workers = _load_worker_profiles(args.workers) if args.workers else ()
    config = LoopConfig(
        iterations=args.iterations,
        sessions_per_iteration=args.sessions,
        commands_per_session=args.commands,
        seed=args.seed,
        redeploy_from=args.redeploy_from,
        vision_start_iteration=args.vision_start,
        workers=workers,
    )
    state, rows = run_loop(config, args.out)
    final = state.reports[-1] if state.reports else None
    if final is not None:
        print(f"completed {len(state.reports)} iterations; "
              f"final tranche {final.tranche_nlu} pairs, model {final.model_size} exemplars")
    print(f"outputs written to {args.out}")
    return 0


def cmd_gen_vision_data(args: argparse.Namespace) -> int:
    config = SceneConfig()
    examples = []
    import random

    for i in range(args.n):
        grid, objects = vision_mod.gen_scene(config, derive_seed(args.seed, f"scene:{i}"))
        rng = random.Random(f"describe:{args.seed}:{i}")
        obj = objects[rng.randrange(len(objects))]
        examples.append(VisionExample(
            grid, vision_mod.describe(obj.kind, obj.color, rng), obj.mask, 0))
        if args.negatives:
            examples.append(vision_mod.gen_negative(
                objects, config, derive_seed(args.seed, f"neg:{i}"), grid, 0))
    vision_mod.save_examples(args.out, examples)
    print(f"wrote {len(examples)} examples to {args.out}")
    return 0


def _load_nlu_testset(path: str) -> list:
    pairs = []
    with open(path) as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                pairs.append((row["text"], from_canonical(row["lf"])))
    return pairs


def cmd_eval(args: argparse.Namespace) -> int:
    if os.path.isdir(args.model):
        model = vision_mod.load_seg_model(args.model)
        examples = vision_mod.load_examples(args.testset)
        accuracy = vision_mod.vision_accuracy(model, examples)
        print(f"vision accuracy (IoU>=0.5 / empty-negative rule): {accuracy:.4f} "
              f"over {len(examples)} examples")
    else:
        model = parser_mod.load_parser_model(args.model)
        pairs = _load_nlu_testset(args.testset)
        accuracy = parser_mod.evaluate(model, pairs)
        print(f"nlu exact-match accuracy: {accuracy:.4f} over {len(pairs)} pairs")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app, default_service_state

    state = default_service_state(seed=args.seed)
    if args.registry:
        state.registry_dir = args.registry
    uvicorn.run(create_app(state), host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxloop")
    sub = parser.add_subparsers(dest="command", required=True)

    loop = sub.add_parser("run-loop", help="run the interaction/annotation/retraining loop")
    loop.add_argument("--iterations", type=int, default=10)
    loop.add_argument("--sessions", type=int, default=30)
    loop.add_argument("--commands", type=int, default=5)
    loop.add_argument("--workers", type=str, default=None, help="worker profiles jsonl")
    loop.add_argument("--seed", type=int, default=0)
    loop.add_argument("--redeploy-from", type=int, default=6, dest="redeploy_from")
    loop.add_argument("--vision-start", type=int, default=11, dest="vision_start")
    loop.add_argument("--out", type=str, required=True)
    loop.set_defaults(fn=cmd_run_loop)

    gen = sub.add_parser("gen-vision-data", help="bootstrap vision examples from shapes")
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--negatives", action="store_true", default=True)
    gen.add_argument("--no-negatives", dest="negatives", action="store_false")
    gen.add_argument("--out", type=str, required=True)
    gen.set_defaults(fn=cmd_gen_vision_data)

    ev = sub.add_parser("eval", help="evaluate a stored model on a stored test set")
    ev.add_argument("--model", type=str, required=True)
    ev.add_argument("--testset", type=str, required=True)
    ev.set_defaults(fn=cmd_eval)

    serve = sub.add_parser("serve", help="serve the session API for the dashboard")
    serve.add_argument("--host", type=str, default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8777)
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--registry", type=str, default=None)
    serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
