"""Thin command-line client for the pipeline service.

Every subcommand builds a request, sends it to the HTTP service, and prints
the JSON response. By default the app is served in-process, so the CLI works
standalone; pass ``--server http://host:port`` to talk to a running server
(started with ``pearl serve``) that keeps embedding caches warm between
calls. Exits 0 on success, 1 with a stage-labeled message on failure.
"""

from __future__ import annotations

import argparse
import json
import sys


def make_client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _dataset_spec(args) -> dict:
    return {"path": args.dataset}


def _set_by_path(config: dict, dotted: str, raw: str) -> None:
    """Apply one --set override; values parse as JSON, falling back to string."""
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    node = config
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise SystemExit(f"--set path {dotted!r}: {part!r} is not an object")
    node[parts[-1]] = value


def _encoder_spec(args) -> dict:
    spec = {
        "kind": args.encoder,
        "width": args.width,
        "input_side": args.input_side,
        "seed": args.encoder_seed,
    }
    if args.store:
        spec["store_path"] = args.store
    return spec


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoder", default="mock", choices=["mock", "file"])
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--input-side", type=int, default=64)
    p.add_argument("--encoder-seed", type=int, default=0)
    p.add_argument("--store", help="PRLE store path for file-backed encoders")
    p.add_argument("--canonical-side", type=int, default=224)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pearl", description=__doc__)
    parser.add_argument("--server", help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic moving-sprite dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--episodes", type=int, default=4)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--sprites", type=int, default=1)
    p.add_argument("--sprite-size", type=int, default=10)
    p.add_argument("--buckets", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("encode", help="write a PRLE embedding store for a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default="full", help="comma list: full,grid2,grid4,masked:diff,masked:flow,aug:blur,aug:jitter,aug:crop")
    p.add_argument("--seed", type=int, default=0)
    _add_encoder_flags(p)

    p = sub.add_parser("mask", help="write PRLF block-matching flow files for a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--radius", type=int, default=4)
    p.add_argument("--canonical-side", type=int, default=224)

    p = sub.add_parser("compose", help="write composed representations to a PRLE file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--composition", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true")
    _add_encoder_flags(p)

    p = sub.add_parser("finetune", help="train a contrastive head and save it as PRLH")
    p.add_argument("--dataset", required=True)
    p.add_argument("--kind", required=True, choices=["aug", "dim", "cpc"])
    p.add_argument("--mode", default="T", choices=["T", "S", "ST"])
    p.add_argument("--composition", default="FI")
    p.add_argument("--augmentations", default="blur")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_encoder_flags(p)

    p = sub.add_parser("probe", help="train linear probes and report per-category F1")
    p.add_argument("--dataset", required=True)
    p.add_argument("--prle", help="probe stored representations instead of composing")
    p.add_argument("--composition", default="FI")
    p.add_argument("--seed", type=int, default=0)
    _add_encoder_flags(p)

    p = sub.add_parser("run", help="run a full experiment from a config file")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--composition")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--label")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE",
                   help="override any config field by dotted path, e.g. "
                        "--set encoder.seed=3 --set probe.patience=10")

    p = sub.add_parser("report", help="render CSV + SVG from results records")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="report")
    p.add_argument("--reference", help="CSV of label,config,value rows plotted alongside")

    p = sub.add_parser("compare", help="delta table between two results records")
    p.add_argument("--baseline", required=True)
    p.add_argument("--treatment", required=True)

    p = sub.add_parser("serve", help="serve the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _request(args) -> tuple[str, dict]:
    cmd = args.command
    if cmd == "synth":
        return "/synth", {
            "spec": {
                "side": args.side,
                "episodes": args.episodes,
                "frames_per_episode": args.frames,
                "sprites": args.sprites,
                "sprite_size": args.sprite_size,
                "buckets": args.buckets,
                "seed": args.seed,
            },
            "out_dir": args.out,
        }
    if cmd == "encode":
        return "/encode", {
            "dataset": _dataset_spec(args),
            "encoder": _encoder_spec(args),
            "variants": [v for v in args.variants.split(",") if v],
            "canonical_side": args.canonical_side,
            "seed": args.seed,
            "out_path": args.out,
        }
    if cmd == "mask":
        return "/mask", {
            "dataset": _dataset_spec(args),
            "block": args.block,
            "radius": args.radius,
            "canonical_side": args.canonical_side,
            "out_dir": args.out,
        }
    if cmd == "compose":
        return "/compose", {
            "dataset": _dataset_spec(args),
            "encoder": _encoder_spec(args),
            "composition": args.composition,
            "canonical_side": args.canonical_side,
            "normalize_units": args.normalize,
            "out_path": args.out,
        }
    if cmd == "finetune":
        return "/finetune", {
            "dataset": _dataset_spec(args),
            "encoder": _encoder_spec(args),
            "composition": args.composition,
            "canonical_side": args.canonical_side,
            "spec": {
                "kind": args.kind,
                "mode": args.mode,
                "augmentations": [a for a in args.augmentations.split(",") if a],
                "steps": args.steps,
            },
            "seed": args.seed,
            "out_path": args.out,
        }
    if cmd == "probe":
        representations = {"composition": args.composition, "canonical_side": args.canonical_side}
        if args.prle:
            representations["prle_path"] = args.prle
        else:
            representations["encoder"] = _encoder_spec(args)
        return "/probe", {
            "dataset": _dataset_spec(args),
            "representations": representations,
            "seed": args.seed,
        }
    if cmd == "run":
        with open(args.config) as fh:
            config = json.load(fh)
        if args.composition is not None:
            config["composition"] = args.composition
        if args.seed is not None:
            config["seed"] = args.seed
        if args.output_dir is not None:
            config["output_dir"] = args.output_dir
        if args.label is not None:
            config["label"] = args.label
        for item in args.overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
            _set_by_path(config, key, value)
        return "/run", config
    if cmd == "report":
        payload = {"record_paths": args.records, "out_dir": args.out, "name": args.name}
        if args.reference:
            payload["reference_csv"] = args.reference
        return "/report", payload
    if cmd == "compare":
        return "/compare", {"baseline_path": args.baseline, "treatment_path": args.treatment}
    raise AssertionError(cmd)


def _describe_error(payload) -> str:
    detail = payload.get("detail", payload) if isinstance(payload, dict) else payload
    if isinstance(detail, dict) and "stage" in detail:
        return f"[{detail['stage']}] {detail.get('message', '')}"
    if isinstance(detail, list):  # request validation errors
        parts = [f"{'.'.join(str(p) for p in e.get('loc', []))}: {e.get('msg', '')}" for e in detail]
        return "[request] " + "; ".join(parts)
    return f"[request] {detail}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    path, payload = _request(args)
    client = make_client(args.server)
    try:
        response = client.post(path, json=payload)
    finally:
        if args.server:
            client.close()
    try:
        body = response.json()
    except ValueError:
        body = {"detail": response.text}
    if response.status_code != 200:
        print(f"error {_describe_error(body)}", file=sys.stderr)
        return 1
    print(json.dumps(body, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
