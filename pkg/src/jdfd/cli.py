"""Thin command-line client for the jdfd service.

Every command issues one request against the service API: against a running
instance when ``--server`` is given, otherwise against the app in-process.
Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numerical failure,
5 gradcheck failure.
"""
from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5

_CODE_EXITS = {"config": EXIT_CONFIG, "io": EXIT_IO, "numeric": EXIT_NUMERIC}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="override the output directory")
    common.add_argument("--threads", type=int, metavar="N", help="cap worker threads")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="force single-threaded, fixed-order reductions")
    common.add_argument("--server", metavar="URL",
                        help="send the request to a running service instead of in-process")

    parser = argparse.ArgumentParser(prog="jdfd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="generate the synthetic family datasets")
    sub.add_parser("train", parents=[common], help="train on the configured family")

    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a manifest")
    p_eval.add_argument("--checkpoint", required=True, metavar="PATH")
    p_eval.add_argument("--manifest", required=True, metavar="PATH")
    p_eval.add_argument("--train-family", default="?", metavar="NAME",
                        help="label recorded in the report's train_family column")

    p_ablate = sub.add_parser("ablate", parents=[common], help="run an ablation study")
    p_ablate.add_argument("--study", required=True, choices=["decoder", "augmentation"])

    p_grad = sub.add_parser("gradcheck", parents=[common],
                            help="finite-difference check of every layer and the joint loss")
    p_grad.add_argument("--threshold", type=float, default=1e-4)
    p_grad.add_argument("--corrupt-layer", default=None, help=argparse.SUPPRESS)

    p_serve = sub.add_parser("serve", help="run the service under uvicorn")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    return parser


def _read_config_text(path: str | None) -> str | None:
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_IO)


def _make_client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app, raise_server_exceptions=False)


def _post(client, path: str, payload: dict) -> dict:
    try:
        response = client.post(path, json=payload)
    except Exception as exc:
        print(f"error: request failed: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_IO)
    if response.status_code != 200:
        detail = {}
        try:
            detail = response.json().get("detail", {})
        except ValueError:
            pass
        if isinstance(detail, dict) and detail.get("code") in _CODE_EXITS:
            print(f"error: {detail.get('message')}", file=sys.stderr)
            raise SystemExit(_CODE_EXITS[detail["code"]])
        print(f"error: HTTP {response.status_code}: {response.text}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    return response.json()


def _run_options(args) -> dict:
    return {
        "config_text": _read_config_text(args.config),
        "seed": args.seed,
        "out_dir": args.out,
        "threads": args.threads,
        "deterministic": args.deterministic,
    }


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        uvicorn.run("jdfd.service.app:app", host=args.host, port=args.port)
        return EXIT_OK

    if getattr(args, "deterministic", None) and not args.server:
        # Pin BLAS pools before numpy loads them in-process.
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")

    client = _make_client(args.server)

    if args.command == "gen-data":
        result = _post(client, "/gen-data", _run_options(args))
        for family in result["families"]:
            print(f"family {family['family']}: {family['n_train']} train / "
                  f"{family['n_test']} test -> {family['train_manifest']}")
        return EXIT_OK

    if args.command == "train":
        result = _post(client, "/train", _run_options(args))
        last = result["epochs"][-1]
        print(f"trained {len(result['epochs'])} epochs; "
              f"final l_total {last['l_total']:.6f} "
              f"(l_cro {last['l_cro']:.6f}, l_rec {last['l_rec']:.6f})")
        print(f"checkpoint: {result['checkpoint']}")
        print(f"log: {result['log_csv']}")
        return EXIT_OK

    if args.command == "eval":
        payload = _run_options(args)
        payload.update(checkpoint=args.checkpoint, manifest=args.manifest,
                       train_family=args.train_family)
        result = _post(client, "/eval", payload)
        print(f"auc {result['auc']:.6f} on {result['test_family']} "
              f"({result['n_real']} real / {result['n_fake']} fake)")
        print(f"report: {result['report_csv']}")
        return EXIT_OK

    if args.command == "ablate":
        payload = _run_options(args)
        payload["study"] = args.study
        result = _post(client, "/ablate", payload)
        for row in result["means"]:
            print(f"{row['variant']} -> {row['test_family']}: mean auc {row['mean_auc']:.6f}")
        print(f"study csv: {result['csv_path']}")
        return EXIT_OK

    if args.command == "gradcheck":
        payload = {"threshold": args.threshold, "corrupt_layer": args.corrupt_layer}
        result = _post(client, "/gradcheck", payload)
        for row in result["rows"]:
            status = "pass" if row["passed"] else "FAIL"
            print(f"{row['layer']:<18} max rel err {row['max_rel_err']:.3e}  {status}")
        if not result["passed"]:
            failed = [r["layer"] for r in result["rows"] if not r["passed"]]
            print(f"error: gradcheck failed for {', '.join(failed)}", file=sys.stderr)
            return EXIT_GRADCHECK
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
