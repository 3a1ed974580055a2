"""Command-line front end.

Every experiment command is a thin client of the HTTP service: the config
file travels to POST /run as text, the server validates and computes, and
the client writes the returned files verbatim. By default the app is hosted
in-process (no socket); --server targets a remote instance instead. The
`serve` command runs the same app under uvicorn.

Exit codes: 0 success, 2 solver non-convergence, 3 invalid config,
4 failed --assert, 1 transport or filesystem trouble.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import httpx

from .config import EXPERIMENTS
from .service import create_app

_EXIT_MEANING = {0: "ok", 2: "solver did not converge", 3: "invalid config",
                 4: "assertion failed"}


def _detect_format(path: Path, explicit: str | None) -> str:
    if explicit is not None:
        return explicit
    return "toml" if path.suffix.lower() == ".toml" else "json"


def _peek_output_dir(config_text: str, fmt: str) -> str | None:
    """Best-effort read of output_dir; the server does the real validation."""
    try:
        raw = tomllib.loads(config_text) if fmt == "toml" else json.loads(config_text)
    except Exception:
        return None
    if isinstance(raw, dict) and isinstance(raw.get("output_dir"), str):
        return raw["output_dir"]
    return None


async def _post_in_process(payload: dict) -> httpx.Response:
    """POST /run against the app hosted in this process; no socket involved."""
    transport = httpx.ASGITransport(app=create_app())
    async with httpx.AsyncClient(transport=transport,
                                 base_url="http://fracopt.local",
                                 timeout=600.0) as client:
        return await client.post("/run", json=payload)


def _post_run(args, experiment: str | None) -> int:
    config_path = Path(args.config)
    try:
        config_text = config_path.read_text()
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    fmt = _detect_format(config_path, args.format)
    payload = {
        "config_text": config_text,
        "format": fmt,
        "experiment": experiment,
        "seed": args.seed,
        "assert_checks": args.assert_checks,
    }
    try:
        if args.server:
            response = httpx.post(args.server.rstrip("/") + "/run",
                                  json=payload, timeout=600.0)
        else:
            response = asyncio.run(_post_in_process(payload))
    except httpx.HTTPError as exc:
        print(f"request failed: {exc}", file=sys.stderr)
        return 1
    if response.status_code == 400:
        detail = response.json().get("detail", response.text)
        print(f"invalid config: {detail}", file=sys.stderr)
        return 3
    if response.status_code != 200:
        print(f"server error {response.status_code}: {response.text}",
              file=sys.stderr)
        return 1
    body = response.json()
    out_dir = Path(args.out) if args.out else \
        Path(_peek_output_dir(config_text, fmt) or ".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for artifact in body["files"]:
            (out_dir / artifact["name"]).write_text(artifact["content"])
    except OSError as exc:
        print(f"cannot write artifacts: {exc}", file=sys.stderr)
        return 1
    exit_code = body["exit_code"]
    print(f"experiment: {body['experiment']}")
    if "passed" in body["report"]:
        print(f"passed: {str(body['report']['passed']).lower()}")
    for artifact in body["files"]:
        print(f"wrote: {out_dir / artifact['name']}")
    meaning = _EXIT_MEANING.get(exit_code, "error")
    print(f"exit: {exit_code} ({meaning})")
    return exit_code


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to a JSON or TOML config")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config's RNG seed")
    sub.add_argument("--assert", dest="assert_checks", action="store_true",
                     help="exit 4 when a check experiment reports failure")
    sub.add_argument("--out", default=None,
                     help="directory for report.json and CSV files")
    sub.add_argument("--server", default=None,
                     help="base URL of a running service (default: in-process)")
    sub.add_argument("--format", choices=["json", "toml"], default=None,
                     help="config format (default: by file extension)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracopt",
        description="Fractional-diffusion control: solvers and checkers")
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="run the experiment named in the config")
    _add_run_flags(run_cmd)

    for name in EXPERIMENTS:
        sub = commands.add_parser(name, help=f"run the {name} experiment")
        _add_run_flags(sub)

    serve_cmd = commands.add_parser("serve", help="start the HTTP service")
    serve_cmd.add_argument("--host", default="127.0.0.1")
    serve_cmd.add_argument("--port", type=int, default=8000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    experiment = None if args.command == "run" else args.command
    return _post_run(args, experiment)


if __name__ == "__main__":
    sys.exit(main())
