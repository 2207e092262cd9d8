"""Command-line client.

Commands run in-process by default; with ``--server URL`` the same requests
are posted to a running ``geosched serve`` instance instead. Exit codes:
0 success, 2 rejected input, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from pydantic import BaseModel, ValidationError as RequestError

from .service import handlers
from .service.schemas import (
    AllocateRequest,
    ExperimentRequest,
    OracleRequest,
    TrainRequest,
    ValidateRequest,
)

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3


class ClientError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class LocalClient:
    ROUTES = {
        "/validate": handlers.validate,
        "/oracle": handlers.oracle,
        "/allocate": handlers.allocate,
        "/train": handlers.train_agents,
        "/experiments": handlers.experiment,
    }

    def post(self, route: str, req: BaseModel) -> dict:
        try:
            return self.ROUTES[route](req).model_dump()
        except (handlers.errors.GeoschedError, FileNotFoundError) as exc:
            raise ClientError(handlers.exit_code(exc), f"{type(exc).__name__}: {exc}") from exc


class HttpClient:
    def __init__(self, base_url: str, timeout: float | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def post(self, route: str, req: BaseModel) -> dict:
        import httpx

        try:
            resp = httpx.post(self.base_url + route, json=req.model_dump(), timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise ClientError(EXIT_SOLVER, f"cannot reach {self.base_url}: {exc}") from exc
        if resp.status_code == 200:
            return resp.json()
        try:
            body = resp.json()
        except ValueError:
            body = {}
        if "exit_code" in body:
            raise ClientError(body["exit_code"], f"{body['error']}: {body['detail']}")
        code = EXIT_INVALID if resp.status_code == 422 else EXIT_SOLVER
        raise ClientError(code, f"HTTP {resp.status_code}: {body.get('detail', resp.text)}")


def _ref(value: str) -> dict:
    return {"scenario": value}


def _floats(text: str | None):
    if text is None:
        return None
    return [float(x) for x in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geosched", description=__doc__.splitlines()[0])
    p.add_argument("--server", metavar="URL", help="send the request to a running service")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="load and check a scenario file")
    v.add_argument("scenario", help="scenario JSON path or bundled fixture name")

    t = sub.add_parser("train", help="train GT-DRL agents or the monolithic PPO agent")
    t.add_argument("--scenario", required=True)
    t.add_argument("--objective", choices=("carbon", "cost"), default="carbon")
    t.add_argument("--solver", choices=("gtdrl", "ppo"), default="gtdrl")
    t.add_argument("--episodes", type=int, default=2000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--train-config", help="JSON file with TrainConfig overrides")

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides the config)")

    o = sub.add_parser("oracle", help="exhaustive simplex-grid optimum for one epoch")
    o.add_argument("--scenario", required=True)
    o.add_argument("--tau", type=int, default=0)
    o.add_argument("--objective", choices=("carbon", "cost"), default="carbon")
    o.add_argument("--res", type=float, default=0.05)
    o.add_argument("--prior-peak", help="comma-separated kW per data center")

    a = sub.add_parser("allocate", help="one epoch's profile from a named solver")
    a.add_argument("--scenario", required=True)
    a.add_argument("--tau", type=int, default=0)
    a.add_argument("--objective", choices=("carbon", "cost"), default="carbon")
    a.add_argument("--solver", choices=("fd", "nash", "ppo", "gtdrl", "oracle"), default="nash")
    a.add_argument("--checkpoint")
    a.add_argument("--prior-peak")

    s = sub.add_parser("serve", help="start the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return p


def _request(args) -> tuple[str, BaseModel]:
    if args.command == "validate":
        return "/validate", ValidateRequest(**_ref(args.scenario))
    if args.command == "train":
        extra = json.loads(Path(args.train_config).read_text()) if args.train_config else {}
        return "/train", TrainRequest(
            **_ref(args.scenario), objective=args.objective, solver=args.solver, episodes=args.episodes,
            seed=args.seed, out=str(Path(args.out).resolve()), train_config=extra,
        )
    if args.command == "run":
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ClientError(EXIT_INVALID, f"{path}: invalid JSON ({exc})") from exc
        out = str(Path(args.out).resolve()) if args.out else None
        return "/experiments", ExperimentRequest(config=doc, base_dir=str(path.resolve().parent), output=out)
    if args.command == "oracle":
        return "/oracle", OracleRequest(
            **_ref(args.scenario), tau=args.tau, objective=args.objective, resolution=args.res,
            prior_peak_kw=_floats(args.prior_peak),
        )
    if args.command == "allocate":
        return "/allocate", AllocateRequest(
            **_ref(args.scenario), tau=args.tau, objective=args.objective, solver=args.solver,
            checkpoint=str(Path(args.checkpoint).resolve()) if args.checkpoint else None,
            prior_peak_kw=_floats(args.prior_peak),
        )
    raise ValueError(args.command)


def _resolve_scenario_arg(args) -> None:
    # local files are sent as absolute paths so a server on the same host finds them
    name = getattr(args, "scenario", None)
    if name and Path(name).exists():
        args.scenario = str(Path(name).resolve())


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("geosched.service.app:app", host=args.host, port=args.port, workers=1)
        return EXIT_OK
    _resolve_scenario_arg(args)
    client = HttpClient(args.server) if args.server else LocalClient()
    try:
        route, req = _request(args)
        body = client.post(route, req)
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except RequestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    json.dump(body, sys.stdout, indent=1)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
