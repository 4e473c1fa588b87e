import argparse

from app.commands import certify, dataset, debias, evaluate, gen, rates, train
from app.core.config import settings

COMMANDS = [gen, dataset, train, evaluate, certify, debias, rates]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.PROJECT_NAME,
        description="Vector-valued ReLU networks as Radon measures: approximation and regularisation experiments",
    )
    parser.add_argument("--config", required=True, help="Experiment configuration JSON")
    parser.add_argument("--seed", type=int, default=None, help="Override the master seed")
    parser.add_argument("--out", default=None, help="Override the output directory")
    parser.add_argument("--threads", type=int, default=0, help="Worker threads for independent cells")
    parser.add_argument("--log-level", default=None, help="Logging level (default from settings)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser
