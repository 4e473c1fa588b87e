import json

from app.schemas.solver import TrainingMode
from app.services.experiments import ExperimentService


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Fit a network to a dataset")
    parser.add_argument("--dataset", required=True, help="Dataset CSV (with JSON sidecar)")
    parser.add_argument("--mode", choices=[m.value for m in TrainingMode], default=TrainingMode.VARIATIONAL.value)
    parser.add_argument("--lambda", dest="lam", type=float, default=None, help="Override the regularisation weight")
    parser.set_defaults(handler=run)


def run(args, service: ExperimentService) -> None:
    """Solver flags are reported, never turned into a failing exit code"""
    summary = service.train(args.dataset, TrainingMode(args.mode), args.lam)
    print(json.dumps({key: summary[key] for key in ("atoms", "radon_norm", "fidelity", "flags")}, sort_keys=True))
