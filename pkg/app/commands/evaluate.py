import json

from app.services.experiments import ExperimentService


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Norms, fidelity and errors of a model")
    parser.add_argument("--model", required=True)
    parser.add_argument("--dataset", default=None)
    parser.add_argument("--reference", default=None, help="Reference model for sup-d_* and Bochner errors")
    parser.add_argument("--probes", type=int, default=0)
    parser.set_defaults(handler=run)


def run(args, service: ExperimentService) -> None:
    summary = service.evaluate(args.model, args.dataset, args.reference, args.probes)
    print(json.dumps(summary, sort_keys=True, indent=2))
