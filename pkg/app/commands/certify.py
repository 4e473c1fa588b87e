import json

from app.services.experiments import ExperimentService


def register(subparsers) -> None:
    parser = subparsers.add_parser("certify", help="Verify the source condition of a model")
    parser.add_argument("--model", required=True)
    parser.add_argument("--dataset", default=None, help="Use the dataset inputs instead of fresh samples")
    parser.add_argument("--samples", type=int, default=200)
    parser.add_argument("--grid", type=int, default=0)
    parser.set_defaults(handler=run)


def run(args, service: ExperimentService) -> None:
    summary = service.certify(args.model, args.dataset, args.samples, args.grid)
    print(json.dumps(summary["source_condition"], sort_keys=True, indent=2))
