from app.schemas.solver import NoiseScheme
from app.services.experiments import ExperimentService


def register(subparsers) -> None:
    parser = subparsers.add_parser("dataset", help="Sample a (noisy) dataset from a model")
    parser.add_argument("--model", required=True, help="Model JSON file")
    parser.add_argument("--m", type=int, required=True, help="Number of samples")
    parser.add_argument("--epsilon", type=float, default=0.0, help="Noise level")
    parser.add_argument("--scheme", choices=[s.value for s in NoiseScheme], default=NoiseScheme.GAUSSIAN.value)
    parser.add_argument("--name", default="dataset.csv", help="Output file name inside the output directory")
    parser.set_defaults(handler=run)


def run(args, service: ExperimentService) -> None:
    path = service.dataset(args.model, args.m, args.epsilon, NoiseScheme(args.scheme), args.name)
    print(path)
