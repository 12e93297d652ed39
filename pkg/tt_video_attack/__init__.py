import argparse
import sys

from voluptuous import Invalid

import tt_video_attack.config
from tt_video_attack import modelzoo, synthvid, verify, xferbench
from tt_video_attack.errors import (
    ConfigError,
    FormatError,
    NumericFault,
    ProtocolError,
    RejectedInputError,
    SpecError,
    UnsupportedModelError,
)
from tt_video_attack.logger import LOGGER as logger

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


def do_gen_data(args):
    logger.info("Generating dataset.")
    values = tt_video_attack.config.load_dataset_spec(args.spec)
    if args.seed is not None:
        values["seed"] = args.seed
    dataset = synthvid.generate(synthvid.DatasetSpec.from_dict(values))
    synthvid.save(dataset, args.out)
    logger.info("Done generating.")


def do_train(args):
    logger.info(f"Training {args.arch}.")
    dataset = synthvid.load(args.data)
    if dataset.spec is None:
        raise SpecError(f"{args.data} is not a generated dataset")
    arch = modelzoo.ArchSpec(
        name=args.arch,
        input_shape=dataset.spec.clip_shape,
        num_classes=dataset.num_classes,
        seed=args.seed,
        precision=args.precision,
    )
    train_cfg = modelzoo.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.learning_rate, seed=args.seed
    )
    checkpoint = modelzoo.train(modelzoo.build_model(arch), dataset, train_cfg)
    modelzoo.save_checkpoint(checkpoint, args.out)
    logger.info(f"Wrote checkpoint to {args.out}.")


def do_attack(args):
    logger.info("Starting attack.")
    cfg = xferbench.ExperimentConfig.load(args.config, args.seed)
    paths = xferbench.generate_adversarial(cfg, args.out)
    logger.info(f"Wrote {len(paths)} adversarial clip sets.")


def do_analyze(args):
    logger.info("Starting analysis.")
    cfg = xferbench.ExperimentConfig.load(args.config, args.seed)
    xferbench.run_analysis_only(cfg, args.out)
    logger.info("Done analysis.")


def do_bench(args):
    logger.info("Starting benchmark.")
    cfg = xferbench.ExperimentConfig.load(args.config, args.seed)
    xferbench.run_transfer_experiment(cfg, args.out or cfg.output_dir)
    logger.info("Done benchmark.")


def do_verify(args):
    logger.info("Starting verification suite.")
    results = verify.run_suite(quick=args.quick, seed=args.seed or 0)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericFault(f"Verification failed: {', '.join(failed)}")
    logger.info(f"All {len(results)} checks passed.")


def build_parser():
    parser = argparse.ArgumentParser(prog="tt-video-attack")
    parser.add_argument("--seed", type=int, help="Override the global seed")
    commands = parser.add_subparsers(dest="command")
    commands.required = True

    gen = commands.add_parser("gen-data", help="Generate a synthetic moving-square dataset")
    gen.add_argument("spec", help="Dataset spec file (JSON)")
    gen.add_argument("out", help="Dataset container to write")
    gen.set_defaults(handler=do_gen_data)

    train = commands.add_parser("train", help="Train one zoo architecture")
    train.add_argument("arch", choices=modelzoo.ARCHITECTURES)
    train.add_argument("data", help="Dataset container")
    train.add_argument("out", help="Checkpoint container to write")
    train.add_argument("--epochs", type=int, default=modelzoo.TrainConfig.epochs)
    train.add_argument("--batch-size", type=int, default=modelzoo.TrainConfig.batch_size)
    train.add_argument("--learning-rate", type=float, default=modelzoo.TrainConfig.learning_rate)
    train.add_argument("--precision", choices=("float64", "float32"), default="float64")
    train.set_defaults(handler=do_train)

    for name, handler, help_text in (
        ("attack", do_attack, "Craft and save adversarial clips for every white-box model and attack"),
        ("analyze", do_analyze, "Cross-model correlation of frame importance"),
        ("bench", do_bench, "Full transfer experiment"),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("config", help="Experiment config file (JSON)")
        command.add_argument("out", nargs="?" if name == "bench" else None, help="Output directory")
        command.set_defaults(handler=handler)

    check = commands.add_parser("verify", help="Run the gradient, shift and weight oracle suite")
    check.add_argument("--quick", action="store_true", help="Small architectures and fewer coordinates")
    check.set_defaults(handler=do_verify)

    # accepted after the subcommand too, without clobbering a value given before it
    for command in commands.choices.values():
        command.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Override the global seed")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train" and args.seed is None:
        args.seed = 0

    try:
        args.handler(args)
    except (ConfigError, SpecError, ProtocolError, RejectedInputError, UnsupportedModelError, Invalid) as e:
        logger.fatal(f"Run failed: {e}")
        return EXIT_CONFIG
    except (OSError, FormatError) as e:
        logger.fatal(f"Run failed on IO: {e}")
        return EXIT_IO
    except NumericFault as e:
        logger.fatal(f"Run failed: {e}")
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
