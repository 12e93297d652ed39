import json
import os

from voluptuous import All, Any, In, Length, Optional, Range, Required, Schema

from tt_video_attack.errors import ConfigError
from tt_video_attack.logger import LOGGER as logger
from tt_video_attack.synthvid import DIRECTIONS
from tt_video_attack.ttattack import PRESETS, STRATEGIES, WEIGHT_KINDS
from tt_video_attack.temppattern import METHODS

WHITE_BOX = "white-box"
BLACK_BOX = "black-box"

Number = Any(int, float)
UnitInterval = All(Number, Range(min=0, max=1))

ATTACK_CONTRACT = Schema(
    {
        Required("name"): str,
        Optional("preset"): In(sorted(PRESETS)),
        Optional("epsilon"): UnitInterval,
        Optional("iterations"): All(int, Range(min=1)),
        Optional("shift_length"): All(int, Range(min=0)),
        Optional("weight_kind"): In(WEIGHT_KINDS),
        Optional("strategy"): In(STRATEGIES),
        Optional("strategy_seed"): int,
        Optional("momentum"): All(Number, Range(min=0)),
        Optional("ti_radius"): All(int, Range(min=0)),
        Optional("sign_step"): bool,
    }
)

EXPERIMENT_CONTRACT = Schema(
    {
        Required("dataset"): str,
        Required("models"): All(
            [
                {
                    Required("id"): str,
                    Required("path"): str,
                    Required("roles"): All([In((WHITE_BOX, BLACK_BOX))], Length(min=1)),
                }
            ],
            Length(min=1),
        ),
        Required("attacks"): [ATTACK_CONTRACT],
        Required("ablations"): {
            Required("shift_lengths"): [All(int, Range(min=0))],
            Required("weight_kinds"): [In(WEIGHT_KINDS)],
            Required("strategies"): [In(STRATEGIES)],
            Required("iterations"): [All(int, Range(min=1))],
        },
        Required("analyses"): {
            Required("correlation_methods"): [In(METHODS)],
            Required("shift_loss"): All(int, Range(min=0)),
        },
        Required("eval_size"): All(int, Range(min=0)),
        Required("seed"): int,
        Required("workers"): All(int, Range(min=1)),
        Required("precision"): In(("float64", "float32")),
        Required("output_dir"): str,
    }
)

DATASET_CONTRACT = Schema(
    {
        Optional("frames"): All(int, Range(min=8)),
        Optional("height"): All(int, Range(min=16)),
        Optional("width"): All(int, Range(min=16)),
        Optional("channels"): All(int, Range(min=1)),
        Optional("directions"): All([In(sorted(DIRECTIONS))], Length(min=1)),
        Optional("speeds"): All([All(int, Range(min=1))], Length(min=1)),
        Optional("train_per_class"): All(int, Range(min=0)),
        Optional("eval_per_class"): All(int, Range(min=0)),
        Optional("noise"): UnitInterval,
        Optional("square_size"): All(int, Range(min=1)),
        Optional("intensity"): UnitInterval,
        Optional("seed"): int,
    }
)

DEFAULT_EXPERIMENT = {
    "attacks": [{"name": name, "preset": name} for name in ("fgsm", "bim", "tt-fgsm", "tt-bim")],
    "ablations": {"shift_lengths": [], "weight_kinds": [], "strategies": [], "iterations": [1, 10]},
    "analyses": {"correlation_methods": ["zeropad"], "shift_loss": 7},
    "eval_size": 64,
    "seed": 0,
    "workers": 1,
    "precision": "float64",
    "output_dir": "out",
}


def merge_dicts(first, second):
    """Recursive merge where `second` wins; lists are replaced, not merged."""
    to_return = first.copy()

    for key in second:
        if key in first and isinstance(first[key], dict) and isinstance(second[key], dict):
            to_return[key] = merge_dicts(first[key], second[key])
        else:
            to_return[key] = second[key]

    return to_return


def read_json(filename):
    try:
        with open(filename) as handle:
            return json.load(handle)
    except OSError:
        logger.fatal(f"Failed to open config file {filename}.")
        raise
    except ValueError:
        logger.fatal(f"Failed to decode config file {filename}. Is it valid json?")
        raise ConfigError(f"{filename} is not valid JSON")


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def load(filename, seed=None):
    """
    Read, default-fill and validate an experiment config. Relative paths are resolved against
    the directory of `filename`; `seed`, when given, replaces the config's global seed.
    """
    raw = read_json(filename)
    if not isinstance(raw, dict):
        raise ConfigError(f"{filename} must hold a JSON object")
    config = EXPERIMENT_CONTRACT(merge_dicts(DEFAULT_EXPERIMENT, raw))

    base_dir = os.path.dirname(os.path.abspath(filename))
    config["dataset"] = _resolve(base_dir, config["dataset"])
    config["output_dir"] = _resolve(base_dir, config["output_dir"])
    for model in config["models"]:
        model["path"] = _resolve(base_dir, model["path"])
    if seed is not None:
        config["seed"] = int(seed)

    ids = [model["id"] for model in config["models"]]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"Model ids must be unique, got {ids}")
    names = [attack["name"] for attack in config["attacks"]]
    if len(set(names)) != len(names):
        raise ConfigError(f"Attack names must be unique, got {names}")
    return config


def load_dataset_spec(filename):
    raw = read_json(filename)
    if not isinstance(raw, dict):
        raise ConfigError(f"{filename} must hold a JSON object")
    return DATASET_CONTRACT(raw)
