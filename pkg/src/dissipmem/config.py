"""Experiment configuration: flat TOML, strict validation, documented defaults.

Every key is a top-level scalar or list.  Unknown keys are errors.  Rates may
be written as numbers or as decimal strings (``noise = "0.02"``), which are
parsed exactly with :mod:`decimal` before conversion.
"""

from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation
from pathlib import Path

import tomli

EXPERIMENTS = ("ising-overlap", "ising-autocorr", "ising-metastability",
               "ising-equilibration", "tc2d-overlap", "tc2d-vs-ising",
               "tc4d-autocorr", "oracle-verify")

# key -> (kind, description); kinds: int, pos_int, nonneg_int, rate, pos_rate,
# time, rates, sizes, str, bool, prob, seed
KEYS = {
    "experiment": ("str", "experiment recipe name"),
    "output_dir": ("str", "bundle directory"),
    "seed": ("seed", "64-bit master seed"),
    "scheme": ("str", "global or constant_rate"),
    "trajectories": ("pos_int", "trajectories per point"),
    "kappa": ("pos_rate", "correction rate"),
    "variant": ("str", "detailed_balance or majority_rule"),
    "sizes": ("sizes", "linear sizes"),
    "size": ("pos_int", "single linear size"),
    "noise_rates": ("rates", "noise rates (bit flip or dephasing)"),
    "noise": ("rate", "single noise rate"),
    "field_rates": ("rates", "symmetry-breaking field rates"),
    "t_max": ("time", "quench or run time in units of 1/kappa"),
    "record_stride": ("pos_int", "global steps between samples"),
    "global_steps": ("pos_int", "recorded global steps per trajectory"),
    "burn_in_steps": ("nonneg_int", "discarded global steps before recording"),
    "probe_count": ("pos_int", "number of probe spins"),
    "max_lag": ("pos_int", "largest autocorrelation lag"),
    "bootstrap": ("pos_int", "bootstrap resamples for tau errors"),
    "observable": ("str", "scan observable"),
    "p_flip": ("prob", "initial flip probability per site"),
    "eps": ("pos_rate", "equilibration threshold"),
    "relevant_winding": ("str", "winding_x or winding_y"),
    "ising_sizes": ("sizes", "Ising sizes (comparison)"),
    "toric_sizes": ("sizes", "toric sizes (comparison)"),
    "ising_noise_rates": ("rates", "Ising noise rates (comparison)"),
    "toric_noise_rates": ("rates", "toric dephasing rates (comparison)"),
    "ising_t_max": ("time", "Ising quench time (comparison)"),
    "toric_t_max": ("time", "toric quench time (comparison)"),
}

_COMMON = {"experiment", "output_dir", "seed", "scheme", "trajectories", "kappa"}

DEFAULTS = {
    "ising-overlap": {"sizes": [5, 7, 9, 11], "noise_rates": [0.02, 0.2], "t_max": 800.0,
                      "trajectories": 1000, "record_stride": 10,
                      "variant": "detailed_balance"},
    "tc2d-overlap": {"sizes": [4, 6, 8], "noise_rates": [0.01], "t_max": 20.0,
                     "trajectories": 1000, "record_stride": 10,
                     "relevant_winding": "winding_y"},
    "tc2d-vs-ising": {"ising_sizes": [5, 7, 9], "toric_sizes": [4, 6, 8],
                      "ising_noise_rates": [0.01, 0.02, 0.05, 0.1],
                      "toric_noise_rates": [0.01, 0.05, 0.1, 0.2],
                      "ising_t_max": 200.0, "toric_t_max": 3.0, "trajectories": 1000,
                      "record_stride": 10, "relevant_winding": "winding_y"},
    "ising-autocorr": {"size": 20, "noise_rates": [0.02, 0.025, 0.028, 0.031, 0.034,
                                                   0.038, 0.045, 0.06],
                       "variant": "detailed_balance", "trajectories": 20,
                       "global_steps": 20000, "probe_count": 57, "bootstrap": 100,
                       "observable": "auto"},
    "tc4d-autocorr": {"size": 4, "noise_rates": [0.0002, 0.0004, 0.0006, 0.0008, 0.001,
                                                 0.0015, 0.002],
                      "variant": "detailed_balance", "trajectories": 20,
                      "global_steps": 20000, "bootstrap": 100, "observable": "auto"},
    "ising-metastability": {"size": 8, "noise": 0.02, "trajectories": 100,
                            "t_max": 20000.0, "variant": "detailed_balance"},
    "ising-equilibration": {"sizes": [10, 20, 30], "noise": 0.02, "p_flip": 0.6,
                            "trajectories": 1000, "t_max": 1500.0, "eps": 0.01,
                            "variant": "detailed_balance", "observable": "auto"},
    "oracle-verify": {},
}

REQUIRED = {"ising-metastability": ("field_rates",)}

_CHOICES = {
    "scheme": ("global", "constant_rate"),
    "variant": ("detailed_balance", "majority_rule"),
    "relevant_winding": ("winding_x", "winding_y"),
    "experiment": EXPERIMENTS,
}
_OBSERVABLES = {
    "ising-autocorr": ("auto", "probe", "aligned_probe", "magnetization"),
    "tc4d-autocorr": ("auto", "mean_stabilizer"),
    "ising-equilibration": ("auto", "signed", "absolute"),
}


class ConfigError(ValueError):
    """Validation failed; ``errors`` lists every problem with its line."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def allowed_keys(experiment: str) -> set:
    extra = set(DEFAULTS.get(experiment, {})) | set(REQUIRED.get(experiment, ()))
    if experiment in ("ising-autocorr", "tc4d-autocorr"):
        extra |= {"burn_in_steps", "max_lag"}
    if experiment in ("ising-overlap", "tc2d-overlap", "tc2d-vs-ising",
                      "ising-equilibration", "ising-metastability"):
        extra |= {"record_stride"}
    return (_COMMON | extra) if experiment != "oracle-verify" else {"experiment",
                                                                   "output_dir"}


def _line_numbers(text: str) -> dict:
    lines = {}
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*([A-Za-z0-9_\-]+)\s*=", line)
        if m and m.group(1) not in lines:
            lines[m.group(1)] = i
    return lines


def _number(value) -> float:
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Decimal(value.strip()))
        except InvalidOperation:
            raise TypeError(f"{value!r} is not a decimal number") from None
    raise TypeError(f"expected a number, got {type(value).__name__}")


def _coerce(kind: str, value):
    if kind == "str":
        if not isinstance(value, str):
            raise TypeError("expected a string")
        return value
    if kind in ("int", "pos_int", "nonneg_int", "seed"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError("expected an integer")
        if kind == "pos_int" and value < 1:
            raise ValueError("must be >= 1")
        if kind == "nonneg_int" and value < 0:
            raise ValueError("must be >= 0")
        if kind == "seed" and not 0 <= value < 2**64:
            raise ValueError("must be a 64-bit unsigned integer")
        return value
    if kind in ("rate", "pos_rate", "time", "prob"):
        x = _number(value)
        if kind == "rate" and x < 0:
            raise ValueError("must be non-negative")
        if kind in ("pos_rate", "time") and not x > 0:
            raise ValueError("must be positive")
        if kind == "prob" and not 0 <= x <= 1:
            raise ValueError("must lie in [0, 1]")
        return x
    if kind == "rates":
        if not isinstance(value, list) or not value:
            raise TypeError("expected a non-empty list of rates")
        out = [_number(v) for v in value]
        if any(v < 0 for v in out):
            raise ValueError("rates must be non-negative")
        return out
    if kind == "sizes":
        if not isinstance(value, list) or not value:
            raise TypeError("expected a non-empty list of sizes")
        if any(isinstance(v, bool) or not isinstance(v, int) or v < 2 for v in value):
            raise ValueError("sizes must be integers >= 2")
        return list(value)
    raise AssertionError(kind)


def validate_mapping(raw: dict, text: str = "") -> dict:
    """Validate a parsed mapping and return the normalized config."""
    lines = _line_numbers(text)

    def where(key):
        return f"line {lines[key]}: " if key in lines else ""

    errors = []
    exp = raw.get("experiment")
    if exp is None:
        raise ConfigError(["missing required key 'experiment'"])
    if exp not in EXPERIMENTS:
        raise ConfigError([f"{where('experiment')}experiment: unknown value {exp!r}"])
    allowed = allowed_keys(exp)
    out = {"experiment": exp}
    for key, value in raw.items():
        if key == "experiment":
            continue
        if key not in allowed:
            errors.append(f"{where(key)}{key}: unknown key for {exp}")
            continue
        if isinstance(value, dict):
            errors.append(f"{where(key)}{key}: nested tables are not allowed")
            continue
        try:
            v = _coerce(KEYS[key][0], value)
        except (TypeError, ValueError) as exc:
            errors.append(f"{where(key)}{key}: {exc}")
            continue
        choices = _CHOICES.get(key)
        if key == "observable":
            choices = _OBSERVABLES.get(exp)
        if choices is not None and v not in choices:
            errors.append(f"{where(key)}{key}: {v!r} not in {list(choices)}")
            continue
        out[key] = v
    for key in REQUIRED.get(exp, ()):
        if key not in raw:
            errors.append(f"{key}: required for {exp}")
    if exp == "ising-metastability" and "field_rates" in out:
        if any(v <= 0 for v in out["field_rates"]):
            errors.append(f"{where('field_rates')}field_rates: must all be positive")
    for key in ("sizes", "ising_sizes"):
        if key in out and exp != "tc2d-overlap" and any(n < 3 for n in out[key]):
            errors.append(f"{where(key)}{key}: Ising sizes must be >= 3")
    if "size" in out and exp in ("ising-autocorr", "ising-metastability") \
            and out["size"] < 3:
        errors.append(f"{where('size')}size: Ising size must be >= 3")
    if errors:
        raise ConfigError(errors)
    return fill_defaults(out)


def fill_defaults(cfg: dict) -> dict:
    exp = cfg["experiment"]
    full = {"experiment": exp, "output_dir": f"runs/{exp}"}
    if exp != "oracle-verify":
        full.update({"seed": 0, "scheme": "global", "kappa": 1.0})
    full.update(DEFAULTS[exp])
    full.update(cfg)
    if exp in ("ising-autocorr", "tc4d-autocorr"):
        full.setdefault("burn_in_steps", full["global_steps"] // 10)
        full.setdefault("max_lag", full["global_steps"] // 10)
        if full["max_lag"] * 10 > full["global_steps"]:
            raise ConfigError([f"max_lag: {full['max_lag']} needs at least "
                               f"{10 * full['max_lag']} global_steps"])
    return full


def validate_config(path) -> dict:
    """Parse and validate a config file; raises :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"syntax error: {exc}"]) from None
    return validate_mapping(raw, text)


def dump_config(cfg: dict) -> str:
    """Canonical flat TOML rendering (sorted keys) used in manifests."""
    lines = []
    for key in sorted(cfg):
        lines.append(f"{key} = {_toml_value(cfg[key])}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)
