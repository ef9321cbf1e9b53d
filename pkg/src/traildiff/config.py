"""Run configuration: a flat INI file of typed key = value pairs.

Every key has a declared type and a default; the defaults are the
reference hyperparameters (batch 512/64, base 512, multipliers
[0.125,0.25,0.5] / [2,2,2,2], cosine schedule at T=1000, AdamW at 1e-4
with weight decay 1e-2, EMA 0.9999, 32M samples).  Desk-scale runs
override the handful of size knobs and keep the rest.

`load_config` returns a plain {section: {key: value}} dict with every
schema key present, so downstream code never touches configparser.
"""

import configparser
import copy

from . import denoiser, engine, schedule
from .data import DatasetSpec
from .errors import InvalidArgument

# (type, default, doc); a None default means "unset" and commands that
# need the key must say so by name
SCHEMA = {
    "data": {
        "path": ("str", None, "dataset container (make-data writes it)"),
        "n_per_label": ("int", 100, "sequences generated per label family"),
        "n_frames": ("int", 64, "frames per sequence"),
        "n_channels": ("int", 17, "channels per frame (traj + pose block)"),
        "noise_sigma": ("float", 0.02, "generator jitter, world units"),
        "seed": ("int", 0, "dataset generation seed"),
    },
    "schedule": {
        "kind": ("str", "cosine", "noise schedule family: cosine | linear"),
        "t": ("int", 1000, "diffusion steps"),
        "beta_start": ("float", None, "linear kind only: first beta"),
        "beta_end": ("float", None, "linear kind only: last beta"),
    },
    "trajectory": {
        "base_channels": ("int", 512, "unet stem width"),
        "channel_multipliers": ("floats", (0.125, 0.25, 0.5),
                                "per-stage width factors"),
        "groups": ("int", 32, "group-norm groups"),
        "prediction_target": ("str", "epsilon", "net predicts epsilon | x0"),
        "cond_vocab": ("int", 6, "label vocabulary size"),
        "cond_dim": ("int", 64, "label embedding width"),
        "time_dim": ("int", 64, "timestep embedding width"),
        "batch_size": ("int", 512, "training batch"),
        "lr": ("float", 1e-4, "AdamW learning rate"),
        "weight_decay": ("float", 1e-2, "AdamW weight decay"),
        "grad_clip_norm": ("float", 1.0, "global gradient norm clip"),
        "ema_beta": ("float", 0.9999, "parameter moving-average decay"),
        "total_samples": ("int", 32_000_000, "training budget in samples"),
        "loss_scale_k": ("float", 1.0, "trajectory-channel loss emphasis"),
        "cond_dropout": ("float", 0.1, "label dropout for free guidance"),
        "seed": ("int", 0, "training seed"),
        "checkpoint_every": ("int", 0, "steps between checkpoints (0 = end only)"),
    },
    "motion": {
        "base_channels": ("int", 512, "unet stem width"),
        "channel_multipliers": ("floats", (2.0, 2.0, 2.0, 2.0),
                                "per-stage width factors"),
        "groups": ("int", 32, "group-norm groups"),
        "prediction_target": ("str", "x0", "net predicts epsilon | x0"),
        "cond_vocab": ("int", 6, "label vocabulary size"),
        "cond_dim": ("int", 64, "label embedding width"),
        "time_dim": ("int", 64, "timestep embedding width"),
        "batch_size": ("int", 64, "training batch"),
        "lr": ("float", 1e-4, "AdamW learning rate"),
        "weight_decay": ("float", 1e-2, "AdamW weight decay"),
        "grad_clip_norm": ("float", 1.0, "global gradient norm clip"),
        "ema_beta": ("float", 0.9999, "parameter moving-average decay"),
        "total_samples": ("int", 32_000_000, "training budget in samples"),
        "loss_scale_k": ("float", 1.0, "trajectory-channel loss emphasis"),
        "cond_dropout": ("float", 0.1, "label dropout for free guidance"),
        "seed": ("int", 0, "training seed"),
        "checkpoint_every": ("int", 0, "steps between checkpoints (0 = end only)"),
        "c_emphasis": ("float", 10.0, "emphasis projection trajectory scale"),
        "projector_seed": ("int", 0, "random projection draw seed"),
    },
    "guidance": {
        "s": ("float", 100.0, "guidance strength"),
        "t_stop": ("int", 20, "guidance/imputation off below this step"),
        "p": ("int", 1, "keyframe goal norm exponent (1 or 2)"),
        "c_safe": ("float", 1.0, "obstacle clearance, world units"),
    },
    "pipeline": {
        "tau": ("int", 0, "p2p imputation active for t >= tau"),
        "mode": ("str", "two_stage", "two_stage | single_stage"),
        "use_p2p": ("bool", False, "impute the point-to-point line"),
        "full_traj_imputation": ("bool", True,
                                 "stage 2 imputes the whole stage-1 trajectory"),
        "seed": ("int", 0, "sampling seed"),
    },
}

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _convert(section, key, kind, raw):
    raw = raw.strip()
    if raw == "":
        return None
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            try:
                return _BOOL[raw.lower()]
            except KeyError:
                raise ValueError(raw)
        if kind == "floats":
            return tuple(float(p) for p in raw.split(","))
        return raw  # str
    except ValueError:
        raise InvalidArgument(
            f"{section}.{key}: expected {kind}, got {raw!r}") from None


def default_config():
    """Fresh config dict with every key at its schema default."""
    return {sec: {k: copy.copy(spec[1]) for k, spec in keys.items()}
            for sec, keys in SCHEMA.items()}


def default_config_text():
    """The documented INI rendering of the defaults."""
    lines = ["# traildiff run configuration.  Remove any line to keep the",
             "# built-in default; values shown are the reference settings.",
             ""]
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (kind, default, doc) in keys.items():
            lines.append(f"# {doc} ({kind})")
            if default is None:
                lines.append(f"{key} =")
            elif kind == "floats":
                lines.append(f"{key} = " + ", ".join(repr(v) for v in default))
            elif kind == "bool":
                lines.append(f"{key} = {'true' if default else 'false'}")
            else:
                lines.append(f"{key} = {default}")
        lines.append("")
    return "\n".join(lines)


def load_config(path):
    """Parse and type-check one INI file over the defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except OSError as e:
        raise InvalidArgument(f"cannot read config {path}: {e}") from None
    except configparser.Error as e:
        raise InvalidArgument(f"bad config: {e}") from None

    cfg = default_config()
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise InvalidArgument(
                f"unknown config section [{sec}] "
                f"(known: {', '.join(SCHEMA)})")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise InvalidArgument(
                    f"unknown config key {sec}.{key} "
                    f"(known in [{sec}]: {', '.join(SCHEMA[sec])})")
            val = _convert(sec, key, SCHEMA[sec][key][0], raw)
            if val is not None:
                cfg[sec][key] = val
            elif SCHEMA[sec][key][1] is None:
                cfg[sec][key] = None
    return cfg


def require(cfg, section, key):
    """Fetch a key that a command cannot proceed without."""
    val = cfg[section][key]
    if val is None:
        raise InvalidArgument(f"config field {section}.{key} is required "
                              f"but not set")
    return val


# -- bridges to the runtime objects -------------------------------------------------

def dataset_spec_from(cfg):
    d = cfg["data"]
    return DatasetSpec(n_per_label=d["n_per_label"], n_frames=d["n_frames"],
                       n_channels=d["n_channels"],
                       noise_sigma=d["noise_sigma"], seed=d["seed"])


def schedule_from(cfg):
    s = cfg["schedule"]
    return schedule.build_schedule(s["kind"], s["t"],
                                   beta_start=s["beta_start"],
                                   beta_end=s["beta_end"])


def denoiser_from(cfg, section, in_channels):
    m = cfg[section]
    return denoiser.DenoiserConfig(
        in_channels=in_channels, base_channels=m["base_channels"],
        channel_multipliers=m["channel_multipliers"], groups=m["groups"],
        prediction_target=m["prediction_target"], cond_vocab=m["cond_vocab"],
        cond_dim=m["cond_dim"], time_dim=m["time_dim"])


def train_config_from(cfg, section):
    m = cfg[section]
    return engine.TrainConfig(
        batch_size=m["batch_size"], lr=m["lr"],
        total_samples=m["total_samples"], weight_decay=m["weight_decay"],
        grad_clip_norm=m["grad_clip_norm"], ema_beta=m["ema_beta"],
        loss_scale_k=m["loss_scale_k"], seed=m["seed"],
        cond_dropout=m["cond_dropout"])
