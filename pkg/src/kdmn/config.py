"""Run configuration: an INI file of key = value sections, merged with
command-line overrides. Unknown sections or keys are rejected. Defaults
are the full-scale values documented in the README."""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .model import ModelDims, TrainConfig
from .retrieval import RetrievalConfig


def _opt_float(text: str):
    if text.strip().lower() in ("", "none"):
        return None
    return float(text)


# section -> key -> (parser, default)
SCHEMA = {
    "model": {
        "mode": (str, "full"),
        "image_dim": (int, 2048),
        "embed_dim": (int, 300),
        "hidden": (int, 512),
        "common": (int, 1024),
        "attention": (int, 512),
        "episodes": (int, 2),
        "init_scale": (float, 0.08),
    },
    "retrieval": {
        "decay": (float, 0.5),
        "max_hops": (int, 3),
        "top_n": (int, 20),
        "visual_mass": (float, 1.0),
    },
    "train": {
        "lr": (float, 1e-4),
        "batch_size": (int, 500),
        "epochs": (int, 10),
        "seed": (int, 0),
        "stop_at_train_accuracy": (_opt_float, None),
    },
}


@dataclass
class RunConfig:
    """Flat bag of every configurable value, already type-converted."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def dims(self) -> ModelDims:
        v = self.values
        return ModelDims(image_dim=v["image_dim"], embed_dim=v["embed_dim"],
                         hidden=v["hidden"], common=v["common"],
                         attention=v["attention"], episodes=v["episodes"])

    def retrieval(self) -> RetrievalConfig:
        v = self.values
        return RetrievalConfig(decay=v["decay"], max_hops=v["max_hops"],
                               top_n=v["top_n"])

    def train(self) -> TrainConfig:
        v = self.values
        return TrainConfig(lr=v["lr"], batch_size=v["batch_size"],
                           epochs=v["epochs"], seed=v["seed"],
                           stop_at_train_accuracy=v["stop_at_train_accuracy"])

    @property
    def mode(self) -> str:
        return self.values["mode"]

    @property
    def init_scale(self) -> float:
        return self.values["init_scale"]

    @property
    def visual_mass(self) -> float:
        return self.values["visual_mass"]


def load_run_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then overrides (flat key -> raw value).

    Key names are unique across sections, so overrides are flat. A string
    override goes through the key's parser; other types pass through.
    """
    values = {}
    by_key = {}
    for section, keys in SCHEMA.items():
        for key, (parse, default) in keys.items():
            values[key] = default
            by_key[key] = parse
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ValueError(f"cannot read config file {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ValueError(f"{path}: unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ValueError(
                        f"{path}: unknown key {key!r} in section [{section}]")
                try:
                    values[key] = SCHEMA[section][key][0](raw)
                except ValueError as exc:
                    raise ValueError(
                        f"{path}: bad value for {key!r}: {raw!r} ({exc})") from None
    for key, raw in (overrides or {}).items():
        if key not in by_key:
            raise ValueError(f"unknown config key {key!r}")
        if raw is None:
            continue
        values[key] = by_key[key](raw) if isinstance(raw, str) else raw
    return RunConfig(values=values)
