"""Key-value config files with one section per config dataclass.

    [model]
    d_model = 64
    [sparsity]
    prune_layers = (2,)

Values are Python literals; keys must be field names of the section's dataclass.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
from pathlib import Path

from .datagen import SynthSpec
from .harness.train import TrainConfig
from .model import ModelConfig
from .sparsity import SparsityConfig

SECTIONS = {"model": ModelConfig, "sparsity": SparsityConfig, "train": TrainConfig, "data": SynthSpec}


def parse_config(text: str, source: str = "<config>") -> dict:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string(text, source=source)
    out = {}
    for name, cls in SECTIONS.items():
        values = {}
        if parser.has_section(name):
            fields = {f.name for f in dataclasses.fields(cls)}
            for key, raw in parser.items(name):
                if key not in fields:
                    raise ValueError(f"{source}: [{name}] has no field {key!r}")
                try:
                    values[key] = ast.literal_eval(raw)
                except (ValueError, SyntaxError):
                    values[key] = raw
        out[name] = cls(**values)
    unknown = set(parser.sections()) - SECTIONS.keys()
    if unknown:
        raise ValueError(f"{source}: unknown section(s) {sorted(unknown)}")
    return out


def load_config(path=None) -> dict:
    if path is None:
        return {name: cls() for name, cls in SECTIONS.items()}
    return parse_config(Path(path).read_text(), str(path))


def format_config(configs: dict) -> str:
    lines = []
    for name, obj in configs.items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {v!r}" for k, v in dataclasses.asdict(obj).items()]
        lines.append("")
    return "\n".join(lines)
