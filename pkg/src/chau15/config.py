"""YAML configuration files, shipped presets and measured-values fixtures.

A run config has two sections, ``protocol`` and ``devices``, mirroring
:class:`~chau15.protocol.ProtocolParams` and :class:`~chau15.devices.DeviceChain`.
A measured-values file (``format: chau15.measured``) holds per-intensity
yields and signal error rate for the key-rate pipeline.

Errors are raised as :class:`ConfigError` naming the file, line and field.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .devices import ChannelModel, DetectorModel, DeviceChain, InterferometerModel, SourceModel
from .protocol import BOB_PAIRS, IntensityClass, ProtocolParams
from .security import CONVENTIONS, SETTING_CONDITIONED, DecoyInputs, IntensityStats

MEASURED_FORMAT = "chau15.measured"
DEFAULT_PRESET = "fifty_km"
_ALIASES = {"default": DEFAULT_PRESET}

_DEVICE_SECTIONS = {
    "source": SourceModel,
    "channel": ChannelModel,
    "interferometer": InterferometerModel,
    "detector": DetectorModel,
}


class ConfigError(ValueError):
    pass


def _data_dir(kind: str):
    return resources.files("chau15") / "data" / kind


def preset_names() -> list:
    return sorted(p.name[:-5] for p in _data_dir("presets").iterdir() if p.name.endswith(".yaml"))


def measured_names() -> list:
    return sorted(p.name[:-5] for p in _data_dir("measured").iterdir() if p.name.endswith(".yaml"))


def _locate(name_or_path, kind: str):
    """A filesystem path, or the packaged file of that name."""
    path = Path(str(name_or_path))
    if path.exists():
        return path
    name = _ALIASES.get(str(name_or_path), str(name_or_path))
    packaged = _data_dir(kind) / f"{name}.yaml"
    if packaged.is_file():
        return packaged
    raise ConfigError(f"{name_or_path}: no such file or {kind[:-1]} name")


class _Doc:
    """Parsed YAML plus the node tree, used to point at offending lines."""

    def __init__(self, text: str, source: str):
        self.source = source
        try:
            self.node = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f":{mark.line + 1}" if mark is not None else ""
            problem = getattr(exc, "problem", None) or str(exc)
            raise ConfigError(f"{source}{where}: YAML syntax error: {problem}") from None
        if not isinstance(self.data, dict):
            raise ConfigError(f"{source}: top level must be a mapping")

    def line(self, path) -> Optional[int]:
        node, line = self.node, None
        for key in path:
            if isinstance(node, yaml.MappingNode):
                for k, v in node.value:
                    if k.value == key:
                        line, node = k.start_mark.line + 1, v
                        break
                else:
                    return line
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                node = node.value[key]
                line = node.start_mark.line + 1
            else:
                return line
        return line

    def error(self, path, message: str) -> ConfigError:
        line = self.line(path)
        where = f":{line}" if line else ""
        field = ".".join(str(p) for p in path)
        return ConfigError(f"{self.source}{where}: field '{field}': {message}")

    def get(self, path, required: bool = True):
        node = self.data
        for i, key in enumerate(path):
            if isinstance(node, dict) and key in node:
                node = node[key]
            elif isinstance(node, list) and isinstance(key, int) and key < len(node):
                node = node[key]
            elif required:
                raise self.error(path[:i] or path, f"missing required field '{key}'")
            else:
                return None
        return node

    def number(self, path, required: bool = True):
        v = self.get(path, required)
        if v is None and not required:
            return None
        try:
            return float(v)
        except (TypeError, ValueError):
            raise self.error(path, f"expected a number, got {v!r}") from None


@dataclass(frozen=True)
class RunSpec:
    """A named protocol + device configuration."""

    name: str
    params: ProtocolParams
    devices: DeviceChain

    def to_dict(self) -> dict:
        return {"name": self.name, "protocol": self.params.to_dict(), "devices": self.devices.to_dict()}


def _read(name_or_path, kind: str) -> _Doc:
    path = _locate(name_or_path, kind)
    return _Doc(path.read_text(), str(name_or_path) if not Path(str(name_or_path)).exists() else str(path))


def _classes(doc: _Doc, path: list, extra=()) -> list:
    raw = doc.get(path)
    if not isinstance(raw, list) or not raw:
        raise doc.error(path, "expected a non-empty list of intensity classes")
    out = []
    for n, entry in enumerate(raw):
        here = path + [n]
        if not isinstance(entry, dict):
            raise doc.error(here, "each class must be a mapping")
        unknown = set(entry) - {"label", "mean", "probability", *extra}
        if unknown:
            raise doc.error(here, f"unknown keys {sorted(unknown)}")
        label = doc.get(here + ["label"])
        out.append((n, str(label), doc.number(here + ["mean"]), doc.number(here + ["probability"])))
    return out


def parse_config(text: str, source: str = "<config>") -> RunSpec:
    doc = _Doc(text, source)
    return _build(doc, doc.data.get("name", source))


def load_config(name_or_path=DEFAULT_PRESET) -> RunSpec:
    """Load a run config from a path or a packaged preset name."""
    doc = _read(name_or_path, "presets")
    return _build(doc, doc.data.get("name", str(name_or_path)))


def _build(doc: _Doc, name: str) -> RunSpec:
    unknown = set(doc.data) - {"name", "protocol", "devices"}
    if unknown:
        raise doc.error([sorted(unknown)[0]], "unknown top-level section")
    proto = doc.get(["protocol"])
    if not isinstance(proto, dict):
        raise doc.error(["protocol"], "expected a mapping")
    try:
        classes = tuple(
            IntensityClass(label, mean, prob)
            for _, label, mean, prob in _classes(doc, ["protocol", "intensity_classes"])
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise doc.error(["protocol", "intensity_classes"], str(exc)) from None
    allowed = {"L", "intensity_classes", "pair_weights", "bob_convention", "bob_pair_weights", "bob_delay_weights"}
    unknown = set(proto) - allowed
    if unknown:
        raise doc.error(["protocol", sorted(unknown)[0]], "unknown field")
    L = doc.get(["protocol", "L"], required=False)
    if L is not None and (not isinstance(L, int) or isinstance(L, bool)):
        raise doc.error(["protocol", "L"], f"expected an integer, got {L!r}")
    try:
        params = ProtocolParams(
            L=5 if L is None else L,
            intensity_classes=classes,
            pair_weights=proto.get("pair_weights"),
            bob_convention=proto.get("bob_convention", BOB_PAIRS),
            bob_pair_weights=proto.get("bob_pair_weights"),
            bob_delay_weights=proto.get("bob_delay_weights"),
        )
    except ValueError as exc:
        where = ["protocol", "intensity_classes"] if "intensity" in str(exc) else ["protocol"]
        raise doc.error(where, str(exc)) from None

    dev = doc.get(["devices"], required=False) or {}
    if not isinstance(dev, dict):
        raise doc.error(["devices"], "expected a mapping")
    parts = {}
    for section, model in _DEVICE_SECTIONS.items():
        values = dev.get(section) or {}
        if not isinstance(values, dict):
            raise doc.error(["devices", section], "expected a mapping")
        names = {f.name for f in dataclasses.fields(model)}
        for key in values:
            if key not in names:
                raise doc.error(["devices", section, key], f"unknown field (allowed: {sorted(names)})")
        kwargs = {}
        for key, v in values.items():
            if isinstance(v, list):
                try:
                    kwargs[key] = tuple(float(x) if key != "delays" else int(x) for x in v)
                except (TypeError, ValueError):
                    raise doc.error(["devices", section, key], f"expected a list of numbers, got {v!r}") from None
            else:
                kwargs[key] = doc.number(["devices", section, key])
        try:
            parts[section] = model(**kwargs)
        except ValueError as exc:
            raise doc.error(["devices", section], str(exc)) from None
    for section in dev:
        if section not in _DEVICE_SECTIONS:
            raise doc.error(["devices", section], "unknown device section")
    devices = DeviceChain(**parts)
    try:
        devices.check_packet_length(params.L)
    except ValueError as exc:
        raise doc.error(["devices", "interferometer", "delays"], str(exc)) from None
    return RunSpec(str(name), params, devices)


@dataclass(frozen=True)
class MeasuredRow:
    """Measured yields for one operating point, ready for the key-rate pipeline."""

    name: str
    L: int
    length_km: Optional[float]
    inputs: DecoyInputs
    f_ec: float
    convention: str
    reference: dict

    def params(self) -> ProtocolParams:
        classes = tuple(
            IntensityClass(label, s.mean, s.probability)
            for label, s in zip(("mu", "nu1", "nu2"), (self.inputs.signal, self.inputs.decoy1, self.inputs.decoy2))
        )
        return ProtocolParams(L=self.L, intensity_classes=classes)


def parse_measured(data: dict, doc: Optional[_Doc] = None, name: str = "<measured>") -> MeasuredRow:
    if doc is None:
        doc = _Doc(yaml.safe_dump(data), name)
    if doc.data.get("format") != MEASURED_FORMAT:
        raise doc.error(["format"], f"expected '{MEASURED_FORMAT}'")
    stats = {}
    for n, label, mean, prob in _classes(doc, ["classes"], extra=("Q", "Q_prime", "E")):
        try:
            stats[label] = IntensityStats(
                mean, prob, doc.number(["classes", n, "Q"]), doc.number(["classes", n, "Q_prime"]),
                doc.number(["classes", n, "E"], required=False),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise doc.error(["classes", n], str(exc)) from None
    try:
        inputs = DecoyInputs.from_classes(stats)
    except ValueError as exc:
        raise doc.error(["classes"], str(exc)) from None
    convention = doc.data.get("convention", SETTING_CONDITIONED)
    if convention not in CONVENTIONS:
        raise doc.error(["convention"], f"expected one of {CONVENTIONS}")
    f_ec = doc.number(["f_ec"], required=False)
    length = doc.number(["length_km"], required=False)
    return MeasuredRow(
        str(doc.data.get("name", name)),
        int(doc.data.get("L", 5)),
        length,
        inputs,
        1.0 if f_ec is None else f_ec,
        convention,
        dict(doc.data.get("reference") or {}),
    )


def load_measured(name_or_path) -> MeasuredRow:
    """Load a measured-values file from a path or a packaged fixture name."""
    doc = _read(name_or_path, "measured")
    return parse_measured(doc.data, doc, Path(str(name_or_path)).stem)


def read_structured(path) -> tuple:
    """``(data, doc)`` for any YAML/JSON file, with diagnostics on syntax errors."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{path}: no such file")
    doc = _Doc(p.read_text(), str(p))
    return doc.data, doc
