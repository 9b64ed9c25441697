"""Run configuration: a strict INI-style file describing one experiment.

Sections:

    [common]   protocol, epochs, batch_size, learning_rate, seed, run_id,
               log_dir, eval_every (default 1), hidden_size (default 8)
    [he]       key_bits (default 1024), insecure_ok (default false);
               required exactly when protocol = he_logreg
    [master]   host, port, data_path, id_column (default "id"), label_column
    [member<i>] host, port, data_path, id_column
    [arbiter]  host, port

Unknown sections and keys are rejected; every error names the offender.
The parser is deliberately stricter than configparser: no interpolation,
no multiline values, no defaults section, duplicate keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .frame import PartyId
from .protocols import PROTOCOLS, HeConfig, TrainConfig

_COMMON_KEYS = {
    "protocol", "epochs", "batch_size", "learning_rate", "seed",
    "eval_every", "run_id", "log_dir", "hidden_size",
}
_COMMON_REQUIRED = {
    "protocol", "epochs", "batch_size", "learning_rate", "seed",
    "run_id", "log_dir",
}
_HE_KEYS = {"key_bits", "insecure_ok"}
_DATA_PARTY_KEYS = {"host", "port", "data_path", "id_column", "label_column"}
_ARBITER_KEYS = {"host", "port"}


@dataclass(frozen=True)
class PartyConfig:
    party: PartyId
    host: str = "127.0.0.1"
    port: int = 0
    data_path: str = ""
    id_column: str = "id"
    label_column: str | None = None


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    run_id: str
    log_dir: str
    parties: tuple[PartyConfig, ...] = field(default_factory=tuple)

    def party_ids(self) -> list[PartyId]:
        return [p.party for p in self.parties]

    def party(self, pid: PartyId) -> PartyConfig:
        for p in self.parties:
            if p.party == pid:
                return p
        raise ConfigError(f"party {pid} not present in the config")

    def has_arbiter(self) -> bool:
        return any(p.party.role == "arbiter" for p in self.parties)


def _parse_ini(path: str | Path) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    current: str | None = None
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"{path}:{lineno}: empty section name")
            if name in sections:
                raise ConfigError(f"{path}:{lineno}: duplicate section [{name}]")
            sections[name] = {}
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in sections[current]:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = value
    return sections


def _want_int(sections: dict, section: str, key: str, default: int | None = None) -> int:
    if key not in sections.get(section, {}):
        if default is not None:
            return default
        raise ConfigError(f"missing required key {key!r} in [{section}]")
    value = sections[section][key]
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: {value!r} is not an integer") from None


def _want_float(sections: dict, section: str, key: str) -> float:
    if key not in sections.get(section, {}):
        raise ConfigError(f"missing required key {key!r} in [{section}]")
    value = sections[section][key]
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: {value!r} is not a number") from None


def _want_str(sections: dict, section: str, key: str, default: str | None = None) -> str:
    if key not in sections.get(section, {}):
        if default is not None:
            return default
        raise ConfigError(f"missing required key {key!r} in [{section}]")
    value = sections[section][key]
    if not value:
        raise ConfigError(f"[{section}] {key}: value must not be empty")
    return value


def _want_bool(sections: dict, section: str, key: str, default: bool) -> bool:
    if key not in sections.get(section, {}):
        return default
    value = sections[section][key].lower()
    if value in ("true", "false"):
        return value == "true"
    raise ConfigError(f"[{section}] {key}: expected true or false, got {value!r}")


def _check_keys(section: str, present: dict[str, str], allowed: set[str]) -> None:
    for key in present:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]")


def _party_config(sections: dict, name: str, pid: PartyId) -> PartyConfig:
    body = sections[name]
    if pid.role == "arbiter":
        _check_keys(name, body, _ARBITER_KEYS)
        return PartyConfig(
            party=pid,
            host=_want_str(sections, name, "host", "127.0.0.1"),
            port=_want_int(sections, name, "port", 0),
        )
    _check_keys(name, body, _DATA_PARTY_KEYS)
    label = body.get("label_column")
    if pid.role == "master":
        if not label:
            raise ConfigError("missing required key 'label_column' in [master]")
    elif label is not None:
        raise ConfigError(f"label_column is master-only, found in [{name}]")
    return PartyConfig(
        party=pid,
        host=_want_str(sections, name, "host", "127.0.0.1"),
        port=_want_int(sections, name, "port", 0),
        data_path=_want_str(sections, name, "data_path"),
        id_column=_want_str(sections, name, "id_column", "id"),
        label_column=label,
    )


def parse_config(path: str | Path) -> RunConfig:
    sections = _parse_ini(path)

    if "common" not in sections:
        raise ConfigError("missing [common] section")
    _check_keys("common", sections["common"], _COMMON_KEYS)
    for key in _COMMON_REQUIRED:
        if key not in sections["common"]:
            raise ConfigError(f"missing required key {key!r} in [common]")

    protocol = _want_str(sections, "common", "protocol")
    if protocol not in PROTOCOLS:
        raise ConfigError(
            f"[common] protocol: {protocol!r} is not one of {', '.join(PROTOCOLS)}"
        )

    he = None
    if protocol == "he_logreg":
        if "he" not in sections:
            raise ConfigError("protocol he_logreg requires an [he] section")
        _check_keys("he", sections["he"], _HE_KEYS)
        he = HeConfig(
            key_bits=_want_int(sections, "he", "key_bits", 1024),
            insecure_ok=_want_bool(sections, "he", "insecure_ok", False),
        )
    elif "he" in sections:
        raise ConfigError(f"[he] section is only valid for he_logreg, not {protocol}")

    try:
        train = TrainConfig(
            protocol=protocol,
            epochs=_want_int(sections, "common", "epochs"),
            batch_size=_want_int(sections, "common", "batch_size"),
            learning_rate=_want_float(sections, "common", "learning_rate"),
            seed=_want_int(sections, "common", "seed"),
            he=he,
            eval_every=_want_int(sections, "common", "eval_every", 1),
            hidden_size=_want_int(sections, "common", "hidden_size", 8),
        )
    except ValueError as exc:
        raise ConfigError(f"[common]: {exc}") from None

    run_id = _want_str(sections, "common", "run_id")
    if not all(c.isalnum() or c in "._-" for c in run_id):
        raise ConfigError(f"[common] run_id: {run_id!r} must be a plain file-name token")
    log_dir = _want_str(sections, "common", "log_dir")

    party_sections = [s for s in sections if s not in ("common", "he")]
    parties: list[PartyConfig] = []
    member_indices: list[int] = []
    for name in party_sections:
        try:
            pid = PartyId.parse(name)
        except ValueError:
            raise ConfigError(f"unknown section [{name}]") from None
        if pid.role == "member":
            member_indices.append(pid.index)
        parties.append(_party_config(sections, name, pid))

    if not any(p.party.role == "master" for p in parties):
        raise ConfigError("missing [master] section")
    member_indices.sort()
    if member_indices != list(range(len(member_indices))):
        raise ConfigError(
            f"member indices must be contiguous from 0, got {member_indices}"
        )
    if not member_indices:
        raise ConfigError("at least one [member0] section is required")
    if protocol == "he_logreg" and not any(p.party.role == "arbiter" for p in parties):
        raise ConfigError("protocol he_logreg requires an [arbiter] section")

    parties.sort(key=lambda p: p.party.sort_key())
    return RunConfig(train=train, run_id=run_id, log_dir=log_dir, parties=tuple(parties))
