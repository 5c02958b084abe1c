"""Config parsing shared by every CLI command.

One sectioned key-value format (INI) everywhere, so scenario files compose
into training files. Parsing is strict and fail-fast: every key is typed,
every consumed (section, key) is tracked, and leftovers are an error, so a
typo dies before any compute starts. The consumed view (defaults included)
serializes back to a resolved config whose re-parse is a fixed point; every
run drops that copy beside its artifacts for bit-exact reproduction.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .frontend import MicArrayGeometry
from .rl import RewardWeights
from .scene import NOISE_KINDS, RoomSpec, ScenarioConfig
from .wavefield import Medium, SourceWaveform

_REQUIRED = object()


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list, np.ndarray)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


class Conf:
    """Typed reader over a parsed INI file with consumption tracking."""

    def __init__(self, cp: configparser.ConfigParser, path: str = "<config>"):
        self.cp = cp
        self.path = path
        self.resolved: dict[str, dict[str, str]] = {}
        self._seen: set[tuple[str, str]] = set()

    def _raw(self, section: str, key: str):
        if self.cp.has_option(section, key):
            self._seen.add((section, key))
            return self.cp.get(section, key)
        return None

    def _record(self, section: str, key: str, value) -> None:
        self.resolved.setdefault(section, {})[key] = _fmt(value)

    def _get(self, section: str, key: str, parse, default):
        raw = self._raw(section, key)
        if raw is None or raw.strip() == "":
            if default is _REQUIRED:
                raise ConfigurationError(f"{self.path}: missing [{section}] {key}")
            if default is not None:
                self._record(section, key, default)
            return default
        try:
            value = parse(raw.strip())
        except ConfigurationError:
            raise
        except Exception:
            raise ConfigurationError(f"{self.path}: bad value for [{section}] {key}: {raw!r}")
        self._record(section, key, value)
        return value

    def get_float(self, section, key, default=_REQUIRED) -> float:
        return self._get(section, key, float, default)

    def get_int(self, section, key, default=_REQUIRED) -> int:
        return self._get(section, key, int, default)

    def get_bool(self, section, key, default=_REQUIRED) -> bool:
        def parse(s):
            low = s.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(low)

        return self._get(section, key, parse, default)

    def get_str(self, section, key, default=_REQUIRED, choices=None) -> str:
        value = self._get(section, key, str, default)
        if choices is not None and value is not None and value not in choices:
            raise ConfigurationError(
                f"{self.path}: [{section}] {key} must be one of {', '.join(choices)}"
            )
        return value

    def get_floats(self, section, key, default=_REQUIRED) -> tuple[float, ...]:
        def parse(s):
            return tuple(float(tok) for tok in s.replace(",", " ").split())

        return self._get(section, key, parse, default)

    def get_vec3(self, section, key, default=_REQUIRED):
        value = self.get_floats(section, key, default)
        if value is not None and len(value) != 3:
            raise ConfigurationError(f"{self.path}: [{section}] {key} needs exactly 3 numbers")
        return value

    def section_items(self, section: str) -> list[tuple[str, str]]:
        if not self.cp.has_section(section):
            return []
        items = self.cp.items(section)
        for key, _ in items:
            self._seen.add((section, key))
        return items

    def has_section(self, section: str) -> bool:
        return self.cp.has_section(section)

    def finish(self) -> None:
        """Reject any key the command did not consume (typo protection)."""
        leftovers = [
            f"[{sec}] {key}"
            for sec in self.cp.sections()
            for key in self.cp.options(sec)
            if (sec, key) not in self._seen
        ]
        if leftovers:
            raise ConfigurationError(f"{self.path}: unknown entries: {', '.join(leftovers)}")

    def dump_resolved(self, path) -> None:
        out = configparser.ConfigParser()
        for section, kv in self.resolved.items():
            out[section] = kv
        with open(path, "w") as fh:
            out.write(fh)


def load_config(path) -> Conf:
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (configparser.Error, UnicodeDecodeError) as e:
        raise ConfigurationError(f"cannot parse {path}: {e}")
    return Conf(cp, path=str(path))


# === shared section builders ===


def effective_seed(conf: Conf, override=None) -> int:
    seed = conf.get_int("run", "seed", 0)
    if override is not None:
        seed = int(override)
        conf._record("run", "seed", seed)
    return seed


def build_medium(conf: Conf) -> Medium:
    return Medium(
        rho0=conf.get_float("medium", "rho0"),
        c=conf.get_float("medium", "c"),
        beta=conf.get_float("medium", "beta"),
        delta=conf.get_float("medium", "delta", 0.0),
    )


def build_source(conf: Conf) -> SourceWaveform:
    return SourceWaveform(
        p0=conf.get_float("source", "p0"),
        f0=conf.get_float("source", "f0"),
        kind=conf.get_str("source", "kind", "sine", choices=("sine", "gaussian_pulse")),
        phase=conf.get_float("source", "phase", 0.0),
    )


def build_room(conf: Conf) -> RoomSpec:
    return RoomSpec(
        dims=conf.get_vec3("room", "dims"),
        reflection=conf.get_float("room", "reflection"),
        max_order=conf.get_int("room", "max_order"),
        c=conf.get_float("room", "c", 343.0),
        fs=conf.get_float("room", "fs"),
    )


def build_mic_positions(conf: Conf) -> list[tuple[float, float, float]]:
    """Either a circular [array] (center, radius, n_mics) or explicit [mics]."""
    if conf.has_section("mics"):
        rows = conf.section_items("mics")
        positions = []
        for key, raw in sorted(rows, key=lambda kv: int(kv[0])):
            vals = tuple(float(t) for t in raw.replace(",", " ").split())
            if len(vals) != 3:
                raise ConfigurationError(f"[mics] {key} needs exactly 3 coordinates")
            conf._record("mics", key, vals)
            positions.append(vals)
        if not positions:
            raise ConfigurationError("[mics] section is empty")
        return positions
    center = conf.get_vec3("array", "center")
    radius = conf.get_float("array", "radius")
    n_mics = conf.get_int("array", "n_mics")
    if n_mics < 1 or radius <= 0:
        raise ConfigurationError("[array] needs n_mics >= 1 and radius > 0")
    angles = 2.0 * np.pi * np.arange(n_mics) / n_mics
    return [
        (center[0] + radius * float(np.cos(t)), center[1] + radius * float(np.sin(t)), center[2])
        for t in angles
    ]


def build_scenario(conf: Conf, seed: int) -> ScenarioConfig:
    room = build_room(conf)
    echo_pos = conf.get_vec3("scene", "echo_pos", None)
    return ScenarioConfig(
        room=room,
        source_pos=conf.get_vec3("scene", "source_pos"),
        mic_positions=build_mic_positions(conf),
        noise_kind=conf.get_str("scene", "noise_kind", "white", choices=NOISE_KINDS),
        snr_db=conf.get_float("scene", "snr_db", 10.0),
        seed=seed,
        duration=conf.get_float("scene", "duration", 1.0),
        echo_pos=echo_pos,
        echo_level_db=conf.get_float("scene", "echo_level_db", 0.0),
    )


def build_geometry(scenario: ScenarioConfig) -> MicArrayGeometry:
    return MicArrayGeometry(
        positions=np.asarray(scenario.mic_positions, dtype=np.float64),
        fs=scenario.room.fs,
        c=scenario.room.c,
    )


@dataclass(frozen=True)
class FrontendParams:
    m_bands: int
    hop: int
    aec_taps: int
    mu: float
    steer_deg: float | None  # None = steer from the SRP estimate


def build_frontend(conf: Conf) -> FrontendParams:
    m_bands = conf.get_int("frontend", "m_bands", 64)
    return FrontendParams(
        m_bands=m_bands,
        hop=conf.get_int("frontend", "hop", m_bands // 2),
        aec_taps=conf.get_int("frontend", "aec_taps", 4),
        mu=conf.get_float("frontend", "mu", 0.5),
        steer_deg=conf.get_float("frontend", "steer_deg", None),
    )


@dataclass(frozen=True)
class RlParams:
    budget: int
    horizon: int
    episodes_per_update: int
    epochs: int
    minibatch: int
    hidden: int
    v_hidden: int
    lr: float
    gamma: float
    lam: float
    clip_eps: float
    init_log_std: float
    chunk_seconds: float
    weights: RewardWeights
    init_steer_offset_deg: float
    init_mu: float
    m_bands: int
    aec_taps: int


def build_rl(conf: Conf) -> RlParams:
    return RlParams(
        budget=conf.get_int("rl", "budget", 2048),
        horizon=conf.get_int("rl", "horizon", 16),
        episodes_per_update=conf.get_int("rl", "episodes_per_update", 4),
        epochs=conf.get_int("rl", "epochs", 6),
        minibatch=conf.get_int("rl", "minibatch", 32),
        hidden=conf.get_int("rl", "hidden", 24),
        v_hidden=conf.get_int("rl", "v_hidden", 16),
        lr=conf.get_float("rl", "lr", 8e-3),
        gamma=conf.get_float("rl", "gamma", 0.9),
        lam=conf.get_float("rl", "lam", 0.8),
        clip_eps=conf.get_float("rl", "clip_eps", 0.2),
        init_log_std=conf.get_float("rl", "init_log_std", -0.7),
        chunk_seconds=conf.get_float("rl", "chunk_seconds", 0.2),
        weights=RewardWeights(
            quality=conf.get_float("rl", "w_quality", 0.8),
            latency=conf.get_float("rl", "w_latency", 0.1),
            energy=conf.get_float("rl", "w_energy", 0.1),
        ),
        init_steer_offset_deg=conf.get_float("rl", "init_steer_offset_deg", 30.0),
        init_mu=conf.get_float("rl", "init_mu", 0.0),
        m_bands=conf.get_int("rl", "m_bands", 64),
        aec_taps=conf.get_int("rl", "aec_taps", 4),
    )
