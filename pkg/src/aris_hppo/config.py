"""Experiment configuration: flat, sectioned ``key = value`` text files.

Example::

    [channel]
    n_aris = 8
    p_tx_dbm = 15.0

    [agent]
    variant = HPPO_ARIS_TRIS
    encoder_widths = [64, 64]

Values are typed by the schema below. Lists use ``[a, b, ...]``; booleans
are ``true``/``false``; ``none`` marks an unset optional value. Strings are
written bare. ``#`` and ``;`` start comment lines. Unknown sections and keys
are rejected with a ``<source>:<line>:`` prefix.
"""

from __future__ import annotations

import ast
import copy
import hashlib
import re
from dataclasses import dataclass

from ._validation import ConfigError
from .channel import ChannelParams, Topology
from .env import REWARD_DESIGNS, VARIANTS, EnvConfig
from .oracle import OBJECTIVES, SearchGrid


@dataclass(frozen=True)
class Key:
    kind: str                 # int, float, bool, str, int_list, float_list, str_list, matrix
    default: object
    choices: tuple = ()
    optional: bool = False
    min_value: float | None = None


def _k(kind, default, **kw):
    return Key(kind, default, **kw)


SCHEMA = {
    "topology": {
        "bs_positions": _k("matrix", [[0.0, 150.0, 10.0], [150.0, 0.0, 10.0], [-150.0, -150.0, 25.0]]),
        "nu_positions": _k("matrix", [[8.0, 142.0, 1.5], [142.0, 8.0, 1.5], [-110.0, -110.0, 1.5]]),
        "fu_position": _k("float_list", [140.0, 140.0, 1.5]),
        "tris_position": _k("float_list", [-110.0, -104.0, 6.0]),
        "tris_normal": _k("float_list", [0.0, -1.0, 0.0]),
        "area_bounds": _k("float_list", [0.0, 150.0, 0.0, 150.0]),
        "aris_altitude": _k("float", 35.0, min_value=0.0),
        "tris_serves": _k("int", 2, choices=(0, 1, 2)),
    },
    "channel": {
        "carrier_freq_hz": _k("float", 2.4e9, min_value=1.0),
        "bandwidth_hz": _k("float", 10e6, min_value=1.0),
        "noise_psd_dbm_per_hz": _k("float", -174.0),
        "n_aris": _k("int", 8, min_value=1),
        "n_tris": _k("int", 8, min_value=0),
        "p_tx_dbm": _k("float", 15.0),
        "m_aris": _k("float", 3.0, min_value=0.5),
        "m_tris": _k("float", 3.0, min_value=0.5),
        "m_terrestrial": _k("float", 2.0, min_value=0.5),
        "ple_aris": _k("float", 2.2, min_value=2.0),
        "ple_tris": _k("float", 2.2, min_value=2.0),
        "ple_terrestrial": _k("float", 3.5, min_value=2.0),
        "bs_antenna_gain_dbi": _k("float", 15.0),
        "ris_element_gain_db": _k("float", 15.0),
        "coherent_comp": _k("bool", True),
    },
    "env": {
        "horizon": _k("int", 200, min_value=1),
        "step_m": _k("float", 5.0, min_value=1e-9),
        "reward_design": _k("str", "PENALIZED", choices=REWARD_DESIGNS),
        "lambda_oob": _k("float", 0.5, min_value=0.0),
        "lambda_sic": _k("float", 0.5, min_value=0.0),
        "weights": _k("float_list", [0.6, 0.2, 0.2]),
        "p_hover_w": _k("float", 100.0, min_value=0.0),
        "p_move_w": _k("float", 20.0, min_value=0.0),
        "rate_norm": _k("float", None, optional=True, min_value=1e-12),
        "per_element_csi": _k("bool", True),
        "n_envs": _k("int", 8, min_value=1),
    },
    "agent": {
        "variant": _k("str", "HPPO_ARIS_TRIS", choices=VARIANTS),
        "rollout_steps": _k("int", 1024, min_value=1),
        "minibatch_size": _k("int", 64, min_value=1),
        "n_epochs": _k("int", 10, min_value=1),
        "clip_eps": _k("float", 0.2, min_value=1e-9),
        "gamma": _k("float", 0.5, min_value=0.0),
        "gae_lambda": _k("float", 0.5, min_value=0.0),
        "learning_rate": _k("float", 3e-4, min_value=0.0),
        "max_grad_norm": _k("float", 0.5, min_value=1e-12),
        "value_coef": _k("float", 0.5, min_value=0.0),
        "entropy_coef": _k("float", 0.0, min_value=0.0),
        "encoder_widths": _k("int_list", [64, 64]),
        "head_widths": _k("int_list", [64]),
        "critic_widths": _k("int_list", [64, 64]),
        "init_log_std": _k("float", -0.6931471805599453),
        "ma_window": _k("int", 50, min_value=1),
    },
    "oracle": {
        "n_aris": _k("int", 4, min_value=1),
        "n_tris": _k("int", 0, min_value=0),
        "positions_per_axis": _k("int", 5, min_value=1),
        "phase_levels": _k("int", 16, min_value=1),
        "alpha_levels": _k("int", 5, min_value=1),
        "budget": _k("int", 10 ** 8, min_value=1),
        "snapshots": _k("int", 20, min_value=1),
        "snapshot_seed": _k("int", 1000, min_value=0),
        "objective": _k("str", "effective", choices=OBJECTIVES),
    },
    "run": {
        "seeds": _k("int_list", [0, 1, 2, 3, 4]),
        "episodes": _k("int", 2000, min_value=1),
        "eval_episodes": _k("int", 20, min_value=1),
        "output_dir": _k("str", "", ),
    },
    "sweep": {
        "elements": _k("int_list", [2, 4, 6, 8]),
        "element_phase_levels": _k("int", 6, min_value=1),
        "element_methods": _k("str_list", ["HPPO_ARIS_TRIS"], choices=VARIANTS),
        "element_n_tris": _k("int", 0, min_value=0),
        "powers_dbm": _k("float_list", [5.0, 10.0, 15.0, 20.0, 25.0]),
        "designs": _k("str_list", ["SUM", "PENALIZED", "COMPOUND"], choices=REWARD_DESIGNS),
        "episodes": _k("int", 2000, min_value=1),
        "seeds": _k("int_list", [0, 1, 2]),
    },
}

_SECTION_RE = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_]*)\]$")
_KEY_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


def _anchor(source, line):
    return f"{source}:{line}: " if line else f"{source}: "


def _coerce_scalar(kind, value, where):
    if kind == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}expected true or false, got {value!r}")
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}expected a number, got {value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}expected a string, got {value!r}")
        return value
    raise AssertionError(kind)


def coerce(key: Key, value, where=""):
    """Check ``value`` against ``key``'s type, choices and bound; return canonical form."""
    if value is None:
        if key.optional:
            return None
        raise ConfigError(f"{where}a value is required")
    if key.kind in ("int_list", "float_list", "str_list"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}expected a list, got {value!r}")
        out = [_coerce_scalar(key.kind.split("_")[0], v, where) for v in value]
        items = out
    elif key.kind == "matrix":
        if not isinstance(value, (list, tuple)) or not all(isinstance(r, (list, tuple)) for r in value):
            raise ConfigError(f"{where}expected a list of lists, got {value!r}")
        out = [[_coerce_scalar("float", v, where) for v in row] for row in value]
        items = []
    else:
        out = _coerce_scalar(key.kind, value, where)
        items = [out]
    for v in items:
        if key.choices and v not in key.choices:
            raise ConfigError(f"{where}{v!r} is not one of {list(key.choices)}")
        if key.min_value is not None and not isinstance(v, str) and v < key.min_value:
            raise ConfigError(f"{where}value {v!r} is below the minimum {key.min_value}")
    return out


def parse_value(text, key: Key, where=""):
    """Parse the right-hand side of ``key = value`` according to the key's type."""
    text = text.strip()
    if text.lower() == "none":
        return coerce(key, None, where)
    if key.kind == "str":
        return coerce(key, text, where)
    if key.kind == "str_list":
        inner = text.strip()
        if not (inner.startswith("[") and inner.endswith("]")):
            raise ConfigError(f"{where}expected a list like [a, b], got {text!r}")
        body = inner[1:-1].strip()
        items = [s.strip() for s in body.split(",")] if body else []
        return coerce(key, [s.strip("'\"") for s in items], where)
    py = re.sub(r"\btrue\b", "True", re.sub(r"\bfalse\b", "False", text))
    try:
        value = ast.literal_eval(py)
    except (ValueError, SyntaxError):
        raise ConfigError(f"{where}cannot parse value {text!r}") from None
    return coerce(key, value, where)


def format_value(value):
    """Canonical text form; ``parse_value(format_value(v))`` returns ``v``."""
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ExperimentConfig:
    """Typed experiment configuration backed by :data:`SCHEMA`.

    Every key has a default, so an empty file is a valid configuration.
    """

    def __init__(self, values=None):
        self.values = {sec: {k: copy.deepcopy(key.default) for k, key in keys.items()}
                       for sec, keys in SCHEMA.items()}
        for sec, kv in (values or {}).items():
            for k, v in kv.items():
                self.set(sec, k, v)

    # -- access -------------------------------------------------------------
    def __getitem__(self, dotted):
        sec, key = self._split(dotted)
        return self.values[sec][key]

    def get(self, section, key):
        return self.values[section][key]

    def set(self, section, key, value, where=""):
        if section not in SCHEMA:
            raise ConfigError(f"{where}unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"{where}unknown key {key!r} in section [{section}]")
        self.values[section][key] = coerce(SCHEMA[section][key], value, where)

    def copy(self):
        return ExperimentConfig(copy.deepcopy(self.values))

    def replace(self, **dotted):
        """Copy with ``section__key=value`` replacements."""
        cfg = self.copy()
        for name, value in dotted.items():
            sec, key = name.split("__", 1)
            cfg.set(sec, key, value)
        return cfg

    @staticmethod
    def _split(dotted):
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} must look like section.key")
        return dotted.split(".", 1)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    # -- text form ----------------------------------------------------------
    @classmethod
    def from_text(cls, text, source="<config>"):
        cfg = cls()
        section = None
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line[0] in "#;":
                continue
            where = _anchor(source, lineno)
            m = _SECTION_RE.match(line)
            if m:
                section = m.group(1)
                if section not in SCHEMA:
                    raise ConfigError(f"{where}unknown section [{section}]")
                continue
            m = _KEY_RE.match(line)
            if not m:
                raise ConfigError(f"{where}expected 'key = value' or '[section]', got {line!r}")
            if section is None:
                raise ConfigError(f"{where}key {m.group(1)!r} appears before any [section]")
            key = m.group(1)
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}unknown key {key!r} in section [{section}]")
            if (section, key) in seen:
                raise ConfigError(f"{where}duplicate key {key!r} in section [{section}]")
            seen.add((section, key))
            cfg.values[section][key] = parse_value(m.group(2), SCHEMA[section][key], where)
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
        return cls.from_text(text, source=str(path))

    def to_text(self):
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for k in keys:
                lines.append(f"{k} = {format_value(self.values[sec][k])}")
            lines.append("")
        return "\n".join(lines)

    def config_hash(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def apply_overrides(self, overrides):
        """Apply ``section.key=value`` strings (CLI ``--set``)."""
        cfg = self.copy()
        for item in overrides or ():
            where = f"--set {item}: "
            if "=" not in item:
                raise ConfigError(f"{where}expected section.key=value")
            dotted, text = item.split("=", 1)
            sec, key = self._split(dotted.strip())
            if sec not in SCHEMA:
                raise ConfigError(f"{where}unknown section [{sec}]")
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{where}unknown key {key!r} in section [{sec}]")
            cfg.values[sec][key] = parse_value(text, SCHEMA[sec][key], where)
        return cfg

    # -- builders -----------------------------------------------------------
    def topology(self) -> Topology:
        t = self.values["topology"]
        try:
            return Topology(bs_positions=t["bs_positions"], nu_positions=t["nu_positions"],
                            fu_position=t["fu_position"], tris_position=t["tris_position"],
                            tris_normal=t["tris_normal"], area_bounds=tuple(t["area_bounds"]),
                            aris_altitude=t["aris_altitude"], tris_serves=t["tris_serves"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[topology] {exc}") from None

    def channel_params(self, **changes) -> ChannelParams:
        c = dict(self.values["channel"], **changes)
        try:
            return ChannelParams(
                carrier_freq_hz=c["carrier_freq_hz"], bandwidth_hz=c["bandwidth_hz"],
                noise_psd_dbm_per_hz=c["noise_psd_dbm_per_hz"], n_aris=c["n_aris"],
                n_tris=c["n_tris"], p_tx_dbm=c["p_tx_dbm"],
                nakagami_m={"aris": c["m_aris"], "tris": c["m_tris"],
                            "terrestrial": c["m_terrestrial"]},
                path_loss_exponents={"aris": c["ple_aris"], "tris": c["ple_tris"],
                                     "terrestrial": c["ple_terrestrial"]},
                bs_antenna_gain_dbi=c["bs_antenna_gain_dbi"],
                ris_element_gain_db=c["ris_element_gain_db"], coherent_comp=c["coherent_comp"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[channel] {exc}") from None

    def env_config(self, **changes) -> EnvConfig:
        e = dict(self.values["env"])
        variant = changes.pop("variant", self.values["agent"]["variant"])
        e.update(changes)
        try:
            return EnvConfig(horizon=e["horizon"], step_m=e["step_m"],
                             reward_design=e["reward_design"], lambda_oob=e["lambda_oob"],
                             lambda_sic=e["lambda_sic"], weights=tuple(e["weights"]),
                             p_hover_w=e["p_hover_w"], p_move_w=e["p_move_w"],
                             rate_norm=e["rate_norm"], per_element_csi=e["per_element_csi"],
                             variant=variant)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[env] {exc}") from None

    def agent_params(self, episodes=None):
        """Keyword arguments for :class:`aris_hppo.hppo.HPPO` (seed excluded)."""
        a = dict(self.values["agent"])
        a.pop("variant")
        for k in ("encoder_widths", "head_widths", "critic_widths"):
            a[k] = tuple(a[k])
        a["n_episodes"] = self.values["run"]["episodes"] if episodes is None else episodes
        if a["rollout_steps"] % self.values["env"]["n_envs"]:
            raise ConfigError(f"[agent] rollout_steps ({a['rollout_steps']}) must be a multiple "
                              f"of env.n_envs ({self.values['env']['n_envs']})")
        return a

    def search_grid(self) -> SearchGrid:
        o = self.values["oracle"]
        return SearchGrid(positions_per_axis=o["positions_per_axis"],
                          phase_levels=o["phase_levels"], alpha_levels=o["alpha_levels"],
                          budget=o["budget"])

    def validate(self):
        """Build every component once so domain errors surface before any work starts."""
        self.topology().validate()
        self.channel_params()
        self.env_config()
        self.agent_params()
        self.search_grid()
        return self


def load_config(path=None, overrides=()):
    """Load ``path`` (or the packaged reference config) and apply overrides."""
    if path is None:
        from importlib import resources
        text = resources.files("aris_hppo").joinpath("configs/reference.cfg").read_text("utf-8")
        cfg = ExperimentConfig.from_text(text, source="reference.cfg")
    else:
        cfg = ExperimentConfig.from_file(path)
    return cfg.apply_overrides(overrides).validate()
