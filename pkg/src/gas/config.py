"""Plain `key = value` run configuration with sections.

The file format is INI-like: `[section]` headers, one `key = value` per
line, `#` comments. Unknown sections or keys are rejected, values are
type-checked and range-checked, and parse -> serialize -> parse is the
identity on the parsed form.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass

from gas.agent import SUBGOAL_STRATEGIES


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_tuple(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in s.split(",") if part.strip())
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from e


def _parse_optional_float(s: str) -> float | None:
    return None if s.strip().lower() == "none" else float(s)


def _parse_optional_int(s: str) -> int | None:
    return None if s.strip().lower() == "none" else int(s)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class RunConfig:
    # [data]
    maze: str = "builtin:two_room_wide"
    env: str = "point"
    style: str = "stitch"
    n_transitions: int = 80_000
    data_seed: int = 0
    # [tdr]
    latent_dim: int = 32
    tdr_hidden: tuple[int, ...] = (64, 64, 64)
    tdr_expectile: float = 0.99
    tdr_gamma: float = 0.99
    tdr_lr: float = 3e-4
    tdr_steps: int = 25_000
    tdr_batch: int = 256
    tdr_seed: int = 0
    # [graph]
    h_td: float = 8.0
    te_thresh: float | None = 0.9
    node_method: str = "gas"
    kmeans_iters: int = 25
    graph_seed: int = 0
    # [agent]
    agent_hidden: tuple[int, ...] = (64, 64, 64)
    agent_expectile: float = 0.7
    agent_gamma: float = 0.99
    alpha: float = 1.0
    agent_lr: float = 3e-4
    agent_steps: int = 30_000
    agent_batch: int = 256
    agent_seed: int = 0
    subgoal_sampling: str = "td"
    step_c: int | None = None
    a_max: float = 1.0
    # [eval]
    eval_goals: int = 5
    rollouts: int = 20
    eval_seeds: tuple[int, ...] = (0, 1)
    max_steps: int | None = None
    epsilon: float = 0.5
    stochastic: bool = False
    # [run]
    out_dir: str = "runs/latest"

    def validate(self) -> None:
        checks = [
            (self.env in ("point", "grid"), "data.env must be point or grid"),
            (self.style in ("navigate", "stitch", "explore"), "data.style is unknown"),
            (self.n_transitions > 0, "data.n_transitions must be positive"),
            (self.latent_dim >= 2, "tdr.latent_dim must be at least 2"),
            (len(self.tdr_hidden) >= 1, "tdr.hidden must name at least one layer"),
            (0.0 < self.tdr_expectile < 1.0, "tdr.expectile must lie in (0, 1)"),
            (0.0 < self.tdr_gamma < 1.0, "tdr.gamma must lie in (0, 1)"),
            (self.tdr_lr > 0, "tdr.lr must be positive"),
            (self.tdr_steps > 0, "tdr.steps must be positive"),
            (self.tdr_batch > 0, "tdr.batch must be positive"),
            (self.h_td > 0, "graph.h_td must be positive"),
            (self.te_thresh is None or 0.0 <= self.te_thresh <= 1.0,
             "graph.te_thresh must lie in [0, 1] or be none"),
            (self.node_method in ("gas", "fps", "kmeans"), "graph.node_method is unknown"),
            (self.kmeans_iters > 0, "graph.kmeans_iters must be positive"),
            (0.0 < self.agent_expectile < 1.0, "agent.expectile must lie in (0, 1)"),
            (0.0 < self.agent_gamma < 1.0, "agent.gamma must lie in (0, 1)"),
            (self.alpha >= 0.0, "agent.alpha must be non-negative"),
            (self.agent_lr > 0, "agent.lr must be positive"),
            (self.agent_steps > 0, "agent.steps must be positive"),
            (self.agent_batch > 0, "agent.batch must be positive"),
            (self.subgoal_sampling in SUBGOAL_STRATEGIES, "agent.subgoal_sampling is unknown"),
            (self.step_c is None or self.step_c >= 0, "agent.step_c must be non-negative"),
            (self.a_max > 0, "agent.a_max must be positive"),
            (self.eval_goals > 0, "eval.goals must be positive"),
            (self.rollouts > 0, "eval.rollouts must be positive"),
            (len(self.eval_seeds) > 0, "eval.seeds must name at least one seed"),
            (self.max_steps is None or self.max_steps >= 0, "eval.max_steps must be non-negative"),
            (self.epsilon > 0, "eval.epsilon must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)


_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "data": {
        "maze": ("maze", str),
        "env": ("env", str),
        "style": ("style", str),
        "n_transitions": ("n_transitions", int),
        "seed": ("data_seed", int),
    },
    "tdr": {
        "latent_dim": ("latent_dim", int),
        "hidden": ("tdr_hidden", _parse_int_tuple),
        "expectile": ("tdr_expectile", float),
        "gamma": ("tdr_gamma", float),
        "lr": ("tdr_lr", float),
        "steps": ("tdr_steps", int),
        "batch": ("tdr_batch", int),
        "seed": ("tdr_seed", int),
    },
    "graph": {
        "h_td": ("h_td", float),
        "te_thresh": ("te_thresh", _parse_optional_float),
        "node_method": ("node_method", str),
        "kmeans_iters": ("kmeans_iters", int),
        "seed": ("graph_seed", int),
    },
    "agent": {
        "hidden": ("agent_hidden", _parse_int_tuple),
        "expectile": ("agent_expectile", float),
        "gamma": ("agent_gamma", float),
        "alpha": ("alpha", float),
        "lr": ("agent_lr", float),
        "steps": ("agent_steps", int),
        "batch": ("agent_batch", int),
        "seed": ("agent_seed", int),
        "subgoal_sampling": ("subgoal_sampling", str),
        "step_c": ("step_c", _parse_optional_int),
        "a_max": ("a_max", float),
    },
    "eval": {
        "goals": ("eval_goals", int),
        "rollouts": ("rollouts", int),
        "seeds": ("eval_seeds", _parse_int_tuple),
        "max_steps": ("max_steps", _parse_optional_int),
        "epsilon": ("epsilon", float),
        "stochastic": ("stochastic", _parse_bool),
    },
    "run": {
        "out_dir": ("out_dir", str),
    },
}

_FIELD_TO_SECTION_KEY = {
    attr: (section, key)
    for section, keys in _SCHEMA.items()
    for key, (attr, _) in keys.items()
}


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax error: {e}") from e
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            attr, convert = _SCHEMA[section][key]
            try:
                value = convert(raw)
            except ConfigError:
                raise
            except ValueError as e:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from e
            setattr(cfg, attr, value)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (attr, _) in keys.items():
            lines.append(f"{key} = {_fmt(getattr(cfg, attr))}")
        lines.append("")
    return "\n".join(lines)


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(config_to_text(cfg))


def config_section_dict(cfg: RunConfig, *sections: str) -> dict:
    """Plain dict of the chosen sections, used for stage hashing."""
    out = {}
    for section in sections:
        for key, (attr, _) in _SCHEMA[section].items():
            out[f"{section}.{key}"] = getattr(cfg, attr)
    return out
