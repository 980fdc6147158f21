"""Experiment configuration: flat key = value files with includes.

One config names a domain, a method, corpus sizes, a sample budget, and
hyperparameter overrides; unset fields resolve to desk-scale defaults
that keep the reference ratios (sample budgets, expert-mixing schedule,
discount) while shrinking hidden sizes and corpus counts. The file
format is deliberately flat so experiment provenance diffs line by line.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

__all__ = ["DOMAINS", "DOMAIN_METHODS", "METHODS", "ExperimentConfig",
           "read_config_file", "parse_value"]

DOMAINS = ("shapes", "strings", "nav")

DOMAIN_METHODS = {
    "shapes": ("l3", "l3-oracle-descriptions", "multitask", "meta",
               "meta-joint"),
    "strings": ("l3", "l3-oracle-descriptions", "l3-oracle-engine",
                "multitask", "meta", "meta-joint", "identity"),
    "nav": ("l3", "l3-oracle-descriptions", "rl-multitask", "rl-scratch"),
}
METHODS = tuple(sorted({m for ms in DOMAIN_METHODS.values() for m in ms}))

# unset (None) fields take these per-domain values on resolve()
_DOMAIN_DEFAULTS = {
    "shapes": dict(n_lang=2000, n_val=200, n_test=200, k=10, hidden=64,
                   emb=16, interp_steps=600, proposal_steps=600,
                   interp_step_size=0.002, proposal_step_size=0.002,
                   refit_steps=10),
    "strings": dict(n_lang=1000, n_val=200, n_test=200, k=100, hidden=64,
                    emb=32, interp_steps=800, proposal_steps=800,
                    interp_step_size=0.002, proposal_step_size=0.002,
                    refit_steps=100),
    "nav": dict(n_lang=100, n_val=0, n_test=20, k=100, hidden=64, emb=16,
                interp_steps=0, proposal_steps=0, interp_step_size=0.001,
                proposal_step_size=0.005, refit_steps=0),
}


@dataclass
class ExperimentConfig:
    """Everything one run needs; (config, seed) determines all outputs."""

    domain: str = "strings"
    method: str = "l3"
    seed: int = 0
    # corpus
    n_lang: int | None = None
    n_val: int | None = None
    n_test: int | None = None
    annotation_mode: str = "natural"
    identity_target: float = 0.18
    shared_fraction: float = 0.5
    augment_factor: int = 1
    # concept phase
    k: int | None = None
    temperature: float = 1.0
    # model sizes
    hidden: int | None = None
    emb: int | None = None
    conv1: int = 8
    conv2: int = 16
    fc: int = 64
    nav_conv: int = 16
    nav_fc: int = 64
    max_desc_len: int = 12
    # supervised training
    interp_steps: int | None = None
    proposal_steps: int | None = None
    interp_step_size: float | None = None
    proposal_step_size: float | None = None
    batch_tasks: int = 20
    checkpoint_grid: str = "1.0"
    val_budget: int = 40
    val_k: int = 10
    refit_steps: int | None = None
    refit_step_size: float = 0.01
    aux_weight: float = 1.0
    # navigation
    grid_size: int = 6
    water_p: float = 0.18
    step_cap: int = 50
    map_budget: int = 1000
    nav_epochs: int = 10
    nav_episodes_per_task: int = 4
    nav_steps_per_epoch: int = 120
    nav_batch_rows: int = 512
    nav_step_size: float = 0.001
    nav_prior_steps: int = 400
    nav_prior_step_size: float = 0.005
    expert_decay: float = 0.95
    episode_budget: int = 1000
    metric_episodes: int = 40
    finetune_batches: int = 10
    finetune_batch_episodes: int = 100
    finetune_step_size: float = 0.001
    gamma: float = 0.9

    # --- construction -------------------------------------------------------
    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = _coerce(key, raw, known[key].type)
        return cls(**out)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_mapping(read_config_file(path))

    # --- resolution -----------------------------------------------------------
    def resolve(self) -> "ExperimentConfig":
        """Fill unset fields from domain defaults and validate everything."""
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}; "
                              f"expected one of {DOMAINS}")
        if self.method not in DOMAIN_METHODS[self.domain]:
            raise ConfigError(
                f"method {self.method!r} is not defined for domain "
                f"{self.domain!r}; valid: {DOMAIN_METHODS[self.domain]}")
        updates = {key: val for key, val in _DOMAIN_DEFAULTS[self.domain].items()
                   if getattr(self, key) is None}
        cfg = replace(self, **updates)
        if cfg.annotation_mode not in ("natural", "formal"):
            raise ConfigError(f"bad annotation_mode {cfg.annotation_mode!r}")
        if cfg.annotation_mode == "formal" and cfg.domain != "strings":
            raise ConfigError("formal annotations exist only for strings")
        if cfg.method == "l3-oracle-engine" and cfg.annotation_mode != "formal":
            raise ConfigError("the oracle engine executes formal annotations; "
                              "set annotation_mode = formal")
        if cfg.k < 1:
            raise ConfigError("sample budget k must be >= 1")
        if cfg.n_lang < 1:
            raise ConfigError("n_lang must be >= 1")
        if min(cfg.n_val, cfg.n_test) < 0:
            raise ConfigError("split sizes must be >= 0")
        if cfg.domain == "nav" and cfg.n_val != 0:
            raise ConfigError("nav has no validation split; set n_val = 0")
        if cfg.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0 <= cfg.shared_fraction <= 1:
            raise ConfigError("shared_fraction must lie in [0, 1]")
        for frac in cfg.grid_fractions():
            if not 0 < frac <= 1:
                raise ConfigError(f"checkpoint fraction {frac} outside (0, 1]")
        return cfg

    def grid_fractions(self) -> tuple[float, ...]:
        try:
            return tuple(float(p) for p in str(self.checkpoint_grid).split(","))
        except ValueError as e:
            raise ConfigError(f"bad checkpoint_grid "
                              f"{self.checkpoint_grid!r}: {e}") from e

    # --- factories (resolved configs only) -------------------------------------
    def adapter(self):
        if self.domain == "shapes":
            from .shapes.model import ShapesAdapter
            return ShapesAdapter(hidden=self.hidden, emb=self.emb,
                                 conv1=self.conv1, conv2=self.conv2,
                                 fc=self.fc, max_desc_len=self.max_desc_len)
        if self.domain == "strings":
            from .strings.model import StringsAdapter
            return StringsAdapter(hidden=self.hidden, emb=self.emb,
                                  max_desc_len=self.max_desc_len)
        from .nav.model import NavAdapter
        return NavAdapter(hidden=self.hidden, emb=self.emb,
                          conv=self.nav_conv, fc=self.nav_fc,
                          max_desc_len=self.max_desc_len,
                          episode_budget=self.episode_budget,
                          metric_episodes=self.metric_episodes)

    def train_config(self):
        if self.domain == "nav":
            from .nav.model import NavTrainConfig
            return NavTrainConfig(
                epochs=self.nav_epochs,
                episodes_per_task=self.nav_episodes_per_task,
                steps_per_epoch=self.nav_steps_per_epoch,
                batch_rows=self.nav_batch_rows, step_size=self.nav_step_size,
                expert_decay=self.expert_decay,
                prior_steps=self.nav_prior_steps,
                prior_step_size=self.nav_prior_step_size)
        from .protocol import TrainConfig
        return TrainConfig(
            interp_steps=self.interp_steps,
            proposal_steps=self.proposal_steps,
            interp_step_size=self.interp_step_size,
            proposal_step_size=self.proposal_step_size,
            batch_tasks=self.batch_tasks,
            checkpoint_grid=self.grid_fractions(),
            val_budget=self.val_budget, val_k=self.val_k,
            refit_steps=self.refit_steps,
            refit_step_size=self.refit_step_size,
            temperature=self.temperature, aux_weight=self.aux_weight)

    def finetune_config(self):
        from .nav.model import FinetuneConfig
        return FinetuneConfig(batches=self.finetune_batches,
                              batch_episodes=self.finetune_batch_episodes,
                              step_size=self.finetune_step_size,
                              gamma=self.gamma)

    def corpus_config(self):
        if self.domain == "shapes":
            from .shapes.scenes import ShapeCorpusConfig
            return ShapeCorpusConfig(
                n_lang=self.n_lang, n_val=self.n_val, n_test=self.n_test,
                shared_concept_fraction=self.shared_fraction)
        if self.domain == "strings":
            from .strings.corpus import StringCorpusConfig
            return StringCorpusConfig(
                n_lang=self.n_lang, n_val=self.n_val, n_test=self.n_test,
                annotation_mode=self.annotation_mode,
                identity_target=self.identity_target,
                shared_rule_fraction=self.shared_fraction)
        from .nav.world import NavCorpusConfig
        return NavCorpusConfig(n_lang=self.n_lang, n_eval=self.n_test,
                               size=self.grid_size, water_p=self.water_p,
                               step_cap=self.step_cap,
                               map_budget=self.map_budget)

    # --- provenance ---------------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"{key} = {val}" for key, val in asdict(self).items()
                 if val is not None]
        return "\n".join(lines) + "\n"


def parse_value(raw):
    """Scalar coercion for file values: bool, int, float, then string."""
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    if s.lower() in ("true", "false"):
        return s.lower() == "true"
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            continue
    return s


def _coerce(key: str, raw, annotation: object):
    val = parse_value(raw)
    ann = str(annotation)
    if "str" in ann and not ("int" in ann or "float" in ann):
        return str(val)
    if isinstance(val, bool):
        raise ConfigError(f"key {key!r}: expected a number, got {val!r}")
    if "float" in ann and isinstance(val, int):
        return float(val)
    if "int" in ann and isinstance(val, float):
        raise ConfigError(f"key {key!r} must be an integer, got {val!r}")
    if isinstance(val, str) and ("int" in ann or "float" in ann):
        raise ConfigError(f"key {key!r} must be numeric, got {val!r}")
    return val


def read_config_file(path: str | Path, _stack: tuple = ()) -> dict:
    """Flat key = value lines; '#' comments; 'include = file' splices the
    referenced file's keys first (relative paths resolve against the
    including file), so later lines override included values."""
    p = Path(path)
    rp = p.resolve()
    if rp in _stack:
        chain = " -> ".join(str(s) for s in _stack + (rp,))
        raise ConfigError(f"include cycle: {chain}")
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from e
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', "
                              f"got {body!r}")
        key, _, raw = body.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not key:
            raise ConfigError(f"{p}:{lineno}: empty key")
        if key == "include":
            out.update(read_config_file(p.parent / raw, _stack + (rp,)))
        else:
            out[key] = raw
    return out
