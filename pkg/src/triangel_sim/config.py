"""Run configuration: a flat, ordered ``key = value`` mapping.

Sources are layered defaults < config file < command-line overrides.  Values
are coerced to the type of the key's default.  Keys whose default is
``"auto"`` are filled in per engine kind by :meth:`RunConfig.resolved`.

File format: one ``key = value`` per line; ``#`` starts a comment.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .engine import ENGINE_KINDS, SIZER_KINDS


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


ABLATIONS = ("lookahead", "base_conf", "scs", "mrb", "dueller", "reuse_conf", "high_conf")

DEFAULTS = {
    "engine.kind": "triangel",
    "engine.max_degree": "auto",
    "engine.mrb_enabled": "auto",
    "engine.train_on_stores": True,
    "engine.prefetch_fill_l3": True,
    "l2.size": 512 * 1024,
    "l2.ways": 8,
    "l2.replacement": "lru",
    "l3.size": 2 * 1024 * 1024,
    "l3.ways": 16,
    "l3.reserved_ways_max": 8,
    "replacement": "srrip",
    "markov.entry_format": "auto",
    "markov.lut_entries": 1024,
    "markov.lut_ways": 16,
    "markov.lut_offset_bits": 11,
    "tables.training_entries": 512,
    "tables.training_ways": 16,
    "tables.sampler_entries": 512,
    "tables.sampler_ways": 2,
    "tables.scs_entries": 64,
    "tables.mrb_entries": 256,
    "tables.mrb_ways": 2,
    "thresholds.base_up": 1,
    "thresholds.base_down": 2,
    "thresholds.high_up": 1,
    "thresholds.high_down": 5,
    "scs.window": 512,
    "scs.clock": "training",
    "max_size": 196608,
    "sizer.kind": "auto",
    "sizer.fixed_ways": 8,
    "sizer.initial_ways": "auto",
    "dueller.window": 500000,
    "dueller.bias": 2.0,
    "dueller.sets": 64,
    "dueller.subsample": 12,
    "bloom.bias": "auto",
    "bloom.window": 30_000_000,
    "bloom.fp_rate": 0.05,
    "bloom.expected": 0,
    **{f"ablate.{a}": False for a in ABLATIONS},
    "seed": 1,
    "stats.warmup": 0,
    "debug.shadow_markov": False,
    "debug.force_lookahead": False,
    "trace": "",
    "trace.format": "auto",
    "synthetic": "",
}

# types for keys whose default is "auto"
AUTO_TYPES = {
    "engine.max_degree": int,
    "engine.mrb_enabled": bool,
    "markov.entry_format": str,
    "sizer.kind": str,
    "sizer.initial_ways": int,
    "bloom.bias": float,
}

CHOICES = {
    "engine.kind": ENGINE_KINDS,
    "sizer.kind": SIZER_KINDS,
    "markov.entry_format": ("triangel42", "triage32"),
    "l2.replacement": ("lru", "srrip", "fifo"),
    "replacement": ("lru", "srrip", "fifo"),
    "scs.clock": ("training", "fills"),
    "trace.format": ("auto", "text", "binary"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, value, kind):
    if kind is bool:
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in _TRUE:
            return True
        if s in _FALSE:
            return False
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if kind is int:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        if isinstance(value, int):
            return value
        s = str(value).strip().replace("_", "")
        try:
            return int(s, 0)
        except ValueError:
            pass
        try:
            f = float(s)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got {value!r}") from None
        if f != int(f):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(f)
    if kind is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    return str(value).strip()


def coerce_value(key, value):
    if key not in DEFAULTS:
        raise ConfigError(key, "unknown configuration key")
    default = DEFAULTS[key]
    if default == "auto" and str(value).strip().lower() == "auto":
        return "auto"
    kind = AUTO_TYPES.get(key, type(default))
    v = _coerce(key, value, kind)
    if key in CHOICES and v not in CHOICES[key]:
        raise ConfigError(key, f"must be one of {', '.join(CHOICES[key])}; got {v!r}")
    return v


def parse_config_text(text, source="<config>"):
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{n}", f"expected key = value, got {raw.strip()!r}")
        key = key.strip()
        out[key] = coerce_value(key, value.strip())
    return out


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def build(cls, file_text=None, overrides=None, base=None):
        """defaults < base < file < overrides."""
        values = dict(DEFAULTS)
        if base:
            values.update({k: coerce_value(k, v) for k, v in base.items()})
        if file_text:
            values.update(parse_config_text(file_text))
        for k, v in (overrides or {}).items():
            values[k] = coerce_value(k, v)
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides=None):
        with open(path) as f:
            return cls.build(f.read(), overrides)

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **kv):
        return RunConfig.build(overrides={k.replace("__", "."): v for k, v in kv.items()},
                               base=self.values)

    def replace(self, overrides):
        return RunConfig.build(overrides=overrides, base=self.values)

    def to_dict(self):
        return {k: self.values[k] for k in DEFAULTS}

    def to_text(self):
        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            return str(v)
        return "".join(f"{k} = {fmt(v)}\n" for k, v in self.to_dict().items())

    def validate(self):
        v = self.values
        for k in ("l2.size", "l2.ways", "l3.size", "l3.ways", "tables.training_entries",
                  "tables.sampler_entries", "tables.scs_entries", "tables.mrb_entries",
                  "scs.window", "dueller.window", "bloom.window", "dueller.sets",
                  "dueller.subsample", "markov.lut_entries", "markov.lut_ways"):
            if v[k] < 1:
                raise ConfigError(k, "must be >= 1")
        for k in ("stats.warmup", "max_size", "sizer.fixed_ways", "bloom.expected"):
            if v[k] < 0:
                raise ConfigError(k, "must be >= 0")
        if not 0 <= v["l3.reserved_ways_max"] <= min(8, v["l3.ways"] // 2):
            raise ConfigError("l3.reserved_ways_max", "must be in [0, min(8, l3.ways/2)]")
        if v["sizer.fixed_ways"] > v["l3.reserved_ways_max"]:
            raise ConfigError("sizer.fixed_ways", "exceeds l3.reserved_ways_max")
        if v["dueller.bias"] <= 0:
            raise ConfigError("dueller.bias", "must be > 0")
        if not 0 < v["bloom.fp_rate"] < 1:
            raise ConfigError("bloom.fp_rate", "must be in (0, 1)")
        md = v["engine.max_degree"]
        if md != "auto" and not 1 <= md <= 4:
            raise ConfigError("engine.max_degree", "must be in [1, 4]")
        iw = v["sizer.initial_ways"]
        if iw != "auto" and not 0 <= iw <= v["l3.reserved_ways_max"]:
            raise ConfigError("sizer.initial_ways", "must be in [0, l3.reserved_ways_max]")
        if not 1 <= v["markov.lut_offset_bits"] <= 20:
            raise ConfigError("markov.lut_offset_bits", "must be in [1, 20]")
        for k in ("thresholds.base_up", "thresholds.base_down",
                  "thresholds.high_up", "thresholds.high_down"):
            if not 0 <= v[k] <= 15:
                raise ConfigError(k, "must be in [0, 15]")

    def resolved(self):
        """Copy with every ``auto`` value filled in for the engine kind."""
        v = dict(self.values)
        kind = v["engine.kind"]
        triage = kind.startswith("triage_")

        def fill(key, value):
            if v[key] == "auto":
                v[key] = value

        fill("markov.entry_format", "triage32" if triage else "triangel42")
        if triage:
            fill("sizer.kind", "bloom")
            fill("bloom.bias", 1.0)
        elif v["ablate.dueller"] or kind == "triangel_bloom":
            fill("sizer.kind", "bloom")
            fill("bloom.bias", 1.5)
        else:
            fill("sizer.kind", "dueller")
            fill("bloom.bias", 1.5)
        fill("engine.max_degree", 1 if kind == "triage_deg1" else 4)
        fill("engine.mrb_enabled", not triage and not v["ablate.mrb"])
        if v["ablate.mrb"]:
            v["engine.mrb_enabled"] = False
        sizer = v["sizer.kind"]
        fill("sizer.initial_ways",
             {"dueller": v["l3.reserved_ways_max"], "bloom": 0}.get(sizer, v["sizer.fixed_ways"]))
        return RunConfig(v)

    def flagged(self):
        """Names of active ablations."""
        return [a for a in ABLATIONS if self.values[f"ablate.{a}"]]
