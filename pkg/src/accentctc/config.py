"""`key = value` configuration files with dotted nesting.

Lines look like `model.d_model = 64`; `#` starts a comment. Flag overrides
win over file values, and every run echoes its fully resolved mapping to
`config.resolved` so it can be replayed bit-for-bit.
"""

from __future__ import annotations

from .errors import ConfigError
from .model import ModelConfig


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def format_config(cfg: dict) -> str:
    return "\n".join(f"{k} = {cfg[k]}" for k in sorted(cfg)) + "\n"


def get_typed(cfg: dict, key: str, kind, default=None):
    if key not in cfg:
        if default is None and key not in cfg:
            raise ConfigError(f"missing configuration key {key!r}")
        return default
    raw = cfg[key]
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"configuration key {key!r} has bad value {raw!r}") from None


def model_config_to_dict(cfg: ModelConfig, prefix: str = "model.") -> dict[str, str]:
    return {
        prefix + "conv_layers": ",".join(f"{c}:{k}:{s}" for c, k, s in cfg.conv_layers),
        prefix + "d_encoder": str(cfg.d_encoder),
        prefix + "d_model": str(cfg.d_model),
        prefix + "n_layers": str(cfg.n_layers),
        prefix + "n_heads": str(cfg.n_heads),
        prefix + "d_ffn": str(cfg.d_ffn),
        prefix + "vocab_size": str(cfg.vocab_size),
        prefix + "n_accents": str(cfg.n_accents),
        prefix + "gate_threshold": repr(cfg.gate_threshold),
        prefix + "dropout": repr(cfg.dropout),
        prefix + "layerdrop": repr(cfg.layerdrop),
        prefix + "accent_mode": cfg.accent_mode,
        prefix + "injection_sites": ",".join(cfg.injection_sites),
        prefix + "combine_mode": cfg.combine_mode,
        prefix + "accent_head_pooling": cfg.accent_head_pooling,
        prefix + "sdc_weight": repr(cfg.sdc_weight),
        prefix + "per_accent_output_heads": str(cfg.per_accent_output_heads).lower(),
    }


def model_config_from_dict(cfg: dict, prefix: str = "model.") -> ModelConfig:
    def key(name):
        return prefix + name

    defaults = ModelConfig()
    conv_raw = cfg.get(key("conv_layers"))
    if conv_raw is None:
        conv_layers = defaults.conv_layers
    else:
        try:
            conv_layers = tuple(tuple(int(x) for x in part.split(":")) for part in conv_raw.split(","))
        except ValueError:
            raise ConfigError(f"bad conv_layers value {conv_raw!r}") from None
        if any(len(layer) != 3 for layer in conv_layers):
            raise ConfigError(f"conv_layers entries need channels:kernel:stride, got {conv_raw!r}")
    sites_raw = cfg.get(key("injection_sites"))
    if sites_raw is None:
        sites = defaults.injection_sites
    else:
        sites = tuple(s for s in sites_raw.split(",") if s)
    return ModelConfig(
        conv_layers=conv_layers,
        d_encoder=get_typed(cfg, key("d_encoder"), int, conv_layers[-1][0]),
        d_model=get_typed(cfg, key("d_model"), int, defaults.d_model),
        n_layers=get_typed(cfg, key("n_layers"), int, defaults.n_layers),
        n_heads=get_typed(cfg, key("n_heads"), int, defaults.n_heads),
        d_ffn=get_typed(cfg, key("d_ffn"), int, defaults.d_ffn),
        vocab_size=get_typed(cfg, key("vocab_size"), int, defaults.vocab_size),
        n_accents=get_typed(cfg, key("n_accents"), int, defaults.n_accents),
        gate_threshold=get_typed(cfg, key("gate_threshold"), float, defaults.gate_threshold),
        dropout=get_typed(cfg, key("dropout"), float, defaults.dropout),
        layerdrop=get_typed(cfg, key("layerdrop"), float, defaults.layerdrop),
        accent_mode=cfg.get(key("accent_mode"), defaults.accent_mode),
        injection_sites=sites,
        combine_mode=cfg.get(key("combine_mode"), defaults.combine_mode),
        accent_head_pooling=cfg.get(key("accent_head_pooling"), defaults.accent_head_pooling),
        sdc_weight=get_typed(cfg, key("sdc_weight"), float, defaults.sdc_weight),
        per_accent_output_heads=get_typed(cfg, key("per_accent_output_heads"), bool, defaults.per_accent_output_heads),
    )
