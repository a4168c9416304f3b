"""Run configuration.

Flat `key=value` text files with dot-namespaced keys. Unknown keys are
errors, values are type-checked, and the parsed Config carries every
knob the model, trainer and tracker read. Defaults are the desk-scale
setup: 64x64 search raster, patch 8, width-64 encoder of depth 8.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}

MEMORY_POLICIES = ("uniform", "fifo_every_k")
BIAS_KINDS = ("alibi", "none", "absolute")
DSF_SOURCES = ("final", "sequence", "stage_input")


@dataclass
class Config:
    seed: int = 0

    # rasters and embedding
    image_size: int = 64            # search-region raster side
    template_size: int = 32         # template raster side
    patch: int = 8
    text_dim: int = 16

    # frozen encoder
    backbone_depth: int = 8
    backbone_dim: int = 64
    backbone_heads: int = 4
    backbone_ffn_mult: int = 4

    # memory compression prompt
    mcp_enabled: bool = True
    mcp_n_tokens: int = 16
    mcp_bank_l: int = 50
    mcp_policy: str = "uniform"
    mcp_fifo_k: int = 5
    mcp_bias: str = "alibi"
    mcp_alibi_on_video_index: bool = False
    mcp_ffn_mult: int = 4

    # dynamic state modules
    dsf_enabled: bool = True
    dsf_count: int = 4
    dsf_inner_mult: int = 2         # d_s = inner_mult * backbone_dim
    dsf_state_dim: int = 16
    dsf_conv_width: int = 4
    dsf_dt_rank: int = 0            # 0 -> d_s // 16, floor 1
    dsf_source: str = "final"

    # tracking protocol
    crop_factor_search: float = 4.0
    crop_factor_template: float = 2.0
    track_size_damping: float = 0.5   # new_wh = damp*prev + (1-damp)*pred
    track_scale_clamp: float = 1.35   # per-frame wh change clamped to [1/c, c]

    # training
    train_lr: float = 1e-3
    train_steps: int = 2000
    train_weight_decay: float = 1e-4
    train_clip_search_frames: int = 5
    train_template_gap_max: int = 12
    train_search_gap_max: int = 3
    train_jitter: float = 0.12        # translation jitter, fraction of crop side
    train_scale_jitter: float = 0.25  # log-scale crop jitter
    train_bank_backprop: bool = False
    train_log_every: int = 25

    # synthetic training set
    data_sequences: int = 24
    data_seq_len: int = 40

    def __post_init__(self):
        self.validate()

    # derived sizes ------------------------------------------------------
    @property
    def search_grid(self) -> int:
        return self.image_size // self.patch

    @property
    def n_search_tokens(self) -> int:
        return self.search_grid**2

    @property
    def template_grid(self) -> int:
        return self.template_size // self.patch

    @property
    def n_template_tokens(self) -> int:
        return self.template_grid**2

    @property
    def dsf_inner_dim(self) -> int:
        return self.dsf_inner_mult * self.backbone_dim

    @property
    def dsf_dt_rank_effective(self) -> int:
        return self.dsf_dt_rank if self.dsf_dt_rank > 0 else max(1, self.dsf_inner_dim // 16)

    def validate(self) -> None:
        if self.image_size % self.patch or self.template_size % self.patch:
            raise ConfigError("image_size and template_size must be divisible by patch")
        if self.backbone_dim % self.backbone_heads:
            raise ConfigError("backbone_dim must be divisible by backbone_heads")
        if self.mcp_policy not in MEMORY_POLICIES:
            raise ConfigError(f"mcp.policy must be one of {MEMORY_POLICIES}")
        if self.mcp_bias not in BIAS_KINDS:
            raise ConfigError(f"mcp.bias must be one of {BIAS_KINDS}")
        if self.dsf_source not in DSF_SOURCES:
            raise ConfigError(f"dsf.source must be one of {DSF_SOURCES}")
        if self.mcp_bank_l < 1:
            raise ConfigError("mcp.bank_l must be >= 1")
        if self.mcp_n_tokens < 1:
            raise ConfigError("mcp.n_tokens must be >= 1")
        if self.dsf_count < 0 or (self.dsf_enabled and self.dsf_count < 1):
            raise ConfigError("dsf.count must be >= 1 when dsf is enabled")
        if self.dsf_enabled and self.backbone_depth % self.dsf_count:
            raise ConfigError("backbone.depth must divide evenly into dsf.count stages")


# key-file name -> dataclass field
_KEYMAP = {
    "seed": "seed",
    "image.size": "image_size",
    "image.template_size": "template_size",
    "image.patch": "patch",
    "text.dim": "text_dim",
    "backbone.depth": "backbone_depth",
    "backbone.dim": "backbone_dim",
    "backbone.heads": "backbone_heads",
    "backbone.ffn_mult": "backbone_ffn_mult",
    "mcp.enabled": "mcp_enabled",
    "mcp.n_tokens": "mcp_n_tokens",
    "mcp.bank_l": "mcp_bank_l",
    "mcp.policy": "mcp_policy",
    "mcp.fifo_k": "mcp_fifo_k",
    "mcp.bias": "mcp_bias",
    "mcp.alibi_on_video_index": "mcp_alibi_on_video_index",
    "mcp.ffn_mult": "mcp_ffn_mult",
    "dsf.enabled": "dsf_enabled",
    "dsf.count": "dsf_count",
    "dsf.inner_mult": "dsf_inner_mult",
    "dsf.state_dim": "dsf_state_dim",
    "dsf.conv_width": "dsf_conv_width",
    "dsf.dt_rank": "dsf_dt_rank",
    "dsf.source": "dsf_source",
    "track.crop_factor_search": "crop_factor_search",
    "track.crop_factor_template": "crop_factor_template",
    "track.size_damping": "track_size_damping",
    "track.scale_clamp": "track_scale_clamp",
    "train.lr": "train_lr",
    "train.steps": "train_steps",
    "train.weight_decay": "train_weight_decay",
    "train.clip_search_frames": "train_clip_search_frames",
    "train.template_gap_max": "train_template_gap_max",
    "train.search_gap_max": "train_search_gap_max",
    "train.jitter": "train_jitter",
    "train.scale_jitter": "train_scale_jitter",
    "train.bank_backprop": "train_bank_backprop",
    "train.log_every": "train_log_every",
    "data.sequences": "data_sequences",
    "data.seq_len": "data_seq_len",
}

_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(key: str, fname: str, raw: str):
    ftype = _FIELD_TYPES[fname]
    raw = raw.strip()
    try:
        if ftype == "bool":
            if raw.lower() not in _BOOL:
                raise ValueError(raw)
            return _BOOL[raw.lower()]
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> Config:
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEYMAP:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        overrides[_KEYMAP[key]] = _convert(key, _KEYMAP[key], raw)
    return Config(**overrides)


def load_config(path: str | Path) -> Config:
    return parse_config_text(Path(path).read_text())


def config_to_dict(cfg: Config) -> dict:
    """Flat key=value mapping using the file-format key names."""
    inv = {v: k for k, v in _KEYMAP.items()}
    return {inv[f.name]: getattr(cfg, f.name) for f in fields(cfg)}


def config_from_dict(d: dict) -> Config:
    overrides = {}
    for key, val in d.items():
        if key not in _KEYMAP:
            raise ConfigError(f"unknown key {key!r}")
        overrides[_KEYMAP[key]] = val
    return Config(**overrides)


def dump_config(cfg: Config) -> str:
    lines = [f"{k}={str(v).lower() if isinstance(v, bool) else v}"
             for k, v in config_to_dict(cfg).items()]
    return "\n".join(lines) + "\n"
