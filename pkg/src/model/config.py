"""
Model Configuration - Hyperparameters of the SSD-Net architecture.
"""

from dataclasses import asdict, dataclass, fields

from src.core.errors import ConfigError

ATTENTION_MODES = ("adaptive", "dense", "sparse")


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture hyperparameters.

    width is the feature channel count C; cascade_depth is the number N of
    PFDB+BFCB pairs; ast_depth is the number M of transformer blocks inside
    each PFDB.
    """

    width: int = 32
    cascade_depth: int = 4
    ast_depth: int = 4
    heads: int = 2
    attn_eps: float = 1e-6
    gate_scale_init: float = 0.0
    fuse_weight_init: float = 0.5
    temperature_init: float = 1.0
    attention_mode: str = "adaptive"
    use_bfcb: bool = True
    ffn_expansion: int = 2
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.width < 1 or self.cascade_depth < 1 or self.ast_depth < 1 or self.heads < 1:
            raise ConfigError("width, cascade_depth, ast_depth and heads must be >= 1")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} is not divisible by heads {self.heads}")
        if self.attn_eps <= 0 or self.norm_eps <= 0:
            raise ConfigError("attn_eps and norm_eps must be > 0")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}")
        if self.ffn_expansion < 1:
            raise ConfigError("ffn_expansion must be >= 1")

    @property
    def squeeze_width(self) -> int:
        """Hidden width of the channel-attention excitation."""
        return max(1, self.width // 4)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)
