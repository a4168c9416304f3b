"""memtrack: memory-prompted, state-fused multi-modal visual tracking.

A frozen encoder tracker augmented by two trainable mechanisms: a
memory-aware compression prompt (learned queries over a bounded bank of
historical search-region features, with frame-level linear position
bias) and dynamic-state fusion (per-stage gated state-space recurrences
spliced into the backbone through zero-initialized cross-attention).
Includes a synthetic multi-modal benchmark harness, a
parameter-efficient trainer and numerical verifiers for the two
closed-form behavior bounds.
"""

from .config import Config, load_config, parse_config_text
from .kernels import BACKEND as KERNEL_BACKEND
from .model import TrackerModel

__version__ = "0.1.0"
__all__ = ["Config", "load_config", "parse_config_text", "TrackerModel",
           "KERNEL_BACKEND", "__version__"]
