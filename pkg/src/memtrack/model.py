"""Full tracker assembly and the per-frame forward/backward orchestration.

Owns the parameter store with its two partitions: the frozen one
(backbone, patch projection, positional and type tables) and the
trainable one (memory compressor, dynamic-state modules, heads, text
stub). The per-frame backward threads gradients from the loss through
the frozen stack into the prompt tokens, fusion adapters and, when
enabled, the memory bank features of earlier frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone
from .config import Config
from .dynamic_state import DsfModule, DsfState
from .embedding import SEG_SEARCH, Embedder, TokenSequence
from .heads import PredictionHeads
from .memory_prompt import McpModule, MemoryBank
from .params import ParamStore, Scope
from .rng import make_rng


@dataclass
class FrameForward:
    seq: TokenSequence
    search_idx: np.ndarray
    o: np.ndarray
    o_s: np.ndarray
    raw: dict
    caches: dict
    hooks: list | None
    mem_spans: list[tuple[int, int, int]]  # (frame_index, start, end) rows of f_m
    is_boot: bool


@dataclass
class FrameBackward:
    bank_feature_grads: dict[int, np.ndarray] = field(default_factory=dict)
    df_per_module: list = field(default_factory=list)


class TrackerModel:
    def __init__(self, cfg: Config, init_seed: int | None = None):
        self.cfg = cfg
        seed = cfg.seed if init_seed is None else init_seed
        self.store = ParamStore()

        # one stream per module family: toggling a module on or off must not
        # shift the initialization of any other module
        def scope(prefix: str, trainable: bool) -> Scope:
            return Scope(self.store, prefix, trainable, make_rng(seed, f"init:{prefix}"))

        emb_frozen = scope("embed", False)
        emb_train = Scope(self.store, "embed", True, make_rng(seed, "init:embed-text"))
        self.embedder = Embedder(emb_frozen, emb_train, cfg)
        self.backbone = Backbone(scope("backbone", False), cfg)
        self.mcp = McpModule(scope("mcp", True), cfg) if cfg.mcp_enabled else None
        self.dsfs = (
            [DsfModule(scope(f"dsf{i}", True), cfg) for i in range(cfg.dsf_count)]
            if cfg.dsf_enabled else []
        )
        self.heads = PredictionHeads(scope("heads", True), cfg)

    # ------------------------------------------------------------ runtime

    def new_bank(self, policy: str | None = None, capacity: int | None = None) -> MemoryBank:
        return MemoryBank(
            capacity if capacity is not None else self.cfg.mcp_bank_l,
            policy if policy is not None else self.cfg.mcp_policy,
            self.cfg.mcp_fifo_k,
        )

    def new_dsf_states(self) -> list[DsfState]:
        return [DsfState() for _ in self.dsfs]

    def param_counts(self) -> dict:
        total = self.store.n_values()
        trainable = self.store.n_values(trainable=True)
        return {"total": total, "trainable": trainable,
                "trainable_fraction": trainable / total}

    # ------------------------------------------------------------ forward

    def forward_frame(
        self,
        templates: list[np.ndarray],
        search_tokens: np.ndarray,
        text_vec: np.ndarray | None,
        bank: MemoryBank | None,
        dsf_states: list[DsfState],
        use_memory: bool = True,
    ) -> FrameForward:
        caches: dict = {}
        mem_tokens = None
        mem_spans: list[tuple[int, int, int]] = []
        if self.mcp is not None and use_memory and bank is not None and len(bank):
            mem_tokens, caches["mcp"] = self.mcp.compress(bank)
            start = 0
            for f in bank.frames:
                n = f.features.shape[0]
                mem_spans.append((f.index, start, start + n))
                start += n
        seq, caches["asm"] = self.embedder.assemble(
            mem_tokens, templates, search_tokens, text_vec
        )
        search_idx = np.where(seq.segments == SEG_SEARCH)[0]

        hooks = None
        if self.dsfs:
            hooks = [m.make_hooks(dsf_states[i].last_f, search_idx)
                     for i, m in enumerate(self.dsfs)]
        o, caches["bb"] = self.backbone.forward_with_fusion(seq.tokens, hooks)
        o_s = o[search_idx]
        raw, caches["head"] = self.heads.forward(o_s)
        return FrameForward(
            seq=seq, search_idx=search_idx, o=o, o_s=o_s, raw=raw,
            caches=caches, hooks=hooks, mem_spans=mem_spans,
            is_boot=not use_memory,
        )

    # ------------------------------------------------------- state update

    def update_source(self, ff: FrameForward, module_index: int) -> np.ndarray | None:
        src = self.cfg.dsf_source
        if src == "final":
            return ff.o_s
        if src == "sequence":
            return None if ff.is_boot else ff.o
        return self.dsfs[module_index].captured_stage_input

    def update_states(self, ff: FrameForward, dsf_states: list[DsfState]):
        """Advance every dynamic-state module after a frame. Returns (states, caches)."""
        new_states, caches = [], []
        for i, m in enumerate(self.dsfs):
            src = self.update_source(ff, i)
            if src is None:
                new_states.append(dsf_states[i])
                caches.append(None)
                continue
            f, st, cache = m.dynamic_state_forward(src, dsf_states[i])
            new_states.append(st)
            caches.append(cache)
        return new_states, caches

    # ----------------------------------------------------------- backward

    def backward_frame(
        self,
        ff: FrameForward,
        d_os: np.ndarray | None = None,
        d_o_extra: np.ndarray | None = None,
        stage_input_grads: dict[int, np.ndarray] | None = None,
        want_bank_grads: bool = False,
    ) -> FrameBackward:
        d_o = np.zeros_like(ff.o)
        if d_os is not None:
            d_o[ff.search_idx] += d_os
        if d_o_extra is not None:
            d_o = d_o + d_o_extra

        for m in self.dsfs:
            m.pending_df = 0.0
        d_tokens = self.backbone.backward(d_o, ff.caches["bb"], stage_input_grads)
        out = FrameBackward(df_per_module=[m.pending_df for m in self.dsfs])

        d_mem = self.embedder.assemble_backward(d_tokens, ff.caches["asm"])
        if d_mem is not None and "mcp" in ff.caches:
            d_fm = self.mcp.compress_backward(d_mem, ff.caches["mcp"])
            if want_bank_grads:
                for frame_index, start, end in ff.mem_spans:
                    out.bank_feature_grads[frame_index] = d_fm[start:end]
        return out

    def head_loss_backward(self, ff: FrameForward, lcache) -> np.ndarray:
        return self.heads.backward(lcache, ff.caches["head"])
