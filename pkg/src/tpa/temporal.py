"""Temporal extractors: L x D frame embeddings to one video embedding.

All extractors accept ``X`` shaped ``(..., L, D)`` and return ``(..., hidden)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Conv1d, Linear, Module

KINDS = ("framewise", "cnn1d", "multiscale", "tcn", "gnn")
GRAPHS = ("forward", "backward", "undirected")


@dataclass
class ExtractorConfig:
    kind: str = "cnn1d"
    hidden: int = 256
    pooling: str = "mean"
    kernel_size: int = 3
    kernel_sizes: tuple = (3, 5, 7)
    dilations: tuple = (1, 2, 4)
    tcn_kernel: int = 3
    gnn_window: int = 10
    gnn_passes: int = 1
    gnn_fusion: str = "concat"
    gnn_graphs: tuple = GRAPHS

    def __post_init__(self):
        self.kernel_sizes = tuple(self.kernel_sizes)
        self.dilations = tuple(self.dilations)
        self.gnn_graphs = tuple(self.gnn_graphs)
        if self.kind not in KINDS:
            raise ValueError(f"unknown extractor kind {self.kind!r}; choose from {KINDS}")
        if self.pooling not in ("mean", "max"):
            raise ValueError(f"pooling must be mean or max, got {self.pooling!r}")
        if self.gnn_fusion not in ("concat", "sum"):
            raise ValueError(f"gnn_fusion must be concat or sum, got {self.gnn_fusion!r}")
        if self.gnn_window < 1 or self.gnn_passes < 1 or self.hidden < 1:
            raise ValueError("hidden, gnn_window and gnn_passes must be >= 1")
        if not self.gnn_graphs or any(g not in GRAPHS for g in self.gnn_graphs):
            raise ValueError(f"gnn_graphs must be a non-empty subset of {GRAPHS}")


class Framewise(Module):
    """Shared per-frame linear map, then temporal pooling."""

    def __init__(self, cfg: ExtractorConfig, dim: int, rng):
        super().__init__()
        self.cfg = cfg
        self.proj = self.add_child("proj", Linear(rng, dim, cfg.hidden))

    def __call__(self, X) -> Tensor:
        return ad.reduce(self.proj(X), self.cfg.pooling)


class CNN1D(Module):
    def __init__(self, cfg: ExtractorConfig, dim: int, rng):
        super().__init__()
        self.cfg = cfg
        self.conv = self.add_child("conv", Conv1d(rng, dim, cfg.hidden, cfg.kernel_size))

    def __call__(self, X) -> Tensor:
        return ad.reduce(ad.relu(self.conv(X)), self.cfg.pooling)


class MultiScaleCNN(Module):
    """Parallel same-padded convolutions, each pooled, concatenated, then projected."""

    def __init__(self, cfg: ExtractorConfig, dim: int, rng):
        super().__init__()
        self.cfg = cfg
        self.branches = [self.add_child(f"branch{k}", Conv1d(rng, dim, cfg.hidden, k))
                         for k in cfg.kernel_sizes]
        self.out = self.add_child("out", Linear(rng, cfg.hidden * len(self.branches), cfg.hidden))

    def __call__(self, X) -> Tensor:
        pooled = [ad.reduce(ad.relu(b(X)), self.cfg.pooling) for b in self.branches]
        return self.out(ad.concat(pooled, axis=-1))


class TCN(Module):
    """Input projection followed by residual causal dilated convolutions.

    Each block computes ``H + relu(conv(H))``; zeroing a block's conv makes
    it the identity.
    """

    def __init__(self, cfg: ExtractorConfig, dim: int, rng):
        super().__init__()
        self.cfg = cfg
        self.inp = self.add_child("inp", Linear(rng, dim, cfg.hidden))
        self.blocks = [self.add_child(f"block{i}", Conv1d(rng, cfg.hidden, cfg.hidden, cfg.tcn_kernel,
                                                          padding="causal", dilation=d))
                       for i, d in enumerate(cfg.dilations)]

    @property
    def receptive_field(self) -> int:
        return 1 + sum((self.cfg.tcn_kernel - 1) * d for d in self.cfg.dilations)

    def sequence(self, X) -> Tensor:
        H = self.inp(X)
        for block in self.blocks:
            H = ad.add(H, ad.relu(block(H)))
        return H

    def __call__(self, X) -> Tensor:
        return ad.reduce(self.sequence(X), self.cfg.pooling)


def window_adjacency(L: int, window: int, kind: str) -> np.ndarray:
    """Row-normalized frame graph. Forward edges ``i -> j`` iff ``0 < j - i <= window``;
    backward is the transpose; undirected is their union. Empty rows stay zero."""
    i, j = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    fwd = ((j - i > 0) & (j - i <= window)).astype(np.float64)
    if kind == "forward":
        A = fwd
    elif kind == "backward":
        A = fwd.T.copy()
    elif kind == "undirected":
        A = np.maximum(fwd, fwd.T)
    else:
        raise ValueError(f"unknown graph kind {kind!r}")
    deg = A.sum(axis=1, keepdims=True)
    return np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)


class GNN(Module):
    """Message passing over windowed frame graphs.

    Per graph and pass: ``H <- H + relu((A @ H) W)`` with bias-free ``W``, so
    nodes without neighbours keep their own features. Graph outputs are fused
    (concat or sum), pooled over nodes, and projected.
    """

    def __init__(self, cfg: ExtractorConfig, dim: int, rng):
        super().__init__()
        self.cfg = cfg
        self.inp = self.add_child("inp", Linear(rng, dim, cfg.hidden))
        self.msg = {}
        for g in cfg.gnn_graphs:
            for p in range(cfg.gnn_passes):
                self.msg[g, p] = self.add_child(f"{g}{p}", Linear(rng, cfg.hidden, cfg.hidden, bias=False))
        width = cfg.hidden * (len(cfg.gnn_graphs) if cfg.gnn_fusion == "concat" else 1)
        self.out = self.add_child("out", Linear(rng, width, cfg.hidden))
        self._adj_cache = {}

    def adjacency(self, L: int, kind: str) -> np.ndarray:
        key = (L, kind)
        if key not in self._adj_cache:
            self._adj_cache[key] = window_adjacency(L, self.cfg.gnn_window, kind)
        return self._adj_cache[key]

    def __call__(self, X) -> Tensor:
        X = ad.as_tensor(X)
        L = X.shape[-2]
        H0 = self.inp(X)
        outs = []
        for g in self.cfg.gnn_graphs:
            A = Tensor(self.adjacency(L, g))
            H = H0
            for p in range(self.cfg.gnn_passes):
                H = ad.add(H, ad.relu(self.msg[g, p](ad.matmul(A, H))))
            outs.append(H)
        if self.cfg.gnn_fusion == "concat":
            fused = ad.concat(outs, axis=-1)
        else:
            fused = outs[0]
            for H in outs[1:]:
                fused = ad.add(fused, H)
        return self.out(ad.reduce(fused, self.cfg.pooling))


_BUILDERS = {"framewise": Framewise, "cnn1d": CNN1D, "multiscale": MultiScaleCNN,
             "tcn": TCN, "gnn": GNN}


def build_extractor(cfg: ExtractorConfig, dim: int, rng: np.random.Generator) -> Module:
    return _BUILDERS[cfg.kind](cfg, dim, rng)

