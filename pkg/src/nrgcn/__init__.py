"""Non-recursive graph convolutional network (NRGCN)."""

from ._backend import DEFAULT as BACKEND
from .graph import Bundle, Graph, SplitMasks, khop_frontier, load_bundle, neighbors, row_normalize, save_bundle
from .sampler import MUL_PLAN, SIN_PLAN, LayerSpec, SamplingPlan, multi_sample, sample_all

__all__ = [
    "BACKEND", "Bundle", "Graph", "SplitMasks", "khop_frontier", "load_bundle", "neighbors",
    "row_normalize", "save_bundle", "MUL_PLAN", "SIN_PLAN", "LayerSpec", "SamplingPlan",
    "multi_sample", "sample_all",
]

__version__ = "0.1.0"
