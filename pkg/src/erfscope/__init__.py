"""Receptive-field geometry analysis for atrous segmentation heads.

The package computes effective receptive fields of small randomly
initialized convolutional graphs by explicit input-gradient evaluation,
predicts and measures the star-shaped influence pattern of pyramid
(multi-rate) heads, and recommends the base atrous rate that matches a
head's field of view to the image size.
"""

from .advisor import (AdvisorReport, GuidelineRow, advise, advise_for_shape,
                      fov_end_to_end, guideline_table, legacy_rate,
                      optimal_rate, round_rate, validate_config)
from .erf import (ErfConfig, ErfMap, central_seed, default_center, dump_erf,
                  erf_accumulate, erf_single, load_erf, load_image,
                  read_pgm, render_heatmap)
from .geometry import (DEFAULT_ALPHA, GaussianFit, PeakSet, StarGeometry,
                       StarMatchReport, TapMatch, detect_peaks,
                       fit_gaussian_2d, match_taps, measure_star,
                       predict_fcn_d6_span, predict_star)
from .graph import (AsppSpec, Fragment, GraphBuildError, LayerNode,
                    NetworkGraph, assemble, build_aspp_head, build_encoder,
                    build_fcn_d6_head, fragment_graph, infer_output_stride)
from .netspec import (NetworkConfigError, NetworkPlan, config_digest,
                      parse_network_config, parse_network_text, plan_to_graph)
from .ops import ConvSpec, conv_output_size, same_padding
from .tensor import Kernel, Tensor, dump_raw, load_raw

__version__ = "1.0.0"

__all__ = [
    "AdvisorReport", "AsppSpec", "ConvSpec", "DEFAULT_ALPHA", "ErfConfig",
    "ErfMap", "Fragment", "GaussianFit", "GraphBuildError", "GuidelineRow",
    "Kernel", "LayerNode", "NetworkConfigError", "NetworkGraph", "NetworkPlan",
    "PeakSet", "StarGeometry", "StarMatchReport", "TapMatch", "Tensor",
    "advise", "advise_for_shape", "assemble", "build_aspp_head",
    "build_encoder", "build_fcn_d6_head", "central_seed", "config_digest",
    "conv_output_size", "default_center", "detect_peaks", "dump_erf",
    "dump_raw", "erf_accumulate", "erf_single", "fit_gaussian_2d",
    "fov_end_to_end", "fragment_graph", "guideline_table",
    "infer_output_stride", "legacy_rate", "load_erf", "load_image",
    "load_raw", "match_taps", "measure_star", "optimal_rate",
    "parse_network_config", "parse_network_text", "plan_to_graph",
    "predict_fcn_d6_span", "predict_star", "read_pgm", "render_heatmap",
    "round_rate", "same_padding", "validate_config",
]
