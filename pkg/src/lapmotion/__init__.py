"""Correspondence pruning by Laplacian motion fitting.

Putative matches ``(x, y, u, v)`` become nodes of a k-NN graph in 4D; the
motion field is smoothed in closed form through the smallest Laplacian
eigenpairs and matches far from the smoothed field are rejected.
"""

from .core import (CoordinateRangeError, Correspondence, CorrespondenceSet,
                   DimensionMismatchError, LapMotionError, ParseError, PruneResult,
                   compute_motions, load_correspondences, save_correspondences)
from .evaluation import MetricsReport, SweepRow, score, sweep
from .graph import CoherenceGraph, GraphError, LaplacianMatrix, build_graph, laplacian
from .layers import (LinearMap, context_norm, cr_residual_backward, cr_residual_forward,
                     fit_eta, lc_backward, lc_forward)
from .lmf import LmfConfig, lmf_prune, residual_histogram
from .spectral import (ConvergenceError, SpectralBasis, apply_smoother, eigendecompose,
                       smoother_grad_eta, smoother_grad_signal)
from .synth import SceneSpec, generate_scene

__version__ = "0.1.0"
