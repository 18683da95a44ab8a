"""Multiscale style transfer for traditional Chinese painting styles.

A low-resolution base network transfers colour and layout, and a light
detail network stylizes the Laplacian residuals on the way back up.
"""

from .base_net import BaseNet, SAModule, base_forward, sa_attention
from .detail_net import DetailNet, EIS, Stylization, channel_attention, edge_map, full_stylize
from .features import ParameterSet, VGGEncoder, encode, load_encoder_weights, normalize_mv, random_encoder_weights
from .losses import LossReport, LossWeights, stage1_objective, stage2_objective
from .pyramid import DimensionError, LaplacianPyramid, decompose, downsample, reconstruct, upsample

__version__ = "0.1.0"
