"""Calderon-Zygmund operators on discretized measures: kernels, truncated and
regularized operators, reflectionless defects, Riesz systems, the collapse
schedule and Riesz-transform identities."""

from .kernels import BUILTIN, CZKernel, cauchy, make_kernel, riesz, zbar_over_z2
from .measures import (BallQuery, PointMeasure, make_annulus_lebesgue, make_ball_lebesgue,
                       make_cantor, make_segment_hausdorff, zero_measure)

__version__ = "0.1.0"
