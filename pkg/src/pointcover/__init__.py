"""Hierarchical ball-cover indexing and self-supervised pretraining for point clouds.

The package is organized around a small pipeline:

``geometry``   point cloud loading, normalization, subsampling
``covertree``  leveled ball-cover index with invariant validation
``pretext``    self-supervised label generation from the ball hierarchy
``episodes``   few-shot support/query episode sampling
``autonet``    dense layers with hand-written backprop and Adam
``sslnet``     the two-branch pretext network and its trainer
``probe``      embedding pooling, classifiers, and evaluation metrics
``synth``      synthetic shape dataset generator
``pipeline``   end-to-end experiment orchestration
``cli``        command-line entry points
"""

__version__ = "0.1.0"

from .errors import DataError, ParseError  # noqa: F401
from .geometry import PointCloud, load_cloud, normalize_unit_cube, subsample  # noqa: F401
from .covertree import CoverTree, build_cover_tree, validate_invariants  # noqa: F401
from .pretext import build_pretext_dataset, gen_quadrant_pairs, gen_regression_pairs  # noqa: F401
from .episodes import Episode, sample_episode  # noqa: F401
