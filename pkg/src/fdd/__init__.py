"""Fixed-length dense fingerprint descriptors.

Images are aligned from a given pose and turned into masked 16x16 descriptor
grids by a dual-branch network. Templates are compared with an
overlap-restricted cosine (or XOR on sign bits) and searched exhaustively in
galleries. The training losses and the accuracy metrics are included too.
"""

from .core import (
    BinaryFddTemplate,
    CosFaceParams,
    FddTemplate,
    FingerprintImage,
    LossWeights,
    MinutiaMap,
    ParameterError,
    PoseTransform,
    ShapeError,
    apply_mask,
    flatten_template,
    make_template,
)
from .formats import FormatError, load_template, save_template
from .gallery import BinaryGalleryIndex, Candidate, GalleryIndex
from .matchkit import MatchResult, fuse, match, match_binary
from .net import WeightStore, binarize_template, extract_template, forward

__version__ = "0.1.0"
