"""Real-image adapter for the partmatch toolkit: CNN feature-grid export
(FGRD) and external annotation conversion."""

from .convert import ConvertError, bin_azimuth, convert_annotations, convert_records
from .export import ExportSpec, export_features, load_crop
from .fgrd import write_fgrd
from .network import FeatureExtractor, MissingWeightsError, make_weights

__version__ = "0.1.0"
