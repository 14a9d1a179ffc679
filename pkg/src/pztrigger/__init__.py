"""Pseudo-Zernike gamma/hadron trigger: synthetic camera, features, SVM and fixed-point emulation."""

from .camera import (CameraGeometry, CherenkovImage, GeneratorParams, build_geometry,
                     clean_image, generate_dataset, generate_event, hillas, map_to_unit_disk)
from .errors import (DataFormatError, EmptyImageError, ExportRangeError, InvalidArgument,
                     PzTriggerError)
from .fixedpoint import (FxPipeline, QFormat, TriggerFormats, TriggerImage, agreement_report,
                         export_trigger, fx_exp_neg, fx_sqrt, wide_formats)
from .modelsel import GridSpec, evaluate, grid_search, stratified_kfold, zscore_fit
from .pzernike import build_basis_table, extract_features, extract_many, radial_polynomial
from .svm import LabeledDataset, SvmModel, brute_force_qp, decision_value, predict, train_smo

__version__ = "0.1.0"
