"""Error-bounded lossy compression for multi-field scientific data.

Classic Lorenzo prediction augmented with a small cross-field CNN that
predicts the target field's backward differences from decompressed anchor
fields; a fitted affine model fuses all predictors before entropy coding.
"""

from .archive import Archive, ArchiveEntry, read_archive, write_archive
from .cfnn import CfnnWeights, build_input_tensor, forward, load_weights, write_weights, zero_weights
from .errors import (
    ArgumentError,
    CorruptStreamError,
    DataError,
    DegenerateFieldError,
    FitError,
    FormatError,
    IntegrityError,
    ManifestError,
    PrecisionError,
    XfcError,
)
from .fields import (
    DiffField,
    ErrorBoundSpec,
    Field,
    backward_diff,
    load_raw_field,
    resolve_error_bound,
    store_raw_field,
)
from .huffman import CodeTable, build_code_table, decode_deltas, encode_deltas, histogram
from .manifest import CompressionPlan, FieldEntry, Manifest, parse_manifest, validate_manifest
from .metrics import compression_ratio, max_abs_error, psnr, rate_distortion_sweep
from .pipeline import (
    compress_field_hybrid,
    compress_field_lorenzo,
    decompress_archive,
    decompress_entry,
    run_decompress,
    run_plan,
)
from .predictors import (
    HybridWeights,
    PredictorBundle,
    crossfield_predict,
    fit_hybrid_weights,
    fuse_predictions,
    hybrid_predict,
    lorenzo_predict,
    lorenzo_predict_all,
    predict_field_for_compression,
)
from .quantize import PrequantField, dequantize, postquant_delta, prequantize, reconstruct

__version__ = "0.1.0"
