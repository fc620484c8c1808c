"""Post-training int8 quantization analysis for a compact speaker-verification model."""
from .calibration import CalibStats, Observer, finalize, run_calibration
from .data import FeatureSet, SpeakerDatasetSpec, Trial, build_trials, generate
from .model import LAYER_NAMES, ModelConfig, build_qcontext, forward, init_model, layer_param_count
from .quant import QuantizedTensor, QuantParams, dequantize, fake_quant, params_from_range, quantize
from .scoring import compute_eer, cosine_score, evaluate_model
from .sensitivity import SelectionPolicy, SensitivityReport, evaluate_config, model_size, select, sweep

__version__ = "0.1.0"

__all__ = [
    "CalibStats", "Observer", "finalize", "run_calibration",
    "FeatureSet", "SpeakerDatasetSpec", "Trial", "build_trials", "generate",
    "LAYER_NAMES", "ModelConfig", "build_qcontext", "forward", "init_model", "layer_param_count",
    "QuantizedTensor", "QuantParams", "dequantize", "fake_quant", "params_from_range", "quantize",
    "compute_eer", "cosine_score", "evaluate_model",
    "SelectionPolicy", "SensitivityReport", "evaluate_config", "model_size", "select", "sweep",
]
