"""
Configuration file for murtree-desk
Contains static settings for logging, file layout, exports and error reporting.
Tunable hyperparameters live in src/config/run_config.py.
"""

# Logging Configuration
LOGGING_CONFIG = {
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    "date_format": "%Y-%m-%d %H:%M:%S",
    "level": "INFO",
    # Noisy third-party loggers kept at WARNING
    "quiet_loggers": ["concurrent.futures", "asyncio"],
}

# File layout of datasets and run directories
PATHS_CONFIG = {
    "manifest_file": "manifest.jsonl",
    "splits_file": "splits.json",
    "dataset_info_file": "dataset.json",
    "sample_dirs": {
        "primary": "primary",
        "auxiliary": "auxiliary",
        "label": "label",
        "edge": "edge",
    },
    "preview_dir": "preview",
    "tensor_suffix": ".mtf",
    "checkpoint_file": "checkpoint.mtc",
    "training_log_file": "training_log.jsonl",
    "metrics_file": "metrics_{split}.json",
    "score_dir": "score_{sample}",
    "ablation_file": "ablation.json",
}

# Heatmap / metrics export settings
EXPORT_CONFIG = {
    "pgm_max_value": 255,
    "pgm_scaling_note": "linear min-max scaling to 0..255",
    "metrics_keys": ["miou", "iou", "f1", "precision", "recall"],
    "json_indent": 2,
}

# Error Handling Configuration
ERROR_CONFIG = {
    "error_prefix": "❌",
    "exit_ok": 0,
    "exit_failure": 1,
    "exit_usage": 2,
}
