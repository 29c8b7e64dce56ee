"""
Data module: scene models, synthetic generation, on-disk formats and exports
"""
from .models import AuxMode, ManifestRecord, SceneSample, SceneSpec, Split
from .storage import DatasetStore, load_checkpoint, read_tensor, save_checkpoint, write_tensor

__all__ = [
    'AuxMode', 'ManifestRecord', 'SceneSample', 'SceneSpec', 'Split',
    'DatasetStore', 'load_checkpoint', 'read_tensor', 'save_checkpoint', 'write_tensor',
]
