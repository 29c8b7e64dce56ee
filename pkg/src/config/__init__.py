"""
Run configuration
"""
from .run_config import RunConfig, flag_overrides, parse_assignments

__all__ = ['RunConfig', 'flag_overrides', 'parse_assignments']
