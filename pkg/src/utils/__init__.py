"""
Utilities module for logging and parallel helpers
"""
from .logging import get_logger, setup_logging, ContextualLogger

__all__ = ['get_logger', 'setup_logging', 'ContextualLogger']
