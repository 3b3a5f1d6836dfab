"""
core/utils.py - Path helpers for configs that reference data on disk.

Configs store data paths relative to the config file when they can, so a
dumped experiment directory can be moved or zipped and still be fitted.
"""

import os
import re


def _is_windows_absolute(path: str) -> bool:
    """Check if path is Windows-absolute (drive letter or UNC), even on non-Windows."""
    if not path:
        return False
    if re.match(r'^[a-zA-Z]:[\\/]', path):
        return True
    if re.match(r'^[\\/]{2}[^\\/]+[\\/]+[^\\/]+', path):
        return True
    return False


def make_data_path_portable(data_path: str, config_path: str) -> str:
    """
    Express *data_path* relative to the directory of *config_path* when it lies below it.

    Paths outside that directory (or on another drive) stay absolute; a relative
    *data_path* is taken relative to the working directory.
    """
    if not data_path or not config_path:
        return data_path
    if _is_windows_absolute(data_path) and not os.path.isabs(data_path):
        return data_path

    config_dir = os.path.dirname(os.path.abspath(config_path))
    data_abs = os.path.abspath(data_path)

    config_dir_norm = os.path.normcase(os.path.normpath(config_dir))
    data_abs_norm = os.path.normcase(os.path.normpath(data_abs))
    try:
        common = os.path.commonpath([config_dir_norm, data_abs_norm])
    except ValueError:
        # Different drives on Windows
        return data_abs
    if common != config_dir_norm:
        return data_abs
    return os.path.relpath(data_abs, config_dir).replace(os.sep, "/")


def resolve_data_path(data_path: str, config_path: str) -> str:
    """
    Resolve a data path from a config, converting relative paths against the config location.

    Absolute paths (native or Windows-style) are returned as-is.
    """
    if not data_path:
        return data_path
    if os.path.isabs(data_path) or _is_windows_absolute(data_path):
        return data_path
    if not config_path:
        return data_path
    config_dir = os.path.dirname(os.path.abspath(config_path))
    return os.path.normpath(os.path.join(config_dir, data_path))
