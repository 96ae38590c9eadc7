"""
Detect which optional packages are installed. Plotting needs matplotlib, which
ships as the `plot` extra.
"""

import importlib.util

def is_matplotlib_installed() -> bool:
    return importlib.util.find_spec("matplotlib") is not None
