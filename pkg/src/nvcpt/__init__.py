"""Ground-state NV-center toolkit: levels, transitions, ODMR lineshapes and CPT dynamics."""
from __future__ import annotations

__version__ = "0.1.0"
