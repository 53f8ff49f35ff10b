"""Logging utilities for the application."""
from typing import Any, Dict, Union

import numpy as np


def truncate_data(data: Union[Dict, str, Any]) -> Union[Dict, str, Any]:
    """Shorten arrays, long lists and long strings before logging."""
    def _truncate_value(value: Any) -> Any:
        """Helper to truncate individual values."""
        if isinstance(value, np.ndarray):
            return f"[array shape={value.shape} dtype={value.dtype}]"
        if isinstance(value, (list, tuple)) and len(value) > 8:
            return f"[{len(value)} items: {list(value[:3])}...]"
        if isinstance(value, str) and len(value) > 60:
            return f"{value[:60]}..."
        return value

    def _truncate_dict(d: Dict) -> Dict:
        """Recursively truncate dictionary values."""
        result = {}
        for k, v in d.items():
            if isinstance(v, dict):
                result[k] = _truncate_dict(v)
            else:
                result[k] = _truncate_value(v)
        return result

    if isinstance(data, dict):
        return _truncate_dict(data)
    return _truncate_value(data)
