from typing import Any, Dict

import numpy as np


# flatten nested dictionaries into "parent/child" keys
def _flatten(data: Dict[str, Any], parent_key: str = "", sep: str = "/") -> Dict[str, Any]:
    items = {}
    for k, v in data.items():
        new_key = parent_key + sep + k if parent_key else k
        if isinstance(v, dict):
            items.update(_flatten(v, new_key, sep))
        else:
            items[new_key] = v
    return items


def circular_pct_error(s_est, s_true):
    """
    Absolute gait-percentage difference measured modulo 100, so 99.8 vs 0.1 is 0.3.
    """
    d = np.abs(np.asarray(s_est, dtype=float) - np.asarray(s_true, dtype=float)) % 100.0
    return np.minimum(d, 100.0 - d)
