"""Structured evaluation results with JSON-ready serialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _plain(x):
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()] if x.ndim else _plain(x.item())
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return None if not np.isfinite(v) else v
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


@dataclass
class MetricsReport:
    """Any subset of segmentation, CFD, profile and statistics results.

    Sections left as ``None`` are omitted from :meth:`to_dict`. Non-finite
    numbers (NaN for skipped constant channels) serialize as ``null``.
    """

    segmentation: dict | None = None
    cfd: dict | None = None
    bland_altman: dict | None = None
    frechet: dict | None = None
    wilcoxon: dict | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.check()

    def check(self):
        seg = self.segmentation
        if seg is not None:
            if "dice" in seg and not 0.0 <= seg["dice"] <= 1.0:
                raise ValueError("dice outside [0, 1]")
            for key in ("assd", "hd"):
                if key in seg and seg[key] < 0:
                    raise ValueError(f"{key} must be >= 0")
        if self.cfd is not None and "nae" in self.cfd:
            nae = np.asarray(self.cfd["nae"], dtype=np.float64)
            if np.any(nae[np.isfinite(nae)] < 0):
                raise ValueError("NAE must be >= 0")
        if self.bland_altman is not None:
            for name, ba in self.bland_altman.items():
                if not ba["loa_low"] <= ba["bias"] <= ba["loa_high"]:
                    raise ValueError(f"Bland-Altman limits out of order for {name}")

    def to_dict(self, include_node_arrays: bool = True) -> dict:
        out = {"format_version": 1}
        for key in ("segmentation", "cfd", "bland_altman", "frechet", "wilcoxon"):
            val = getattr(self, key)
            if val is None:
                continue
            if key == "cfd" and not include_node_arrays:
                val = {k: v for k, v in val.items() if k not in ("nae", "mnae_n")}
            out[key] = _plain(val)
        if self.extra:
            out["extra"] = _plain(self.extra)
        return out
