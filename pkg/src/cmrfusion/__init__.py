"""Joint Cine / Delayed-Enhancement cardiac MR analysis toolkit.

Pipeline stages: temporal sync and scan alignment, NMI-based rigid
registration, GVF-snake myocardial segmentation, sector subdivision,
fuzzy c-means infarct extent scoring, window-model contraction fitting
(amplitude/time maps and the ATR index), and agreement statistics.
"""

from cmrfusion.volume import Volume, CineSequence, DEStudySet, load_volume, save_volume

__all__ = [
    "Volume",
    "CineSequence",
    "DEStudySet",
    "load_volume",
    "save_volume",
]

__version__ = "0.1.0"
