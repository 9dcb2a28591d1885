"""Desk-scale end-to-end spoken language understanding with energy accounting."""

from slueco.ctc import ctc_greedy_decode, ctc_loss
from slueco.energy import EnergyMeter, RunRecord, build_report, kwh_per_point, kwh_to_gco2
from slueco.estimator import SLUTagger
from slueco.metrics import AlignmentCounts, align, error_rate

__version__ = "0.1.0"

__all__ = [
    "AlignmentCounts",
    "EnergyMeter",
    "RunRecord",
    "SLUTagger",
    "align",
    "build_report",
    "ctc_greedy_decode",
    "ctc_loss",
    "error_rate",
    "kwh_per_point",
    "kwh_to_gco2",
]
