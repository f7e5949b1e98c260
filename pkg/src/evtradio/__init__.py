"""Minimum-transmit-power radio maps from SINR tail models, and map-driven handover."""

__version__ = "0.1.0"

from .channel import Scenario, SinrSampleSet, build_scenario, ground_truth_sinr  # noqa: E402
from .evt import QosTarget, TailModel, fit_gpd, fit_tail, outage  # noqa: E402
from .handover import HoEvent, HoPolicy, HoState, genie_power, ho_step, select_bs  # noqa: E402
from .powermap import PowerMap, generate_maps, load_maps, save_maps  # noqa: E402
from .sim import (SimReport, Trajectory, availability_audit, make_trajectory,  # noqa: E402
                  reference_trajectory, run_baseline, run_proposed)

__all__ = [
    "Scenario", "SinrSampleSet", "build_scenario", "ground_truth_sinr",
    "QosTarget", "TailModel", "fit_gpd", "fit_tail", "outage",
    "HoEvent", "HoPolicy", "HoState", "genie_power", "ho_step", "select_bs",
    "PowerMap", "generate_maps", "load_maps", "save_maps",
    "SimReport", "Trajectory", "availability_audit", "make_trajectory",
    "reference_trajectory", "run_baseline", "run_proposed",
]
