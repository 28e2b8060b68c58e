"""Ready-made hybrid systems."""

from .buck import BuckParams, buck_averaged_rhs, buck_averaged_spec, buck_dcm_spec
from .fig3 import Fig3Case, case_saltation, disk_images, fig3_case, fig3_spec
from .toys import bouncing_ball_spec, scalar_rate_spec
from .wtg import WtgParams, wind_profile, wtg_equilibrium, wtg_output_map, wtg_spec

__all__ = [
    "BuckParams",
    "Fig3Case",
    "bouncing_ball_spec",
    "buck_averaged_rhs",
    "buck_averaged_spec",
    "buck_dcm_spec",
    "case_saltation",
    "disk_images",
    "fig3_case",
    "fig3_spec",
    "scalar_rate_spec",
    "WtgParams",
    "wind_profile",
    "wtg_equilibrium",
    "wtg_output_map",
    "wtg_spec",
]
