"""Joint-level muscle fatigue modulation for motion sequences.

Pipeline: learned inverse dynamics turns joint angles into torques, a
three-compartment fatigue simulator (or its physics-informed network
surrogate) attenuates them through the residual-capacity factor, and learned
forward dynamics turns the fatigued torques back into joint angles.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    DataFormatError,
    DegenerateChannelError,
    FatigueMotionError,
    NumericError,
    ParameterError,
    ShapeError,
    SplitError,
    UnsupportedModeError,
)
