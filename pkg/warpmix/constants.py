from __future__ import annotations

from enum import Enum, IntEnum

#
# constants
#
WARPMIX_SCHEMA_VERSION = 1
WARPMIX_TOOL_VERSION = "0.1.0"

# numerical defaults
DEFAULT_DIRICHLET_ALPHA = 1.0
DEFAULT_VARIANCE_FLOOR_FRAC = 0.01
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 200
DEFAULT_OCCUPANCY_THRESHOLD = 1e-6
DEFAULT_ENUMERATION_LIMIT = 10**7
DEFAULT_OFFSET_SIGMA = 1.0

# step update under grid-end renormalization
STEP_UPDATE_MAX_ROUNDS = 100
STEP_UPDATE_TOLERANCE = 1e-10

# initial step distribution
INIT_ADVANCE_MASS = 0.8
INIT_STAY_MASS = 0.1

# monotonicity diagnostics
OBJECTIVE_DECREASE_WARNING = 1e-6

# protocol defaults
DEFAULT_STARTS = 5
DEFAULT_FOLDS = 10


#
# model document keys
#
class ModelKeys:
    SCHEMA_VERSION = "schema_version"
    K = "K"
    D = "D"
    T = "T"
    M = "M"
    S = "S"
    FLAGS = "flags"
    WEIGHTS = "weights"
    INIT = "init"
    STEPS = "steps"
    MEANS = "means"
    VARIANCES = "variances"

    class Flags:
        ALLOW_STAY = "allow_stay"
        OFFSETS_ENABLED = "offsets_enabled"
        TIE_TRANSITIONS = "tie_transitions"


#
# curve table columns
#
class CurveColumns:
    CURVE_ID = "curve_id"
    STEP = "step"
    VALUE_PREFIX = "d"


class Variant(Enum):
    NONE = "none"
    SHIFT = "shift"
    WARP = "warp"
    BOTH = "both"


class AnchorMode(Enum):
    NONE = "none"
    FIRST = "first"
    MEAN = "mean"


class TemplateShape(Enum):
    BUMP = "bump"
    RAMP = "ramp"
    SINE = "sine"


class ExitCode(IntEnum):
    OK = 0
    FAILURE = 1
    CONFIG = 2
    INPUT_FORMAT = 3
    MODEL_FORMAT = 4
