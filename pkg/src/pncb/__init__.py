"""Phase-noise-robust sparse code multiple access codebooks: design, scoring and simulation."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CodebookSet,
    FactorGraph,
    OperatorMatrix,
    SchemaError,
    build_codebooks,
    load_codebook,
    preset_4x6,
    save_codebook,
)
from .lppam import LpPamSpec  # noqa: E402
from .mcbuild import MotherConstellation, binary_switching  # noqa: E402
from .pnmetrics import BudgetError, MetricReport, PnChannelParams, mpnm  # noqa: E402

__all__ = [
    "BudgetError",
    "CodebookSet",
    "FactorGraph",
    "LpPamSpec",
    "MetricReport",
    "MotherConstellation",
    "OperatorMatrix",
    "PnChannelParams",
    "SchemaError",
    "binary_switching",
    "build_codebooks",
    "load_codebook",
    "mpnm",
    "preset_4x6",
    "save_codebook",
]
