import numpy as np

from pncb.core import CodebookSet, OperatorMatrix, build_codebooks, preset_4x6
from pncb.lppam import LpPamSpec
from pncb.mcbuild import binary_switching

# an M=4, T=2 design with exact MPNM ~1.64 at sigma_p2 = 0.03, 10 dB
DESIGN_THETA = (1.9724193, 1.33917219, 2.53856499)
DESIGN_ENERGY = tuple(np.array([0.92085588, 0.74347872, 0.72358511]) / 2.38791971 * 6)


def make_codebooks(M=4, T=2, alpha=(), theta=DESIGN_THETA, energy=DESIGN_ENERGY, fg=None):
    fg = fg or preset_4x6()
    mc = binary_switching(LpPamSpec(M, T, alpha).build(), fg.N)
    return build_codebooks(mc, OperatorMatrix(energy, theta), fg)


def random_codebooks(rng, M=4, fg=None):
    fg = fg or preset_4x6()
    X = (rng.standard_normal((fg.J, fg.K, M)) + 1j * rng.standard_normal((fg.J, fg.K, M)))
    X *= fg.F.T[:, :, None]
    return CodebookSet(X, fg)
