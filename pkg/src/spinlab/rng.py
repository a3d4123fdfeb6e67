"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, trajectory, step, branch)``,
so results do not depend on how trajectories are split across workers or on
the order in which they are evaluated.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_K_STREAM = np.uint64(0xD6E8FEB86659FD93)
_K_TRAJ = np.uint64(0xA0761D6478BD642F)
_K_STEP = np.uint64(0xE7037ED1A0B428DB)
_K_BRANCH = np.uint64(0x8EBC6AF09C88C6E3)

# streams used by the package; distinct streams never share draws
STREAM_SPINOMETER = 1
STREAM_SDE = 2
STREAM_INITIAL = 3
STREAM_NOISE_Q = 4
STREAM_NOISE_Q_INDEPENDENT = 5
STREAM_RANDOM_STATE = 6


def _mix(h):
    # splitmix64 finalizer
    h = (h ^ (h >> np.uint64(30))) * _M1
    h = (h ^ (h >> np.uint64(27))) * _M2
    return h ^ (h >> np.uint64(31))


def _as_u64(v):
    return np.asarray(v, dtype=np.int64).astype(np.uint64)


def counter_hash(seed, stream, traj, step, branch=0):
    """64-bit hash of the draw coordinates (broadcasts over array inputs)."""
    with np.errstate(over="ignore"):
        h = _mix(_as_u64(seed) * _GOLDEN + _as_u64(stream) * _K_STREAM)
        h = _mix(h ^ (_as_u64(traj) * _K_TRAJ + _GOLDEN))
        h = _mix(h ^ (_as_u64(step) * _K_STEP + _GOLDEN))
        h = _mix(h ^ (_as_u64(branch) * _K_BRANCH + _GOLDEN))
    return h


def uniform(seed, stream, traj, step, branch=0):
    """Uniform draws on the open interval (0, 1)."""
    h = counter_hash(seed, stream, traj, step, branch)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal(seed, stream, traj, step, branch=0):
    """Standard normal draws by inverse-CDF transform of :func:`uniform`."""
    return ndtri(uniform(seed, stream, traj, step, branch))
