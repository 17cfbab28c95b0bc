"""Counter-based random streams (Philox) keyed by (seed, substream).

Every stochastic routine in the package draws from an independent Philox
stream.  The key is the pair (seed, substream) and the draw position inside
the stream is the Philox counter, so a path is pinned by (seed, substream,
step) no matter how work is batched or re-ordered.

High-level estimators that need many internal streams derive their substreams
from a lane id (top bits) plus a within-lane index, so two estimators running
off the same root seed never share a stream.  User-facing substreams (for
example a path index passed to simulate_path) are plain small integers and
live in lane 0.
"""

import numpy as np

_LANE_SHIFT = 44

# lane 0 is reserved for caller-chosen substreams (path indices etc.)
LANE_ONEDIM_ORACLE = 1
LANE_G_ENSEMBLE = 2
LANE_VALUE_STOPPED = 3
LANE_VALUE_FREE = 4
LANE_SNELL_OUTER = 5
LANE_SNELL_INNER = 6
LANE_DETECT_SCENARIO = 7
LANE_RISK_STATS = 8
LANE_COUPLED = 9
LANE_PILOT = 10


def substream(lane, index=0):
    """Pack a lane id and a within-lane index into one substream integer."""
    if not 0 <= index < (1 << _LANE_SHIFT):
        raise ValueError(f"substream index out of range: {index}")
    return (int(lane) << _LANE_SHIFT) | int(index)


def stream(seed, sub=0):
    """Return a Generator over a Philox stream keyed by (seed, substream)."""
    key = np.array([np.uint64(int(seed) & (2**64 - 1)),
                    np.uint64(int(sub) & (2**64 - 1))], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
