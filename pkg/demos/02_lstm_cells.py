"""
LSTM cells
==========

Two cells drive the model. ``lstm_step`` is the usual cell with gates
(input, forget, candidate, output) stacked in one weight block. The spatial
cell used by the encoder has two predecessors (the site above and the site to
its left), one forget gate for each, and reads a patch plus a coarse view of
the whole image.
"""

import numpy as np

from rla.lstm import LstmParams, SpatialLstmParams, lstm_step, spatial_lstm_step, zero_state
from rla.tensor import Tensor

rng = np.random.default_rng(0)

# a sequence through a plain cell
cell = LstmParams.init(rng, input_dim=3, hidden=4)
state = zero_state(batch=1, hidden=4)
for t in range(5):
    state = lstm_step(cell, Tensor(rng.normal(size=(1, 3))), state)
    print(f"t={t} h={np.round(state.h.data[0], 3)}")

# a cell with no input, as used by the first decoder layer
free = LstmParams.init(rng, input_dim=0, hidden=4)
s = state
for t in range(3):
    s = lstm_step(free, None, s)
print("free-running h:", np.round(s.h.data[0], 3))

# scan a 3x3 grid of 4-pixel patches with the spatial cell
grid = rng.random((3, 3, 4))
coarse = Tensor(grid.mean(axis=2).reshape(1, 9))
sp = SpatialLstmParams.init(rng, input_dim=4, coarse_dim=9, hidden=4)
states = {}
zero = zero_state(1, 4)
for i in range(3):
    for j in range(3):
        above = states.get((i - 1, j), zero)
        left = states.get((i, j - 1), zero)
        states[i, j] = spatial_lstm_step(sp, Tensor(grid[i, j][None]), coarse, above, left)
print("last site h:", np.round(states[2, 2].h.data[0], 3))

# literal=True pairs the left forget gate with the above memory instead
lit = spatial_lstm_step(sp, Tensor(grid[1, 1][None]), coarse, states[0, 1], states[1, 0],
                        literal=True)
fix = spatial_lstm_step(sp, Tensor(grid[1, 1][None]), coarse, states[0, 1], states[1, 0])
print("cell memory, paired vs literal:", np.round(fix.c.data[0], 3), np.round(lit.c.data[0], 3))
