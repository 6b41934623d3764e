"""Gates interpolate between a feedforward block and a recurrent one.

A GRCL with every gate held at 1 computes exactly what a plain recurrent
convolutional layer computes; with every gate held at 0 the recurrent term
vanishes and only the feedforward branch survives.  This script builds both
layers with shared weights and shows the two limits numerically.

Run:  python demos/01_gates_as_switches.py
"""
import numpy as np

from grcnn import GRCL, GRCLConfig, Tensor, no_grad

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((2, 8, 12, 12)))

rcl = GRCL(GRCLConfig(variant="rcl", in_channels=8, out_channels=8, iterations=4, groups_feedforward=4,
                      groups_gate=4), rng=rng, dtype=np.float64)
gated = GRCL(GRCLConfig(variant="grcl_original", in_channels=8, out_channels=8, iterations=4,
                        groups_feedforward=4, groups_gate=4), rng=rng, dtype=np.float64)

# Share every parameter the two layers have in common.
shared = dict(rcl.named_parameters())
for name, p in gated.named_parameters():
    if name in shared:
        p.data = shared[name].data.copy()

with no_grad():
    reference = rcl(x).data
    gated.gate_override = 1.0
    open_gate = gated(x).data
    gated.gate_override = 0.0
    closed_gate = gated(x).data
    feedforward = gated.transform_ff(x).data
    gated.gate_override = None
    free = gated(x).data

print("gates = 1 vs rcl           max |diff| =", np.abs(open_gate - reference).max())
print("gates = 0 vs feedforward   max |diff| =", np.abs(closed_gate - feedforward).max())
print("free gates (untrained) sit in between: mean distance to rcl %.3f, to feedforward %.3f"
      % (np.abs(free - reference).mean(), np.abs(free - feedforward).mean()))
