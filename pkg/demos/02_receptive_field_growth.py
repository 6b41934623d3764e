"""How far does one output pixel see?

Every recurrent step adds another 3x3 convolution, so an RCL unit's
geometric receptive field grows as (3 + 2t) x (3 + 2t) after t steps.
The gated variants can shrink that field per input: a closed gate stops
context from flowing in.  The first part counts the input pixels that
move the centre output; the second measures the gradient-based effective
receptive field of a small network under three gate clamp levels.

Run:  python demos/02_receptive_field_growth.py
"""
import numpy as np

from grcnn import GRCL, GRCLConfig, Tensor, build, effective_rf, no_grad, small_analysis_spec
from grcnn.oracles import perturbation_support

print("geometric support of an RCL unit on a 15x15 input")
for steps in range(5):
    layer = GRCL(GRCLConfig(variant="rcl", in_channels=2, out_channels=2, iterations=steps + 1,
                             groups_feedforward=1, groups_gate=1),
                 rng=np.random.default_rng(steps), dtype=np.float64)
    for _, p in layer.named_parameters():
        p.data = np.abs(p.data) + 0.1  # positive weights: no ReLU cuts a path
    layer.eval()
    layer.record = True

    def centre(arr, layer=layer, steps=steps):
        with no_grad():
            layer(Tensor(arr))
        return float(layer.recorded_states[steps].data[0, 0, 7, 7])

    x = np.random.default_rng(steps).uniform(0.5, 1.5, size=(1, 2, 15, 15))
    count = int(perturbation_support(centre, x).sum())
    print(f"  t={steps}: {count:4d} pixels (expected {(3 + 2 * steps) ** 2})")

print("\neffective receptive field of block 0, last iteration, under gate clamps")
spec = small_analysis_spec("grcl_improved", iterations=(4, 2, 2), maps=(32, 32, 32))
model = build(spec, seed=0)
image = np.random.default_rng(1).standard_normal((1, 3, 32, 32)).astype(np.float32)
for level in (0.0, 0.5, 1.0, None):
    model.set_gate_override(level)
    profile = effective_rf(model, image, (0, 3, 0, 16, 16), rho=0.01)
    label = "learned" if level is None else f"g = {level}"
    print(f"  {label:8s} effective size {profile.effective_size:4d} pixels")
