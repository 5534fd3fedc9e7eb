"""
State-space scans and how fast old tokens fade
==============================================

A diagonal state-space model run as a recurrence and as a convolution,
then a look at how much each past token still contributes to the state.
"""

# %%
import numpy as np

from priofuse import Prng
from priofuse.ssm import (EULER_B, StateSpaceSystem, apply_kernel, conv_kernel, scan,
                          token_contribution, verify_decay)

prng = Prng(1)

# %%
# A time-invariant system: recurrence and causal convolution agree.
lti = StateSpaceSystem(a=-np.array([0.2, 1.0, 3.0]), b=np.ones(3), c=np.array([1.0, -0.5, 0.25]),
                       delta=0.5)
x = prng.uniform((100, 2), -1, 1)
y_scan = scan(lti, x).y
y_conv = apply_kernel(x, conv_kernel(lti, 100))
print(f"scan vs convolution: {np.max(np.abs(y_scan - y_conv)):.2e}")

# %%
# A scalar system with A-bar = 0.9.  An impulse at position 10 loses a
# factor 0.9 per step.
fade = StateSpaceSystem(a=np.array([np.log(0.9)]), b=np.ones(1), c=np.ones(1), delta=1.0,
                        discretization=EULER_B)
impulse = np.zeros(200)
impulse[10] = 1.0
for gap in (0, 10, 50, 100):
    print(f"gap {gap:3d}: contribution {token_contribution(fade, impulse, 10, 10 + gap):.3e}")

# %%
# Input-dependent (selective) step sizes: the contributions still stay
# under the product-of-norms bound and shrink with distance.
t_len = 256
sel = StateSpaceSystem(a=-(0.05 + prng.uniform((2, 4))), b=prng.uniform((t_len, 4), -1, 1),
                       c=prng.uniform((t_len, 4), -1, 1), delta=0.1 + prng.uniform(t_len))
report = verify_decay(sel, prng.uniform((t_len, 2), -1, 1))
print("bound violations:", report.bound_violations)
for gap in (10, 50, 100):
    print(f"largest contribution at gap {gap}: {report.gap_max[gap]:.3e}")
