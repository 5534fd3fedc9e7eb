"""
Wavelet pyramids and amplitude/phase spectra
============================================

Split an image into a multi-level wavelet pyramid, look at where the
energy goes, and put it back together.  Then do the same with the 2-D
Fourier transform split into amplitude and phase.
"""

# %%
import numpy as np

from priofuse import Prng, dwt2, fft2_decompose, idwt2, ifft2_recompose
from priofuse.spectral import SpectralPair

x = Prng(0).uniform((1, 3, 48, 64))

# %%
# Two levels of Haar.  The coarse LL band is (12, 16); details come
# deepest level first, each a (HL, LH, HH) triple.
pyr = dwt2(x, 2, "haar")
print("LL", pyr.ll.shape)
for level, (hl, lh, hh) in enumerate(pyr.details):
    print(f"level {level}: HL {hl.shape}  LH {lh.shape}  HH {hh.shape}")

# %%
# Orthonormal filters keep the total energy, so most of it sitting in LL
# is easy to read off.
total = np.sum(x ** 2)
ll_share = np.sum(pyr.ll ** 2) / total
print(f"LL carries {100 * ll_share:.1f}% of the energy")

# %%
# Reconstruction is exact to rounding, for either basis and odd sizes too.
for basis in ("haar", "sym2"):
    odd = x[..., :45, :61]
    err = np.max(np.abs(idwt2(dwt2(odd, 3, basis)) - odd))
    print(f"{basis}: max reconstruction error {err:.2e}")

# %%
# Amplitude and phase.  Swapping in a flat amplitude keeps the edges
# (they live in the phase) but loses the contrast.
pair = fft2_decompose(x)
print("phase range", pair.phase.min(), pair.phase.max())
back = ifft2_recompose(pair)
print(f"round trip error {np.max(np.abs(back - x)):.2e}")

flat = SpectralPair(np.full_like(pair.amplitude, pair.amplitude.mean()), pair.phase)
phase_only = ifft2_recompose(flat)
corr = np.corrcoef(phase_only.ravel(), x.ravel())[0, 1]
print(f"phase-only image correlates with the input at {corr:.2f}")
