# %% [markdown]
# # Flux-modulated reset and leakage removal
#
# A transmon is flux-modulated so that one of its frequency sidebands lands
# inside the passband of a metamaterial waveguide, where it emits quickly.
# This script walks through the sideband picture, a single reset trace on the
# chain model, and the two-level leakage-removal (LRU) picture.

# %%
import dataclasses

import numpy as np

from mmreset.flux import sideband_spectrum, transition_sideband_frequencies, tuning_curve
from mmreset.model import FluxPulse, reference_device
from mmreset.protocols.lru import (REFERENCE_LOSSY_MODE, first_local_minimum, lru_analytic_pf,
                                   lru_pulse_trace, lru_sideband)
from mmreset.protocols.reset import simulate_reset_trace

config = reference_device()
tm, wg = config.transmon, config.waveguide
print("passband (GHz):", wg.passband)
print("idle g-e frequency (GHz):", float(tuning_curve(tm, 0.0)))

# %% [markdown]
# ## Sidebands of the modulated transition
#
# A sinusoidal flux drive moves the mean frequency down and spreads weight into
# sidebands spaced by twice the drive frequency.

# %%
pulse = FluxPulse(phi_amplitude=0.25, f_mod=0.3, tau_pulse=60.0)
spec = sideband_spectrum(tm, pulse)
for m, f in transition_sideband_frequencies(spec, 1):
    w = abs(spec.xi(m)) ** 2
    if w > 1e-3:
        inside = wg.passband[0] <= f <= wg.passband[1]
        print(f"order {m:+d}: {f:6.3f} GHz  weight {w:.3f}  {'in band' if inside else ''}")

# %% [markdown]
# ## Reset of the first excited state
#
# The full chain simulation gives the residual excitation after pulses of
# different lengths. The thermal floor at the idle point is included.

# %%
taus = np.arange(10.0, 61.0, 10.0)
errors = simulate_reset_trace(config, pulse, "e", taus)
for t, e in zip(taus, errors):
    print(f"tau = {t:4.0f} ns  reset error = {e:.4f}")

# %% [markdown]
# ## Leakage removal through a lossy mode
#
# For the f-level the relevant process is f0 -> e1 through a lossy mode.
# With a constant sideband the population oscillates and decays; the
# first minimum sets the LRU time. Smooth pulse edges push it later.

# %%
lru = FluxPulse(phi_amplitude=0.13, f_mod=0.179)
xi, f_sb = lru_sideband(tm, lru)
lossy = dataclasses.replace(REFERENCE_LOSSY_MODE, f_l=f_sb)  # sideband on resonance
tau = np.arange(5.0, 80.0, 0.5)
flat = lru_analytic_pf(lossy, (xi, f_sb), tau)
edged = lru_pulse_trace(lossy, tm, lru, tau)
print("constant sideband minimum:", first_local_minimum(tau, flat))
print("with pulse edges minimum:  ", first_local_minimum(tau, edged))
