import os

# Orszag's rule. Convergence studies can push this towards 1, at which point
# only the Nyquist row/column is dropped from the products.
DEALIAS_FRACTION = 2.0 / 3.0

# Advective CFL: dt <= CFL_LIMIT * dx / max|u|, checked on every step.
CFL_LIMIT = 0.5

# Spin-up must run for at least this many viscous times 1/(nu*lambda1) before
# we're willing to call the end state a point on the attractor.
SPINUP_MIN_VISCOUS_TIMES = 20.0

# Spin-up starts from a random field this fraction of nu*G in L2 norm.
SPINUP_SEED_FRACTION = 0.1

# "limsup" is the max over this trailing fraction of the run window.
LIMSUP_FRACTION = 0.25

# Modes whose divergence is below this (relative to |k||u(k)|) are passed
# through the Leray projector untouched, so re-projecting a velocity is a no-op
# for every mode that is not almost pure gradient.
SOLENOIDAL_TOLERANCE = 64 * 2.220446049250313e-16

# Mollifier transition width as a fraction of the cell side. Has to stay
# below 1 or the enlarged cells stop having diameter < 2h.
MOLLIFY_WIDTH = 0.5

# Noise streams are keyed by (seed, n, NOISE_STREAM_TAG) so they can never
# collide with the generators used for initial data and forcing.
NOISE_STREAM_TAG = 0x4E4447

# Transform threads. The CLI's --threads overrides this.
FFT_WORKERS = int(os.environ.get('NDG_THREADS', 1))
