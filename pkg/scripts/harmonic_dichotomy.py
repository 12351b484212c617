"""Error growth of GFNN vs euler-VFNN on the harmonic oscillator (about 3 s per seed)."""
from _common import run
from gfnn.experiments import harmonic_dichotomy

if __name__ == "__main__":
    run(harmonic_dichotomy, __doc__, [0, 1, 2])
