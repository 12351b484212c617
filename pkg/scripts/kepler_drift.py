"""Drift of semi-major axis and eccentricity on Kepler orbits (about 30 s per seed)."""
from _common import run
from gfnn.experiments import kepler_drift

if __name__ == "__main__":
    run(kepler_drift, __doc__, [0])
