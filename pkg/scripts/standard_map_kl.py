"""Marginal KL of long standard-map rollouts against the true orbit (about 1 min per seed)."""
from _common import run
from gfnn.experiments import standard_map_kl

if __name__ == "__main__":
    run(standard_map_kl, __doc__, [0, 1, 2])
