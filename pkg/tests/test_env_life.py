"""Game of Life dynamics against an independent brute-force oracle."""

import numpy as np
import pytest

from worldlab.envs import make_env
from worldlab.envs.life import GameOfLifeEnv, gol_intervene, gol_step


def brute_force_step(grid):
    """Independent oracle: per-cell python loops, dead borders."""
    side = grid.shape[0]
    out = np.zeros_like(grid)
    for y in range(side):
        for x in range(side):
            n = 0
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dx == 0 and dy == 0:
                        continue
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < side and 0 <= xx < side and grid[yy, xx]:
                        n += 1
            out[y, x] = (n == 3) or (grid[y, x] and n == 2)
    return out


class TestDynamics:
    def test_empty_grid_stays_empty(self):
        grid = np.zeros((8, 8), dtype=bool)
        assert not gol_step(grid).any()

    def test_block_still_life(self):
        grid = np.zeros((8, 8), dtype=bool)
        grid[3:5, 3:5] = True
        np.testing.assert_array_equal(gol_step(grid), grid)

    def test_blinker_oscillates(self):
        grid = np.zeros((8, 8), dtype=bool)
        grid[3, 2:5] = True  # horizontal at row 3, cols 2..4
        once = gol_step(grid)
        expected = np.zeros((8, 8), dtype=bool)
        expected[2:5, 3] = True  # vertical at col 3, rows 2..4
        np.testing.assert_array_equal(once, expected)
        np.testing.assert_array_equal(gol_step(once), grid)

    def test_borders_are_dead_not_toroidal(self):
        grid = np.zeros((8, 8), dtype=bool)
        grid[0, 0:2] = True
        grid[7, 7] = True  # would neighbor (0,0) on a torus
        out = gol_step(grid)
        assert not out[0, 0]  # only 1 real neighbor -> dies

    def test_matches_brute_force_on_random_grids(self):
        rng = np.random.default_rng(42)
        for _ in range(2000):
            grid = rng.random((8, 8)) < rng.uniform(0.1, 0.7)
            np.testing.assert_array_equal(gol_step(grid), brute_force_step(grid))


class TestInterventions:
    def test_empty_list_is_identity(self, rng):
        grid = rng.random((8, 8)) < 0.4
        np.testing.assert_array_equal(gol_intervene(grid, []), grid)

    def test_single_cell_forced_alive(self):
        grid = np.zeros((8, 8), dtype=bool)
        out = gol_intervene(grid, [(0, 0, True)])
        assert out.sum() == 1 and out[0, 0]

    def test_duplicate_cell_rejected(self):
        grid = np.zeros((8, 8), dtype=bool)
        with pytest.raises(ValueError, match="duplicate"):
            gol_intervene(grid, [(1, 1, True), (1, 1, False)])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="range"):
            gol_intervene(np.zeros((8, 8), dtype=bool), [(8, 0, True)])

    def test_replay_from_post_intervention_grid_matches_env(self):
        env = GameOfLifeEnv(seed=5, mode="interventions")
        packets = [env.advance() for _ in range(21)]
        grid = np.array([[p for p in packets[0].answers[i * 8:(i + 1) * 8]]
                         for i in range(8)], dtype=bool)
        for packet in packets[1:]:
            grid = gol_step(grid)
            forced = [(k[1], k[2], flag) for k, flag in packet.instructions]
            grid = gol_intervene(grid, forced)
            np.testing.assert_array_equal(grid.reshape(-1), packet.answers)


class TestPackets:
    def test_first_step_announces_all_cells(self):
        env = make_env("life", seed=0, mode="plain")
        assert len(env.advance().instructions) == 64

    def test_plain_mode_silent_after_first_step(self):
        env = make_env("life", seed=0, mode="plain")
        env.advance()
        for _ in range(5):
            assert len(env.advance().instructions) == 0

    def test_intervention_counts_bounded(self):
        env = make_env("life", seed=1, mode="interventions")
        env.advance()
        counts = [len(env.advance().instructions) for _ in range(60)]
        assert all(0 <= c <= 3 for c in counts)
        assert max(counts) == 3 and min(counts) == 0

    def test_flags_match_post_intervention_state(self):
        for seed in range(8):
            env = make_env("life", seed=seed, mode="interventions")
            for _ in range(10):
                env.check_packet(env.advance())

    def test_queries_cover_the_whole_grid_every_step(self):
        env = make_env("life", seed=3, mode="plain")
        for _ in range(4):
            packet = env.advance()
            assert len(packet.queries) == 64
            assert len(set(packet.queries)) == 64

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            make_env("life", seed=0, mode="chaotic")

    def test_initial_density_configurable(self):
        dense = make_env("life", seed=0, density=0.9)
        sparse = make_env("life", seed=0, density=0.05)
        assert dense.grid.mean() > 0.7 > 0.2 > sparse.grid.mean()
