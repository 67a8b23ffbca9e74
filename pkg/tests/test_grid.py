import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensormtl import InvalidIndexError, TaskGrid


def test_first_cell():
    assert TaskGrid((3, 4, 5)).linearize([1, 1, 1]) == 0


def test_last_cell_total_60():
    grid = TaskGrid((3, 4, 5))
    assert grid.total == 60
    assert grid.linearize([3, 4, 5]) == 59


def test_first_mode_stride_is_one():
    assert TaskGrid((3, 4, 5)).linearize([2, 1, 1]) == 1


def test_delinearize_matches_hand_values():
    grid = TaskGrid((3, 4, 5))
    assert grid.delinearize(0) == (1, 1, 1)
    assert grid.delinearize(1) == (2, 1, 1)
    assert grid.delinearize(3) == (1, 2, 1)
    assert grid.delinearize(59) == (3, 4, 5)


def test_out_of_range_index_names_mode():
    grid = TaskGrid((3, 4, 5))
    with pytest.raises(InvalidIndexError, match="mode 2"):
        grid.linearize([1, 5, 1])
    with pytest.raises(InvalidIndexError, match="mode 1"):
        grid.linearize([0, 1, 1])
    with pytest.raises(InvalidIndexError):
        grid.delinearize(60)
    with pytest.raises(InvalidIndexError):
        grid.delinearize(-1)


def test_invalid_shapes_rejected():
    with pytest.raises(ValueError):
        TaskGrid(())
    with pytest.raises(ValueError):
        TaskGrid((3, 0))


grids = st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=4)


@settings(max_examples=150, deadline=None)
@given(shape=grids, data=st.data())
def test_linearize_delinearize_round_trip(shape, data):
    grid = TaskGrid(tuple(shape))
    t = data.draw(st.integers(min_value=0, max_value=grid.total - 1))
    assert grid.linearize(grid.delinearize(t)) == t


@settings(max_examples=100, deadline=None)
@given(shape=grids)
def test_multi_indices_table_agrees_with_delinearize(shape):
    grid = TaskGrid(tuple(shape))
    table = grid.multi_indices()
    for t in range(grid.total):
        assert tuple(table[t]) == grid.delinearize(t)


def test_mode_slice_tasks_partition():
    grid = TaskGrid((3, 4, 5))
    for mode in range(1, 4):
        seen = np.concatenate(
            [grid.mode_slice_tasks(mode, s) for s in range(1, grid.shape[mode - 1] + 1)]
        )
        assert sorted(seen) == list(range(grid.total))
        sizes = {
            len(grid.mode_slice_tasks(mode, s))
            for s in range(1, grid.shape[mode - 1] + 1)
        }
        assert sizes == {grid.total // grid.shape[mode - 1]}
