"""
Tests for CSV table construction and output
"""
import numpy as np
import pandas as pd
import pytest

from grid import Field, build_space_grid, build_time_grid
from table_processor import TableProcessor
from validation import ConvergenceLevel, ConvergenceReport


@pytest.fixture
def processor(tmp_path):
    return TableProcessor(tmp_path / 'out')


def test_output_folder_is_created(tmp_path):
    TableProcessor(tmp_path / 'nested' / 'out')
    assert (tmp_path / 'nested' / 'out').is_dir()


def test_field_table_is_long_format_in_increasing_time():
    space = build_space_grid(4, 1.0, 5.0)
    times = build_time_grid(2, 1.0)
    values = np.arange(15, dtype=float).reshape(3, 5)
    table = TableProcessor.field_table(Field(values=values, quantity='v', space=space, time=times))

    assert list(table.columns) == ['t', 'E', 'value']
    assert len(table) == 15
    assert table['t'].tolist()[:5] == [0.0] * 5
    assert table['t'].iloc[-1] == 1.0
    assert table['E'].tolist()[:5] == [1.0, 2.0, 3.0, 4.0, 5.0]
    # first rows hold t = 0, i.e. the last stored level
    assert table['value'].tolist()[:5] == [10.0, 11.0, 12.0, 13.0, 14.0]


def test_trace_and_sweep_tables():
    trace = TableProcessor.trace_table([0.5, 0.01, 1e-7])
    assert list(trace.columns) == ['iteration', 'epsilon']
    assert trace['iteration'].tolist() == [0, 1, 2]

    grid = build_space_grid(2, 1.0, 5.0)
    sweep = TableProcessor.sweep_table('S', [(0.0, grid, np.ones(3)), (2.0, grid, np.zeros(3))])
    assert list(sweep.columns) == ['S', 'E', 'm_T']
    assert sweep['S'].tolist() == [0.0] * 3 + [2.0] * 3


def test_convergence_table():
    report = ConvergenceReport(
        levels=[ConvergenceLevel(4, 16, 0.25, 1e-3, True), ConvergenceLevel(5, 32, 0.125, 2.5e-4, True)],
        fitted_order=2.0,
        reference_level=6,
    )
    table = TableProcessor.convergence_table(report)
    assert list(table.columns) == ['n', 'h', 'error']
    assert table['n'].tolist() == [4, 5]


def test_save_results_round_trips_doubles(processor):
    values = [0.1, 1.0 / 3.0, 2.0 ** -40, 123456.789]
    df = pd.DataFrame({'x': values})
    path = processor.save_results(df, 'values.csv')
    text = path.read_text(encoding='utf-8')
    assert text.startswith('x\n')
    assert '\r' not in text
    restored = pd.read_csv(path, float_precision='round_trip')['x'].tolist()
    assert restored == values


def test_save_results_is_byte_stable(processor):
    df = pd.DataFrame({'E': np.linspace(1, 5, 7), 'm': np.sqrt(np.arange(7.0))})
    first = processor.save_results(df, 'a.csv').read_bytes()
    second = processor.save_results(df, 'b.csv').read_bytes()
    assert first == second


def test_save_summary(processor):
    path = processor.save_summary({'status': 'converged', 'iterations': 7})
    assert path.read_text(encoding='utf-8') == 'status: converged\niterations: 7\n'
