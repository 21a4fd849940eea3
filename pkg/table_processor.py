"""
Table processor for writing solver results as CSV files
"""
from pathlib import Path

import numpy as np
import pandas as pd

from config import Config
from logger import get_logger

logger = get_logger(__name__)


class TableProcessor:
    """Build result tables and save them with a fixed, round-trip safe float format"""

    def __init__(self, output_dir, float_format=None):
        self.output_dir = Path(output_dir)
        self.float_format = float_format or Config.FLOAT_FORMAT
        self._ensure_output_dir()

    def _ensure_output_dir(self):
        """Create the output folder if it doesn't exist"""
        self.output_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def field_table(field):
        """
        Long-format table of a field

        Args:
            field: Field of m, v or tau

        Returns:
            DataFrame with columns t, E, value ordered by increasing t, then E
        """
        times = field.time.levels[::-1]
        values = field.values[::-1]
        n_nodes = len(field.space.nodes)
        return pd.DataFrame({
            't': np.repeat(times, n_nodes),
            'E': np.tile(field.space.nodes, len(times)),
            'value': values.reshape(-1),
        })

    @staticmethod
    def trace_table(errors):
        """Iteration trace with columns iteration, epsilon"""
        return pd.DataFrame({
            'iteration': np.arange(len(errors), dtype=int),
            'epsilon': np.asarray(errors, dtype=float),
        })

    @staticmethod
    def sweep_table(parameter, runs):
        """
        Final-time densities of a parameter sweep

        Args:
            parameter: Column name of the swept value ('S' or 'S_max')
            runs: List of (value, grid, m_T) tuples in sweep order

        Returns:
            DataFrame with columns parameter, E, m_T
        """
        frames = [
            pd.DataFrame({parameter: np.full(len(grid.nodes), value), 'E': grid.nodes, 'm_T': m_T})
            for value, grid, m_T in runs
        ]
        return pd.concat(frames, ignore_index=True)

    @staticmethod
    def price_table(time_grid, prices):
        """Permit price path with columns t, S in increasing time"""
        return pd.DataFrame({
            't': time_grid.levels[::-1],
            'S': np.asarray(prices, dtype=float)[::-1],
        })

    @staticmethod
    def low_mass_table(parameter, values, masses):
        return pd.DataFrame({parameter: values, 'low_emission_mass': masses})

    @staticmethod
    def convergence_table(report):
        """Columns n, h, error for every measured level"""
        return pd.DataFrame({
            'n': [lvl.n for lvl in report.levels],
            'h': [lvl.h for lvl in report.levels],
            'error': [lvl.error for lvl in report.levels],
        })

    @staticmethod
    def comparison_table(grid, m_pde, m_mc):
        return pd.DataFrame({'E': grid.nodes, 'm_pde': m_pde, 'm_mc': m_mc})

    def save_results(self, df, filename):
        """
        Save a table as CSV

        Args:
            df: DataFrame to write
            filename: File name inside the output folder

        Returns:
            Path of the written file
        """
        path = self.output_dir / filename
        df.to_csv(path, index=False, float_format=self.float_format, lineterminator='\n')
        logger.info(f"Results saved to: {path}")
        return path

    def save_summary(self, summary, filename='summary.txt'):
        """Write `key: value` lines in insertion order"""
        path = self.output_dir / filename
        lines = [f"{key}: {value}" for key, value in summary.items()]
        path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
        logger.info(f"Summary saved to: {path}")
        return path
