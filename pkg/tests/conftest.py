"""
Shared fixtures: seeded generators and small synthetic mediation datasets.
"""
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
import pytest

from src.core_types import assemble_dataset


def synthetic_blocks(rng: np.random.Generator, n: int = 50, q: int = 5, p: int = 5, t: int = 3,
                     covariates: int = 1, mediator_noise: float = 1.0,
                     outcome_noise: float = 1.0) -> Dict[str, np.ndarray]:
    """Dense random truth and one draw of (x, m, y, covariates) from the structural equations."""
    alpha = rng.normal(size=(q, p))
    beta = rng.normal(size=(p, t))
    gamma = rng.normal(scale=0.5, size=(q, t))
    zeta = rng.normal(scale=0.2, size=(covariates + 1, p))
    eta = rng.normal(scale=0.2, size=(covariates + 1, t))

    x = rng.normal(size=(n, q))
    cov = rng.normal(size=(n, covariates))
    z = np.hstack([np.ones((n, 1)), cov])
    m = x @ alpha + z @ zeta + mediator_noise * rng.normal(size=(n, p))
    y = m @ beta + x @ gamma + z @ eta + outcome_noise * rng.normal(size=(n, t))
    return {
        "x": x, "m": m, "y": y, "z_cov": cov, "z": z,
        "alpha": alpha, "beta": beta, "gamma": gamma, "zeta": zeta, "eta": eta,
    }


def dataset_from(blocks: Dict[str, np.ndarray]):
    return assemble_dataset(blocks["x"], blocks["m"], blocks["y"], blocks["z_cov"])


def write_matrix(path: Path, matrix: np.ndarray, prefix: str, names: Optional[list] = None) -> Path:
    matrix = np.asarray(matrix, dtype=np.float64)
    header = names or [f"{prefix}{i + 1}" for i in range(matrix.shape[1])]
    pd.DataFrame(matrix, columns=header).to_csv(path, index=False, lineterminator="\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def blocks(rng):
    return synthetic_blocks(rng)


@pytest.fixture
def dataset(blocks):
    return dataset_from(blocks)


@pytest.fixture
def csv_inputs(tmp_path, blocks):
    """The 50 x 5 x 5 x 3 fixture written as CSV files."""
    return {
        "x": write_matrix(tmp_path / "x.csv", blocks["x"], "snp"),
        "m": write_matrix(tmp_path / "m.csv", blocks["m"], "roi"),
        "y": write_matrix(tmp_path / "y.csv", blocks["y"], "score"),
        "z": write_matrix(tmp_path / "z.csv", blocks["z_cov"], "", names=["age"]),
    }
