import numpy as np
import pandas as pd
import pytest

DATA_DIR = __file__.rsplit("/", 1)[0] + "/data"
ENGEL_CSV = DATA_DIR + "/engel.csv"


@pytest.fixture(scope="session")
def engel_frame():
    return pd.read_csv(ENGEL_CSV)


@pytest.fixture(scope="session")
def engel_cf_csv(tmp_path_factory, engel_frame):
    """Engel data with the mean-preserving 25% income contraction column."""
    frame = engel_frame.copy()
    mean = frame["income"].mean()
    frame["counter_income"] = mean + 0.75 * (frame["income"] - mean)
    path = tmp_path_factory.mktemp("engel") / "engel_cf.csv"
    frame.to_csv(path, index=False)
    return str(path)


@pytest.fixture(scope="session")
def engel_table(engel_cf_csv):
    from cfqe.data import load_csv

    return load_csv(
        engel_cf_csv,
        outcome="foodexp",
        covariates=["income"],
        counterfactual=["counter_income"],
    )


def make_two_group_frame(n0=350, n1=180, seed=7):
    """Synthetic two-population wage-style data with a real group gap."""
    rng = np.random.default_rng(seed)
    n = n0 + n1
    group = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    tenure = rng.gamma(2.0, 3.0, n)
    schooling = rng.normal(13.0, 2.0, n) + 0.8 * group
    wage = (
        0.8
        + 0.04 * tenure
        + 0.09 * schooling
        + 0.25 * group
        + rng.normal(0.0, 0.35, n)
    )
    return pd.DataFrame(
        {"wage": wage, "tenure": tenure, "schooling": schooling, "union": group}
    )


@pytest.fixture(scope="session")
def two_group_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("twogroup") / "union.csv"
    make_two_group_frame().to_csv(path, index=False)
    return str(path)


@pytest.fixture(scope="session")
def two_group_table(two_group_csv):
    from cfqe.data import load_csv

    return load_csv(
        two_group_csv,
        outcome="wage",
        covariates=["tenure", "schooling"],
        group="union",
    )
