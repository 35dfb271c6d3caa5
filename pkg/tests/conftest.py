import pytest

from sgnet.trees import read_trees

from .helpers import DATA


@pytest.fixture
def credit_tree():
    return read_trees(DATA / "credit_losses.conllu")[0]
