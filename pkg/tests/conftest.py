import os
import sys

import pytest

# Add the repository root to the path so `modules` imports resolve
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.append(ROOT)

from modules.chain_core import GENESIS_BLOCK, Block, ChainView, Record, RecordKind  # noqa: E402
from modules.data_loader import DataLoader  # noqa: E402

SCENARIO_DIR = os.path.join(ROOT, "data", "scenarios")


def make_chain(length, producer="p", parent=GENESIS_BLOCK, start_round=1, tag=""):
    """A linear run of blocks on ``parent``, one data record each."""
    blocks = []
    for i in range(length):
        round_ = start_round + i
        record = Record(f"{producer}{tag}-{round_}", RecordKind.DATA, f"{producer}:{round_}".encode())
        parent = Block.child_of(parent, producer, round_, (record,))
        blocks.append(parent)
    return blocks


def view_of(*branches, owner="v", round_=0, **kwargs):
    view = ChainView(owner, **kwargs)
    for branch in branches:
        for block in branch:
            view.add_block(block, round_)
    return view


@pytest.fixture
def loader():
    return DataLoader(os.path.join(ROOT, "data"))


@pytest.fixture
def load(loader):
    def _load(name):
        return loader.load_scenario(os.path.join(SCENARIO_DIR, f"{name}.json"))
    return _load


@pytest.fixture
def minimal_scenario():
    return {
        "name": "minimal",
        "horizon": 30,
        "consensus": {"kind": "unstable", "confirmation_depth": 3},
        "universe": [
            {"id": "a", "weight": 1},
            {"id": "b", "weight": 1},
            {"id": "c", "weight": 1},
        ],
        "fees_per_round": 1,
    }
