import json

import numpy as np
import pytest

from engram.config import ConfigError, EngramConfig
from engram.formats import FormatError, read_projection, read_tables, read_tensor, read_weights, write_tensor

GOOD = {"orders": [2, 3], "K": 4, "global_seed": 7, "budget": 4000, "d": 16, "d_mem": 32,
        "placements": [1, 5]}


def test_config_loads_and_hashes(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(GOOD))
    cfg = EngramConfig.load(tmp_path / "c.json")
    assert cfg.heads == 4 and cfg.d_sub == 4
    hc = cfg.hash_config(layer=5)
    assert hc.table_sizes == (499,) * 8 and hc.layer == 5
    assert cfg.config_hash() == EngramConfig.from_dict(dict(GOOD)).config_hash()
    assert cfg.config_hash() != EngramConfig.from_dict({**GOOD, "global_seed": 8}).config_hash()


@pytest.mark.parametrize("patch, needle", [
    ({"d_mem": 30}, "divisible"),
    ({"placements": [5, 5]}, "strictly increasing"),
    ({"orders": [3, 2]}, "ascending"),
    ({"budget": None}, "budget or table_sizes"),
    ({"table_sizes": [7] * 8}, "mutually exclusive"),
    ({"optimizer": {"weight_decay": 0.1}}, "weight decay"),
    ({"tiers": {"hot_capacity_rows": -1}}, "tiers"),
    ({"tiers": {"bogus": 1}}, "unknown"),
    ({"colour": "red"}, "unknown config keys"),
])
def test_config_rejections(patch, needle):
    with pytest.raises(ConfigError) as info:
        EngramConfig.from_dict({**GOOD, **patch})
    assert any(needle in p for p in info.value.problems)


def test_config_collects_every_problem():
    with pytest.raises(ConfigError) as info:
        EngramConfig.from_dict({**GOOD, "d_mem": 30, "placements": [3, 1]})
    assert len(info.value.problems) == 2


def test_explicit_table_sizes_must_be_prime():
    with pytest.raises(ConfigError):
        EngramConfig.from_dict({**GOOD, "budget": None, "table_sizes": [8] * 8})


def test_tensor_round_trip(tmp_path):
    for shape in [(), (3,), (2, 3, 4)]:
        a = np.arange(int(np.prod(shape)), dtype=np.float32).reshape(shape) - 1.5
        write_tensor(tmp_path / "x.egts", a)
        np.testing.assert_array_equal(read_tensor(tmp_path / "x.egts"), a)


def test_format_errors(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"NOPE" + b"\0" * 12)
    for reader in (read_projection, read_tables, read_weights):
        with pytest.raises(FormatError):
            reader(bad)
    write_tensor(tmp_path / "x.egts", np.zeros(3))
    (tmp_path / "y.egts").write_bytes((tmp_path / "x.egts").read_bytes() + b"\0")
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "y.egts")
    (tmp_path / "v.bin").write_bytes(b"EGVP" + (9).to_bytes(4, "little") + b"\0" * 8)
    with pytest.raises(FormatError, match="version"):
        read_projection(tmp_path / "v.bin")
