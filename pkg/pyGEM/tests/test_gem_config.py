#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pytest

from ..gem_config import read_config_file, resolve_config, config_to_dict, derive_seed, make_rng
from ..gem_errors import GEMConfigError


@dataclass
class _ToyConfig:
    epochs: int = 10
    rate: float = 0.1
    verbose: bool = False
    name: str = "toy"
    types: Tuple[str, ...] = ()
    limit: Optional[int] = None

    def validate(self):
        if self.epochs < 1:
            raise GEMConfigError("epochs must be >= 1")


def test_read_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# a comment\nepochs = 5\n\nlearning-rate = 0.5  # trailing\n", encoding="utf-8")
    assert read_config_file(str(path)) == {"epochs": "5", "learning_rate": "0.5"}


def test_read_config_file_errors(tmp_path):
    with pytest.raises(GEMConfigError):
        read_config_file(str(tmp_path / "missing.cfg"))
    path = tmp_path / "bad.cfg"
    path.write_text("epochs 5\n", encoding="utf-8")
    with pytest.raises(GEMConfigError, match="bad.cfg:1"):
        read_config_file(str(path))


def test_precedence():
    config = resolve_config(_ToyConfig, {"epochs": "5", "rate": "0.2"}, {"epochs": 7, "rate": None})
    assert config.epochs == 7
    assert config.rate == 0.2
    assert config.name == "toy"


def test_conversions():
    config = resolve_config(_ToyConfig, {"verbose": "yes", "types": "UMID, MAC", "limit": "none"})
    assert config.verbose is True
    assert config.types == ("UMID", "MAC")
    assert config.limit is None
    assert resolve_config(_ToyConfig, {"limit": "3"}).limit == 3


def test_invalid_values():
    with pytest.raises(GEMConfigError, match="bogus"):
        resolve_config(_ToyConfig, {"bogus": "1"})
    with pytest.raises(GEMConfigError):
        resolve_config(_ToyConfig, {"epochs": "many"})
    with pytest.raises(GEMConfigError):
        resolve_config(_ToyConfig, {"verbose": "maybe"})
    with pytest.raises(GEMConfigError):
        resolve_config(_ToyConfig, overrides={"epochs": 0})


def test_config_to_dict():
    d = config_to_dict(_ToyConfig(types=("a",)))
    assert d["types"] == ["a"]
    assert d["epochs"] == 10


def test_derived_seeds():
    assert derive_seed(1, "week-0") == derive_seed(1, "week-0")
    assert derive_seed(1, "week-0") != derive_seed(1, "week-1")
    assert derive_seed(1, "week-0") != derive_seed(2, "week-0")
    a = make_rng(3, "x").random(5)
    np.testing.assert_array_equal(a, make_rng(3, "x").random(5))
    assert not np.array_equal(a, make_rng(3, "y").random(5))
