#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from .gem_container import read_container, write_container
from .gem_errors import GEMConsistencyError
from .gem_gcn import GEMGCNParams
from .gem_ingest import GEMDeviceTypeRegistry
from .gem_logging import log
from .gem_model import GEMParams, AggregationMode, NeighbourScaling

CHECKPOINT_MAGIC = b"GEMC"

ModelParams = Union[GEMParams, GEMGCNParams]


@dataclass
class GEMCheckpoint:
    """
    Trained parameters together with everything needed to reuse them on another graph.
    """
    params: ModelParams
    registry: GEMDeviceTypeRegistry
    T: int
    scaling: NeighbourScaling = NeighbourScaling.SUM
    extra: Dict[str, object] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return "gcn" if isinstance(self.params, GEMGCNParams) else "gem"


def save_checkpoint(path: str, checkpoint: GEMCheckpoint) -> None:
    """
    Writes a checkpoint container. Equal checkpoints produce byte-identical files.
    """
    params = checkpoint.params
    meta: Dict[str, object] = {
        "kind": checkpoint.kind,
        "registry": list(checkpoint.registry.names),
        "P": params.P,
        "T": checkpoint.T,
        "scaling": checkpoint.scaling.value,
        "extra": checkpoint.extra,
    }
    if isinstance(params, GEMParams):
        meta["k"] = params.k
        meta["mode"] = params.mode.value
        arrays = {"W": params.W, "V": params.V, "u": params.u, "alpha": params.alpha}
    else:
        meta["k"] = params.u.shape[0]
        arrays = params.arrays()
    write_container(path, CHECKPOINT_MAGIC, meta, arrays)
    log(f"Saved {checkpoint.kind} checkpoint to '{path}'.", severity=logging.INFO)


def load_checkpoint(path: str, registry: Optional[GEMDeviceTypeRegistry] = None) -> GEMCheckpoint:
    """
    Reads a checkpoint container.

    :param path: the checkpoint file.
    :param registry: when given, the checkpoint's device type registry must match it exactly (same names in the same
                     order).
    :return: the checkpoint.
    """
    meta, arrays = read_container(path, CHECKPOINT_MAGIC)
    stored = GEMDeviceTypeRegistry(meta["registry"])
    if registry is not None and stored != registry:
        raise GEMConsistencyError(f"Checkpoint '{path}' was trained with the device types {list(stored.names)}, "
                                  f"got {list(registry.names)}.")
    params: ModelParams
    if meta["kind"] == "gem":
        params = GEMParams(np.array(arrays["W"]), np.array(arrays["V"]), np.array(arrays["u"]),
                           np.array(arrays["alpha"]), AggregationMode(meta["mode"]))
    elif meta["kind"] == "gcn":
        layers = [np.array(arrays[f"W{t}"]) for t in range(int(meta["T"]))]
        params = GEMGCNParams(layers, np.array(arrays["u"]))
    else:
        raise GEMConsistencyError(f"Checkpoint '{path}' has unknown kind '{meta['kind']}'.")
    return GEMCheckpoint(params, stored, int(meta["T"]), NeighbourScaling(meta["scaling"]),
                         dict(meta.get("extra", {})))
