"""
GeoLab - Parameter Store
Named trainable tensors and their optimizer state
"""
import logging
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from geolab.nn.tensor import Tensor, get_default_dtype
from geolab.utils.errors import CheckpointError

logger = logging.getLogger(__name__)


class ParameterStore:
    """name -> Tensor; names are unique and insertion-ordered"""

    def __init__(self, dtype=None):
        self.dtype = np.dtype(dtype or get_default_dtype()).type
        self._params: Dict[str, Tensor] = {}
        self._frozen: set = set()
        self.state: Dict[str, Dict[str, np.ndarray]] = {}
        self.step_count = 0

    def create(self, name: str, shape: Tuple[int, ...], rng: Optional[np.random.Generator] = None,
               init: str = 'normal', std: float = 0.02) -> Tensor:
        if name in self._params:
            raise ValueError(f"Parameter {name} already exists")
        if init == 'zeros':
            data = np.zeros(shape)
        elif init == 'ones':
            data = np.ones(shape)
        elif init == 'normal':
            if rng is None:
                raise ValueError(f"Parameter {name} needs a generator for normal init")
            data = rng.normal(0.0, std, size=shape)
        else:
            raise ValueError(f"Unknown init {init!r} for {name}")
        tensor = Tensor(data, requires_grad=True, name=name, dtype=self.dtype)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self, prefix: str = '') -> List[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def items(self) -> Iterable[Tuple[str, Tensor]]:
        return self._params.items()

    def trainable(self) -> List[Tuple[str, Tensor]]:
        return [(n, p) for n, p in self._params.items() if n not in self._frozen]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def freeze(self, prefix: str = '') -> None:
        self._frozen.update(self.names(prefix))

    def unfreeze(self, prefix: str = '') -> None:
        self._frozen.difference_update(self.names(prefix))

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def reset_state(self) -> None:
        self.state.clear()
        self.step_count = 0

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, arrays: Dict[str, np.ndarray], prefixes: Optional[Iterable[str]] = None) -> List[str]:
        """Copy arrays into existing parameters in place; returns the names loaded"""
        prefixes = tuple(prefixes) if prefixes is not None else None
        loaded = []
        for name, array in arrays.items():
            if prefixes is not None and not name.startswith(prefixes):
                continue
            if name not in self._params:
                raise CheckpointError(f"checkpoint array {name} has no matching parameter")
            target = self._params[name]
            if tuple(array.shape) != target.shape:
                raise CheckpointError(f"{name}: checkpoint shape {tuple(array.shape)} "
                                      f"does not match model shape {target.shape}")
            target.data[...] = array.astype(self.dtype)
            self.state.pop(name, None)
            loaded.append(name)
        if prefixes is not None:
            missing = [n for n in self._params if n.startswith(prefixes) and n not in loaded]
            if missing:
                raise CheckpointError(f"checkpoint lacks {len(missing)} parameters, e.g. {missing[0]}")
        logger.debug(f"Loaded {len(loaded)} parameter arrays")
        return loaded
