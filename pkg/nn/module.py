"""
Parameter containers
"""
from typing import Dict, Iterator, List

import numpy as np

from autodiff import Parameter


class Module:
    """Base class: collects Parameters and child Modules from attributes in definition order"""

    def named_parameters(self) -> Iterator[Parameter]:
        seen = set()
        for value in vars(self).values():
            for param in _walk(value):
                if id(param) not in seen:
                    seen.add(id(param))
                    yield param

    def parameters(self, trainable_only: bool = False) -> List[Parameter]:
        return [p for p in self.named_parameters() if p.trainable or not trainable_only]

    def parameter_dict(self) -> Dict[str, Parameter]:
        params = {}
        for p in self.named_parameters():
            if p.name in params:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            params[p.name] = p
        return params

    def zero_grad(self):
        for p in self.named_parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameter_dict().items()}

    def load_state_dict(self, arrays: Dict[str, np.ndarray]):
        params = self.parameter_dict()
        missing = sorted(set(params) - set(arrays))
        unexpected = sorted(set(arrays) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {list(p.shape)}, got {list(value.shape)}")
            p.data = value.copy()


def _walk(value) -> Iterator[Parameter]:
    if isinstance(value, Parameter):
        yield value
    elif isinstance(value, Module):
        yield from value.named_parameters()
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _walk(item)
