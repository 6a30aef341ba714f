import copy
from typing import Dict, Iterator, List, Tuple

import numpy as np

from .errors import CheckpointError
from .tensor import BatchNormStats, Tensor


class Module:
    """
    Base class for every network piece: parameter discovery, train/eval
    mode, state dicts and status reporting.

    Trainable tensors, ``BatchNormStats`` buffers and child modules are
    found by walking instance attributes (lists of modules included).
    """

    def __init__(self, name: str):
        self.name = name
        self.training = True

    def _children(self) -> Iterator[Tuple[str, object]]:
        for attr, value in vars(self).items():
            if isinstance(value, (Module, Tensor, BatchNormStats)):
                yield attr, value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{attr}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in self._children():
            key = f"{prefix}{attr}"
            if isinstance(value, Module):
                yield from value.named_parameters(f"{key}.")
            elif isinstance(value, Tensor):
                yield key, value

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> List[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for attr, value in self._children():
            key = f"{prefix}{attr}"
            if isinstance(value, Module):
                yield from value.named_buffers(f"{key}.")
            elif isinstance(value, BatchNormStats):
                yield f"{key}.running_mean", value.running_mean
                yield f"{key}.running_var", value.running_var

    def train(self, mode: bool = True) -> 'Module':
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def reset_parameters(self, rng: np.random.Generator):
        """Re-draw every parameter; subclasses with weights override."""
        for _, value in self._children():
            if isinstance(value, Module):
                value.reset_parameters(rng)
            elif isinstance(value, BatchNormStats):
                value.reset()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = sorted(set(targets) - set(state))
        unexpected = sorted(set(state) - set(targets))
        if missing or unexpected:
            raise CheckpointError(f"state mismatch for {self.name}: missing={missing}, unexpected={unexpected}")
        for name, target in targets.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != target.shape:
                raise CheckpointError(f"{self.name}.{name}: expected shape {target.shape}, got {value.shape}")
            target[...] = value

    def frozen_copy(self) -> 'Module':
        """Eval-mode deep copy whose parameters no longer require grad."""
        clone = copy.deepcopy(self)
        clone.eval()
        for p in clone.parameters():
            p.requires_grad = False
            p.grad = None
        return clone

    def get_status(self) -> Dict:
        return {
            'name': self.name,
            'type': type(self).__name__,
            'training': self.training,
            'num_parameters': self.num_parameters(),
        }
