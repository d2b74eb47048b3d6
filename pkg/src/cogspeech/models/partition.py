"""Named split of trainable parameters into pretrained and downstream sets."""

from __future__ import annotations

from ..autodiff import Tensor


class ParameterPartition:
    """Disjoint pretrained/downstream parameter sets.

    Disjointness is checked on names and on tensor identity; completeness
    (the union covering every trainable parameter) holds by construction
    when built from the owning modules' ``parameters()`` dicts.
    """

    def __init__(self, pretrained: dict[str, Tensor], downstream: dict[str, Tensor]):
        name_overlap = set(pretrained) & set(downstream)
        if name_overlap:
            raise ValueError(f"parameter names in both sets: {sorted(name_overlap)}")
        ids_pre = {id(t) for t in pretrained.values()}
        if any(id(t) in ids_pre for t in downstream.values()):
            raise ValueError("a tensor object appears in both partition sets")
        self.pretrained = dict(pretrained)
        self.downstream = dict(downstream)

    def all_parameters(self) -> dict[str, Tensor]:
        return {**self.pretrained, **self.downstream}

    def __len__(self):
        return len(self.pretrained) + len(self.downstream)
