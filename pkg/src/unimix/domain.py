"""Ordered collections of scans tagged with the domain they come from."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .seeding import derive_rng

DOMAIN_TAGS = ("source", "bridge", "target")


class DomainError(ValueError):
    pass


@dataclass
class DomainDataset:
    """``samples`` is a list of ``(cloud, labels)``; target labels may be ``None``.

    Target labels, when present, exist only for evaluation: :meth:`training_view`
    strips them, and the training loops only ever consume that view.
    """

    samples: list
    tag: str = "source"
    seed: int = 0
    weather: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        if self.tag not in DOMAIN_TAGS:
            raise DomainError(f"unknown domain tag {self.tag!r}")
        if self.tag != "target" and any(lab is None for _, lab in self.samples):
            raise DomainError(f"{self.tag} samples must all be labelled")

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def labeled(self) -> bool:
        return all(lab is not None for _, lab in self.samples)

    def training_view(self) -> "DomainDataset":
        if self.tag != "target":
            return self
        return DomainDataset([(c, None) for c, _ in self.samples], "target", self.seed, self.weather)

    def order(self, epoch: int) -> np.ndarray:
        """Shuffled sample order for ``epoch``; a pure function of (seed, epoch)."""
        return derive_rng(self.seed, f"shuffle-{self.tag}", epoch).permutation(len(self.samples))

    def batches(self, epoch: int, batch_size: int):
        idx = self.order(epoch)
        for start in range(0, len(idx), batch_size):
            yield idx[start:start + batch_size]
