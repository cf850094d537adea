"""分段线性模型 (H, G) 及其 Gram 矩阵 Q = GᵀG"""

from enum import Enum
from typing import Iterable, Tuple

import numpy as np

from core.errors import BundleError
from core.problem.oracle import Vector
from utils.constants import GRAM_REFRESH_PERIOD, SIMPLEX_TOLERANCE


class ReplacementStrategy(str, Enum):
    """满容量时的替换策略"""
    CYCLIC = "crs"
    MAX_NORM = "mrs"


class Bundle:
    """容量受限的模型条目集合

    条目按列存放在预分配的数组里，只有前 count 列有效。
    受保护的槽位由调用方在每次 insert 时指定。
    """

    def __init__(self, dimension: int, capacity: int,
                 strategy: ReplacementStrategy = ReplacementStrategy.CYCLIC):
        if capacity < 1:
            raise BundleError(f"bundle 容量必须为正: {capacity}")
        self.dimension = dimension
        self.capacity = capacity
        self.strategy = ReplacementStrategy(strategy)
        self.count = 0
        self.next_slot = 0
        self._scalars = np.zeros(capacity)
        self._gradients = np.zeros((dimension, capacity))
        self._gram = np.zeros((capacity, capacity))
        self._updates = 0

    @property
    def scalars(self) -> Vector:
        return self._scalars[:self.count]

    @property
    def gradients(self) -> np.ndarray:
        return self._gradients[:, :self.count]

    @property
    def gram(self) -> np.ndarray:
        return self._gram[:self.count, :self.count]

    def entry(self, slot: int) -> Tuple[float, Vector]:
        self._check_slot(slot)
        return float(self._scalars[slot]), self._gradients[:, slot].copy()

    def insert(self, h: float, g: Vector, protected: Iterable[int] = ()) -> int:
        """加入一个条目，满容量时按策略替换一个未受保护的槽位"""
        protected = set(protected)
        if self.count < self.capacity:
            slot = self.count
            self.count += 1
        elif self.strategy == ReplacementStrategy.CYCLIC:
            slot = self._cyclic_slot(protected)
        else:
            slot = self._max_norm_slot(protected)
        self._write(slot, h, g)
        return slot

    def overwrite_slot(self, slot: int, h: float, g: Vector) -> None:
        """改写已有槽位，或在 slot == count 时扩展一个槽位"""
        if slot > self.count or slot >= self.capacity:
            raise BundleError(f"无法写入槽位 {slot}: 当前条目数 {self.count}, 容量 {self.capacity}")
        if slot == self.count:
            self.count += 1
        self._write(slot, h, g)

    def linear_payload(self, anchor: Vector) -> Vector:
        """H + Gᵀ anchor"""
        self._require_entries()
        return self.scalars + self.gradients.T @ anchor

    def aggregate(self, weights: Vector) -> Tuple[float, Vector]:
        """(⟨λ, H⟩, Gλ)"""
        self._require_entries()
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.count,):
            raise BundleError(f"权重长度 {weights.shape} 与条目数 {self.count} 不符")
        if weights.min() < -SIMPLEX_TOLERANCE or abs(weights.sum() - 1.0) > SIMPLEX_TOLERANCE:
            raise BundleError(f"权重不在单纯形内: min={weights.min():.3g}, sum={weights.sum():.12g}")
        return float(weights @ self.scalars), self.gradients @ weights

    def recenter(self, shift: Vector, offset: float) -> None:
        """所有条目 g += shift, h += offset（软重启时更换强凸项中心）"""
        if self.count == 0:
            return
        self._gradients[:, :self.count] += shift[:, None]
        self._scalars[:self.count] += offset
        self.refresh_gram()

    def clear(self) -> None:
        self.count = 0
        self.next_slot = 0
        self._updates = 0

    def refresh_gram(self) -> None:
        G = self.gradients
        self._gram[:self.count, :self.count] = G.T @ G
        self._updates = 0

    def _write(self, slot: int, h: float, g: Vector) -> None:
        if not np.all(np.isfinite(g)) or not np.isfinite(h):
            raise BundleError(f"条目包含非有限值 (槽位 {slot})")
        self._scalars[slot] = h
        self._gradients[:, slot] = g
        column = self.gradients.T @ g
        self._gram[slot, :self.count] = column
        self._gram[:self.count, slot] = column
        self._updates += 1
        # 递推更新会累积舍入误差
        if self._updates >= GRAM_REFRESH_PERIOD:
            self.refresh_gram()

    def _cyclic_slot(self, protected: set) -> int:
        for _ in range(self.capacity):
            slot = self.next_slot
            self.next_slot = (self.next_slot + 1) % self.capacity
            if slot not in protected:
                return slot
        raise BundleError("bundle 已满且所有槽位都受保护")

    def _max_norm_slot(self, protected: set) -> int:
        candidates = [i for i in range(self.count) if i not in protected]
        if not candidates:
            raise BundleError("bundle 已满且所有槽位都受保护")
        norms = np.diag(self._gram)[candidates]
        return candidates[int(np.argmax(norms))]

    def _check_slot(self, slot: int) -> None:
        if not 0 <= slot < self.count:
            raise BundleError(f"槽位 {slot} 超出范围 (条目数 {self.count})")

    def _require_entries(self) -> None:
        if self.count == 0:
            raise BundleError("bundle 为空")

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return (f"Bundle(count={self.count}, capacity={self.capacity}, "
                f"strategy={self.strategy.value}, next_slot={self.next_slot})")
