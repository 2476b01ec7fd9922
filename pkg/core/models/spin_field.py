"""
スピン配置モデル

領域上の ±1 スピン配置とマイナススピン数のキャッシュを管理
"""

import numpy as np

from core.errors import InvalidInputError, StateAuditError
from core.models.lattice import Region


class SpinField:
    """領域の密インデックスで並んだ ±1 スピン配列"""

    def __init__(self, region: Region, spins: np.ndarray):
        """初期化

        Args:
            region: 対象領域
            spins: 長さ |region| の ±1 配列
        """
        spins = np.array(spins, dtype=np.int8).reshape(-1)
        if len(spins) != region.size:
            raise InvalidInputError(f"スピン数 {len(spins)} が領域サイズ {region.size} と一致しません")
        if region.size and not np.all((spins == 1) | (spins == -1)):
            raise InvalidInputError("スピンは ±1 でなければなりません")
        self.region = region
        self.spins = spins
        self.minus_count = int((spins < 0).sum())

    @classmethod
    def uniform(cls, region: Region, spin: int) -> "SpinField":
        """一様な配置（全 + または全 -）"""
        return cls(region, np.full(region.size, spin, dtype=np.int8))

    def __len__(self) -> int:
        return len(self.spins)

    def get(self, index: int) -> int:
        return int(self.spins[index])

    def set(self, index: int, spin: int) -> int:
        """スピンを書き換えて以前の値を返す"""
        old = int(self.spins[index])
        if old != spin:
            self.spins[index] = spin
            self.minus_count += 1 if spin < 0 else -1
        return old

    def recount(self) -> int:
        """マイナススピン数を直接数える"""
        return int((self.spins < 0).sum())

    def audit(self) -> None:
        """キャッシュと直接カウントの一致を確認

        Raises:
            StateAuditError: 一致しない場合
        """
        actual = self.recount()
        if actual != self.minus_count:
            raise StateAuditError(f"minus_count のキャッシュ {self.minus_count} が実際の値 {actual} と一致しません")

    def is_all_plus(self) -> bool:
        return self.minus_count == 0

    def copy(self) -> "SpinField":
        return SpinField(self.region, self.spins.copy())

    def dominated_by(self, other: "SpinField") -> bool:
        """self ≤ other が各点で成り立つか"""
        return bool(np.all(self.spins <= other.spins))

    def __repr__(self) -> str:
        return f"SpinField(size={len(self.spins)}, minus={self.minus_count})"
