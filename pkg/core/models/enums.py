"""
列挙型の定義

対数の底、エンジン種別、フィルタ種別、プリセットなどシステム全体で使用される列挙型を定義
"""

import math
from enum import Enum


class LogBase(Enum):
    """多重対数半径で使う対数の底"""
    NATURAL = "natural"
    BASE2 = "base2"
    BASE10 = "base10"

    def log(self, x: float) -> float:
        """この底での対数を返す

        Args:
            x: 正の実数

        Returns:
            対数値
        """
        if self is LogBase.BASE2:
            return math.log2(x)
        if self is LogBase.BASE10:
            return math.log10(x)
        return math.log(x)

    def __str__(self) -> str:
        return self.value


class Engine(Enum):
    """ダイナミクスの実行エンジン"""
    GRAPHICAL = "graphical"
    REJECTION_FREE = "rejection_free"

    def __str__(self) -> str:
        return self.value


class FilterKind(Enum):
    """更新フィルタの種類"""
    NONE = "none"
    FREEZE_REGION = "freeze_region"
    BLOCK_MINUS_OUTSIDE = "block_minus_outside"

    def __str__(self) -> str:
        return self.value


class GeometryPreset(Enum):
    """simulate コマンドの幾何プリセット"""
    HYPERCUBE = "hypercube"
    CYLINDER = "cylinder"
    SHELL = "shell"
    SLAB = "slab"
    LAYER = "layer"

    def __str__(self) -> str:
        return self.value


class BoundaryPreset(Enum):
    """simulate コマンドの境界条件プリセット"""
    PLUS = "plus"
    MINUS_FACE = "minus_face"
    ETA0 = "eta0"
    CYLINDER_PLUS = "cylinder_plus"
    ETA_SLAB = "eta_slab"
    SHELL = "shell"

    def __str__(self) -> str:
        return self.value


class CampaignPreset(Enum):
    """キャンペーンの幾何＋境界条件の組み合わせ"""
    HYPERCUBE_PLUS = "hypercube_plus"
    HYPERCUBE_MINUS_FACE = "hypercube_minus_face"
    CYLINDER_ETA0 = "cylinder_eta0"
    CYLINDER_PLUS = "cylinder_plus"
    LAYERED = "layered"

    @property
    def is_cylinder(self) -> bool:
        return self in (CampaignPreset.CYLINDER_ETA0, CampaignPreset.CYLINDER_PLUS)

    def __str__(self) -> str:
        return self.value


class FitModel(Enum):
    """スケーリング則のモデル"""
    POWER = "power"
    POWER_POLYLOG = "power_polylog"

    def __str__(self) -> str:
        return self.value
