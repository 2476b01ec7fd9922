"""
キャンペーン設定モデル

到達時間キャンペーンの次元、L の一覧、プリセット、レプリカ数、シード、
打ち切り規則、定数 c0, c1, c2 を保持し検証する
"""

import hashlib
import json
from typing import Any, Dict, List

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config.settings import DEFAULT_C0, DEFAULT_C1, DEFAULT_C2, DEFAULT_LOG_BASE
from core.models.enums import CampaignPreset, Engine, LogBase
from core.models.lattice import GeometryParams


class CampaignConfig(BaseModel):
    """到達時間キャンペーンの設定"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "campaign"
    d: int = Field(ge=2)
    Ls: List[int] = Field(min_length=1)
    preset: CampaignPreset = CampaignPreset.HYPERCUBE_PLUS
    replicas: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    engine: Engine = Engine.REJECTION_FREE
    tcap: str = "auto"
    c0: float = DEFAULT_C0
    c1: float = DEFAULT_C1
    c2: float = Field(default=DEFAULT_C2, ge=0.0)
    log_base: LogBase = LogBase(DEFAULT_LOG_BASE)
    layer_power: float = Field(default=1.0, ge=0.0)
    record_wall_time: bool = False

    @field_validator("Ls", mode="before")
    @classmethod
    def _split_csv(cls, value: Any) -> Any:
        """設定ファイルの「4, 8, 16」をリストにする"""
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("Ls")
    @classmethod
    def _distinct_positive(cls, value: List[int]) -> List[int]:
        if any(L < 1 for L in value):
            raise ValueError("L は 1 以上でなければなりません")
        if len(set(value)) != len(value):
            raise ValueError("L の値が重複しています")
        return value

    @field_validator("name")
    @classmethod
    def _plain_name(cls, value: str) -> str:
        if not value or any(ch in value for ch in "/\\ \t"):
            raise ValueError("name には空白やパス区切りを含めないでください")
        return value

    @model_validator(mode="after")
    def _check_constants(self) -> "CampaignConfig":
        if not self.c1 > 6.5:
            raise ValueError(f"c1 > 13/2 が必要です (c1={self.c1})")
        if not self.c0 > self.c1 + 2 * self.c2:
            raise ValueError(f"c0 > c1 + 2·c2 が必要です (c0={self.c0}, c1={self.c1}, c2={self.c2})")
        if self.preset.is_cylinder:
            if self.d < 4:
                raise ValueError(f"円柱プリセットには d ≥ 4 が必要です (d={self.d})")
            if min(self.Ls) < 3:
                raise ValueError("円柱プリセットには L ≥ 3 が必要です")
        return self

    def geometry(self, L: int) -> GeometryParams:
        return GeometryParams(L=L, d=self.d, c2=self.c2, log_base=self.log_base)

    def canonical(self) -> Dict[str, Any]:
        """ハッシュと出力への埋め込みに使う正規化した設定"""
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
