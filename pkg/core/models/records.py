"""
計測結果モデル

到達時間の記録、混合時間の推定値、スケーリング則の当てはめ結果、
各種検証レポートのデータ構造を定義
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from core.errors import InvalidInputError
from core.models.enums import FitModel


CSV_HEADER = "d,L,replica,seed,t_plus,timeout,events,wall_ms"


def finite_or_none(value: Optional[float]) -> Optional[float]:
    """JSON に書けない無限大や NaN を None に置き換える"""
    if value is None or not math.isfinite(value):
        return None
    return float(value)


@dataclass
class HittingRecord:
    """1 レプリカ分の全プラス到達時間 T₊ の記録"""
    d: int
    L: int
    replica: int
    seed: int
    t_plus: Optional[float]
    timeout: bool
    events: int
    wall_ms: float = 0.0

    def __post_init__(self):
        if self.timeout != (self.t_plus is None):
            raise InvalidInputError("timeout と t_plus の欠損は一致しなければなりません")
        if self.t_plus is not None and self.t_plus < 0:
            raise InvalidInputError(f"T₊ は非負でなければなりません: {self.t_plus}")

    @property
    def key(self) -> Tuple[int, int]:
        return (self.L, self.replica)

    @property
    def value(self) -> float:
        """打ち切りを +∞ とした T₊"""
        return math.inf if self.t_plus is None else self.t_plus

    def to_csv_fields(self) -> List[str]:
        """CSV_HEADER の列順に並べた csv.writer 用の値"""
        t_plus = "" if self.t_plus is None else repr(float(self.t_plus))
        return [str(self.d), str(self.L), str(self.replica), str(self.seed), t_plus,
                str(int(self.timeout)), str(self.events), f"{self.wall_ms:.3f}"]

    @classmethod
    def from_csv_row(cls, row: Dict[str, str]) -> "HittingRecord":
        """csv.DictReader の 1 行から復元"""
        try:
            timeout = row["timeout"].strip() in ("1", "true", "True")
            t_plus = None if timeout or not row["t_plus"].strip() else float(row["t_plus"])
            return cls(
                d=int(row["d"]),
                L=int(row["L"]),
                replica=int(row["replica"]),
                seed=int(row["seed"]),
                t_plus=t_plus,
                timeout=timeout,
                events=int(row["events"]),
                wall_ms=float(row.get("wall_ms") or 0.0),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise InvalidInputError(f"CSV 行を解釈できません: {row}") from e

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HittingRecord":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


@dataclass
class TmixEstimate:
    """ある L における混合時間（T₊ の分位点）の推定"""
    L: int
    value: float
    ci_low: float
    ci_high: float
    samples: int
    timeouts: int
    quantile: float = 0.75
    confidence: float = 0.95

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["ci_low"] = finite_or_none(self.ci_low)
        data["ci_high"] = finite_or_none(self.ci_high)
        return data


@dataclass
class ScalingFit:
    """log T と log L の最小二乗当てはめの結果"""
    model: FitModel
    exponent: float
    amplitude: float
    ci_low: float
    ci_high: float
    polylog_power: Optional[float] = None
    polylog_fixed: bool = True
    residuals: List[float] = field(default_factory=list)
    points: List[Tuple[int, float]] = field(default_factory=list)
    confidence: float = 0.95

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": str(self.model),
            "exponent": self.exponent,
            "amplitude": self.amplitude,
            "ci": [finite_or_none(self.ci_low), finite_or_none(self.ci_high)],
            "polylog_power": self.polylog_power,
            "polylog_fixed": self.polylog_fixed,
            "residuals": list(self.residuals),
            "points": [[L, t] for L, t in self.points],
            "confidence": self.confidence,
        }


@dataclass
class LowerBoundReport:
    """下側分位点の指数が 1 以上かどうかの確認結果"""
    quantile: float
    percentiles: Dict[int, float]
    fit: ScalingFit
    passes: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "quantile": self.quantile,
            "percentiles": {str(L): v for L, v in sorted(self.percentiles.items())},
            "fit": self.fit.to_dict(),
            "passes": self.passes,
        }


@dataclass
class BoundCheckReport:
    """T₊ < L²(log L)^power が全サンプルで成り立つかの確認結果"""
    power: float
    checked: int
    violations: List[Dict[str, Any]]
    unresolved: int
    worst_ratio: float

    @property
    def passes(self) -> bool:
        return not self.violations and self.unresolved == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "power": self.power,
            "checked": self.checked,
            "violations": self.violations,
            "unresolved": self.unresolved,
            "worst_ratio": finite_or_none(self.worst_ratio),
            "passes": self.passes,
        }


@dataclass
class LifshitzRatioReport:
    """T_mix / L² の L 依存性"""
    ratios: Dict[int, float]
    target: float
    band: Tuple[float, float]
    in_band_at_largest: bool
    approaching_target: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ratios": {str(L): r for L, r in sorted(self.ratios.items())},
            "target": self.target,
            "band": list(self.band),
            "in_band_at_largest": self.in_band_at_largest,
            "approaching_target": self.approaching_target,
        }


@dataclass
class EngineEquivalenceReport:
    """二つのエンジンの T₊ 分布の比較"""
    d: int
    L: int
    samples: int
    mean_graphical: float
    mean_rejection_free: float
    sem_graphical: float
    sem_rejection_free: float
    z_score: float
    mannwhitney_p: float

    @property
    def passes(self) -> bool:
        return self.z_score <= 3.0 and self.mannwhitney_p > 1e-3

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["passes"] = self.passes
        return data


@dataclass
class DominationReport:
    """結合実行での順序保存の確認結果"""
    seed: int
    events: int
    comparisons: List[Tuple[int, int]]
    checks: int
    switches: int
    identical: bool
    final_minus: List[int]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["comparisons"] = [list(p) for p in self.comparisons]
        data["violations"] = 0
        return data


@dataclass
class CensoringReport:
    """検閲付きダイナミクスと元のダイナミクスの比較結果"""
    seed: int
    events: int
    cancellations: int
    first_cancel_time: Optional[float]
    protected_size: int
    region_size: int

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["violations"] = 0
        return data


@dataclass
class SliceReport:
    """スラブとスライスごとの 3 次元シェルの再生比較結果"""
    d: int
    L: int
    i: Optional[int]
    seed: int
    t_max: float
    slab_size: int
    events: int
    flips: int
    slices: List[Dict[str, Any]]
    cancellation_sites: int

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["mismatches"] = 0
        return data


@dataclass
class EnvelopeReport:
    """円柱の縮小集合への包含の経験的な違反率"""
    d: int
    L: int
    replicas: int
    checkpoints: List[float]
    checkpoint_violation: List[float]
    window_violation: List[float]
    window_end: float
    absorbed: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "d": self.d,
            "L": self.L,
            "replicas": self.replicas,
            "window_end": self.window_end,
            "absorbed": self.absorbed,
            "per_i": [
                {"i": i, "t_i": t, "checkpoint_fraction": c, "window_fraction": w}
                for i, (t, c, w) in enumerate(
                    zip(self.checkpoints, self.checkpoint_violation, self.window_violation)
                )
            ],
        }
