"""
混合時間とスケーリング則の推定

到達時間サンプルから T_mix（T₊ の 75% 分位点）を推定し、
log T と log L の最小二乗で指数を当てはめる
"""

import math
from collections import defaultdict
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from config.logging import LoggingConfig
from core.errors import InsufficientDataError, InvalidInputError
from core.models.enums import FitModel
from core.models.records import (
    HittingRecord,
    LifshitzRatioReport,
    LowerBoundReport,
    ScalingFit,
    TmixEstimate,
)


# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()

MAX_TIMEOUT_FRACTION = 0.25

Points = Union[Mapping[int, float], Iterable[Tuple[int, float]], Iterable[TmixEstimate]]


def group_by_L(records: Iterable[HittingRecord]) -> Dict[int, List[HittingRecord]]:
    """レコードを L ごとにまとめる（L の昇順）"""
    groups: Dict[int, List[HittingRecord]] = defaultdict(list)
    for r in records:
        groups[r.L].append(r)
    return dict(sorted(groups.items()))


def order_statistic_interval(sorted_values: np.ndarray, quantile: float,
                             confidence: float) -> Tuple[float, float]:
    """二項分布による分布に依らない分位点の信頼区間

    Args:
        sorted_values: 昇順に並べたサンプル（打ち切りは +∞）
        quantile: 分位点
        confidence: 信頼水準

    Returns:
        (下限, 上限)
    """
    n = len(sorted_values)
    alpha = 1.0 - confidence
    lo = int(stats.binom.ppf(alpha / 2.0, n, quantile))
    hi = int(stats.binom.ppf(1.0 - alpha / 2.0, n, quantile)) + 1
    lo = min(max(lo, 1), n)
    hi = min(max(hi, 1), n)
    return float(sorted_values[lo - 1]), float(sorted_values[hi - 1])


def interpolated_quantile(sorted_values: np.ndarray, quantile: float) -> Optional[float]:
    """順序統計量の線形補間による分位点（補間が +∞ に掛かる場合は None）"""
    n = len(sorted_values)
    position = (n - 1) * quantile
    if np.isinf(sorted_values[int(math.ceil(position))]):
        return None
    finite = sorted_values[np.isfinite(sorted_values)]
    if len(finite) == 1:
        return float(finite[0])
    return float(np.quantile(finite, position / (len(finite) - 1)))


def estimate_Tmix(records: Sequence[HittingRecord], min_samples: int = 20, quantile: float = 0.75,
                  confidence: float = 0.95) -> TmixEstimate:
    """ある L のサンプルから T_mix を推定する

    順序統計量の線形補間で分位点を求める。打ち切りは +∞ として扱い、
    打ち切りが 25% を超える場合や補間が打ち切りに触れる場合は推定しない。

    Args:
        records: 同じ L のレコード
        min_samples: 必要な打ち切りでないサンプル数
        quantile: 分位点（既定は 0.75）
        confidence: 信頼区間の水準

    Returns:
        推定値と信頼区間

    Raises:
        InvalidInputError: 複数の L が混在する場合
        InsufficientDataError: サンプル不足、または打ち切りが多すぎる場合
    """
    if not records:
        raise InsufficientDataError("サンプルがありません")
    Ls = {r.L for r in records}
    if len(Ls) != 1:
        raise InvalidInputError(f"estimate_Tmix には単一の L のレコードを渡してください: {sorted(Ls)}")
    L = Ls.pop()
    values = np.sort(np.array([r.value for r in records], dtype=np.float64))
    n = len(values)
    timeouts = int(np.isinf(values).sum())
    finite = n - timeouts
    if finite < min_samples:
        raise InsufficientDataError(f"L={L}: 打ち切りでないサンプルが {finite} 個しかありません（{min_samples} 個必要）")
    if timeouts > MAX_TIMEOUT_FRACTION * n:
        raise InsufficientDataError(f"L={L}: 打ち切りが {timeouts}/{n} で多すぎます")
    value = interpolated_quantile(values, quantile)
    if value is None:
        raise InsufficientDataError(f"L={L}: 分位点が打ち切りサンプルに掛かっています")
    ci_low, ci_high = order_statistic_interval(values, quantile, confidence)
    return TmixEstimate(L=L, value=value, ci_low=ci_low, ci_high=ci_high, samples=n,
                        timeouts=timeouts, quantile=quantile, confidence=confidence)


def estimate_all(records: Iterable[HittingRecord], min_samples: int = 20) -> Dict[int, TmixEstimate]:
    """L ごとに推定し、推定できない L は警告して飛ばす"""
    estimates: Dict[int, TmixEstimate] = {}
    for L, group in group_by_L(records).items():
        try:
            estimates[L] = estimate_Tmix(group, min_samples=min_samples)
        except InsufficientDataError as e:
            logger.warning(f"T_mix を推定できません: {e}")
    return estimates


def _normalize_points(points: Points) -> List[Tuple[int, float]]:
    if isinstance(points, Mapping):
        items = list(points.items())
    else:
        items = []
        for p in points:
            if isinstance(p, TmixEstimate):
                items.append((p.L, p.value))
            else:
                L, t = p
                items.append((L, t))
    return [(int(L), float(t)) for L, t in sorted(items)]


def fit_scaling(points: Points, model: FitModel = FitModel.POWER, polylog_power: Optional[float] = None,
                confidence: float = 0.95) -> ScalingFit:
    """T = a·L^b（または a·L^b·(log L)^c）を log-log の最小二乗で当てはめる

    Args:
        points: L ごとの T_mix（辞書、(L, T) の列、または TmixEstimate の列）
        model: POWER または POWER_POLYLOG
        polylog_power: POWER_POLYLOG で c を固定する場合の値（None なら c も推定）
        confidence: 指数の信頼区間の水準

    Returns:
        指数、振幅、信頼区間、残差

    Raises:
        InsufficientDataError: L が 3 種類未満
        InvalidInputError: 計画行列が退化している、または T ≤ 0
    """
    data = _normalize_points(points)
    if len(data) < 3:
        raise InsufficientDataError(f"当てはめには 3 点以上必要です（{len(data)} 点）")
    Ls = np.array([L for L, _ in data], dtype=np.float64)
    Ts = np.array([t for _, t in data], dtype=np.float64)
    if (Ls < 1).any():
        raise InvalidInputError("L は 1 以上でなければなりません")
    if not np.all(np.isfinite(Ts)) or (Ts <= 0).any():
        raise InvalidInputError("T は正の有限値でなければなりません")

    log_L = np.log(Ls)
    y = np.log(Ts)
    columns = [np.ones_like(log_L), log_L]
    free_polylog = model is FitModel.POWER_POLYLOG and polylog_power is None
    if model is FitModel.POWER_POLYLOG:
        if (Ls < 2).any():
            raise InvalidInputError("多重対数補正には L ≥ 2 が必要です")
        log_log_L = np.log(log_L)
        if free_polylog:
            columns.append(log_log_L)
        else:
            y = y - polylog_power * log_log_L

    X = np.stack(columns, axis=1)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise InvalidInputError("計画行列が退化しています（L の値が足りません）")
    dof = len(y) - X.shape[1]
    if dof < 1:
        raise InsufficientDataError(f"自由度が足りません（点 {len(y)}、係数 {X.shape[1]}）")

    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    residuals = y - X @ coef
    sigma2 = float(residuals @ residuals) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    half = float(stats.t.ppf(0.5 + confidence / 2.0, dof)) * math.sqrt(max(cov[1, 1], 0.0))
    exponent = float(coef[1])
    if model is FitModel.POWER_POLYLOG:
        c = float(coef[2]) if free_polylog else float(polylog_power)
    else:
        c = None
    fit = ScalingFit(
        model=model,
        exponent=exponent,
        amplitude=float(math.exp(coef[0])),
        ci_low=exponent - half,
        ci_high=exponent + half,
        polylog_power=c,
        polylog_fixed=not free_polylog,
        residuals=[float(r) for r in residuals],
        points=data,
        confidence=confidence,
    )
    logger.debug(f"当てはめ: model={model}, exponent={exponent:.4f} ± {half:.4f}")
    return fit


def linear_lower_sanity(records: Iterable[HittingRecord], quantile: float = 0.05,
                        min_samples: int = 1) -> LowerBoundReport:
    """T₊ の下側分位点の L 依存性が少なくとも線形であることを確かめる

    Args:
        records: 複数の L のレコード
        quantile: 分位点（既定は 5%）
        min_samples: L ごとに必要なサンプル数

    Returns:
        分位点の当てはめ指数と、それが 1 以上かどうか
    """
    percentiles: Dict[int, float] = {}
    for L, group in group_by_L(records).items():
        values = np.sort(np.array([r.value for r in group], dtype=np.float64))
        if len(values) < min_samples:
            continue
        value = interpolated_quantile(values, quantile)
        if value is not None:
            percentiles[L] = value
    if len(percentiles) < 3:
        raise InsufficientDataError(f"下側分位点を求められる L が {len(percentiles)} 個しかありません（3 個必要）")
    fit = fit_scaling(percentiles, FitModel.POWER)
    return LowerBoundReport(quantile=quantile, percentiles=percentiles, fit=fit,
                            passes=fit.exponent >= 1.0 - 1e-9)


def lifshitz_ratio_report(estimates: Union[Mapping[int, TmixEstimate], Iterable[TmixEstimate]],
                          target: float = 0.5, band: Tuple[float, float] = (0.35, 0.70)) -> LifshitzRatioReport:
    """T_mix / L² の値と、それが target に近づいているかをまとめる"""
    items = list(estimates.values()) if isinstance(estimates, Mapping) else list(estimates)
    if not items:
        raise InsufficientDataError("推定値がありません")
    ratios = {e.L: e.value / float(e.L * e.L) for e in sorted(items, key=lambda e: e.L)}
    gaps = [abs(r - target) for r in ratios.values()]
    largest = ratios[max(ratios)]
    return LifshitzRatioReport(
        ratios=ratios,
        target=target,
        band=band,
        in_band_at_largest=band[0] <= largest <= band[1],
        approaching_target=all(b <= a for a, b in zip(gaps, gaps[1:])),
    )
