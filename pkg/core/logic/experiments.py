"""
到達時間キャンペーン

プリセットの構成、レプリカの並列実行と途中経過の保存、要約、
包含エンベロープの確認、上界の確認、エンジン同等性の比較を行う
"""

import math
import multiprocessing as mp
import os
import re
from functools import lru_cache, partial
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config.logging import LoggingConfig
from config.settings import DEFAULT_JOBS, RESULTS_DIR
from core.errors import InsufficientDataError, InvalidInputError, InvalidParameterError
from core.logic.dynamics import DynamicsState, EnvelopeWatch, UpdateFilter, run_to_absorption, run_until
from core.logic.estimators import (
    estimate_all,
    fit_scaling,
    group_by_L,
    lifshitz_ratio_report,
    linear_lower_sanity,
)
from core.logic.geometry import (
    cylinder,
    eta0,
    eta_slab,
    first_layer,
    hypercube,
    max_shrink_index,
    minus_face_boundary,
    plus_boundary,
    shell3,
    shrunk_set,
)
from core.models.campaign import CampaignConfig
from core.models.enums import BoundaryPreset, CampaignPreset, Engine, FitModel, GeometryPreset, LogBase
from core.models.lattice import BoundaryCondition, GeometryParams, Region
from core.models.records import (
    BoundCheckReport,
    EngineEquivalenceReport,
    EnvelopeReport,
    HittingRecord,
)
from core.models.spin_field import SpinField
from core.services.persistence import append_journal, read_journal, write_json, write_records_csv
from core.services.randomness import EventStream, StreamLabel


# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()

_TCAP_PATTERN = re.compile(
    r"^(?:(?P<a>[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\*)?L\^(?P<p>[0-9]*\.?[0-9]+)"
    r"(?:\*logL\^(?P<q>[0-9]*\.?[0-9]+))?$"
)


def resolve_jobs(jobs: Optional[int]) -> int:
    """0 または None を利用可能なコア数に読み替える"""
    if jobs is None or jobs <= 0:
        return os.cpu_count() or 1
    return jobs


def parse_tcap(rule: str, L: int, preset: CampaignPreset = CampaignPreset.HYPERCUBE_PLUS,
               layer_power: float = 1.0, log_base: LogBase = LogBase.NATURAL) -> float:
    """打ち切り時刻の規則を評価する

    規則は auto、数値、または [a*]L^p[*logL^q]（log は自然対数で 1 未満は 1 に切り上げ）。

    Args:
        rule: 規則の文字列
        L: 一辺の長さ
        preset: auto の解決に使うプリセット
        layer_power: layered プリセットの対数の指数
        log_base: layered プリセットの対数の底

    Returns:
        打ち切り時刻
    """
    text = rule.replace(" ", "")
    log_l = max(math.log(L), 1.0)
    if text == "auto":
        if preset.is_cylinder:
            return float(L ** 3)
        if preset is CampaignPreset.LAYERED:
            return (L + 1) * L * L * max(log_base.log(L), 1.0) ** layer_power + float(L ** 3)
        return 20.0 * L * L * log_l * log_l
    try:
        value = float(text)
    except ValueError:
        match = _TCAP_PATTERN.match(text)
        if match is None:
            raise InvalidParameterError(f"tcap の規則を解釈できません: {rule}") from None
        a = float(match.group("a") or 1.0)
        p = float(match.group("p"))
        q = float(match.group("q") or 0.0)
        value = a * L ** p * log_l ** q
    if not value > 0 or not math.isfinite(value):
        raise InvalidParameterError(f"tcap は正の有限値でなければなりません: {rule}")
    return value


def campaign_tcap(cfg: CampaignConfig, L: int) -> float:
    """キャンペーン設定の tcap を L について評価する"""
    return parse_tcap(cfg.tcap, L, cfg.preset, cfg.layer_power, cfg.log_base)


def layer_freeze_filters(region: Region, L: int, log_factor: float) -> List[UpdateFilter]:
    """最後の座標が j の層を (j−1)·L²·log_factor まで凍結するフィルタ"""
    last = region.coords[:, -1]
    filters = []
    for j in range(2, L + 1):
        sites = np.nonzero(last == j)[0].tolist()
        filters.append(UpdateFilter.freeze_region(sites, (j - 1) * L * L * log_factor))
    return filters


def build_preset(cfg: CampaignConfig, L: int) -> Tuple[Region, BoundaryCondition, List[UpdateFilter]]:
    """プリセットから領域、境界条件、更新フィルタを構成する"""
    preset = cfg.preset
    if preset.is_cylinder:
        gp = cfg.geometry(L)
        return cylinder(gp), eta0(gp, all_plus=preset is CampaignPreset.CYLINDER_PLUS), []
    region = hypercube(L, cfg.d)
    if preset is CampaignPreset.HYPERCUBE_MINUS_FACE:
        return region, minus_face_boundary(region, L), []
    filters: List[UpdateFilter] = []
    if preset is CampaignPreset.LAYERED:
        filters = layer_freeze_filters(region, L, max(cfg.log_base.log(L), 1.0) ** cfg.layer_power)
    return region, plus_boundary(region), filters


def replica_seed(cfg: CampaignConfig, L: int, replica: int, purpose: str = "dynamics") -> int:
    """(キャンペーン, L, レプリカ) のラベルから導いたシード"""
    return StreamLabel(f"{cfg.name}:d{cfg.d}:L{L}", replica, purpose).derive_seed(cfg.seed)


@lru_cache(maxsize=4)
def _prepared(cfg_json: str, L: int) -> Tuple[CampaignConfig, Region, BoundaryCondition, List[UpdateFilter]]:
    cfg = CampaignConfig.model_validate_json(cfg_json)
    region, bc, filters = build_preset(cfg, L)
    return cfg, region, bc, filters


def _minus_state(cfg: CampaignConfig, region: Region, bc: BoundaryCondition,
                 filters: Sequence[UpdateFilter]) -> DynamicsState:
    return DynamicsState(SpinField.uniform(region, -1), bc, filters=filters, engine=cfg.engine)


def _replica_task(cfg_json: str, task: Tuple[int, int]) -> Dict[str, Any]:
    L, replica = task
    cfg, region, bc, filters = _prepared(cfg_json, L)
    seed = replica_seed(cfg, L, replica)
    state = _minus_state(cfg, region, bc, filters)
    record = run_to_absorption(state, EventStream(seed, region.size), campaign_tcap(cfg, L),
                               L=L, replica=replica)
    if not cfg.record_wall_time:
        record.wall_ms = 0.0
    return record.to_dict()


def _map_tasks(func: Callable[[Any], Any], tasks: Sequence[Any], jobs: Optional[int]) -> Iterator[Any]:
    workers = min(resolve_jobs(jobs), len(tasks))
    if workers <= 1:
        for task in tasks:
            yield func(task)
        return
    with mp.Pool(processes=workers) as pool:
        yield from pool.imap_unordered(func, tasks)


def run_replicas(cfg: CampaignConfig, tasks: Sequence[Tuple[int, int]], jobs: Optional[int] = 1,
                 on_record: Optional[Callable[[HittingRecord], None]] = None) -> List[HittingRecord]:
    """(L, replica) の組を並列に実行して結果を返す（保存はしない）"""
    func = partial(_replica_task, cfg.model_dump_json())
    records = []
    for data in _map_tasks(func, list(tasks), jobs):
        record = HittingRecord.from_dict(data)
        records.append(record)
        if on_record is not None:
            on_record(record)
    return sorted(records, key=lambda r: r.key)


def campaign_paths(cfg: CampaignConfig, out_dir: Path) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    return {
        "csv": out_dir / f"{cfg.name}.csv",
        "summary": out_dir / f"{cfg.name}.summary.json",
        "journal": out_dir / f"{cfg.name}.journal.jsonl",
    }


def run_campaign(cfg: CampaignConfig, out_dir: Path = RESULTS_DIR, jobs: Optional[int] = DEFAULT_JOBS,
                 on_record: Optional[Callable[[HittingRecord], None]] = None) -> List[HittingRecord]:
    """キャンペーンを実行し、CSV と要約 JSON を書き出す

    完了したレプリカはジャーナルに逐次追記され、再実行時には飛ばされる。
    同じ設定（シードを含む）からは同じバイト列の CSV が得られる。

    Args:
        cfg: キャンペーン設定
        out_dir: 出力ディレクトリ
        jobs: ワーカー数（0 は全コア）
        on_record: レコードが得られるたびに呼ばれるコールバック

    Returns:
        (L, replica) 順のレコード
    """
    paths = campaign_paths(cfg, out_dir)
    paths["journal"].parent.mkdir(parents=True, exist_ok=True)
    config_hash = cfg.config_hash()
    done = read_journal(paths["journal"], config_hash)
    tasks = [(L, r) for L in cfg.Ls for r in range(cfg.replicas) if (L, r) not in done]
    logger.info(
        f"キャンペーン '{cfg.name}' を開始します: d={cfg.d}, Ls={cfg.Ls}, replicas={cfg.replicas}, "
        f"実行 {len(tasks)} 件, 再利用 {len(done)} 件, hash={config_hash}"
    )
    if on_record is not None:
        for record in done.values():
            on_record(record)

    def persist(record: HittingRecord) -> None:
        append_journal(paths["journal"], record, config_hash)
        done[record.key] = record
        if on_record is not None:
            on_record(record)

    run_replicas(cfg, tasks, jobs, persist)
    records = sorted(done.values(), key=lambda r: r.key)
    write_records_csv(paths["csv"], records, config_hash, cfg.seed)
    write_json(paths["summary"], summarize_campaign(cfg, records))
    paths["journal"].unlink(missing_ok=True)
    timeouts = sum(r.timeout for r in records)
    if timeouts:
        logger.warning(f"キャンペーン '{cfg.name}': {timeouts} 件が打ち切りになりました")
    logger.info(f"キャンペーン '{cfg.name}' が完了しました: {len(records)} 件")
    return records


def summarize_campaign(cfg: Optional[CampaignConfig], records: Sequence[HittingRecord],
                       min_samples: int = 20, config_hash: Optional[str] = None,
                       seed: Optional[int] = None) -> Dict[str, Any]:
    """L ごとの T_mix、指数の当てはめ、付随する確認をまとめる"""
    estimates = estimate_all(records, min_samples=min_samples)
    per_L = {}
    for L, group in group_by_L(records).items():
        entry: Dict[str, Any] = {"samples": len(group), "timeouts": sum(r.timeout for r in group)}
        entry["tmix"] = estimates[L].to_dict() if L in estimates else None
        per_L[str(L)] = entry
    summary: Dict[str, Any] = {
        "config": cfg.canonical() if cfg is not None else None,
        "config_hash": cfg.config_hash() if cfg is not None else config_hash,
        "seed": cfg.seed if cfg is not None else seed,
        "per_L": per_L,
        "fit": None,
        "fit_polylog": None,
        "lower_bound": None,
    }
    if len(estimates) >= 3:
        summary["fit"] = fit_scaling(list(estimates.values()), FitModel.POWER).to_dict()
        try:
            summary["fit_polylog"] = fit_scaling(list(estimates.values()), FitModel.POWER_POLYLOG,
                                                 polylog_power=10.0).to_dict()
        except InvalidInputError as e:
            logger.debug(f"多重対数補正つきの当てはめを省略しました: {e}")
    if estimates and (cfg is None or cfg.d == 2):
        summary["lifshitz_ratio"] = lifshitz_ratio_report(estimates).to_dict()
    try:
        summary["lower_bound"] = linear_lower_sanity(records).to_dict()
    except (InsufficientDataError, InvalidInputError) as e:
        logger.debug(f"下界の確認を省略しました: {e}")
    summary["polylog_bound"] = polylog_bound_check(records).to_dict()
    return summary


def polylog_bound_check(records: Iterable[HittingRecord], power: float = 10.0) -> BoundCheckReport:
    """全サンプルで T₊ < L²(ln L)^power が成り立つかを確かめる

    L < 2 は上界が退化するため対象外。打ち切りは判定不能として数える。
    """
    checked = unresolved = 0
    worst = 0.0
    violations: List[Dict[str, Any]] = []
    for r in records:
        if r.L < 2:
            continue
        bound = r.L * r.L * math.log(r.L) ** power
        checked += 1
        if r.timeout:
            unresolved += 1
            continue
        ratio = r.t_plus / bound
        worst = max(worst, ratio)
        if r.t_plus >= bound:
            violations.append({"L": r.L, "replica": r.replica, "t_plus": r.t_plus, "bound": bound})
    return BoundCheckReport(power=power, checked=checked, violations=violations,
                            unresolved=unresolved, worst_ratio=worst)


# ----------------------------------------------------------------------
# 単発のシミュレーション
# ----------------------------------------------------------------------

_DEFAULT_BOUNDARY = {
    GeometryPreset.HYPERCUBE: BoundaryPreset.PLUS,
    GeometryPreset.CYLINDER: BoundaryPreset.ETA0,
    GeometryPreset.SHELL: BoundaryPreset.SHELL,
    GeometryPreset.SLAB: BoundaryPreset.ETA_SLAB,
    GeometryPreset.LAYER: BoundaryPreset.ETA0,
}

_ALLOWED_BOUNDARY = {
    GeometryPreset.HYPERCUBE: {BoundaryPreset.PLUS, BoundaryPreset.MINUS_FACE},
    GeometryPreset.CYLINDER: {BoundaryPreset.ETA0, BoundaryPreset.CYLINDER_PLUS},
    GeometryPreset.SHELL: {BoundaryPreset.SHELL},
    GeometryPreset.SLAB: {BoundaryPreset.ETA_SLAB},
    GeometryPreset.LAYER: {BoundaryPreset.ETA0},
}


def build_simulation(gp: GeometryParams, geometry: GeometryPreset,
                     boundary: Optional[BoundaryPreset] = None, i: int = 0,
                     r: Optional[float] = None, l: Optional[float] = None) -> Tuple[Region, BoundaryCondition]:
    """幾何プリセットと境界条件プリセットから領域と境界条件を作る

    Args:
        gp: 幾何パラメータ
        geometry: 幾何プリセット
        boundary: 境界条件プリセット（省略時は幾何ごとの既定値）
        i: slab の縮小段階
        r: shell の外半径（省略時は L）
        l: shell の厚さ（省略時は r/2）

    Raises:
        InvalidParameterError: 幾何と境界条件の組み合わせが不正な場合
    """
    boundary = boundary or _DEFAULT_BOUNDARY[geometry]
    if boundary not in _ALLOWED_BOUNDARY[geometry]:
        raise InvalidParameterError(f"幾何 {geometry} に境界条件 {boundary} は使えません")
    if geometry is GeometryPreset.HYPERCUBE:
        region = hypercube(gp.L, gp.d)
        if boundary is BoundaryPreset.MINUS_FACE:
            return region, minus_face_boundary(region, gp.L)
        return region, plus_boundary(region)
    if geometry is GeometryPreset.CYLINDER:
        return cylinder(gp), eta0(gp, all_plus=boundary is BoundaryPreset.CYLINDER_PLUS)
    if geometry is GeometryPreset.SHELL:
        outer = float(gp.L) if r is None else float(r)
        return shell3(outer, outer / 2.0 if l is None else float(l))
    if geometry is GeometryPreset.SLAB:
        return eta_slab(gp, i)
    return first_layer(gp)


def simulation_filters(gp: GeometryParams, geometry: GeometryPreset, region: Region, kind: str,
                       layer_power: float = 1.0, protect_index: int = 1) -> List[UpdateFilter]:
    """simulate の --filter 指定を更新フィルタに変換する

    block_minus_outside は円柱 C_L の中で C^(protect_index) の外側に − を置く更新を打ち消す。
    それ以外の幾何では縮小集合が定義されないため受け付けない。

    Raises:
        InvalidParameterError: 未知のフィルタ、または円柱以外での block_minus_outside
    """
    if kind == "none":
        return []
    if kind == "layered":
        return layer_freeze_filters(region, gp.L, max(gp.log_base.log(gp.L), 1.0) ** layer_power)
    if kind == "block_minus_outside":
        if geometry is not GeometryPreset.CYLINDER:
            raise InvalidParameterError(f"block_minus_outside は円柱でのみ使えます（指定: {geometry}）")
        protected = region.lookup(shrunk_set(gp, protect_index).coords)
        protected = protected[protected >= 0]
        return [UpdateFilter.block_minus_outside(protected.tolist())]
    raise InvalidParameterError(f"未知のフィルタです: {kind}")


def simulate(gp: GeometryParams, geometry: GeometryPreset = GeometryPreset.HYPERCUBE,
             boundary: Optional[BoundaryPreset] = None, engine: Engine = Engine.REJECTION_FREE,
             seed: int = 0, replica: int = 0, tcap: str = "L^3", start: str = "minus",
             filter_kind: str = "none", layer_power: float = 1.0, protect_index: int = 1,
             i: int = 0, r: Optional[float] = None, l: Optional[float] = None,
             record_wall_time: bool = False) -> Dict[str, Any]:
    """1 本の軌道を走らせ、到達時間の記録と解決済みの設定を返す

    record_wall_time が偽のとき wall_ms は 0 になり、同じ引数からは同じ結果が得られる。
    """
    region, bc = build_simulation(gp, geometry, boundary, i, r, l)
    filters = simulation_filters(gp, geometry, region, filter_kind, layer_power, protect_index)
    stream_seed = StreamLabel(f"simulate:{geometry}", replica).derive_seed(seed)
    field = SpinField.uniform(region, -1 if start == "minus" else 1)
    state = DynamicsState(field, bc, filters=filters, engine=engine)
    t_cap = parse_tcap(tcap, gp.L)
    logger.info(f"シミュレーションを開始します: {geometry}, |Γ|={region.size}, engine={engine}, tcap={t_cap:.6g}")
    record = run_to_absorption(state, EventStream(stream_seed, region.size), t_cap, L=gp.L, replica=replica)
    if not record_wall_time:
        record.wall_ms = 0.0
    return {
        "record": record.to_dict(),
        "region_size": region.size,
        "boundary_size": bc.sites.size,
        "boundary_minus": int((bc.spins < 0).sum()),
        "t_cap": t_cap,
        "cancellations": state.cancellations,
    }


# ----------------------------------------------------------------------
# 包含エンベロープ
# ----------------------------------------------------------------------

def shrink_levels(cfg: CampaignConfig, L: int, max_i: int) -> np.ndarray:
    """円柱の各サイトについて site ∈ C^(i) となる最大の i（max_i で頭打ち）"""
    gp = cfg.geometry(L)
    region = cylinder(gp)
    levels = np.zeros(region.size, dtype=np.int64)
    for i in range(1, max_i + 1):
        idx = region.lookup(shrunk_set(gp, i).coords)
        levels[idx] = i
    return levels


def envelope_checkpoints(cfg: CampaignConfig, L: int) -> Tuple[List[float], float]:
    """t_i = i·L·(log L)^{c0}（t_i ≤ L³ の範囲）と窓の終端 L³"""
    window_end = float(L ** 3)
    step = L * cfg.log_base.log(L) ** cfg.c0
    top = max_shrink_index(cfg.geometry(L))
    checkpoints = [0.0]
    for i in range(1, top + 1):
        if i * step > window_end:
            break
        checkpoints.append(i * step)
    return checkpoints, window_end


@lru_cache(maxsize=2)
def _envelope_prepared(cfg_json: str, L: int):
    cfg, region, bc, filters = _prepared(cfg_json, L)
    checkpoints, window_end = envelope_checkpoints(cfg, L)
    levels = shrink_levels(cfg, L, len(checkpoints) - 1)
    return cfg, region, bc, filters, levels, checkpoints, window_end


def _envelope_task(cfg_json: str, task: Tuple[int, int]) -> Dict[str, Any]:
    L, replica = task
    cfg, region, bc, filters, levels, checkpoints, window_end = _envelope_prepared(cfg_json, L)
    watch = EnvelopeWatch(levels, checkpoints)
    state = _minus_state(cfg, region, bc, filters)
    stream = EventStream(replica_seed(cfg, L, replica, "envelope"), region.size)
    result = run_until(state, stream, window_end, [watch], stop_on_absorption=True)
    return {
        "L": L,
        "checkpoint": [bool(v) for v in watch.checkpoint_violations()],
        "window": [v is not None for v in watch.window_violations()],
        "absorbed": result.absorbed_at is not None,
    }


def envelope_check(cfg: CampaignConfig, jobs: Optional[int] = 1) -> List[EnvelopeReport]:
    """全マイナスから始めた η₀ 円柱で、時刻 t_i 以降の − が C^(i) に含まれるかを調べる

    各 L について、t_i 時点での違反率と窓 [t_i, L³] 内の違反率を i ごとに返す。
    違反はデータであり失敗ではない。
    """
    if not cfg.preset.is_cylinder:
        raise InvalidParameterError("envelope_check には円柱プリセットが必要です")
    tasks = [(L, r) for L in cfg.Ls for r in range(cfg.replicas)]
    func = partial(_envelope_task, cfg.model_dump_json())
    outcomes: Dict[int, List[Dict[str, Any]]] = {L: [] for L in cfg.Ls}
    for data in _map_tasks(func, tasks, jobs):
        outcomes[data["L"]].append(data)

    reports = []
    for L in cfg.Ls:
        checkpoints, window_end = envelope_checkpoints(cfg, L)
        rows = outcomes[L]
        n = len(rows)
        reports.append(EnvelopeReport(
            d=cfg.d,
            L=L,
            replicas=n,
            checkpoints=checkpoints,
            checkpoint_violation=[sum(r["checkpoint"][i] for r in rows) / n for i in range(len(checkpoints))],
            window_violation=[sum(r["window"][i] for r in rows) / n for i in range(len(checkpoints))],
            window_end=window_end,
            absorbed=sum(r["absorbed"] for r in rows),
        ))
        logger.info(f"エンベロープ確認: L={L}, 段階数={len(checkpoints)}, 吸収 {reports[-1].absorbed}/{n}")
    return reports


# ----------------------------------------------------------------------
# エンジン同等性
# ----------------------------------------------------------------------

def engine_equivalence(d: int, L: int, samples: int, seed: int = 0, tcap: str = "auto",
                       jobs: Optional[int] = 1) -> EngineEquivalenceReport:
    """グラフィカルと rejection-free の T₊ 分布を平均と順位検定で比較する"""
    if samples < 2:
        raise InvalidParameterError("samples は 2 以上でなければなりません")
    values = {}
    for engine in (Engine.GRAPHICAL, Engine.REJECTION_FREE):
        cfg = CampaignConfig(name=f"engine-{engine}", d=d, Ls=[L], replicas=samples, seed=seed,
                             engine=engine, tcap=tcap)
        records = run_replicas(cfg, [(L, r) for r in range(samples)], jobs)
        finite = [r.t_plus for r in records if not r.timeout]
        if len(finite) < 2:
            raise InsufficientDataError(f"{engine}: 打ち切りでないサンプルが足りません")
        values[engine] = np.array(finite, dtype=np.float64)

    g, rf = values[Engine.GRAPHICAL], values[Engine.REJECTION_FREE]
    sem_g = float(g.std(ddof=1) / math.sqrt(len(g)))
    sem_rf = float(rf.std(ddof=1) / math.sqrt(len(rf)))
    spread = math.sqrt(sem_g ** 2 + sem_rf ** 2)
    z = abs(float(g.mean() - rf.mean())) / spread if spread > 0 else 0.0
    p = float(stats.mannwhitneyu(g, rf, alternative="two-sided").pvalue)
    return EngineEquivalenceReport(
        d=d, L=L, samples=samples,
        mean_graphical=float(g.mean()), mean_rejection_free=float(rf.mean()),
        sem_graphical=sem_g, sem_rejection_free=sem_rf,
        z_score=z, mannwhitney_p=p,
    )
