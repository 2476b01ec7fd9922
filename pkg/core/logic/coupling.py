"""
結合実行と経路ごとの検証

一本のイベントストリームを複数のダイナミクスで共有し、
順序保存、検閲付きダイナミクスとの比較、スライス分解を
イベントごとの厳密な主張として確かめる
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.logging import LoggingConfig
from core.errors import InvalidInputError, InvalidModeError, InvalidParameterError, VerificationError
from core.logic.dynamics import (
    DynamicsState,
    FlipRecorder,
    UpdateFilter,
    apply_event,
    run_until,
)
from core.logic.geometry import ball_radius, discrete_ball3, first_layer, hypercube, shell_between, slab_partition
from core.models.enums import Engine
from core.models.lattice import BoundaryCondition, GeometryParams, Region
from core.models.records import CensoringReport, DominationReport, SliceReport
from core.models.spin_field import SpinField
from core.services.randomness import Event, EventStream, StreamLabel, restrict_view


# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()


@dataclass
class BoundarySwitch:
    """時刻 time の後から states[state_index] の境界条件を bc に差し替える"""
    time: float
    state_index: int
    bc: BoundaryCondition


FaultHook = Callable[["CoupledRun", Event, int], None]


class CoupledRun:
    """同じ領域上の複数の状態と、それらが共有するストリーム"""

    def __init__(self, states: Sequence[DynamicsState], stream: EventStream,
                 comparisons: Sequence[Tuple[int, int]] = (),
                 schedule: Sequence[BoundarySwitch] = ()):
        """初期化

        Args:
            states: 結合する状態（すべて同じ領域、グラフィカルエンジン）
            stream: 共有ストリーム
            comparisons: 順序 states[a] ≤ states[b] を確かめる組 (a, b)
            schedule: 境界条件の時間変化
        """
        if not states:
            raise InvalidInputError("結合実行には少なくとも 1 つの状態が必要です")
        region = states[0].region
        for s in states:
            if s.region != region:
                raise InvalidInputError("結合する状態の領域が一致しません")
            if s.engine is not Engine.GRAPHICAL:
                raise InvalidModeError("結合実行ではグラフィカルエンジンが必須です")
        if stream.size != region.size:
            raise InvalidInputError(f"ストリームのサイト数 {stream.size} が領域サイズ {region.size} と一致しません")
        for a, b in comparisons:
            if not (0 <= a < len(states) and 0 <= b < len(states)):
                raise InvalidInputError(f"比較の組 ({a}, {b}) が状態の範囲外です")
        for sw in schedule:
            if not 0 <= sw.state_index < len(states):
                raise InvalidInputError(f"境界の切り替え先 {sw.state_index} が状態の範囲外です")
            if sw.bc.region != region:
                raise InvalidInputError("切り替える境界条件の領域が一致しません")
        for s in states:
            s.coupled = True
        self.states = list(states)
        self.stream = stream
        self.region = region
        self.comparisons = [tuple(p) for p in comparisons]
        self.schedule = sorted(schedule, key=lambda sw: sw.time)


def _witness(run: CoupledRun, event: Optional[Event], index: int, **extra: Any) -> Dict[str, Any]:
    data: Dict[str, Any] = {"seed": run.stream.seed, "event_index": index}
    if event is not None:
        data.update({"time": event.time, "site": event.site, "coords": list(run.region.site(event.site))})
    data.update(extra)
    return data


def _check_boundaries(run: CoupledRun) -> None:
    for a, b in run.comparisons:
        if not run.states[a].bc.is_dominated_by(run.states[b].bc):
            raise InvalidInputError(f"境界条件が順序づけられていません: η_{a} ≰ η_{b}")


def _check_full_order(run: CoupledRun, event: Optional[Event], index: int) -> None:
    for a, b in run.comparisons:
        bad = np.nonzero(run.states[a].field.spins > run.states[b].field.spins)[0]
        if len(bad):
            site = int(bad[0])
            logger.error(f"順序違反: pair=({a}, {b}), site={site}")
            raise VerificationError(
                f"順序保存が破れました: σ_{a} ≰ σ_{b}",
                _witness(run, event, index, pair=[a, b], violating_site=site,
                         violating_coords=list(run.region.site(site))),
            )


def coupled_run(run: CoupledRun, t_max: float, fault_hook: Optional[FaultHook] = None) -> DominationReport:
    """共有ストリームで全状態を進め、各イベント後に順序を確かめる

    Args:
        run: 結合実行
        t_max: 終了時刻
        fault_hook: 各イベント適用後に呼ばれるフック（故障注入の試験用）

    Returns:
        違反がなかった場合のレポート

    Raises:
        InvalidInputError: 初期配置または境界条件が順序づけられていない場合
        VerificationError: 順序が破れた場合
    """
    states = run.states
    clock = states[0].clock
    for s in states:
        if s.clock != clock:
            raise InvalidInputError("結合する状態の時刻が揃っていません")
    if t_max < clock:
        raise InvalidParameterError(f"t_max={t_max} が現在時刻 {clock} より前です")

    pending = list(run.schedule)
    switches = 0
    while pending and pending[0].time <= clock:
        sw = pending.pop(0)
        states[sw.state_index].replace_boundary(sw.bc)
        switches += 1
    _check_boundaries(run)
    for a, b in run.comparisons:
        if not states[a].field.dominated_by(states[b].field):
            raise InvalidInputError(f"初期配置が順序づけられていません: ξ_{a} ≰ ξ_{b}")

    identical = all(np.array_equal(states[0].field.spins, s.field.spins) for s in states[1:])
    events = checks = 0
    pairs = run.comparisons
    while True:
        horizon = min(t_max, pending[0].time) if pending else t_max
        event = run.stream.next_before(horizon)
        if event is None:
            if pending and pending[0].time <= t_max:
                t_switch = pending[0].time
                while pending and pending[0].time == t_switch:
                    sw = pending.pop(0)
                    states[sw.state_index].replace_boundary(sw.bc)
                    switches += 1
                _check_boundaries(run)
                _check_full_order(run, None, events)
                continue
            break
        events += 1
        for s in states:
            apply_event(s, event)
        if fault_hook is not None:
            fault_hook(run, event, events)
        site = event.site
        spins_here = [int(s.field.spins[site]) for s in states]
        for a, b in pairs:
            checks += 1
            if spins_here[a] > spins_here[b]:
                logger.error(f"順序違反: pair=({a}, {b}), time={event.time:.6g}, site={site}")
                raise VerificationError(
                    f"順序保存が破れました: σ_{a} ≰ σ_{b}",
                    _witness(run, event, events, pair=[a, b], spins=spins_here),
                )
        if identical and any(v != spins_here[0] for v in spins_here):
            identical = False

    for s in states:
        s.clock = max(s.clock, t_max)
    logger.debug(f"結合実行が完了しました: events={events}, checks={checks}, switches={switches}")
    return DominationReport(
        seed=run.stream.seed,
        events=events,
        comparisons=list(pairs),
        checks=checks,
        switches=switches,
        identical=identical,
        final_minus=[s.field.minus_count for s in states],
    )


def order_fault_hook(at_event: int = 1, lower: int = 0, upper: int = 1) -> FaultHook:
    """at_event 番目のイベントで下側と上側のスピンを入れ替える故障注入フック"""

    def hook(run: CoupledRun, event: Event, index: int) -> None:
        if index == at_event:
            run.states[lower].set_spin(event.site, 1)
            run.states[upper].set_spin(event.site, -1)

    return hook


def _protected_indices(state: DynamicsState, protected: Union[Region, Iterable[int]]) -> List[int]:
    if isinstance(protected, Region):
        idx = state.region.lookup(protected.coords)
        if (idx < 0).any():
            raise InvalidInputError("保護集合が領域に含まれないサイトを含みます")
        return idx.tolist()
    return [int(x) for x in protected]


def censoring_domination(state: DynamicsState, protected: Union[Region, Iterable[int]], t_max: float,
                         stream: EventStream) -> CensoringReport:
    """保護集合の外で − を作る更新を取り消す検閲付きダイナミクスと元のダイナミクスを比較する

    最初の取り消しまでは両者が一致し、その後は検閲付きの − の集合が
    元の − の集合に含まれる（スピンとしては検閲付き ≥ 元）ことを各イベントで確かめる。

    Args:
        state: 初期状態（複製して使い、変更しない）
        protected: 保護集合（領域またはインデックス）
        t_max: 終了時刻
        stream: 共有ストリーム

    Returns:
        取り消し回数と最初の取り消し時刻を含むレポート
    """
    indices = _protected_indices(state, protected)
    plain = state.copy()
    plain.engine = Engine.GRAPHICAL
    censored = state.copy()
    censored.engine = Engine.GRAPHICAL
    censored.cancellations = 0
    censored.first_cancel_time = None
    censored.add_filter(UpdateFilter.block_minus_outside(indices))
    run = CoupledRun([plain, censored], stream)
    if t_max < plain.clock:
        raise InvalidParameterError(f"t_max={t_max} が現在時刻 {plain.clock} より前です")

    events = 0
    while True:
        event = stream.next_before(t_max)
        if event is None:
            break
        events += 1
        apply_event(plain, event)
        apply_event(censored, event)
        site = event.site
        a = int(plain.field.spins[site])
        b = int(censored.field.spins[site])
        if censored.first_cancel_time is None:
            if a != b:
                raise VerificationError(
                    "最初の取り消しより前に検閲付きダイナミクスが元と食い違いました",
                    _witness(run, event, events, plain=a, censored=b),
                )
        elif b < a:
            raise VerificationError(
                "検閲付きダイナミクスの − が元のダイナミクスの − に含まれません",
                _witness(run, event, events, plain=a, censored=b,
                         first_cancel_time=censored.first_cancel_time),
            )
    return CensoringReport(
        seed=stream.seed,
        events=events,
        cancellations=censored.cancellations,
        first_cancel_time=censored.first_cancel_time,
        protected_size=len(set(indices)),
        region_size=state.region.size,
    )


# ----------------------------------------------------------------------
# スライス分解
# ----------------------------------------------------------------------

@dataclass
class SliceMap:
    """スラブの 1 スライスと 3 次元シェルのサイト全単射"""
    heights: Tuple[int, ...]
    slab_indices: np.ndarray
    shell: Region
    shell_bc: BoundaryCondition
    to_shell: np.ndarray
    radii: Tuple[float, float] = (0.0, 0.0)

    @classmethod
    def build(cls, slab: Region, slab_bc: BoundaryCondition, heights: Tuple[int, ...],
              slab_indices: np.ndarray, shell: Region, shell_bc: BoundaryCondition,
              radii: Tuple[float, float] = (0.0, 0.0)) -> "SliceMap":
        """座標 4..d を落として全単射を作り、境界スピンの対応を確かめる

        Raises:
            VerificationError: 全単射にならない、境界スピンが対応しない、
                または ±e_j 方向の境界スピンが打ち消し合わない場合
        """
        coords = slab.coords[slab_indices]
        to_shell = shell.lookup(coords[:, :3])
        witness = {"heights": list(heights)}
        if len(slab_indices) != shell.size or (to_shell < 0).any() \
                or len(np.unique(to_shell)) != shell.size:
            raise VerificationError("スライスとシェルの対応が全単射になりません", witness)

        tail = np.broadcast_to(np.asarray(heights, dtype=np.int64), (shell_bc.sites.size, len(heights)))
        lifted = np.hstack([shell_bc.sites.coords, tail])
        slab_spins = slab_bc.lookup_spins(lifted)
        mismatch = np.nonzero(slab_spins != shell_bc.spins)[0]
        if len(mismatch):
            k = int(mismatch[0])
            raise VerificationError(
                "スライスの境界スピンがシェルの境界条件と一致しません",
                {**witness, "coords": lifted[k].tolist(), "slab_spin": int(slab_spins[k]),
                 "shell_spin": int(shell_bc.spins[k])},
            )

        d = slab.dimension
        for axis in range(3, d):
            step = np.zeros(d, dtype=np.int64)
            step[axis] = 1
            up = slab_bc.lookup_spins(coords + step)
            down = slab_bc.lookup_spins(coords - step)
            bad = np.nonzero((up != -1) | (down != 1))[0]
            if len(bad):
                k = int(bad[0])
                raise VerificationError(
                    f"第 {axis + 1} 方向の近傍が打ち消し合いません",
                    {**witness, "coords": coords[k].tolist(), "up": int(up[k]), "down": int(down[k])},
                )
        return cls(heights, np.asarray(slab_indices), shell, shell_bc, to_shell, radii)

    def reindex_table(self, size: int) -> np.ndarray:
        table = np.full(size, -1, dtype=np.int64)
        table[self.slab_indices] = self.to_shell
        return table

    def mask(self, size: int) -> np.ndarray:
        m = np.zeros(size, dtype=bool)
        m[self.slab_indices] = True
        return m


def _time_of_event(seed: int, size: int, count: int) -> float:
    stream = EventStream(seed, size)
    event = None
    for _ in range(count):
        event = stream.next_event()
    return event.time


def _replay_slices(region: Region, bc: BoundaryCondition, maps: List[SliceMap], t_max: Optional[float],
                   seed: int, min_events: int) -> Tuple[float, int, int, List[Dict[str, Any]]]:
    covered = sum(len(m.slab_indices) for m in maps)
    if covered != region.size:
        raise VerificationError("スライスがスラブを覆っていません", {"covered": covered, "size": region.size})
    if t_max is None:
        if min_events < 1:
            raise InvalidParameterError("min_events は 1 以上でなければなりません")
        t_max = _time_of_event(seed, region.size, min_events)

    stream = EventStream(seed, region.size)
    views = [restrict_view(stream, m.mask(region.size), m.reindex_table(region.size)) for m in maps]
    slab_state = DynamicsState(SpinField.uniform(region, -1), bc)
    slab_state.coupled = True
    recorder = FlipRecorder()
    result = run_until(slab_state, stream, t_max, [recorder])

    owner = np.full(region.size, -1, dtype=np.int64)
    for k, m in enumerate(maps):
        owner[m.slab_indices] = k
    expected: List[List[Tuple[float, int, int, int]]] = [[] for _ in maps]
    for rec in recorder.flips:
        k = int(owner[rec.site])
        expected[k].append((rec.time, rec.site, rec.old, rec.new))

    details = []
    for k, (m, view) in enumerate(zip(maps, views)):
        table = m.reindex_table(region.size)
        wanted = [(t, int(table[s]), o, n) for t, s, o, n in expected[k]]
        shell_state = DynamicsState(SpinField.uniform(m.shell, -1), m.shell_bc)
        shell_state.coupled = True
        shell_rec = FlipRecorder()
        run_until(shell_state, view, t_max, [shell_rec])
        got = [(r.time, r.site, r.old, r.new) for r in shell_rec.flips]
        if got != wanted:
            n = next((j for j, (a, b) in enumerate(zip(got, wanted)) if a != b), min(len(got), len(wanted)))
            ref = wanted[n] if n < len(wanted) else got[n]
            raise VerificationError(
                "スラブのスライスとシェルの軌道が一致しません",
                {"seed": seed, "heights": list(m.heights), "flip_index": n, "time": ref[0],
                 "shell_site": ref[1], "coords": list(m.shell.site(ref[1])) + list(m.heights)},
            )
        slab_spins = slab_state.field.spins[m.slab_indices]
        if not np.array_equal(slab_spins, shell_state.field.spins[m.to_shell]):
            raise VerificationError("最終配置がスライスとシェルで一致しません",
                                    {"seed": seed, "heights": list(m.heights)})
        details.append({
            "heights": list(m.heights),
            "sites": int(len(m.slab_indices)),
            "outer": m.radii[0],
            "inner": m.radii[1],
            "flips": len(got),
            "events": view.consumed,
        })
    return t_max, result.events, result.flips, details


def slice_decoupling_check(gp: GeometryParams, i: int, t_max: Optional[float] = None, seed: int = 0,
                           min_events: int = 10_000) -> SliceReport:
    """スラブ C^(i) ∖ C^(i+2) のダイナミクスがスライスごとのシェルのダイナミクスと一致することを確かめる

    Args:
        gp: 幾何パラメータ
        i: 縮小段階
        t_max: 終了時刻（省略時は min_events 個目のイベント時刻）
        seed: ストリームのシード
        min_events: t_max 省略時に消費するイベント数

    Returns:
        スライスごとの反転数を含むレポート

    Raises:
        VerificationError: 境界スピン、全単射、軌道のいずれかが一致しない場合
    """
    partition = slab_partition(gp, i)
    slab, bc = partition.slab, partition.bc
    maps = []
    for heights, idx in slab.group_by_tail(3).items():
        outer, inner = partition.slices[heights]
        shell, shell_bc = shell_between(outer, inner)
        maps.append(SliceMap.build(slab, bc, heights, idx, shell, shell_bc, (outer, inner)))
    t_max, events, flips, details = _replay_slices(slab, bc, maps, t_max, seed, min_events)
    logger.info(f"スライス分解を確認しました: L={gp.L}, d={gp.d}, i={i}, events={events}, flips={flips}")
    return SliceReport(
        d=gp.d, L=gp.L, i=i, seed=seed, t_max=t_max, slab_size=slab.size, events=events,
        flips=flips, slices=details, cancellation_sites=slab.size,
    )


def first_layer_check(gp: GeometryParams, t_max: Optional[float] = None, seed: int = 0,
                      min_events: int = 10_000) -> SliceReport:
    """円柱の最初の層のダイナミクスが + 境界の 3 次元球のダイナミクスと一致することを確かめる"""
    region, bc = first_layer(gp)
    radius = ball_radius(gp, 0)
    ball = discrete_ball3(radius)
    heights = (1,) * (gp.d - 3)
    maps = [SliceMap.build(region, bc, heights, np.arange(region.size), ball,
                           BoundaryCondition.uniform(ball, 1), (radius, 0.0))]
    t_max, events, flips, details = _replay_slices(region, bc, maps, t_max, seed, min_events)
    logger.info(f"最初の層の分解を確認しました: L={gp.L}, d={gp.d}, events={events}, flips={flips}")
    return SliceReport(
        d=gp.d, L=gp.L, i=None, seed=seed, t_max=t_max, slab_size=region.size, events=events,
        flips=flips, slices=details, cancellation_sites=region.size,
    )


# ----------------------------------------------------------------------
# 無作為化した試行
# ----------------------------------------------------------------------

def _ordered_pair(gen: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
    lower = np.where(gen.random(size) < 0.5, -1, 1).astype(np.int8)
    upper = np.maximum(lower, np.where(gen.random(size) < 0.5, -1, 1)).astype(np.int8)
    return lower, upper


def ordered_coupling_trials(d: int, L: int, runs: int, seed: int = 0, t_max: Optional[float] = None,
                            fault_at: Optional[int] = None) -> Dict[str, Any]:
    """順序づけた初期配置と境界条件の組を無作為に作り、結合実行で順序保存を確かめる

    各試行では上側の境界条件を途中の時刻で全 + に差し替える。

    Args:
        d: 次元
        L: 一辺の長さ
        runs: 試行回数
        seed: 基本シード
        t_max: 各試行の終了時刻（省略時は L²）
        fault_at: 指定した番目のイベントで順序を壊す（故障注入）

    Returns:
        試行数、イベント数、比較回数、境界切り替え回数

    Raises:
        VerificationError: 順序が破れた場合（最初の違反で止まる）
    """
    if runs < 1:
        raise InvalidParameterError(f"runs は 1 以上でなければなりません ({runs})")
    region = hypercube(L, d)
    horizon = float(L * L) if t_max is None else float(t_max)
    hook = order_fault_hook(at_event=fault_at) if fault_at is not None else None
    events = checks = switches = 0
    for k in range(runs):
        stream = EventStream(StreamLabel(f"couple:d{d}:L{L}", k).derive_seed(seed), region.size)
        gen = stream.fork_generator("initial")
        xi_lower, xi_upper = _ordered_pair(gen, region.size)
        eta_lower, eta_upper = _ordered_pair(gen, region.outer_boundary().size)
        states = [
            DynamicsState(SpinField(region, xi_lower), BoundaryCondition(region, eta_lower)),
            DynamicsState(SpinField(region, xi_upper), BoundaryCondition(region, eta_upper)),
        ]
        schedule = [BoundarySwitch(float(gen.uniform(0.0, horizon)), 1, BoundaryCondition.uniform(region, 1))]
        report = coupled_run(CoupledRun(states, stream, [(0, 1)], schedule), horizon, hook)
        events += report.events
        checks += report.checks
        switches += report.switches
    logger.info(f"順序保存を確認しました: d={d}, L={L}, 試行 {runs} 回, events={events}")
    return {"d": d, "L": L, "runs": runs, "seed": seed, "t_max": horizon,
            "events": events, "checks": checks, "switches": switches, "violations": 0}


def censoring_trials(d: int, L: int, runs: int, seed: int = 0,
                     t_max: Optional[float] = None) -> Dict[str, Any]:
    """無作為な保護集合と初期配置で検閲付きダイナミクスとの比較を繰り返す

    Returns:
        試行数、イベント数、取り消し回数の合計と各試行のレポート
    """
    if runs < 1:
        raise InvalidParameterError(f"runs は 1 以上でなければなりません ({runs})")
    region = hypercube(L, d)
    horizon = float(L * L) if t_max is None else float(t_max)
    bc = BoundaryCondition.uniform(region, 1)
    reports = []
    for k in range(runs):
        stream = EventStream(StreamLabel(f"censor:d{d}:L{L}", k).derive_seed(seed), region.size)
        gen = stream.fork_generator("initial")
        xi = np.where(gen.random(region.size) < 0.5, -1, 1).astype(np.int8)
        protected = np.nonzero(gen.random(region.size) < 0.5)[0]
        state = DynamicsState(SpinField(region, xi), bc)
        reports.append(censoring_domination(state, protected, horizon, stream))
    logger.info(f"検閲付きダイナミクスとの比較を確認しました: d={d}, L={L}, 試行 {runs} 回")
    return {
        "d": d, "L": L, "runs": runs, "seed": seed, "t_max": horizon,
        "events": sum(r.events for r in reports),
        "cancellations": sum(r.cancellations for r in reports),
        "runs_with_cancellation": sum(r.first_cancel_time is not None for r in reports),
        "violations": 0,
    }
