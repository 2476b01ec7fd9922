"""
ゼロ温度多数決ダイナミクス

グラフィカル構成によるイベント再生エンジンと、空イベントを飛ばす
rejection-free エンジンで、更新フィルタ付きのダイナミクスを実行する
"""

import time as _time
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np

from config.logging import LoggingConfig
from config.settings import DEBUG_AUDIT, MINUS_COUNT_AUDIT_INTERVAL
from core.errors import (
    InvalidInputError,
    InvalidModeError,
    InvalidParameterError,
    StateAuditError,
)
from core.models.enums import Engine, FilterKind
from core.models.lattice import BoundaryCondition, unit_offsets
from core.models.records import HittingRecord
from core.models.spin_field import SpinField
from core.services.randomness import Event


# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()


def local_rule(neighbors: Sequence[int], coin: int, dimension: int) -> int:
    """多数決則：近傍和が正なら +、負なら −、0 ならコイン

    Args:
        neighbors: 2d 個の近傍スピン（境界サイトは境界条件の値）
        coin: ±1 のコイン
        dimension: 次元 d

    Returns:
        更新後のスピン
    """
    if len(neighbors) != 2 * dimension:
        raise InvalidInputError(f"近傍スピンは {2 * dimension} 個必要です（{len(neighbors)} 個が渡されました）")
    total = sum(neighbors)
    if total > 0:
        return 1
    if total < 0:
        return -1
    return coin


# ----------------------------------------------------------------------
# 更新フィルタ
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class UpdateFilter:
    """イベントを捨てる、または更新を取り消すフィルタ"""
    kind: FilterKind
    sites: FrozenSet[int] = frozenset()
    until_time: float = 0.0

    def __post_init__(self):
        if self.until_time < 0:
            raise InvalidParameterError(f"until_time は非負でなければなりません ({self.until_time})")

    @classmethod
    def none(cls) -> "UpdateFilter":
        return cls(FilterKind.NONE)

    @classmethod
    def freeze_region(cls, sites: Iterable[int], until_time: float) -> "UpdateFilter":
        """指定サイトの更新を until_time まで止める"""
        return cls(FilterKind.FREEZE_REGION, frozenset(int(s) for s in sites), float(until_time))

    @classmethod
    def block_minus_outside(cls, sites: Iterable[int]) -> "UpdateFilter":
        """保護集合の外で − を作る更新を取り消す"""
        return cls(FilterKind.BLOCK_MINUS_OUTSIDE, frozenset(int(s) for s in sites))

    def blocks(self, site: int, old: int, new: int, time: float) -> bool:
        """この更新を捨てるかどうか"""
        if self.kind is FilterKind.FREEZE_REGION:
            return site in self.sites and time < self.until_time
        if self.kind is FilterKind.BLOCK_MINUS_OUTSIDE:
            return old == 1 and new == -1 and site not in self.sites
        return False


class FlipRecord(NamedTuple):
    """実際に起きたスピン反転"""
    time: float
    site: int
    old: int
    new: int


# ----------------------------------------------------------------------
# 状態
# ----------------------------------------------------------------------

class DynamicsState:
    """スピン配置、境界条件、時刻、フィルタ、エンジン種別をまとめた状態

    各サイトの局所場（内部近傍の和と境界からの寄与の合計）を増分で保持する。
    """

    def __init__(self, field: SpinField, bc: BoundaryCondition, clock: float = 0.0,
                 filters: Sequence[UpdateFilter] = (), engine: Engine = Engine.GRAPHICAL,
                 audit: Optional[bool] = None):
        """初期化

        Args:
            field: スピン配置
            bc: 境界条件（field と同じ領域）
            clock: 現在時刻
            filters: 更新フィルタ
            engine: 実行エンジン
            audit: 監査モード（省略時は設定値 DEBUG_AUDIT）
        """
        if bc.region != field.region:
            raise InvalidInputError("スピン配置と境界条件の領域が一致しません")
        if clock < 0:
            raise InvalidParameterError(f"時刻は非負でなければなりません ({clock})")
        self.field = field
        self.region = field.region
        self.clock = float(clock)
        self.engine = engine
        self.audit = DEBUG_AUDIT if audit is None else audit
        self.coupled = False
        self.cancellations = 0
        self.first_cancel_time: Optional[float] = None

        table = self.region.neighbor_table()
        self._table = table
        self._neighbors: List[List[int]] = [[y for y in row if y >= 0] for row in table.tolist()]
        self.filters: List[UpdateFilter] = []
        self._freeze_until: Optional[List[float]] = None
        self._unfreeze_times: Dict[float, List[int]] = {}
        self._protected: Optional[List[bool]] = None
        self._rf_engine: Optional["RejectionFreeEngine"] = None
        self._rf_rng: Optional[np.random.Generator] = None
        self.replace_boundary(bc)
        for f in filters:
            self.add_filter(f)

    # ------------------------------------------------------------------
    # 境界と局所場
    # ------------------------------------------------------------------

    def _boundary_contribution(self, bc: BoundaryCondition) -> np.ndarray:
        n, d = self.region.size, self.region.dimension
        total = np.zeros(n, dtype=np.int64)
        missing = self._table < 0
        if missing.any():
            rows, cols = np.nonzero(missing)
            coords = self.region.coords[rows] + unit_offsets(d)[cols]
            total += np.bincount(rows, weights=bc.lookup_spins(coords), minlength=n).astype(np.int64)
        return total

    def replace_boundary(self, bc: BoundaryCondition) -> None:
        """境界条件を差し替え、局所場を再計算する"""
        if bc.region != self.region:
            raise InvalidInputError("境界条件の領域が状態の領域と一致しません")
        self.bc = bc
        self.boundary_sum: List[int] = self._boundary_contribution(bc).tolist()
        self.recompute_fields()

    def _full_fields(self) -> np.ndarray:
        padded = np.append(self.field.spins.astype(np.int64), 0)
        internal = padded[self._table].sum(axis=1) if self.region.size else np.zeros(0, dtype=np.int64)
        return internal + np.asarray(self.boundary_sum, dtype=np.int64)

    def recompute_fields(self) -> None:
        self.local_fields: List[int] = self._full_fields().tolist()
        self._rf_engine = None

    def local_field(self, site: int) -> int:
        return self.local_fields[site]

    def neighbor_spins(self, site: int) -> List[int]:
        """2d 個の近傍スピン（境界サイトは境界条件の値）"""
        d = self.region.dimension
        row = self._table[site]
        coords = self.region.coords[site] + unit_offsets(d)
        outside = self.bc.lookup_spins(coords)
        return [int(self.field.spins[y]) if y >= 0 else int(outside[k]) for k, y in enumerate(row)]

    # ------------------------------------------------------------------
    # フィルタ
    # ------------------------------------------------------------------

    def add_filter(self, update_filter: UpdateFilter) -> None:
        """フィルタを追加して判定表を作り直す"""
        if update_filter.sites and max(update_filter.sites) >= self.region.size:
            raise InvalidInputError("フィルタのサイトが領域外を指しています")
        if update_filter.sites and min(update_filter.sites) < 0:
            raise InvalidInputError("フィルタのサイトが負のインデックスを含みます")
        self.filters.append(update_filter)
        self._compile_filters()

    def _compile_filters(self) -> None:
        n = self.region.size
        freeze: Optional[List[float]] = None
        protected: Optional[List[bool]] = None
        for f in self.filters:
            if f.kind is FilterKind.FREEZE_REGION:
                if freeze is None:
                    freeze = [0.0] * n
                for s in f.sites:
                    if f.until_time > freeze[s]:
                        freeze[s] = f.until_time
            elif f.kind is FilterKind.BLOCK_MINUS_OUTSIDE:
                inside = [False] * n
                for s in f.sites:
                    inside[s] = True
                protected = inside if protected is None else [a and b for a, b in zip(protected, inside)]
        self._freeze_until = freeze
        self._protected = protected
        self._unfreeze_times = {}
        if freeze is not None:
            for s, until in enumerate(freeze):
                if until > 0.0:
                    self._unfreeze_times.setdefault(until, []).append(s)
        self._rf_engine = None

    def is_frozen(self, site: int, time: float) -> bool:
        return self._freeze_until is not None and time < self._freeze_until[site]

    def is_blocked(self, site: int, old: int, new: int) -> bool:
        return self._protected is not None and old == 1 and new == -1 and not self._protected[site]

    # ------------------------------------------------------------------
    # 変更
    # ------------------------------------------------------------------

    def _apply_flip(self, site: int, new: int) -> int:
        old = self.field.set(site, new)
        delta = new - old
        if delta:
            fields = self.local_fields
            for y in self._neighbors[site]:
                fields[y] += delta
        return old

    def set_spin(self, site: int, spin: int) -> int:
        """外部からスピンを書き換える（局所場も更新）"""
        if spin not in (-1, 1):
            raise InvalidInputError(f"スピンは ±1 でなければなりません ({spin})")
        old = self._apply_flip(site, spin)
        self._rf_engine = None
        return old

    def record_cancel(self, time: float) -> None:
        self.cancellations += 1
        if self.first_cancel_time is None:
            self.first_cancel_time = time

    def audit_counts(self) -> None:
        """minus_count と局所場を全再計算と照合する"""
        self.field.audit()
        if self._full_fields().tolist() != self.local_fields:
            raise StateAuditError("局所場のキャッシュが全再計算と一致しません")

    def copy(self) -> "DynamicsState":
        """スピン配置を複製した独立な状態（エンジンの乱数は引き継がない）"""
        clone = DynamicsState(self.field.copy(), self.bc, self.clock, self.filters, self.engine, self.audit)
        clone.cancellations = self.cancellations
        clone.first_cancel_time = self.first_cancel_time
        return clone

    def __repr__(self) -> str:
        return (
            f"DynamicsState(size={self.region.size}, minus={self.field.minus_count}, "
            f"clock={self.clock:.6g}, engine={self.engine})"
        )


def apply_event(state: DynamicsState, event: Event) -> Optional[FlipRecord]:
    """グラフィカル構成の 1 イベントを適用する

    Args:
        state: 状態
        event: (時刻, サイト, コイン)

    Returns:
        反転が起きた場合はその記録、起きなければ None
    """
    time, site, coin = event
    if time < state.clock:
        raise InvalidInputError(f"イベント時刻 {time} が現在時刻 {state.clock} より前です")
    if not 0 <= site < state.region.size:
        raise InvalidInputError(f"サイト {site} は領域外です")
    state.clock = time
    h = state.local_fields[site]
    new = 1 if h > 0 else (-1 if h < 0 else coin)
    old = int(state.field.spins[site])
    if new == old:
        return None
    if state._freeze_until is not None and time < state._freeze_until[site]:
        return None
    if state._protected is not None and old == 1 and not state._protected[site]:
        state.record_cancel(time)
        return None
    state._apply_flip(site, new)
    state._rf_engine = None
    return FlipRecord(time, site, old, new)


# ----------------------------------------------------------------------
# 観測者
# ----------------------------------------------------------------------

class Observer:
    """ダイナミクスの観測者（状態を変更してはならない）"""

    def on_start(self, state: DynamicsState) -> None:
        pass

    def on_flip(self, record: FlipRecord, state: DynamicsState) -> None:
        pass

    def on_absorption(self, time: float, state: DynamicsState) -> None:
        pass

    def on_finish(self, time: float, state: DynamicsState) -> None:
        pass


class FlipRecorder(Observer):
    """反転の列を記録する"""

    def __init__(self):
        self.flips: List[FlipRecord] = []
        self.absorbed_at: Optional[float] = None

    def on_flip(self, record: FlipRecord, state: DynamicsState) -> None:
        self.flips.append(record)

    def on_absorption(self, time: float, state: DynamicsState) -> None:
        if self.absorbed_at is None:
            self.absorbed_at = time


class ClearanceWatch(Observer):
    """時刻 since 以降に監視集合へ − が現れる最初の時刻を記録する

    since 時点の配置も確認する（since 時点で − があればその時刻が違反時刻）。
    """

    def __init__(self, watched: np.ndarray, since: float):
        """初期化

        Args:
            watched: 監視するサイトの真偽配列
            since: 監視開始時刻
        """
        self.watched = np.asarray(watched, dtype=bool)
        self.since = float(since)
        self.at_since: Optional[bool] = None
        self.first_violation: Optional[float] = None

    def _arm(self, state: DynamicsState, site: Optional[int] = None, old: Optional[int] = None) -> None:
        minus = np.count_nonzero(state.field.spins[self.watched] < 0)
        if site is not None and self.watched[site]:
            # 直前の反転を戻した since 時点の配置で数える
            minus += (1 if old < 0 else 0) - (1 if state.field.spins[site] < 0 else 0)
        self.at_since = bool(minus > 0)
        if self.at_since:
            self.first_violation = self.since

    def on_start(self, state: DynamicsState) -> None:
        if self.at_since is None and state.clock >= self.since:
            self._arm(state)

    def on_flip(self, record: FlipRecord, state: DynamicsState) -> None:
        if self.at_since is None:
            if record.time < self.since:
                return
            self._arm(state, record.site, record.old)
        if self.first_violation is None and record.new == -1 and self.watched[record.site]:
            self.first_violation = record.time

    def on_finish(self, time: float, state: DynamicsState) -> None:
        if self.at_since is None and time >= self.since:
            self._arm(state)


class EnvelopeWatch(Observer):
    """縮小集合の列 C^(i) の外に − が現れるかを段階 i ごとに監視する"""

    def __init__(self, levels: np.ndarray, checkpoints: Sequence[float]):
        """初期化

        Args:
            levels: 各サイトについて site ∈ C^(i) となる最大の i
            checkpoints: 段階 i の監視開始時刻 t_i（添字が i）
        """
        levels = np.asarray(levels)
        self.checkpoints = [float(t) for t in checkpoints]
        self.watches = [ClearanceWatch(levels < i, t) for i, t in enumerate(self.checkpoints)]

    def on_start(self, state: DynamicsState) -> None:
        for w in self.watches:
            w.on_start(state)

    def on_flip(self, record: FlipRecord, state: DynamicsState) -> None:
        for w in self.watches:
            w.on_flip(record, state)

    def on_finish(self, time: float, state: DynamicsState) -> None:
        for w in self.watches:
            w.on_finish(time, state)

    def checkpoint_violations(self) -> List[Optional[bool]]:
        return [w.at_since for w in self.watches]

    def window_violations(self) -> List[Optional[float]]:
        return [w.first_violation for w in self.watches]


# ----------------------------------------------------------------------
# rejection-free エンジン
# ----------------------------------------------------------------------

_NONE, _FULL, _HALF = 0, 1, 2


class RejectionFreeEngine:
    """実効反転率 {0, ½, 1} の表を保ち、次の実効反転だけを抽選するエンジン"""

    def __init__(self, state: DynamicsState, rng: np.random.Generator):
        self.state = state
        self.rng = rng
        n = state.region.size
        self._members: List[List[int]] = [[], [], []]
        self._cls = [_NONE] * n
        self._slot = [-1] * n
        self._pending = sorted(t for t in state._unfreeze_times if t > state.clock)
        self.rebuild()

    def _class_vector(self) -> np.ndarray:
        state = self.state
        s = state.field.spins.astype(np.int64)
        h = np.asarray(state.local_fields, dtype=np.int64)
        cls = np.where(s * h < 0, _FULL, np.where(h == 0, _HALF, _NONE))
        if state._protected is not None:
            unprotected = ~np.asarray(state._protected, dtype=bool)
            cls[unprotected & (s == 1)] = _NONE
        if state._freeze_until is not None:
            cls[np.asarray(state._freeze_until) > state.clock] = _NONE
        return cls

    def _class_of(self, x: int) -> int:
        state = self.state
        if state._freeze_until is not None and state.clock < state._freeze_until[x]:
            return _NONE
        s = state.field.spins[x]
        if s == 1 and state._protected is not None and not state._protected[x]:
            return _NONE
        h = state.local_fields[x]
        if h == 0:
            return _HALF
        return _FULL if (s > 0) != (h > 0) else _NONE

    def rebuild(self) -> None:
        self._members = [[], [], []]
        self._cls = [_NONE] * len(self._cls)
        self._slot = [-1] * len(self._slot)
        for x, c in enumerate(self._class_vector().tolist()):
            if c != _NONE:
                self._slot[x] = len(self._members[c])
                self._members[c].append(x)
                self._cls[x] = c

    def _move(self, x: int, c: int) -> None:
        old = self._cls[x]
        if old == c:
            return
        if old != _NONE:
            bucket = self._members[old]
            pos = self._slot[x]
            last = bucket.pop()
            if last != x:
                bucket[pos] = last
                self._slot[last] = pos
        if c != _NONE:
            self._slot[x] = len(self._members[c])
            self._members[c].append(x)
        else:
            self._slot[x] = -1
        self._cls[x] = c

    def refresh(self, sites: Iterable[int]) -> None:
        for x in sites:
            self._move(x, self._class_of(x))

    def total_rate(self) -> float:
        return len(self._members[_FULL]) + 0.5 * len(self._members[_HALF])

    def rate(self, site: int) -> float:
        return {_NONE: 0.0, _FULL: 1.0, _HALF: 0.5}[self._cls[site]]

    def next_unfreeze(self) -> float:
        return self._pending[0] if self._pending else float("inf")

    def unfreeze(self, until: float) -> None:
        """凍結解除時刻に達したサイトの率を更新する"""
        while self._pending and self._pending[0] <= until:
            t = self._pending.pop(0)
            self.refresh(self.state._unfreeze_times[t])

    def pick(self) -> int:
        full = len(self._members[_FULL])
        u = self.rng.random() * self.total_rate()
        if u < full:
            return self._members[_FULL][int(u)]
        half = self._members[_HALF]
        return half[min(int((u - full) * 2.0), len(half) - 1)]

    def flip(self, x: int) -> FlipRecord:
        state = self.state
        old = int(state.field.spins[x])
        state._apply_flip(x, -old)
        self.refresh([x, *state._neighbors[x]])
        return FlipRecord(state.clock, x, old, -old)

    def audit(self) -> None:
        """増分の率表を全走査と照合する"""
        expected = self._class_vector().tolist()
        if expected != self._cls:
            bad = next(i for i, (a, b) in enumerate(zip(expected, self._cls)) if a != b)
            raise StateAuditError(f"率表がサイト {bad} で全走査と一致しません ({self._cls[bad]} != {expected[bad]})")


def engine_rejection_free(state: DynamicsState) -> DynamicsState:
    """状態の実行エンジンを rejection-free に切り替える

    Raises:
        InvalidModeError: 結合実行中の状態の場合
    """
    if state.coupled:
        raise InvalidModeError("結合実行中は rejection-free エンジンを使えません")
    state.engine = Engine.REJECTION_FREE
    return state


def _rejection_free_engine(state: DynamicsState, stream) -> RejectionFreeEngine:
    if state._rf_rng is None:
        state._rf_rng = stream.fork_generator("rejection_free")
    if state._rf_engine is None:
        state._rf_engine = RejectionFreeEngine(state, state._rf_rng)
    return state._rf_engine


# ----------------------------------------------------------------------
# 実行
# ----------------------------------------------------------------------

@dataclass
class RunResult:
    """run_until の結果"""
    state: DynamicsState
    events: int
    flips: int
    absorbed_at: Optional[float]
    reached: float


def _run_graphical(state: DynamicsState, stream, t_max: float, observers: Sequence[Observer],
                   stop_on_absorption: bool) -> RunResult:
    events = flips = 0
    absorbed_at: Optional[float] = None
    interval = MINUS_COUNT_AUDIT_INTERVAL if state.audit else 0
    field = state.field
    while True:
        event = stream.next_before(t_max)
        if event is None:
            break
        events += 1
        record = apply_event(state, event)
        if record is not None:
            flips += 1
            for ob in observers:
                ob.on_flip(record, state)
            if field.minus_count == 0:
                absorbed_at = record.time
                for ob in observers:
                    ob.on_absorption(record.time, state)
                if stop_on_absorption:
                    break
        if interval and events % interval == 0:
            state.audit_counts()
    if not (stop_on_absorption and absorbed_at is not None):
        state.clock = max(state.clock, t_max)
    return RunResult(state, events, flips, absorbed_at, state.clock)


def _run_rejection_free(state: DynamicsState, stream, t_max: float, observers: Sequence[Observer],
                        stop_on_absorption: bool) -> RunResult:
    if state.coupled:
        raise InvalidModeError("結合実行中は rejection-free エンジンを使えません")
    engine = _rejection_free_engine(state, stream)
    rng = engine.rng
    flips = 0
    absorbed_at: Optional[float] = None
    interval = MINUS_COUNT_AUDIT_INTERVAL if state.audit else 0
    while True:
        horizon = min(t_max, engine.next_unfreeze())
        rate = engine.total_rate()
        dt = rng.exponential(1.0 / rate) if rate > 0 else float("inf")
        if state.clock + dt > horizon:
            state.clock = horizon
            if horizon >= t_max:
                break
            engine.unfreeze(horizon)
            continue
        state.clock += dt
        record = engine.flip(engine.pick())
        flips += 1
        if state.audit:
            engine.audit()
            if interval and flips % interval == 0:
                state.audit_counts()
        for ob in observers:
            ob.on_flip(record, state)
        if state.field.minus_count == 0:
            absorbed_at = record.time
            for ob in observers:
                ob.on_absorption(record.time, state)
            if stop_on_absorption:
                break
    # 外部からの変更で無効化されない限り次回もこのエンジンを使う
    state._rf_engine = engine
    return RunResult(state, flips, flips, absorbed_at, state.clock)


def run_until(state: DynamicsState, stream, t_max: float, observers: Sequence[Observer] = (),
              stop_on_absorption: bool = False) -> RunResult:
    """時刻 t_max までダイナミクスを進める

    Args:
        state: 状態（その場で更新される）
        stream: イベントストリーム（またはその制限ビュー）
        t_max: 終了時刻（state.clock 以上）
        observers: 観測者
        stop_on_absorption: 全プラスに達した時点で止めるかどうか

    Returns:
        消費イベント数、反転数、吸収時刻を含む結果
    """
    if t_max < state.clock:
        raise InvalidParameterError(f"t_max={t_max} が現在時刻 {state.clock} より前です")
    for ob in observers:
        ob.on_start(state)
    if state.engine is Engine.REJECTION_FREE:
        result = _run_rejection_free(state, stream, t_max, observers, stop_on_absorption)
    else:
        result = _run_graphical(state, stream, t_max, observers, stop_on_absorption)
    for ob in observers:
        ob.on_finish(state.clock, state)
    return result


def run_to_absorption(state: DynamicsState, stream, t_cap: float, observers: Sequence[Observer] = (),
                      L: Optional[int] = None, replica: int = 0) -> HittingRecord:
    """全プラスへの到達時間 T₊ を測る

    Args:
        state: 状態（時刻 0 から開始する想定）
        stream: イベントストリーム
        t_cap: 打ち切り時刻
        observers: 観測者
        L: 記録する一辺の長さ（省略時は最後の座標の最大値）
        replica: レプリカ番号

    Returns:
        到達時間または打ち切りの記録
    """
    if t_cap <= 0:
        raise InvalidParameterError(f"t_cap は正でなければなりません ({t_cap})")
    if L is None:
        L = int(state.region.coords[:, -1].max()) if state.region.size else 0
    started = _time.perf_counter()
    events = 0
    if state.field.minus_count == 0:
        t_plus: Optional[float] = state.clock
    else:
        result = run_until(state, stream, t_cap, observers, stop_on_absorption=True)
        events = result.events
        t_plus = result.absorbed_at
    wall_ms = (_time.perf_counter() - started) * 1000.0
    if t_plus is None:
        logger.warning(f"打ち切り時刻 {t_cap:.6g} までに全プラスに達しませんでした (L={L}, replica={replica})")
    return HittingRecord(
        d=state.region.dimension,
        L=L,
        replica=replica,
        seed=stream.seed,
        t_plus=t_plus,
        timeout=t_plus is None,
        events=events,
        wall_ms=wall_ms,
    )
