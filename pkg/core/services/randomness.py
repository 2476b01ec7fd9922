"""
乱数ストリームサービス

各サイトの Poisson 時計とコイン投げを、シードから決定的に再現できる
イベント列 (時刻, サイト, コイン) として供給する
"""

import hashlib
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from config.logging import LoggingConfig
from config.settings import EVENT_BATCH_SIZE
from core.errors import InvalidInputError, InvalidParameterError


# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()

_SEED_LIMIT = 2 ** 64


def _digest_int(text: str, nbytes: int = 8) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:nbytes], "big")


class Event(NamedTuple):
    """時計が鳴ったイベント"""
    time: float
    site: int
    coin: int


@dataclass(frozen=True)
class StreamLabel:
    """独立なストリームを識別するラベル"""
    campaign: str
    replica: int
    purpose: str = "dynamics"

    def derive_seed(self, base_seed: int) -> int:
        """ラベルと基本シードをハッシュして 64 ビットのシードを得る

        Args:
            base_seed: キャンペーンの基本シード

        Returns:
            0 ≤ seed < 2^64 の整数
        """
        return _digest_int(f"{base_seed}|{self.campaign}|{self.replica}|{self.purpose}")


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, np.integer):
        return int(value)
    return value


def _from_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        if "__ndarray__" in value:
            return np.array(value["__ndarray__"], dtype=value["dtype"])
        return {k: _from_jsonable(v) for k, v in value.items()}
    return value


class EventStream:
    """N 個のサイトの速度 1 の時計を重ね合わせたイベント列

    間隔は速度 N の指数分布、サイトは一様、コインはイベントごとに必ず 1 枚引く。
    3 本の Philox 系列（間隔・サイト・コイン）をバッチ単位で生成する。
    """

    def __init__(self, seed: int, size: int, batch_size: int = EVENT_BATCH_SIZE):
        """初期化

        Args:
            seed: 64 ビットのシード
            size: サイト数 N
            batch_size: 一度に生成するイベント数
        """
        if size < 1:
            raise InvalidParameterError(f"ストリームのサイト数は 1 以上でなければなりません (size={size})")
        if not 0 <= seed < _SEED_LIMIT:
            raise InvalidParameterError(f"シードは 0 ≤ seed < 2^64 の範囲で指定してください (seed={seed})")
        if batch_size < 1:
            raise InvalidParameterError(f"batch_size は 1 以上でなければなりません (batch_size={batch_size})")
        self.seed = int(seed)
        self.size = int(size)
        self.batch_size = int(batch_size)
        self._generators = [
            np.random.Generator(np.random.Philox(child))
            for child in np.random.SeedSequence(self.seed).spawn(3)
        ]
        self._next_t0 = 0.0
        self.consumed = 0
        self._fill()

    # ------------------------------------------------------------------
    # バッチ生成
    # ------------------------------------------------------------------

    def _fill(self) -> None:
        gaps_gen, sites_gen, coins_gen = self._generators
        self._batch_states = [g.bit_generator.state for g in self._generators]
        self._batch_t0 = self._next_t0
        gaps = gaps_gen.exponential(1.0 / self.size, self.batch_size)
        times = np.cumsum(np.concatenate(([self._batch_t0], gaps)))[1:]
        sites = sites_gen.integers(0, self.size, self.batch_size)
        coins = np.where(coins_gen.integers(0, 2, self.batch_size) == 1, 1, -1).astype(np.int8)
        self._times_arr, self._sites_arr, self._coins_arr = times, sites, coins
        self._times: List[float] = times.tolist()
        self._sites: List[int] = sites.tolist()
        self._coins: List[int] = coins.tolist()
        self._next_t0 = self._times[-1]
        self._pos = 0

    def take_remaining(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """現在のバッチの未消費分を配列でまとめて取り出し、次のバッチへ進む"""
        p = self._pos
        chunk = (self._times_arr[p:], self._sites_arr[p:], self._coins_arr[p:])
        self.consumed += self.batch_size - p
        self._fill()
        return chunk

    # ------------------------------------------------------------------
    # イベントの取り出し
    # ------------------------------------------------------------------

    def peek_time(self) -> float:
        """次のイベント時刻（消費しない）"""
        return self._times[self._pos]

    def next_event(self) -> Event:
        """次のイベントを取り出す"""
        p = self._pos
        event = Event(self._times[p], self._sites[p], self._coins[p])
        self._pos = p + 1
        self.consumed += 1
        if self._pos == self.batch_size:
            self._fill()
        return event

    def next_before(self, t_max: float) -> Optional[Event]:
        """時刻 t_max 以下の次のイベントを取り出す（なければ消費せず None）"""
        if self._times[self._pos] > t_max:
            return None
        return self.next_event()

    # ------------------------------------------------------------------
    # 状態の保存と復元
    # ------------------------------------------------------------------

    def get_state(self) -> Dict[str, Any]:
        """再開に必要な状態を JSON に書ける辞書で返す"""
        return {
            "seed": self.seed,
            "size": self.size,
            "batch_size": self.batch_size,
            "batch_t0": self._batch_t0,
            "batch_states": [_to_jsonable(s) for s in self._batch_states],
            "position": self._pos,
            "consumed": self.consumed,
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "EventStream":
        """get_state の出力からストリームを再構成する"""
        try:
            stream = cls(state["seed"], state["size"], state["batch_size"])
            for gen, saved in zip(stream._generators, state["batch_states"]):
                gen.bit_generator.state = _from_jsonable(saved)
            stream._next_t0 = float(state["batch_t0"])
            stream._fill()
            stream._pos = int(state["position"])
            stream.consumed = int(state["consumed"])
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"ストリーム状態を復元できません: {e}") from e
        return stream

    def clone(self) -> "EventStream":
        """現在位置から同じ列を生成する独立なコピー"""
        return EventStream.from_state(self.get_state())

    def fork_generator(self, purpose: str) -> np.random.Generator:
        """このストリームのシードから派生した用途別の乱数生成器"""
        seq = np.random.SeedSequence([self.seed, _digest_int(purpose, 4)])
        return np.random.Generator(np.random.Philox(seq))


class RestrictedStream:
    """親ストリームのうちマスク内のサイトのイベントだけを流すビュー

    時刻とコインは親と同一。reindex を与えるとサイト番号を付け替える。
    """

    def __init__(self, parent: EventStream, mask: np.ndarray, reindex: Optional[np.ndarray] = None):
        """初期化

        Args:
            parent: 親ストリーム（現在位置から複製して読む）
            mask: 長さ N の真偽配列
            reindex: 長さ N の付け替え表（マスク外は任意）
        """
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if len(mask) != parent.size:
            raise InvalidInputError(f"マスクの長さ {len(mask)} が親ストリームのサイト数 {parent.size} と一致しません")
        if reindex is not None:
            reindex = np.asarray(reindex, dtype=np.int64).reshape(-1)
            if len(reindex) != parent.size:
                raise InvalidInputError("付け替え表の長さが親ストリームのサイト数と一致しません")
        self._source = parent.clone()
        self._mask = mask
        self._reindex = reindex
        self._empty = not mask.any()
        self.seed = parent.seed
        self.size = int(mask.sum()) if reindex is not None else parent.size
        self.consumed = 0
        self._times: List[float] = []
        self._sites: List[int] = []
        self._coins: List[int] = []
        self._pos = 0

    def _refill(self) -> None:
        while True:
            times, sites, coins = self._source.take_remaining()
            keep = self._mask[sites]
            if keep.any():
                kept_sites = sites[keep]
                if self._reindex is not None:
                    kept_sites = self._reindex[kept_sites]
                self._times = times[keep].tolist()
                self._sites = kept_sites.tolist()
                self._coins = coins[keep].tolist()
                self._pos = 0
                return

    def peek_time(self) -> float:
        if self._empty:
            return float("inf")
        if self._pos == len(self._times):
            self._refill()
        return self._times[self._pos]

    def next_event(self) -> Optional[Event]:
        """次のイベント（マスクが空なら None）"""
        if self._empty:
            return None
        if self._pos == len(self._times):
            self._refill()
        p = self._pos
        self._pos = p + 1
        self.consumed += 1
        return Event(self._times[p], self._sites[p], self._coins[p])

    def next_before(self, t_max: float) -> Optional[Event]:
        if self.peek_time() > t_max:
            return None
        return self.next_event()

    def fork_generator(self, purpose: str) -> np.random.Generator:
        return self._source.fork_generator(purpose)


def restrict_view(stream: EventStream, mask: np.ndarray,
                  reindex: Optional[np.ndarray] = None) -> RestrictedStream:
    """マスク内のサイトのイベントだけを見るビューを作る

    Args:
        stream: 親ストリーム
        mask: 対象サイトの真偽配列
        reindex: サイト番号の付け替え表

    Returns:
        時刻を変えずにイベントを絞り込んだビュー
    """
    return RestrictedStream(stream, mask, reindex)
