"""
格子モデル

サイト、有限領域、境界条件、幾何パラメータのデータ構造を定義
"""

from typing import Callable, Dict, Iterable, Iterator, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config.settings import DEFAULT_C2, DEFAULT_LOG_BASE
from core.errors import InvalidInputError, InvalidParameterError
from core.models.enums import LogBase


Site = Tuple[int, ...]

_MAX_KEY_SPACE = 2 ** 62


def unit_offsets(dimension: int) -> np.ndarray:
    """最近接の 2d 方向ベクトルを返す

    並びは +e_1, -e_1, +e_2, -e_2, ... の順。

    Args:
        dimension: 次元 d

    Returns:
        形状 (2d, d) の整数配列
    """
    offsets = np.zeros((2 * dimension, dimension), dtype=np.int64)
    for axis in range(dimension):
        offsets[2 * axis, axis] = 1
        offsets[2 * axis + 1, axis] = -1
    return offsets


class Region:
    """Z^d の有限部分集合

    サイトは座標の辞書式順序で並び、その位置が密なインデックス 0..N-1 になる。
    構築後は不変。
    """

    def __init__(self, coords, dimension: Optional[int] = None):
        """初期化

        Args:
            coords: 形状 (N, d) の整数座標
            dimension: 次元（空領域のときは必須）
        """
        arr = np.asarray(coords, dtype=np.int64)
        if arr.size == 0:
            if dimension is None and arr.ndim == 2:
                dimension = arr.shape[1]
            if not dimension:
                raise InvalidInputError("空の領域には次元の指定が必要です")
            arr = arr.reshape(0, dimension)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise InvalidInputError(f"座標配列の形状が不正です: {arr.shape}")
        if dimension is not None and arr.shape[1] != dimension:
            raise InvalidInputError(f"座標の次元 {arr.shape[1]} が指定 {dimension} と一致しません")

        unique = np.unique(arr, axis=0) if len(arr) else arr
        if len(unique) != len(arr):
            raise InvalidInputError(f"重複したサイトが {len(arr) - len(unique)} 個あります")

        unique.flags.writeable = False
        self._coords = unique
        self.dimension = int(arr.shape[1])
        self._box: Optional[Tuple[np.ndarray, Tuple[int, ...]]] = None
        self._keys: Optional[np.ndarray] = None
        self._index: Optional[Dict[Site, int]] = None
        self._neighbors: Optional[np.ndarray] = None
        self._outer: Optional["Region"] = None

    @classmethod
    def from_sites(cls, sites: Iterable[Site], dimension: int) -> "Region":
        """サイトのタプル列から領域を作る"""
        return cls(np.array(list(sites), dtype=np.int64).reshape(-1, dimension), dimension)

    @classmethod
    def empty(cls, dimension: int) -> "Region":
        return cls(np.zeros((0, dimension), dtype=np.int64), dimension)

    # ------------------------------------------------------------------
    # 基本アクセス
    # ------------------------------------------------------------------

    @property
    def coords(self) -> np.ndarray:
        """読み取り専用の座標配列 (N, d)"""
        return self._coords

    @property
    def size(self) -> int:
        return len(self._coords)

    def __len__(self) -> int:
        return len(self._coords)

    def __iter__(self) -> Iterator[Site]:
        return self.sites()

    def sites(self) -> Iterator[Site]:
        """辞書式順序でサイトを列挙"""
        for row in self._coords.tolist():
            yield tuple(row)

    def site(self, index: int) -> Site:
        return tuple(self._coords[index].tolist())

    def index_of(self, site: Site) -> int:
        """サイトの密インデックスを返す

        Raises:
            InvalidInputError: サイトが領域に含まれない場合
        """
        if self._index is None:
            self._index = {s: i for i, s in enumerate(self.sites())}
        try:
            return self._index[tuple(site)]
        except KeyError:
            raise InvalidInputError(f"サイト {tuple(site)} は領域に含まれません") from None

    def __contains__(self, site) -> bool:
        return bool(self.lookup(np.asarray(site, dtype=np.int64).reshape(1, -1))[0] >= 0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Region):
            return NotImplemented
        return self.dimension == other.dimension and np.array_equal(self._coords, other._coords)

    def __hash__(self) -> int:
        return hash((self.dimension, self._coords.tobytes()))

    def __repr__(self) -> str:
        return f"Region(dimension={self.dimension}, size={self.size})"

    # ------------------------------------------------------------------
    # ベクトル化された所属判定
    # ------------------------------------------------------------------

    def _key_box(self) -> Tuple[np.ndarray, Tuple[int, ...]]:
        if self._box is None:
            if self.size == 0:
                lo = np.zeros(self.dimension, dtype=np.int64)
                shape = tuple([1] * self.dimension)
            else:
                lo = self._coords.min(axis=0) - 1
                hi = self._coords.max(axis=0) + 1
                shape = tuple(int(v) for v in (hi - lo + 1))
            if float(np.prod(np.array(shape, dtype=np.float64))) >= _MAX_KEY_SPACE:
                raise InvalidParameterError("領域の外接箱が大きすぎます")
            self._box = (lo, shape)
        return self._box

    def _encode(self, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lo, shape = self._key_box()
        shifted = coords - lo
        inside = np.all((shifted >= 0) & (shifted < np.array(shape)), axis=1)
        keys = np.full(len(coords), -1, dtype=np.int64)
        if inside.any():
            keys[inside] = np.ravel_multi_index(tuple(shifted[inside].T), shape)
        return keys, inside

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """座標配列の各行の密インデックスを返す（含まれない行は -1）

        Args:
            coords: 形状 (M, d) の整数座標

        Returns:
            長さ M のインデックス配列
        """
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, self.dimension)
        result = np.full(len(coords), -1, dtype=np.int64)
        if self.size == 0 or len(coords) == 0:
            return result
        if self._keys is None:
            self._keys, _ = self._encode(self._coords)
        keys, inside = self._encode(coords)
        pos = np.searchsorted(self._keys, keys[inside])
        pos_clipped = np.minimum(pos, self.size - 1)
        hit = self._keys[pos_clipped] == keys[inside]
        found = np.full(int(inside.sum()), -1, dtype=np.int64)
        found[hit] = pos_clipped[hit]
        result[inside] = found
        return result

    def contains_coords(self, coords: np.ndarray) -> np.ndarray:
        """座標配列の各行が領域に含まれるかの真偽配列"""
        return self.lookup(coords) >= 0

    # ------------------------------------------------------------------
    # 集合演算
    # ------------------------------------------------------------------

    def _check_same_dimension(self, other: "Region") -> None:
        if self.dimension != other.dimension:
            raise InvalidInputError(f"次元が異なります: {self.dimension} と {other.dimension}")

    def union(self, other: "Region") -> "Region":
        self._check_same_dimension(other)
        extra = other._coords[~self.contains_coords(other._coords)]
        return Region(np.concatenate([self._coords, extra]), self.dimension)

    def difference(self, other: "Region") -> "Region":
        self._check_same_dimension(other)
        return Region(self._coords[~other.contains_coords(self._coords)], self.dimension)

    def intersection(self, other: "Region") -> "Region":
        self._check_same_dimension(other)
        return Region(self._coords[other.contains_coords(self._coords)], self.dimension)

    def issubset(self, other: "Region") -> bool:
        self._check_same_dimension(other)
        return bool(other.contains_coords(self._coords).all())

    def isdisjoint(self, other: "Region") -> bool:
        self._check_same_dimension(other)
        return not bool(other.contains_coords(self._coords).any())

    # ------------------------------------------------------------------
    # 近傍と境界
    # ------------------------------------------------------------------

    def neighbor_table(self) -> np.ndarray:
        """各サイトの 2d 近傍の密インデックス（領域外は -1）

        Returns:
            形状 (N, 2d) の整数配列。列の並びは unit_offsets と同じ
        """
        if self._neighbors is None:
            offsets = unit_offsets(self.dimension)
            candidates = (self._coords[:, None, :] + offsets[None, :, :]).reshape(-1, self.dimension)
            table = self.lookup(candidates).reshape(self.size, 2 * self.dimension)
            table.flags.writeable = False
            self._neighbors = table
        return self._neighbors

    def outer_boundary(self) -> "Region":
        """外部境界 ∂Γ = {y ∉ Γ | ∃x ∈ Γ, x ~ y}"""
        if self._outer is None:
            offsets = unit_offsets(self.dimension)
            candidates = (self._coords[:, None, :] + offsets[None, :, :]).reshape(-1, self.dimension)
            outside = candidates[~self.contains_coords(candidates)]
            if len(outside):
                outside = np.unique(outside, axis=0)
            self._outer = Region(outside, self.dimension)
        return self._outer

    def inner_boundary_mask(self) -> np.ndarray:
        """内部境界 ∂⁻Γ に属するサイトの真偽配列"""
        return (self.neighbor_table() < 0).any(axis=1)

    def group_by_tail(self, split: int) -> Dict[Tuple[int, ...], np.ndarray]:
        """座標 split 以降の値でサイトをまとめる（スライス分解用）

        Args:
            split: 先頭から残す座標の数（3 なら第 4 座標以降で分類）

        Returns:
            後半座標のタプル -> 昇順の密インデックス配列
        """
        if not 0 < split < self.dimension:
            raise InvalidParameterError(f"split={split} は 1..{self.dimension - 1} の範囲で指定してください")
        groups: Dict[Tuple[int, ...], np.ndarray] = {}
        if self.size == 0:
            return groups
        tails, inverse = np.unique(self._coords[:, split:], axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(len(tails) + 1))
        for g, tail in enumerate(tails.tolist()):
            groups[tuple(tail)] = order[bounds[g]:bounds[g + 1]]
        return groups


class BoundaryCondition:
    """境界 ∂Γ 上の ±1 スピン割り当て

    定義域は領域の外部境界と完全に一致する（部分写像は許されない）。
    """

    def __init__(self, region: Region, spins: np.ndarray, sites: Optional[Region] = None):
        """初期化

        Args:
            region: 対象領域
            spins: 境界サイトの辞書式順序に並んだ ±1 配列
            sites: 境界サイト集合（省略時は region.outer_boundary()）
        """
        boundary = region.outer_boundary()
        if sites is not None and sites != boundary:
            raise InvalidInputError("境界条件の定義域が ∂Γ と一致しません")
        spins = np.asarray(spins, dtype=np.int8).reshape(-1)
        if len(spins) != boundary.size:
            raise InvalidInputError(
                f"境界スピンの数 {len(spins)} が境界サイト数 {boundary.size} と一致しません"
            )
        if boundary.size and not np.all((spins == 1) | (spins == -1)):
            raise InvalidInputError("境界スピンは ±1 でなければなりません")
        spins.flags.writeable = False
        self.region = region
        self.sites = boundary
        self.spins = spins

    @classmethod
    def uniform(cls, region: Region, spin: int) -> "BoundaryCondition":
        """一様な境界条件"""
        return cls(region, np.full(region.outer_boundary().size, spin, dtype=np.int8))

    @classmethod
    def from_rule(cls, region: Region, rule: Callable[[np.ndarray], np.ndarray]) -> "BoundaryCondition":
        """境界座標配列からスピン配列を返す関数で境界条件を作る"""
        boundary = region.outer_boundary()
        return cls(region, np.asarray(rule(boundary.coords), dtype=np.int8))

    def spin_at(self, site: Site) -> int:
        return int(self.spins[self.sites.index_of(site)])

    def lookup_spins(self, coords: np.ndarray) -> np.ndarray:
        """座標配列に対応する境界スピン（境界外の行は 0）"""
        idx = self.sites.lookup(coords)
        out = np.zeros(len(idx), dtype=np.int8)
        out[idx >= 0] = self.spins[idx[idx >= 0]]
        return out

    def is_dominated_by(self, other: "BoundaryCondition") -> bool:
        """同じ領域上で self ≤ other が各点で成り立つか"""
        if self.region != other.region:
            raise InvalidInputError("異なる領域の境界条件は比較できません")
        return bool(np.all(self.spins <= other.spins))

    def __repr__(self) -> str:
        minus = int((self.spins < 0).sum())
        return f"BoundaryCondition(sites={self.sites.size}, minus={minus})"


class GeometryParams(BaseModel):
    """幾何構成のパラメータ（L, d, c2, 対数の底）"""
    model_config = ConfigDict(frozen=True)

    L: int = Field(ge=1)
    d: int = Field(ge=2)
    c2: float = Field(default=DEFAULT_C2, ge=0.0)
    log_base: LogBase = LogBase(DEFAULT_LOG_BASE)

    @property
    def log_l(self) -> float:
        return self.log_base.log(self.L)

    @property
    def polylog(self) -> float:
        """(log L)^{c2}"""
        return self.log_l ** self.c2

    def require_polylog(self) -> None:
        """多重対数半径を使う構成の前提（L ≥ 3）を確認"""
        if self.L < 3:
            raise InvalidParameterError(f"多重対数半径を使う構成には L ≥ 3 が必要です (L={self.L})")
