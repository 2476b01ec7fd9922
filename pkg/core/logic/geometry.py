"""
格子幾何の構成

超立方体、3 次元離散球、円柱とその縮小集合、スラブ、シェル、
および各種境界条件を構成する
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config.logging import LoggingConfig
from core.errors import GeometryError, InvalidParameterError
from core.models.lattice import BoundaryCondition, GeometryParams, Region


# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()


def hypercube(L: int, d: int) -> Region:
    """超立方体 {1,…,L}^d を構成

    Args:
        L: 一辺の長さ
        d: 次元

    Returns:
        L^d サイトの領域
    """
    if L < 1:
        raise InvalidParameterError(f"L は 1 以上でなければなりません (L={L})")
    if d < 1:
        raise InvalidParameterError(f"d は 1 以上でなければなりません (d={d})")
    axes = np.meshgrid(*([np.arange(1, L + 1, dtype=np.int64)] * d), indexing="ij")
    return Region(np.stack([a.ravel() for a in axes], axis=1), d)


@lru_cache(maxsize=64)
def discrete_ball3(r: float) -> Region:
    """原点中心の 3 次元離散球 {z ∈ Z³ | z·z ≤ r²}

    (z1, z2) の各列について z3 の範囲を求め、列ごとに連結して作る。

    Args:
        r: 半径（整数でなくてよい）

    Returns:
        球に含まれるサイトの領域
    """
    if not math.isfinite(r) or r < 0:
        raise InvalidParameterError(f"半径は非負の有限値でなければなりません (r={r})")
    r2 = float(r) * float(r)
    R = int(math.floor(r))
    while (R + 1) * (R + 1) <= r2:
        R += 1

    axis = np.arange(-R, R + 1, dtype=np.int64)
    z1, z2 = np.meshgrid(axis, axis, indexing="ij")
    z1 = z1.ravel()
    z2 = z2.ravel()
    base = z1 * z1 + z2 * z2
    keep = base <= r2
    z1, z2, base = z1[keep], z2[keep], base[keep]

    h = np.floor(np.sqrt(np.maximum(r2 - base, 0.0))).astype(np.int64)
    # 浮動小数点の丸めを整数比較で補正
    h = np.where(base + (h + 1) * (h + 1) <= r2, h + 1, h)
    h = np.where(base + h * h > r2, h - 1, h)

    counts = 2 * h + 1
    starts = np.cumsum(counts) - counts
    total = int(counts.sum())
    z3 = np.arange(total, dtype=np.int64) - np.repeat(starts, counts) - np.repeat(h, counts)
    coords = np.stack([np.repeat(z1, counts), np.repeat(z2, counts), z3], axis=1)
    return Region(coords, 3)


def boundary(reg: Region) -> Region:
    """外部境界 ∂Γ（Z^d の最近接の意味で）"""
    return reg.outer_boundary()


def inner_boundary(reg: Region) -> Region:
    """内部境界 ∂⁻Γ = 補集合に隣接する Γ のサイト"""
    return Region(reg.coords[reg.inner_boundary_mask()], reg.dimension)


# ----------------------------------------------------------------------
# 円柱と縮小集合
# ----------------------------------------------------------------------

def _require_cylinder_params(gp: GeometryParams) -> None:
    if gp.d < 4:
        raise InvalidParameterError(f"円柱の構成には d ≥ 4 が必要です (d={gp.d})")
    gp.require_polylog()


def max_shrink_index(gp: GeometryParams) -> int:
    """縮小集合の添字 i の上限 2(d−2)L（d=4 なら 4L）"""
    return 2 * (gp.d - 2) * gp.L


def height_vectors(gp: GeometryParams) -> List[Tuple[int, ...]]:
    """第 4 座標以降の高さベクトル {1,…,L}^{d−3} を辞書式順序で列挙"""
    return list(product(range(1, gp.L + 1), repeat=gp.d - 3))


def radius_index(gp: GeometryParams, i: int, level: int) -> int:
    """縮小量 (i − 2·level + 2(d−3))₊

    level は高さベクトルの ℓ¹ ノルム。d=4 では (i − 2z₄ + 2)₊ に一致する。
    """
    return max(i - 2 * level + 2 * (gp.d - 3), 0)


def ball_radius(gp: GeometryParams, k: int) -> float:
    """縮小量 k に対応する球の半径 (2dL − k)(log L)^{c2}"""
    return (2 * gp.d * gp.L - k) * gp.polylog


def _with_heights(base: np.ndarray, heights: Tuple[int, ...]) -> np.ndarray:
    tail = np.broadcast_to(np.asarray(heights, dtype=np.int64), (len(base), len(heights)))
    return np.hstack([base, tail])


@lru_cache(maxsize=8)
def cylinder(gp: GeometryParams) -> Region:
    """円柱 S³_{2dL(log L)^{c2}} × {1,…,L}^{d−3}

    d=4 では半径 8L(log L)^{c2} となる。
    """
    _require_cylinder_params(gp)
    ball = discrete_ball3(ball_radius(gp, 0))
    pieces = [_with_heights(ball.coords, t) for t in height_vectors(gp)]
    region = Region(np.concatenate(pieces), gp.d)
    logger.debug(f"円柱を構成しました: L={gp.L}, d={gp.d}, 半径={ball_radius(gp, 0):.4f}, サイト数={region.size}")
    return region


def shrunk_set(gp: GeometryParams, i: int) -> Region:
    """縮小集合 C^(i)：高さ z' の断面が半径 (2dL − K(i,|z'|₁))(log L)^{c2} の球

    Args:
        gp: 幾何パラメータ
        i: 縮小段階 0 ≤ i ≤ 2(d−2)L

    Returns:
        C^(i)（i=0 は円柱そのもの）
    """
    _require_cylinder_params(gp)
    if not 0 <= i <= max_shrink_index(gp):
        raise InvalidParameterError(f"i={i} は 0..{max_shrink_index(gp)} の範囲で指定してください")
    pieces = []
    for t in height_vectors(gp):
        ball = discrete_ball3(ball_radius(gp, radius_index(gp, i, sum(t))))
        pieces.append(_with_heights(ball.coords, t))
    return Region(np.concatenate(pieces), gp.d)


# ----------------------------------------------------------------------
# 境界条件
# ----------------------------------------------------------------------

def plus_boundary(region: Region) -> BoundaryCondition:
    """全サイト + の境界条件"""
    return BoundaryCondition.uniform(region, 1)


def minus_face_boundary(region: Region, L: int) -> BoundaryCondition:
    """最後の座標が L+1 の面だけ −、それ以外 + の境界条件"""
    return BoundaryCondition.from_rule(
        region, lambda c: np.where(c[:, -1] == L + 1, -1, 1)
    )


def eta0(gp: GeometryParams, all_plus: bool = False) -> BoundaryCondition:
    """円柱の境界条件 η₀

    高さ座標のいずれかが L+1（上面 F'）なら −、それ以外（側面と底面 F）は +。

    Args:
        gp: 幾何パラメータ
        all_plus: True なら上面も + にした変種を返す

    Returns:
        円柱上の境界条件
    """
    region = cylinder(gp)
    if all_plus:
        return plus_boundary(region)
    top = gp.L + 1
    return BoundaryCondition.from_rule(
        region, lambda c: np.where((c[:, 3:] == top).any(axis=1), -1, 1)
    )


def shell_between(outer: float, inner: float) -> Tuple[Region, BoundaryCondition]:
    """シェル S³_outer ∖ S³_inner と、外側 +・内側 − の境界条件

    Args:
        outer: 外半径
        inner: 内半径（0 ≤ inner < outer）

    Returns:
        (シェル領域, 境界条件)
    """
    if not 0 <= inner < outer:
        raise InvalidParameterError(f"0 ≤ inner < outer が必要です (outer={outer}, inner={inner})")
    inner_ball = discrete_ball3(inner)
    shell = discrete_ball3(outer).difference(inner_ball)
    bc = BoundaryCondition.from_rule(
        shell, lambda c: np.where(inner_ball.contains_coords(c), -1, 1)
    )
    return shell, bc


def shell3(r: float, l: float) -> Tuple[Region, BoundaryCondition]:
    """厚さ l のシェル S³_r ∖ S³_{r−l}（外側 +、内側 −）"""
    if not 0 < l < r:
        raise InvalidParameterError(f"0 < l < r が必要です (r={r}, l={l})")
    return shell_between(r, r - l)


def first_layer(gp: GeometryParams) -> Tuple[Region, BoundaryCondition]:
    """円柱の最初の層 S_{L,0} × {1}^{d−3} と比較用の境界条件

    高さが 0 の面と 3 次元の側面は +、高さが 2 の面は −。
    """
    _require_cylinder_params(gp)
    ball = discrete_ball3(ball_radius(gp, 0))
    ones = (1,) * (gp.d - 3)
    region = Region(_with_heights(ball.coords, ones), gp.d)
    bc = BoundaryCondition.from_rule(
        region, lambda c: np.where((c[:, 3:] >= 2).any(axis=1), -1, 1)
    )
    return region, bc


# ----------------------------------------------------------------------
# スラブ C^(i) ∖ C^(i+2) と境界の分解
# ----------------------------------------------------------------------

@dataclass
class SlabPartition:
    """スラブ、その境界の 4 分割、および η^(i)"""
    gp: GeometryParams
    i: int
    slab: Region
    bc: BoundaryCondition
    parts: Dict[str, Region] = field(default_factory=dict)
    slices: Dict[Tuple[int, ...], Tuple[float, float]] = field(default_factory=dict)

    def summary(self) -> Dict[str, Any]:
        return {
            "i": self.i,
            "slab_size": self.slab.size,
            "boundary_size": self.bc.sites.size,
            "parts": {name: part.size for name, part in self.parts.items()},
            "slices": [
                {"heights": list(t), "outer": outer, "inner": inner}
                for t, (outer, inner) in self.slices.items()
            ],
            "partition": True,
        }


def _height_offsets(d: int) -> np.ndarray:
    offsets = np.zeros((d - 3, d), dtype=np.int64)
    for n, axis in enumerate(range(3, d)):
        offsets[n, axis] = 1
    return offsets


def _shifted(region: Region, offsets: np.ndarray, sign: int) -> Region:
    stacked = np.concatenate([region.coords + sign * off for off in offsets])
    return Region(np.unique(stacked, axis=0), region.dimension)


def slab_partition(gp: GeometryParams, i: int) -> SlabPartition:
    """スラブ C^(i) ∖ C^(i+2) を構成し、境界を 4 つの部分に分解して検証する

    部分は (スラブ − e_j)、(スラブ + e_j)、∂⁻S_{i+2} × {1}、残り。
    d=4 では残りが ∂S_{k_J(i)} × {J}（J = min(⌈i/2⌉+1, L)、∂ は Z³ の境界）に
    一致することも確かめる。

    Raises:
        InvalidParameterError: i が範囲外
        GeometryError: 分解が境界の分割にならない場合
    """
    _require_cylinder_params(gp)
    max_i = max_shrink_index(gp) - 2
    if not 0 <= i <= max_i:
        raise InvalidParameterError(f"i={i} は 0..{max_i} の範囲で指定してください")

    pieces = []
    slices: Dict[Tuple[int, ...], Tuple[float, float]] = {}
    for t in height_vectors(gp):
        level = sum(t)
        outer = ball_radius(gp, radius_index(gp, i, level))
        inner = ball_radius(gp, radius_index(gp, i + 2, level))
        if outer <= inner:
            continue
        ring = discrete_ball3(outer).difference(discrete_ball3(inner))
        if ring.size:
            pieces.append(_with_heights(ring.coords, t))
            slices[t] = (outer, inner)
    if not pieces:
        raise GeometryError(f"スラブが空です (L={gp.L}, d={gp.d}, i={i})")
    slab = Region(np.concatenate(pieces), gp.d)
    edge = slab.outer_boundary()

    offsets = _height_offsets(gp.d)
    plus_side = _shifted(slab, offsets, -1)
    minus_side = _shifted(slab, offsets, 1)
    base = discrete_ball3(ball_radius(gp, i + 2))
    rim = Region(_with_heights(base.coords[base.inner_boundary_mask()], (1,) * (gp.d - 3)), gp.d)

    named = {"plus_side": plus_side, "minus_side": minus_side, "inner_rim": rim}
    for name, part in named.items():
        if not part.issubset(edge):
            raise GeometryError(f"{name} がスラブの境界に含まれません (i={i})")
    names = list(named)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            if not named[names[a]].isdisjoint(named[names[b]]):
                raise GeometryError(f"{names[a]} と {names[b]} が交わります (i={i})")

    rest = edge.difference(plus_side.union(minus_side).union(rim))
    if gp.d == 4:
        top = min(math.ceil(i / 2) + 1, gp.L)
        cap = discrete_ball3(ball_radius(gp, radius_index(gp, i, top))).outer_boundary()
        expected = Region(_with_heights(cap.coords, (top,)), 4)
        if rest != expected:
            raise GeometryError(
                f"残りの境界が ∂S × {{{top}}} と一致しません (i={i}, 残り={rest.size}, 期待={expected.size})"
            )
    named["outer_rest"] = rest

    minus = minus_side.contains_coords(edge.coords) | rim.contains_coords(edge.coords)
    bc = BoundaryCondition(slab, np.where(minus, -1, 1).astype(np.int8))
    logger.debug(f"スラブを構成しました: L={gp.L}, d={gp.d}, i={i}, サイト数={slab.size}, 境界={edge.size}")
    return SlabPartition(gp=gp, i=i, slab=slab, bc=bc, parts=named, slices=slices)


def eta_slab(gp: GeometryParams, i: int) -> Tuple[Region, BoundaryCondition]:
    """スラブ C^(i) ∖ C^(i+2) と境界条件 η^(i)

    η^(i) はスラブ + e_j と ∂⁻S_{i+2} × {1} で −、スラブ − e_j と残りで +。
    """
    partition = slab_partition(gp, i)
    return partition.slab, partition.bc


# ----------------------------------------------------------------------
# レポート
# ----------------------------------------------------------------------

def geometry_report(gp: GeometryParams, check_bdecop: bool = False,
                    indices: Optional[List[int]] = None) -> Dict[str, Any]:
    """領域の濃度、境界サイズ、境界分解の検証結果をまとめる

    Args:
        gp: 幾何パラメータ
        check_bdecop: スラブ境界の分解を検証するかどうか
        indices: 検証する i の一覧（省略時は全範囲）

    Returns:
        JSON に書き出せる辞書
    """
    cube = hypercube(gp.L, gp.d)
    report: Dict[str, Any] = {
        "params": {"L": gp.L, "d": gp.d, "c2": gp.c2, "log_base": str(gp.log_base)},
        "hypercube": {"size": cube.size, "boundary": boundary(cube).size,
                      "inner_boundary": inner_boundary(cube).size},
    }
    if gp.d < 4:
        if check_bdecop:
            raise InvalidParameterError("境界分解の検証には d ≥ 4 が必要です")
        return report

    cyl = cylinder(gp)
    report["cylinder"] = {
        "radius": ball_radius(gp, 0),
        "ball_size": discrete_ball3(ball_radius(gp, 0)).size,
        "slices": len(height_vectors(gp)),
        "size": cyl.size,
        "boundary": boundary(cyl).size,
        "eta0_minus": int((eta0(gp).spins < 0).sum()),
    }
    if check_bdecop:
        todo = list(range(max_shrink_index(gp) - 1)) if indices is None else indices
        report["bdecop"] = [slab_partition(gp, i).summary() for i in todo]
        logger.info(f"境界分解を検証しました: L={gp.L}, d={gp.d}, i の数={len(todo)}")
    return report
