"""
コマンドライン引数の解析

サブコマンド simulate, campaign, couple-check, slice-check, geometry, fit, envelope の
引数定義。解析エラーは UsageError として送出する
"""

import argparse
from pathlib import Path
from typing import List, NoReturn, Optional

from config.settings import DEFAULT_C0, DEFAULT_C1, DEFAULT_C2, DEFAULT_JOBS, DEFAULT_LOG_BASE, LOG_LEVEL, VERSION
from core.errors import UsageError
from core.models.enums import BoundaryPreset, Engine, FitModel, GeometryPreset, LogBase

PROG = "lifshitz-arena"
LOG_LEVELS = ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]


class ArenaArgumentParser(argparse.ArgumentParser):
    """終了する代わりに UsageError を送出するパーサ（省略形のフラグは受け付けない）"""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _choices(enum_cls) -> List[str]:
    return [member.value for member in enum_cls]


def _add_geometry_args(parser: argparse.ArgumentParser, d_required: bool = True) -> None:
    parser.add_argument("--d", type=int, required=d_required, help="次元")
    parser.add_argument("--L", type=int, required=True, help="一辺の長さ")
    parser.add_argument("--c2", type=float, default=DEFAULT_C2, help="多重対数の指数 c2")
    parser.add_argument("--log-base", choices=_choices(LogBase), default=DEFAULT_LOG_BASE,
                        help="対数の底")


def _add_simulate(sub) -> None:
    p = sub.add_parser("simulate", help="1 本の軌道を全プラスまで走らせる")
    _add_geometry_args(p)
    p.add_argument("--geometry", choices=_choices(GeometryPreset), default=GeometryPreset.HYPERCUBE.value)
    p.add_argument("--boundary", choices=_choices(BoundaryPreset), default=None,
                   help="境界条件（省略時は幾何に応じた既定値）")
    p.add_argument("--i", type=int, default=0, help="slab の縮小段階 i")
    p.add_argument("--r", type=float, default=None, help="shell の外半径")
    p.add_argument("--l", type=float, default=None, help="shell の厚さ")
    p.add_argument("--engine", choices=_choices(Engine), default=Engine.REJECTION_FREE.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replica", type=int, default=0)
    p.add_argument("--tcap", default="L^3", help="打ち切り時刻（数値または [a*]L^p[*logL^q]）")
    p.add_argument("--start", choices=["minus", "plus"], default="minus", help="初期配置")
    p.add_argument("--filter", choices=["none", "layered", "block_minus_outside"], default="none",
                   help="更新フィルタ")
    p.add_argument("--layer-power", type=float, default=1.0, help="layered フィルタの対数の指数")
    p.add_argument("--protect-index", type=int, default=1,
                   help="block_minus_outside で保護する縮小集合 C^(i) の i（円柱のみ）")
    p.add_argument("--record-wall-time", action="store_true",
                   help="経過時間 wall_ms を記録する（既定では 0 にして出力を再現可能にする）")


def _add_campaign(sub) -> None:
    p = sub.add_parser("campaign", help="設定ファイルのキャンペーンを実行する")
    p.add_argument("--config", type=Path, required=True, help="key=value 形式のキャンペーン設定")
    p.add_argument("--out", type=Path, default=None, help="出力ディレクトリ")


def _add_couple_check(sub) -> None:
    p = sub.add_parser("couple-check", help="結合実行で順序保存を確かめる")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--censor", action="store_true", help="検閲付きダイナミクスとの比較を行う")
    p.add_argument("--inject-order-fault", type=int, default=None, metavar="EVENT",
                   help="指定番目のイベントで順序を壊す（故障注入）")


def _add_slice_check(sub) -> None:
    p = sub.add_parser("slice-check", help="スラブのダイナミクスとスライスごとのシェルを照合する")
    _add_geometry_args(p)
    p.add_argument("--i", type=int, action="append", default=None, help="縮小段階（複数指定可）")
    p.add_argument("--first-layer", action="store_true", help="最初の層を 3 次元球と照合する")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--min-events", type=int, default=10_000)


def _add_geometry(sub) -> None:
    p = sub.add_parser("geometry", help="領域の濃度と境界分解の検証結果を表示する")
    _add_geometry_args(p)
    p.add_argument("--check-bdecop", action="store_true", help="スラブ境界の分解を検証する")
    p.add_argument("--i", type=int, action="append", default=None, help="検証する段階（複数指定可）")


def _add_fit(sub) -> None:
    p = sub.add_parser("fit", help="キャンペーン CSV から T_mix と指数を求める")
    p.add_argument("--in", dest="input", type=Path, required=True, help="キャンペーン CSV")
    p.add_argument("--model", choices=_choices(FitModel), default=FitModel.POWER.value)
    p.add_argument("--polylog-power", type=float, default=None, help="power_polylog で固定する指数")
    p.add_argument("--min-samples", type=int, default=20)
    p.add_argument("--emit-plot", type=Path, default=None, help="「L  Tmix」の 2 列ファイルの出力先")


def _add_envelope(sub) -> None:
    p = sub.add_parser("envelope", help="円柱キャンペーンで縮小集合への包含を調べる")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="レポート JSON の出力先")


def build_parser() -> ArenaArgumentParser:
    """CLI のパーサを構成する"""
    parser = ArenaArgumentParser(
        prog=PROG,
        description="ゼロ温度 Glauber ダイナミクスの到達時間シミュレータ",
    )
    parser.add_argument("--version", action="store_true", help="ビルド情報と既定の定数を表示する")
    parser.add_argument("--jobs", type=int, default=DEFAULT_JOBS, help="並列ワーカー数（0 は全コア）")
    parser.add_argument("--log-level", type=str.upper, default=LOG_LEVEL.upper(), choices=LOG_LEVELS,
                        help="ログレベル")
    sub = parser.add_subparsers(dest="command", parser_class=ArenaArgumentParser)
    _add_simulate(sub)
    _add_campaign(sub)
    _add_couple_check(sub)
    _add_slice_check(sub)
    _add_geometry(sub)
    _add_fit(sub)
    _add_envelope(sub)
    return parser


def parse_command(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """引数を解析する（未知のフラグは UsageError）"""
    args = build_parser().parse_args(argv)
    if not args.version and args.command is None:
        raise UsageError(f"{PROG}: サブコマンドを指定してください")
    return args


def version_info() -> dict:
    """--version で表示するビルド情報"""
    return {
        "name": PROG,
        "version": VERSION,
        "c0": DEFAULT_C0,
        "c1": DEFAULT_C1,
        "c2": DEFAULT_C2,
        "log_base": DEFAULT_LOG_BASE,
    }
