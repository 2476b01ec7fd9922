"""
例外定義

CLI の終了コードに対応する例外階層を定義
"""

from typing import Any, Dict, Optional


class ArenaError(Exception):
    """すべてのドメイン例外の基底クラス"""
    exit_code = 1


class InvalidParameterError(ArenaError, ValueError):
    """パラメータが許容範囲外"""


class InvalidInputError(ArenaError, ValueError):
    """入力データが不正"""


class InvalidModeError(ArenaError):
    """実行モードの組み合わせが不正（結合実行中の rejection-free など）"""


class UsageError(ArenaError):
    """コマンドラインの使い方が誤っている"""


class GeometryError(ArenaError):
    """幾何構成の内部エラー（境界分解が分割にならないなど）"""


class StateAuditError(ArenaError):
    """増分キャッシュと全再計算が一致しない"""


class VerificationError(ArenaError):
    """経路ごとの検証（順序保存、検閲、スライス分解）に違反した"""
    exit_code = 2

    def __init__(self, message: str, witness: Optional[Dict[str, Any]] = None):
        """初期化

        Args:
            message: エラーメッセージ
            witness: 再現に必要な情報（シード、時刻、サイトなど）
        """
        super().__init__(message)
        self.witness = witness or {}


class InsufficientDataError(ArenaError):
    """推定に必要なサンプルが不足している"""
    exit_code = 3
