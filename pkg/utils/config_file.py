"""
キャンペーン設定ファイルの読み込み

.env と同じ key=value 形式（# 以降はコメント）を python-dotenv で読み、
ファイル上のキーを CampaignConfig のフィールドへ対応づける
"""

import io
from pathlib import Path
from typing import Dict

from dotenv import dotenv_values
from dotenv.parser import parse_stream

from config.logging import LoggingConfig
from core.errors import InvalidInputError, UsageError
from core.models.campaign import CampaignConfig

# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()

# ファイル上のキー -> CampaignConfig のフィールド
KEY_ALIASES = {
    "name": "name",
    "dim": "d",
    "d": "d",
    "Ls": "Ls",
    "preset": "preset",
    "replicas": "replicas",
    "seed": "seed",
    "engine": "engine",
    "tcap": "tcap",
    "c0": "c0",
    "c1": "c1",
    "c2": "c2",
    "logbase": "log_base",
    "log_base": "log_base",
    "layer_power": "layer_power",
    "record_wall_time": "record_wall_time",
}


def _check_lines(text: str) -> None:
    """dotenv が黙って読み飛ばす行と、同じフィールドへの重複指定を拒否する"""
    seen: Dict[str, str] = {}
    for binding in parse_stream(io.StringIO(text)):
        lineno = binding.original.line
        if binding.error:
            raise UsageError(f"{lineno} 行目: key=value の形式ではありません: {binding.original.string.strip()}")
        if binding.key is None:
            continue
        field = KEY_ALIASES.get(binding.key)
        if field is None:
            raise UsageError(f"{lineno} 行目: 未知のキーです: {binding.key}")
        if binding.value is None:
            raise UsageError(f"{lineno} 行目: {binding.key} に値がありません")
        if field in seen:
            raise UsageError(f"{lineno} 行目: {binding.key} は {seen[field]} と重複しています")
        seen[field] = binding.key


def parse_config_text(text: str) -> Dict[str, str]:
    """key=value のテキストをフィールド名つきの文字列の辞書にする

    値の型変換（Ls のカンマ区切りや真偽値）は CampaignConfig が行う。

    Raises:
        UsageError: 書式の誤り、未知のキー、重複したキー
    """
    _check_lines(text)
    raw = dotenv_values(stream=io.StringIO(text), interpolate=False)
    return {KEY_ALIASES[key]: value for key, value in raw.items()}


def load_campaign_config(path: Path) -> CampaignConfig:
    """設定ファイルを読み込んで検証する

    Args:
        path: 設定ファイルのパス

    Returns:
        検証済みの設定（pydantic の ValidationError はそのまま送出）
    """
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"設定ファイルが見つかりません: {path}")
    values = parse_config_text(path.read_text(encoding="utf-8"))
    values.setdefault("name", path.stem)
    config = CampaignConfig(**values)
    logger.debug(f"キャンペーン設定を読み込みました: {path} (hash={config.config_hash()})")
    return config
