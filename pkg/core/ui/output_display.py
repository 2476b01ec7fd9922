"""
出力表示

結果 JSON を標準出力へ、診断・進捗・バージョン表を rich で標準エラーへ書き出す
"""

import json
import sys
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from config.logging import LoggingConfig


# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()

err_console = Console(stderr=True)


def render_json(data: Dict[str, Any], stream=None) -> str:
    """キーを整列した JSON を標準出力に書き出す

    Args:
        data: 出力する辞書
        stream: 出力先（省略時は sys.stdout）

    Returns:
        書き出した文字列
    """
    text = json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True)
    out = stream if stream is not None else sys.stdout
    out.write(text + "\n")
    out.flush()
    return text


def render_error(message: str, witness: Optional[Dict[str, Any]] = None) -> None:
    """エラーと（あれば）反例を標準エラーに表示する"""
    err_console.print(f"[bold red]エラー:[/bold red] {message}")
    if witness:
        table = Table(title="witness", show_header=True)
        table.add_column("key")
        table.add_column("value")
        for key in sorted(witness):
            table.add_row(str(key), str(witness[key]))
        err_console.print(table)


def render_version(info: Dict[str, Any]) -> None:
    """ビルド情報と既定の定数を表で表示する"""
    table = Table(title=f"{info['name']} {info['version']}")
    table.add_column("定数")
    table.add_column("既定値")
    for key in ("c0", "c1", "c2", "log_base"):
        table.add_row(key, str(info[key]))
    err_console.print(table)


@contextmanager
def replica_progress(total: int, description: str = "replicas") -> Iterator:
    """レプリカの完了数を表示する進捗バー

    Yields:
        1 件完了するたびに呼ぶ関数
    """
    progress = Progress(
        TextColumn("[bold blue]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=err_console,
        transient=True,
    )
    with progress:
        task = progress.add_task(description, total=total)
        yield lambda *_: progress.advance(task)
