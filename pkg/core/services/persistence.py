"""
結果の永続化サービス

到達時間レコードの CSV、途中経過のジャーナル、要約 JSON、
プロット用の 2 列ファイルを読み書きする
"""

import csv
import io
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from config.logging import LoggingConfig
from core.errors import InvalidInputError
from core.models.records import CSV_HEADER, HittingRecord, TmixEstimate


# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()

CSV_TAG = "lifshitz-arena"


def _write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def write_records_csv(path: Path, records: Iterable[HittingRecord], config_hash: str, seed: int) -> Path:
    """レコードを (L, replica) 順に CSV へ書き出す

    先頭行に設定ハッシュとシードのコメントを埋め込む。

    Args:
        path: 出力先
        records: レコード
        config_hash: 設定ハッシュ
        seed: 基本シード

    Returns:
        書き出したパス
    """
    ordered = sorted(records, key=lambda r: r.key)
    buffer = io.StringIO()
    buffer.write(f"# {CSV_TAG} config_hash={config_hash} seed={seed}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    writer.writerows(r.to_csv_fields() for r in ordered)
    _write_atomic(Path(path), buffer.getvalue())
    logger.info(f"{len(ordered)} 件のレコードを書き出しました: {path}")
    return Path(path)


def read_records_csv(path: Path) -> Tuple[List[HittingRecord], Dict[str, str]]:
    """CSV からレコードとコメント行のメタデータを読み込む

    Returns:
        (レコード, {"config_hash": ..., "seed": ...})
    """
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"ファイルが見つかりません: {path}")
    meta: Dict[str, str] = {}
    body: List[str] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        key, value = token.split("=", 1)
                        meta[key] = value
            elif line.strip():
                body.append(line)
    reader = csv.DictReader(body)
    if reader.fieldnames is None or ",".join(reader.fieldnames) != CSV_HEADER:
        raise InvalidInputError(f"CSV のヘッダが {CSV_HEADER} ではありません: {path}")
    return [HittingRecord.from_csv_row(row) for row in reader], meta


def append_journal(path: Path, record: HittingRecord, config_hash: str) -> None:
    """1 レコードをジャーナルに追記して fsync する"""
    line = json.dumps({"config_hash": config_hash, **record.to_dict()}, sort_keys=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(line + "\n")
        f.flush()
        os.fsync(f.fileno())


def read_journal(path: Path, config_hash: str) -> Dict[Tuple[int, int], HittingRecord]:
    """ジャーナルから同じ設定ハッシュの完了済みレコードを読み込む

    途中で切れた最終行や別設定の行は無視する。
    """
    done: Dict[Tuple[int, int], HittingRecord] = {}
    path = Path(path)
    if not path.exists():
        return done
    skipped = 0
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            try:
                data = json.loads(line)
                if data.pop("config_hash", None) != config_hash:
                    skipped += 1
                    continue
                record = HittingRecord.from_dict(data)
            except (json.JSONDecodeError, KeyError, TypeError, InvalidInputError):
                skipped += 1
                continue
            done[record.key] = record
    if skipped:
        logger.warning(f"ジャーナルの {skipped} 行を無視しました: {path}")
    return done


def write_json(path: Path, data: Dict[str, Any]) -> Path:
    """キーを整列した JSON を書き出す"""
    _write_atomic(Path(path), json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n")
    logger.info(f"JSON を書き出しました: {path}")
    return Path(path)


def write_plot_file(path: Path, estimates: Iterable[TmixEstimate], config_hash: Optional[str] = None,
                    seed: Optional[str] = None) -> Path:
    """gnuplot で読める「L  Tmix」の 2 列ファイルを書き出す

    元の CSV の設定ハッシュとシードを先頭のコメント行に引き継ぐ。
    """
    lines = [f"# {CSV_TAG} config_hash={config_hash or '-'} seed={seed if seed is not None else '-'}"]
    lines.append("# L  Tmix")
    lines.extend(f"{e.L}  {e.value!r}" for e in sorted(estimates, key=lambda e: e.L))
    _write_atomic(Path(path), "\n".join(lines) + "\n")
    logger.info(f"プロット用ファイルを書き出しました: {path}")
    return Path(path)
