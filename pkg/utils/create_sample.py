from pathlib import Path
from typing import Dict, List, Optional

from config.settings import CAMPAIGNS_DIR
from config.logging import LoggingConfig

# ログ設定
logging_config = LoggingConfig()
logger = logging_config.get_logger()

SAMPLE_CAMPAIGNS: Dict[str, Dict[str, str]] = {
    "d2": {
        "dim": "2",
        "Ls": "16,32,64,128",
        "preset": "hypercube_plus",
        "replicas": "300",
        "seed": "20240601",
    },
    "d3": {
        "dim": "3",
        "Ls": "8,12,16,24,32",
        "preset": "hypercube_plus",
        "replicas": "100",
        "seed": "20240602",
    },
    "d4": {
        "dim": "4",
        "Ls": "4,6,8,10,12",
        "preset": "hypercube_plus",
        "replicas": "50",
        "seed": "20240603",
    },
    "d4_layered": {
        "dim": "4",
        "Ls": "4,6,8",
        "preset": "layered",
        "replicas": "20",
        "seed": "20240604",
        "layer_power": "1.0",
    },
    "d4_cylinder": {
        "dim": "4",
        "Ls": "3,4",
        "preset": "cylinder_eta0",
        "replicas": "20",
        "seed": "20240605",
        "tcap": "L^3",
    },
}


def format_campaign(values: Dict[str, str], comment: Optional[str] = None) -> str:
    """key=value 形式の設定ファイル本文を作る"""
    lines: List[str] = []
    if comment:
        lines.append(f"# {comment}")
    lines.extend(f"{key} = {value}" for key, value in values.items())
    return "\n".join(lines) + "\n"


def create_sample_campaigns(target_dir: Path = CAMPAIGNS_DIR, overwrite: bool = False) -> List[Path]:
    """サンプルのキャンペーン設定ファイルを作成

    Args:
        target_dir: 書き出し先
        overwrite: 既存のファイルを上書きするかどうか

    Returns:
        書き出したファイルのパス
    """
    target_dir = Path(target_dir)
    target_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, values in SAMPLE_CAMPAIGNS.items():
        file_path = target_dir / f"{name}.cfg"
        if file_path.exists() and not overwrite:
            continue
        file_path.write_text(format_campaign({"name": name, **values}, f"{name} キャンペーン"), encoding="utf-8")
        written.append(file_path)

    logger.info(f"サンプルキャンペーンを {len(written)} 件作成しました: {target_dir}")
    return written


if __name__ == "__main__":
    create_sample_campaigns()
