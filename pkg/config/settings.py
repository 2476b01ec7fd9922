"""
lifshitz-arena の設定ファイル
パス、定数、並列数、監査フラグなどの設定を管理
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# .env ファイルの読み込み
load_dotenv()

VERSION = "0.3.0"

# 基本パス
BASE_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = BASE_DIR / "data"
CAMPAIGNS_DIR = DATA_DIR / "campaigns"
RESULTS_DIR = DATA_DIR / "results"
LOGS_DIR = DATA_DIR / "logs"

# 各ディレクトリが存在しない場合は作成
for dir_path in [DATA_DIR, CAMPAIGNS_DIR, RESULTS_DIR, LOGS_DIR]:
    dir_path.mkdir(parents=True, exist_ok=True)

# 定数設定（c0 > c1 + 2*c2, c1 > 13/2）
DEFAULT_C0 = float(os.getenv("ARENA_C0", "10"))
DEFAULT_C1 = float(os.getenv("ARENA_C1", "6.6"))
DEFAULT_C2 = float(os.getenv("ARENA_C2", "1.5"))
DEFAULT_LOG_BASE = os.getenv("ARENA_LOG_BASE", "natural")

# 実行設定
DEFAULT_JOBS = int(os.getenv("ARENA_JOBS", "0"))  # 0 の場合は利用可能な全コア
EVENT_BATCH_SIZE = 4096  # ストリームの決定性契約の一部なので変更しないこと

# 監査設定
DEBUG_AUDIT = os.getenv("ARENA_DEBUG_AUDIT", "0") == "1"
MINUS_COUNT_AUDIT_INTERVAL = 10_000

# ログ設定
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOG_FILE", "")
