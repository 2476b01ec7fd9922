import sys

from loguru import logger as _logger

from config.settings import LOG_LEVEL, LOG_FILE, LOGS_DIR


class LoggingConfig:
    _configured = False

    def __init__(self):
        if not LoggingConfig._configured:
            LoggingConfig.configure(LOG_LEVEL)
        self.logger = _logger

    @staticmethod
    def configure(level: str) -> None:
        """stderr（と任意のファイル）へのシンクを指定レベルで張り直す"""
        _logger.remove()
        # 書き込み時点の sys.stderr を使う
        _logger.add(
            lambda message: sys.stderr.write(message),
            level=level.upper(),
            format="{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}",
        )
        if LOG_FILE:
            _logger.add(LOGS_DIR / LOG_FILE, level=level.upper(), rotation="10 MB", enqueue=True)
        LoggingConfig._configured = True

    def get_logger(self):
        return self.logger
