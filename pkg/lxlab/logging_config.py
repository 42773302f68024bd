#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
日志配置模块
提供统一的日志配置和管理
"""

import logging
import logging.handlers
from datetime import datetime
from pathlib import Path
from typing import Optional

from lxlab.config import Config

DEFAULT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(config: Optional[Config] = None, name: Optional[str] = None,
                  level: Optional[str] = None) -> logging.Logger:
    """
    配置日志系统，输出到控制台，配置了 logging.dir 时同时输出到轮转文件

    Args:
        config: 配置对象（可选）
        name: 日志记录器名称（可选，默认根记录器）
        level: 覆盖配置中的日志级别（可选）

    Returns:
        配置好的日志记录器
    """
    if config is None:
        from lxlab.config import get_config
        config = get_config()

    log_level = (level or config.get('logging.level', 'INFO')).upper()
    log_dir = config.get('logging.dir')
    max_file_size = int(config.get('logging.max_file_size_mb', 100)) * 1024 * 1024
    backup_count = int(config.get('logging.backup_count', 10))
    log_format = config.get('logging.format', DEFAULT_FORMAT)

    logger = logging.getLogger(name) if name else logging.getLogger()
    logger.setLevel(getattr(logging, log_level, logging.INFO))

    # 已配置过则只更新级别，避免重复处理器
    if logger.handlers:
        for handler in logger.handlers:
            handler.setLevel(logger.level)
        return logger

    formatter = logging.Formatter(log_format, datefmt='%Y-%m-%d %H:%M:%S')

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logger.level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_dir:
        log_dir = Path(log_dir).expanduser()
        log_dir.mkdir(parents=True, exist_ok=True)
        log_filename = log_dir / f"lxlab_{datetime.now().strftime('%Y%m%d')}.log"
        file_handler = logging.handlers.RotatingFileHandler(
            log_filename,
            maxBytes=max_file_size,
            backupCount=backup_count,
            encoding='utf-8'
        )
        file_handler.setLevel(logger.level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def get_logger(name: str) -> logging.Logger:
    """获取指定名称的日志记录器"""
    return logging.getLogger(name)
