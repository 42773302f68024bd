#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
配置管理模块
提供统一的配置加载、覆盖和快照接口
"""

import copy
import json
import os
import re
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import yaml

from lxlab.errors import ConfigError

_VAR_PATTERN = re.compile(r"\$\{([^}]+)\}")
_FLOAT_PATTERN = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")
DEFAULTS_PATH = Path(__file__).parent / "data" / "defaults.yaml"


class Config:
    """统一配置管理类"""

    def __init__(self, config_dict: Optional[Dict[str, Any]] = None):
        """
        初始化配置

        Args:
            config_dict: 配置字典（嵌套或扁平点号键均可）
        """
        self._config = _expand_dotted(config_dict or {})
        self._resolve_variables()

    @classmethod
    def from_yaml(cls, path: str) -> 'Config':
        """
        从YAML文件加载配置

        Args:
            path: YAML文件路径

        Returns:
            Config实例
        """
        path = Path(path).expanduser()
        if not path.exists():
            raise FileNotFoundError(f"配置文件不存在: {path}")

        with open(path, 'r', encoding='utf-8') as f:
            try:
                config_dict = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"配置文件解析失败: {path}: {e}") from e

        if not isinstance(config_dict, dict):
            raise ConfigError(f"配置文件顶层必须是映射: {path}")
        return cls(config_dict)

    @classmethod
    def from_json(cls, path: str) -> 'Config':
        """从JSON文件加载配置（支持扁平点号键，如 {"train.lr": 0.001}）"""
        path = Path(path).expanduser()
        if not path.exists():
            raise FileNotFoundError(f"配置文件不存在: {path}")
        try:
            config_dict = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置文件解析失败: {path}: {e}") from e
        if not isinstance(config_dict, dict):
            raise ConfigError(f"配置文件顶层必须是对象: {path}")
        return cls(config_dict)

    @classmethod
    def from_file(cls, path: str) -> 'Config':
        """按扩展名选择加载方式"""
        if str(path).lower().endswith('.json'):
            return cls.from_json(path)
        return cls.from_yaml(path)

    @classmethod
    def from_env(cls, prefix: str = "LXLAB_") -> 'Config':
        """
        从环境变量加载配置

        LXLAB_TRAIN__LR=0.01 对应 train.lr

        Args:
            prefix: 环境变量前缀

        Returns:
            Config实例
        """
        config = cls({})
        for key, value in os.environ.items():
            if key.startswith(prefix) and '__' in key:
                config_key = key[len(prefix):].lower().replace('__', '.')
                config.set(config_key, _parse_scalar(value))
        return config

    @classmethod
    def load(cls, config_path: Optional[str] = None) -> 'Config':
        """
        加载配置（优先级：指定文件 > LXLAB_CONFIG > 当前目录 > 用户目录），
        结果叠加在包内默认配置之上

        Args:
            config_path: 配置文件路径（可选）

        Returns:
            Config实例
        """
        base = cls.from_yaml(str(DEFAULTS_PATH))

        candidates = [
            Path.cwd() / "config.yaml",
            Path.cwd() / "config.yml",
            Path.home() / ".lxlab" / "config.yaml",
        ]

        env_config_path = os.environ.get("LXLAB_CONFIG")
        if env_config_path:
            candidates.insert(0, Path(env_config_path))

        if config_path:
            path = Path(config_path).expanduser()
            if not path.exists():
                raise ConfigError(f"配置文件不存在: {path}")
            candidates.insert(0, path)

        for path in candidates:
            if path.exists():
                base.merge(cls.from_file(str(path)))
                break

        base.merge(cls.from_env())
        seed = os.environ.get("LXLAB_SEED")
        if seed is not None:
            try:
                base.set('runtime.seed', int(seed))
            except ValueError as e:
                raise ConfigError(f"LXLAB_SEED 不是整数: {seed!r}") from e
        return base

    def merge(self, other: 'Config') -> 'Config':
        """将另一个配置递归合并到当前配置（other 优先）"""
        for key, value in _flatten(other.to_dict()).items():
            self.set(key, value)
        self._resolve_variables()
        return self

    def apply_overrides(self, overrides: Iterable[str]) -> 'Config':
        """
        应用命令行覆盖项

        Args:
            overrides: 形如 "train.lr=0.01" 的字符串序列

        Returns:
            self
        """
        for item in overrides or []:
            if '=' not in item:
                raise ConfigError(f"覆盖项格式应为 key=value: {item!r}")
            key, raw = item.split('=', 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"覆盖项缺少键名: {item!r}")
            self.set(key, _parse_scalar(raw))
        self._resolve_variables()
        return self

    def snapshot(self, path: str) -> Path:
        """将解析后的完整配置写为 JSON 快照"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(self._config, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding='utf-8',
        )
        return path

    def _resolve_variables(self):
        """解析配置中的变量引用（如 ${paths.data}）"""
        self._config = self._resolve_dict(self._config)

    def _resolve_dict(self, d: Dict) -> Dict:
        """递归解析字典中的变量"""
        result = {}
        for key, value in d.items():
            if isinstance(value, dict):
                result[key] = self._resolve_dict(value)
            elif isinstance(value, list):
                result[key] = [self._resolve_value(v) for v in value]
            else:
                result[key] = self._resolve_value(value)
        return result

    def _resolve_value(self, value: Any) -> Any:
        """解析单个值中的变量"""
        if not isinstance(value, str) or '${' not in value:
            return value

        variables = _flatten(self._config)

        def _lookup(match: re.Match) -> str:
            found = variables.get(match.group(1))
            return match.group(0) if found is None else str(found)

        return _VAR_PATTERN.sub(_lookup, value)

    def get(self, key: str, default: Any = None) -> Any:
        """
        获取配置项（支持点号路径）

        Args:
            key: 配置键（支持点号分隔，如 'train.lr'）
            default: 默认值

        Returns:
            配置值
        """
        value = self._config
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def require(self, key: str) -> Any:
        """获取必需的配置项，缺失时抛出 ConfigError"""
        value = self.get(key)
        if value is None:
            raise ConfigError(f"缺少配置项: {key}")
        return value

    def set(self, key: str, value: Any):
        """
        设置配置项

        Args:
            key: 配置键（支持点号分隔）
            value: 配置值
        """
        keys = key.split('.')
        config = self._config
        for k in keys[:-1]:
            if not isinstance(config.get(k), dict):
                config[k] = {}
            config = config[k]
        config[keys[-1]] = value

    def section(self, key: str) -> Dict[str, Any]:
        """返回某一节的副本（不存在时为空字典）"""
        value = self.get(key, {})
        return copy.deepcopy(value) if isinstance(value, dict) else {}

    def to_dict(self) -> Dict[str, Any]:
        """返回完整配置字典"""
        return copy.deepcopy(self._config)

    def __getitem__(self, key: str) -> Any:
        return self.get(key)

    def __setitem__(self, key: str, value: Any):
        self.set(key, value)

    def __contains__(self, key: str) -> bool:
        return self.get(key) is not None

    def __repr__(self) -> str:
        return f"Config({self._config})"


def _parse_scalar(raw: str) -> Any:
    """按 YAML 规则解析标量（true、[en, zh] 等）；YAML 1.1 当作字符串的 1e-3 按浮点数处理"""
    if not raw.strip():
        return ""
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"无法解析配置值: {raw!r}") from e
    if isinstance(value, str) and _FLOAT_PATTERN.fullmatch(value.strip()):
        return float(value)
    return value


def _flatten(d: Dict, parent_key: str = '') -> Dict[str, Any]:
    """将嵌套字典扁平化为点号分隔的键"""
    items = {}
    for k, v in d.items():
        new_key = f"{parent_key}.{k}" if parent_key else str(k)
        if isinstance(v, dict) and v:
            items.update(_flatten(v, new_key))
        else:
            items[new_key] = v
    return items


def _expand_dotted(d: Dict[str, Any]) -> Dict[str, Any]:
    """将扁平点号键展开为嵌套字典"""
    result: Dict[str, Any] = {}
    for key, value in d.items():
        if isinstance(value, dict):
            value = _expand_dotted(value)
        parts = str(key).split('.')
        node = result
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        if isinstance(value, dict) and isinstance(node.get(parts[-1]), dict):
            node[parts[-1]].update(value)
        else:
            node[parts[-1]] = value
    return result


# 全局配置实例（延迟加载）
_global_config: Optional[Config] = None


def get_config() -> Config:
    """获取全局配置实例"""
    global _global_config
    if _global_config is None:
        _global_config = Config.load()
    return _global_config


def set_config(config: Config):
    """设置全局配置实例"""
    global _global_config
    _global_config = config


def reload_config(config_path: Optional[str] = None) -> Config:
    """重新加载配置"""
    global _global_config
    _global_config = Config.load(config_path)
    return _global_config
