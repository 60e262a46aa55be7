"""Configuration management"""

import json
import os
from typing import Dict, Any

import config as env


class Config:
    """Configuration manager for fits and studies"""

    def __init__(self, config_path: str = None):
        self.config_path = config_path or env.ZICP_CONFIG
        self._config = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from file"""
        if os.path.exists(self.config_path):
            with open(self.config_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        return self._get_default_config()

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration"""
        return {
            "mcem": {
                "G_schedule": [1000, 3000, 10000, 30000, 100000],
                "max_iter": 200,
                "stop_decimals": 6,
                "stop_relative": False,
                "window": 3,
                "L_ref": 2000,
                "seed": 20240101,
                "kind": "continuous"
            },
            "study": {
                "level": 0.90,
                "replicates": 100,
                "gof_replicates": 1000,
                "gof_bins": 20
            },
            "logging": {
                "level": env.ZICP_LOG_LEVEL,
                "file": env.ZICP_LOG_FILE
            }
        }

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value with a dotted key, e.g. ``mcem.stop_decimals``"""
        value = self._config
        for k in key.split('.'):
            if not isinstance(value, dict) or k not in value:
                return default
            value = value[k]
        return value

    def section(self, key: str) -> Dict[str, Any]:
        """Get a whole section as a fresh dict"""
        value = self.get(key, {})
        return dict(value) if isinstance(value, dict) else {}
