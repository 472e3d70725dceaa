"""
Configuration utility for the carnotlip library.

Stores run defaults (seed, worker count, cache and output directories) in
``~/.carnotlip/config`` and resolves them against environment variables and
explicit arguments.
"""

import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)


# Setting name -> (environment variable, default, parser)
SETTING_SOURCES = {
    'seed': ('CARNOTLIP_SEED', 0, int),
    'workers': ('CARNOTLIP_WORKERS', 1, int),
    'cache_dir': ('CARNOTLIP_CACHE_DIR', './carnotlip_cache', str),
    'output_dir': ('CARNOTLIP_OUTPUT_DIR', './carnotlip_runs', str),
    'log_level': ('CARNOTLIP_LOG_LEVEL', 'WARNING', str),
}


@dataclass(frozen=True)
class Settings:
    """Resolved run defaults."""
    seed: int = 0
    workers: int = 1
    cache_dir: str = './carnotlip_cache'
    output_dir: str = './carnotlip_runs'
    log_level: str = 'WARNING'

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def get_config_file() -> Path:
    """Get the path to the configuration file."""
    return Path.home() / '.carnotlip' / 'config'


def read_config_file() -> Dict[str, str]:
    """
    Read ``key=value`` pairs from the config file.

    Returns:
        Dict of raw string values (empty if the file is missing or unreadable)
    """
    config_file = get_config_file()
    values: Dict[str, str] = {}
    if not config_file.exists():
        return values

    try:
        with open(config_file, 'r') as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith('#') or '=' not in line:
                    continue
                key, value = line.split('=', 1)
                values[key.strip()] = value.strip()
    except Exception as e:
        logger.warning(f"Error reading config file {config_file}: {e}")
    return values


def load_settings(**overrides: Optional[Any]) -> Settings:
    """
    Resolve settings from multiple sources in order of priority.

    Priority:
        1. Explicit keyword arguments (ignored when None)
        2. CARNOTLIP_* environment variables
        3. ~/.carnotlip/config file
        4. Built-in defaults

    Returns:
        Settings

    Raises:
        ValueError: If a key is unknown or a value cannot be parsed

    Example:
        >>> settings = load_settings(seed=7)
        >>> settings.seed
        7
    """
    unknown = set(overrides) - set(SETTING_SOURCES)
    if unknown:
        raise ValueError(f"Unknown settings: {sorted(unknown)}")

    file_values = read_config_file()
    resolved: Dict[str, Any] = {}

    for name, (env_var, default, parser) in SETTING_SOURCES.items():
        explicit = overrides.get(name)
        if explicit is not None:
            raw, source = explicit, 'argument'
        elif os.environ.get(env_var):
            raw, source = os.environ[env_var], f'env {env_var}'
        elif name in file_values:
            raw, source = file_values[name], 'config file'
        else:
            raw, source = default, 'default'

        try:
            resolved[name] = parser(raw)
        except (TypeError, ValueError):
            raise ValueError(f"Invalid value for {name} from {source}: {raw!r}")
        logger.debug(f"Setting {name}={resolved[name]!r} ({source})")

    if resolved['seed'] < 0:
        raise ValueError(f"seed must be non-negative, got {resolved['seed']}")
    if resolved['workers'] < 1:
        raise ValueError(f"workers must be >= 1, got {resolved['workers']}")
    return Settings(**resolved)


def set_value(key: str, value: str) -> None:
    """
    Save a setting to the config file.

    Args:
        key: One of the names in SETTING_SOURCES
        value: Raw value (validated by parsing)
    """
    if key not in SETTING_SOURCES:
        raise ValueError(
            f"Unknown setting '{key}'. Valid keys: {', '.join(SETTING_SOURCES)}"
        )
    parser = SETTING_SOURCES[key][2]
    parser(value)

    config_file = get_config_file()
    config_file.parent.mkdir(parents=True, exist_ok=True)

    values = read_config_file()
    values[key] = value
    with open(config_file, 'w') as f:
        for name in sorted(values):
            f.write(f"{name}={values[name]}\n")

    print(f"✅ {key} saved to: {config_file}")


def show_config() -> None:
    """Show the resolved settings and where the config file lives."""
    config_file = get_config_file()
    if config_file.exists():
        print(f"📁 Config file: {config_file}")
    else:
        print(f"ℹ️ No config file found at: {config_file}")

    for name, value in load_settings().to_dict().items():
        print(f"  {name} = {value}")


def remove_config() -> None:
    """Remove the config file."""
    config_file = get_config_file()

    if config_file.exists():
        config_file.unlink()
        print(f"✅ Config removed from: {config_file}")
    else:
        print(f"ℹ️ No config file found at: {config_file}")


def show_help():
    """Show help message."""
    print("""
carnotlip Configuration Utility

Usage:
  python -m carnotlip.config <command> [arguments]

Commands:
  set <key> <value>   Save a default (seed, workers, cache_dir, output_dir, log_level)
  show                Display resolved settings
  remove              Remove the config file
  help                Show this help message

Alternative methods:
  export CARNOTLIP_SEED=7
  carnotlip --seed 7 <command> ...
""")


def main():
    """Main entry point for config utility."""
    if len(sys.argv) < 2:
        show_help()
        sys.exit(1)

    command = sys.argv[1].lower()

    if command == 'set':
        if len(sys.argv) < 4:
            print("❌ Error: key and value required")
            print("\nUsage: python -m carnotlip.config set KEY VALUE")
            sys.exit(1)
        try:
            set_value(sys.argv[2], sys.argv[3])
        except ValueError as e:
            print(f"❌ Error: {e}")
            sys.exit(1)

    elif command == 'show':
        show_config()

    elif command == 'remove':
        remove_config()

    elif command in ['help', '-h', '--help']:
        show_help()

    else:
        print(f"❌ Unknown command: {command}")
        print("\nRun 'python -m carnotlip.config help' for usage information")
        sys.exit(1)


if __name__ == '__main__':
    main()
