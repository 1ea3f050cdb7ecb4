#!/usr/bin/env python3
"""
Runtime settings for the GLARMA panel tools
"""
import logging
import os

from dotenv import load_dotenv

from errors import ConfigError

# Load environment variables from .env file
load_dotenv()

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


class RuntimeSettings:
    """Environment-driven settings shared by the CLI and the report API"""

    def __init__(self):
        self._parse_errors = []

        # Parallelism
        self.workers = self._int_env('GLARMA_WORKERS', 1)

        # Logging
        self.log_level = os.getenv('GLARMA_LOG_LEVEL', 'INFO').upper()

        # Output locations
        self.out_dir = os.getenv('GLARMA_OUT_DIR', 'out')
        self.report_dir = os.getenv('GLARMA_REPORT_DIR', self.out_dir)

        # Report API
        self.port = self._int_env('PORT', 5001)

    def _int_env(self, name, default):
        raw = os.getenv(name)
        if raw is None or not raw.strip():
            return default
        try:
            return int(raw)
        except ValueError:
            self._parse_errors.append(f"{name} must be an integer, got '{raw}'")
            return default

    def to_dict(self):
        """Convert settings to dictionary"""
        return {
            'workers': self.workers,
            'log_level': self.log_level,
            'out_dir': self.out_dir,
            'report_dir': self.report_dir,
            'port': self.port,
        }

    def validate(self):
        """Validate settings"""
        errors = list(self._parse_errors)

        if self.workers < 1:
            errors.append("GLARMA_WORKERS must be at least 1")

        if self.log_level not in LOG_LEVELS:
            errors.append(f"GLARMA_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}")

        if not 0 < self.port < 65536:
            errors.append("PORT must be between 1 and 65535")

        return errors

    def require_valid(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)
        return self

    def configure_logging(self, level=None):
        logging.basicConfig(level=getattr(logging, (level or self.log_level).upper(), logging.INFO),
                            format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def create_sample_env(path='.env.sample'):
    """Create a sample .env file"""
    env_content = """# GLARMA panel tools configuration

# Per-series parallelism (results do not depend on it)
GLARMA_WORKERS=1

# Logging
GLARMA_LOG_LEVEL=INFO

# Output locations
GLARMA_OUT_DIR=out
GLARMA_REPORT_DIR=out

# Report API
PORT=5001
"""

    with open(path, 'w') as f:
        f.write(env_content)

    print(f"Sample .env file created: {path}")
    print("Copy it to .env and adjust as needed")


if __name__ == "__main__":
    create_sample_env()

    settings = RuntimeSettings()
    errors = settings.validate()

    if errors:
        print("Configuration errors:")
        for error in errors:
            print(f"  - {error}")
    else:
        print("Configuration is valid!")
        print(f"Workers: {settings.workers}")
        print(f"Report directory: {settings.report_dir}")
