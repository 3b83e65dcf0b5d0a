"""
Run configuration files: INI sections of key = value pairs.

    [problem]     kind, data, n, d, density, data_seed, lam, lam2, ...
    [solver]      variant, L, L0, gamma, max_iterations, budget_passes, ...
    [run]         out, jobs, x0, l_grid, variants
    [reference]   policy, path, budget, tol
    [lipschitz]   mode, fixed, step, repeats, seed, t

List-valued keys take comma-separated values. Unknown sections and keys are
rejected. Command-line flags override file values.
"""
import configparser
import logging
from typing import Any, Dict, Optional

from pydantic import ValidationError

from models.schemas import RunConfig
from utils.errors import ConfigError, DataIOError

logger = logging.getLogger(__name__)

SECTIONS = ("problem", "solver", "run", "reference", "lipschitz")
LIST_KEYS = {("problem", "lam"), ("run", "l_grid"), ("run", "variants"), ("lipschitz", "t")}


def _parse_value(section: str, key: str, raw: str) -> Any:
    raw = raw.strip()
    if (section, key) in LIST_KEYS:
        return [item.strip() for item in raw.split(",") if item.strip()]
    if raw.lower() in ("", "none"):
        return None
    return raw


def read_sections(path: str) -> Dict[str, Dict[str, Any]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as e:
        raise DataIOError(f"cannot read config {path}: {e.strerror}", path=path)
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}")

    sections: Dict[str, Dict[str, Any]] = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        values = {key: _parse_value(name, key, raw) for key, raw in parser.items(name)}
        sections[name] = {k: v for k, v in values.items() if v is not None}
    return sections


def merge_overrides(sections: Dict[str, Dict[str, Any]], overrides: Dict[str, Dict[str, Any]]):
    for name, values in overrides.items():
        for key, value in values.items():
            if value is not None:
                sections.setdefault(name, {})[key] = value


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Dict[str, Any]]] = None,
                    defaults: Optional[Dict[str, Dict[str, Any]]] = None) -> RunConfig:
    """Layers command defaults, the file at ``path`` and flag overrides, then validates."""
    sections: Dict[str, Dict[str, Any]] = {}
    merge_overrides(sections, defaults or {})
    merge_overrides(sections, read_sections(path) if path else {})
    merge_overrides(sections, overrides or {})
    try:
        return RunConfig(**sections)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid run configuration: {problems}")
