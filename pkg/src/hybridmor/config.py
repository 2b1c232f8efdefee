"""Run configuration: line-oriented ``key = value`` files.

Blank lines and ``#`` comments are ignored; values may carry an inline
comment.  Lists are comma-separated.  The extension radius accepts either
an absolute float (``r = 0.25``) or a multiple of the minimum element
edge (``r = 4h``).
"""

from __future__ import annotations

from dataclasses import dataclass

MODES = ("single", "h-sweep", "eps-sweep", "n-sweep")
LOADS = ("poly", "one")


class ConfigError(Exception):
    """Raised for unreadable or inconsistent run configurations."""


@dataclass
class RunConfig:
    """Validated parameters for one solver run or study."""

    dim: int = 3
    divisions: int = 8           # structured mesh divisions per axis
    mesh: str | None = None      # .msh path; overrides dim/divisions
    p: int = 2
    n: int = 4                   # number of subdomains
    partition: str = "rcb"       # rcb | file
    partition_file: str | None = None
    r_value: float = 4.0
    r_relative: bool = True      # True: r = r_value * min element edge
    eps: tuple[float, ...] = (1e-4,)
    alpha: float = 0.01
    tol: float = 1e-10
    maxiter: int = 20000
    workers: int = 1
    out: str = "out"
    mode: str = "single"
    divisions_list: tuple[int, ...] = ()
    n_list: tuple[int, ...] = ()
    load: str = "poly"
    load_degree: int = -1        # -1 = assembler default
    oracle: bool = True
    store_q: bool = False
    spectrum: tuple[int, ...] | str = "none"   # "none" | "auto" | ids

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.load not in LOADS:
            raise ConfigError(f"unknown load {self.load!r}")
        if self.mesh is None and self.divisions < 1:
            raise ConfigError("divisions must be >= 1")
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        if self.p not in (1, 2):
            raise ConfigError("p must be 1 or 2")
        for name in ("n", "workers", "maxiter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("alpha", "tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.r_value < 0:
            raise ConfigError("r must be >= 0")
        if not self.eps or any(e < 0 for e in self.eps):
            raise ConfigError("eps list must be nonempty and nonnegative")
        if self.mode == "h-sweep":
            if len(self.divisions_list) < 2:
                raise ConfigError("h-sweep needs divisions_list with >= 2 "
                                  "entries")
            if self.n_list and len(self.n_list) != len(self.divisions_list):
                raise ConfigError("n_list must match divisions_list length")
        if self.mode == "n-sweep" and len(self.n_list) < 2:
            raise ConfigError("n-sweep needs n_list with >= 2 entries")
        if self.partition == "file" and not self.partition_file:
            raise ConfigError("partition = file requires partition_file")
        if self.partition not in ("rcb", "file"):
            raise ConfigError(f"unknown partition method {self.partition!r}")
        return self


def _parse_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected on/off, got {value!r}")


def _parse_radius(value: str) -> tuple[float, bool]:
    value = value.strip()
    if value.endswith("h"):
        return float(value[:-1]), True
    return float(value), False


def _parse_ints(value: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in value.split(",") if tok.strip())


def _parse_floats(value: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in value.split(",") if tok.strip())


def parse_config(text: str) -> RunConfig:
    """Parse config text into a validated RunConfig."""
    cfg = RunConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            if key == "dim":
                cfg.dim = int(value)
            elif key == "divisions":
                cfg.divisions = int(value)
            elif key == "mesh":
                cfg.mesh = value
            elif key == "p":
                cfg.p = int(value)
            elif key == "n":
                cfg.n = int(value)
            elif key == "partition":
                cfg.partition = value
            elif key == "partition_file":
                cfg.partition_file = value
            elif key == "r":
                cfg.r_value, cfg.r_relative = _parse_radius(value)
            elif key == "eps":
                cfg.eps = _parse_floats(value)
            elif key == "alpha":
                cfg.alpha = float(value)
            elif key == "tol":
                cfg.tol = float(value)
            elif key == "maxiter":
                cfg.maxiter = int(value)
            elif key == "workers":
                cfg.workers = int(value)
            elif key == "out":
                cfg.out = value
            elif key == "mode":
                cfg.mode = value
            elif key == "divisions_list":
                cfg.divisions_list = _parse_ints(value)
            elif key == "n_list":
                cfg.n_list = _parse_ints(value)
            elif key == "load":
                cfg.load = value
            elif key == "load_degree":
                cfg.load_degree = int(value)
            elif key == "oracle":
                cfg.oracle = _parse_bool(value, key)
            elif key == "store_q":
                cfg.store_q = _parse_bool(value, key)
            elif key == "spectrum":
                cfg.spectrum = (value if value in ("none", "auto")
                                else _parse_ints(value))
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: "
                              f"{exc}") from exc
    return cfg.validate()


def read_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
