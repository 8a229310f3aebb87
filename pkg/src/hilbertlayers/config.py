"""Run configuration: a sectioned TOML file with a fixed schema.

Every key is typed and checked at load; unknown sections or keys are rejected
with the dotted path of the offender.  ``dumps(parse(text))`` is a fixed point.

Schema (defaults in brackets)::

    [kernel]      kind ["bgk"], gamma [1.0], angular_nodes [32]
    [velocity]    extent [6.0], resolution [16], moment_tol [1e-6]
    [space]       x_max [2.0], n_x [200], zeta_max [20.0], n_zeta [160], stretch [4.0]
    [knudsen]     xi_max [60.0], n_xi [240], stretch [4.0]
    [time]        t_final [0.1], n_t [50]
    [expansion]   q [2], truncation [3], taylor_depth [truncation + 1]
    [study]       epsilons [[0.1, 0.05, 0.025]], reference_epsilons [[0.1, 0.07, 0.05]],
                  alpha [1.0], n_cells [256], cfl [0.5]
    [tolerances]  solvability [1e-6], decay [1e-6], residual_slope [0.25], remainder_slope [1.2]
    [output]      dir ["out"], seed [0]
    [shear.order0.U1] ... [shear.order1.Theta]   kind, amplitude, scale, offset
"""

from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction

import tomli
import tomli_w

from .collision import CollisionKernel
from .fluid import Profile, ShearData, ShearProfile, build_meshes, default_shear_data

MAX_TRUNCATION = 3


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class KernelSection:
    kind: str = "bgk"
    gamma: float = 1.0
    angular_nodes: int = 32


@dataclass(frozen=True)
class VelocitySection:
    extent: float = 6.0
    resolution: int = 16
    moment_tol: float = 1e-6


@dataclass(frozen=True)
class SpaceSection:
    x_max: float = 2.0
    n_x: int = 200
    zeta_max: float = 20.0
    n_zeta: int = 160
    stretch: float = 4.0


@dataclass(frozen=True)
class KnudsenSection:
    xi_max: float = 60.0
    n_xi: int = 240
    stretch: float = 4.0


@dataclass(frozen=True)
class TimeSection:
    t_final: float = 0.1
    n_t: int = 50


@dataclass(frozen=True)
class ExpansionSection:
    q: int = 2
    truncation: int = 3
    taylor_depth: int = -1  # -1: truncation + 1


@dataclass(frozen=True)
class StudySection:
    epsilons: list = field(default_factory=lambda: [0.1, 0.05, 0.025])
    reference_epsilons: list = field(default_factory=lambda: [0.1, 0.07, 0.05])
    alpha: float = 1.0
    n_cells: int = 256
    cfl: float = 0.5


@dataclass(frozen=True)
class ToleranceSection:
    solvability: float = 1e-6
    decay: float = 1e-6
    residual_slope: float = 0.25
    remainder_slope: float = 1.2


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    seed: int = 0


SECTIONS = {
    "kernel": KernelSection,
    "velocity": VelocitySection,
    "space": SpaceSection,
    "knudsen": KnudsenSection,
    "time": TimeSection,
    "expansion": ExpansionSection,
    "study": StudySection,
    "tolerances": ToleranceSection,
    "output": OutputSection,
}
PROFILE_FIELDS = ("U1", "U2", "Theta")


@dataclass(frozen=True)
class RunConfig:
    kernel: KernelSection = KernelSection()
    velocity: VelocitySection = VelocitySection()
    space: SpaceSection = SpaceSection()
    knudsen: KnudsenSection = KnudsenSection()
    time: TimeSection = TimeSection()
    expansion: ExpansionSection = ExpansionSection()
    study: StudySection = StudySection()
    tolerances: ToleranceSection = ToleranceSection()
    output: OutputSection = OutputSection()
    shear: ShearData = field(default_factory=default_shear_data)

    @property
    def truncation(self):
        return self.expansion.truncation

    @property
    def taylor_depth(self):
        d = self.expansion.taylor_depth
        return self.truncation + 1 if d < 0 else d

    def collision_kernel(self):
        k = self.kernel
        if k.kind == "bgk":
            return CollisionKernel(kind="bgk")
        return CollisionKernel(kind="cutoff", gamma=k.gamma, angular_nodes=k.angular_nodes)

    def meshes(self):
        s, t = self.space, self.time
        return build_meshes(s.x_max, s.n_x, s.zeta_max, s.n_zeta, s.stretch, t.t_final, t.n_t)

    def xi_mesh(self):
        from .knudsen import default_xi_mesh

        return default_xi_mesh(self.knudsen.xi_max, self.knudsen.n_xi, self.knudsen.stretch)


def _typed(key, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        value = [float(v) for v in value] if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {type(default).__name__}, got {value!r}")
    return value


def _section(name, cls, table):
    if not isinstance(table, dict):
        raise ConfigError(name, "expected a table")
    base = cls()
    known = {f.name for f in fields(cls)}
    for k in table:
        if k not in known:
            raise ConfigError(f"{name}.{k}", "unknown key")
    return replace(base, **{k: _typed(f"{name}.{k}", v, getattr(base, k)) for k, v in table.items()})


def _shear(table):
    if not isinstance(table, dict):
        raise ConfigError("shear", "expected a table")
    orders = []
    for k in table:
        if k not in ("order0", "order1"):
            raise ConfigError(f"shear.{k}", "unknown key (only order0 and order1 carry data)")
    for o in ("order0", "order1"):
        sub = table.get(o, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"shear.{o}", "expected a table")
        profs = {}
        for name, spec in sub.items():
            key = f"shear.{o}.{name}"
            if name not in PROFILE_FIELDS:
                raise ConfigError(key, f"unknown profile; expected one of {PROFILE_FIELDS}")
            if not isinstance(spec, dict):
                raise ConfigError(key, "expected a table")
            for k in spec:
                if k not in ("kind", "amplitude", "scale", "offset"):
                    raise ConfigError(f"{key}.{k}", "unknown key")
            base = Profile()
            vals = {k: _typed(f"{key}.{k}", v, getattr(base, k)) for k, v in spec.items()}
            try:
                profs[name] = Profile(**vals)
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        orders.append(ShearProfile(**profs))
    return ShearData(*orders)


def validate(cfg):
    e, s = cfg.expansion, cfg.study
    if Fraction(e.q) != 2:
        raise ConfigError("expansion.q", "the hierarchy and composite are built for q = 2 only")
    if not 0 <= e.truncation <= MAX_TRUNCATION:
        raise ConfigError(
            "expansion.truncation",
            f"truncation {e.truncation} not available: the order balances are implemented up to K = {MAX_TRUNCATION} "
            f"(K = 13 would need taylor_depth >= 14 and the order 4..13 closures)",
        )
    if e.taylor_depth >= 0 and e.taylor_depth < e.truncation + 1:
        raise ConfigError("expansion.taylor_depth", f"{e.taylor_depth} too small for truncation {e.truncation} (need >= {e.truncation + 1})")
    for key, eps in (("study.epsilons", s.epsilons), ("study.reference_epsilons", s.reference_epsilons)):
        if any(not 0 < x < 1 for x in eps):
            raise ConfigError(key, "every epsilon must lie in (0, 1)")
        if len(set(eps)) != len(eps):
            raise ConfigError(key, "duplicate epsilon values")
    if not 0 < s.alpha <= 1:
        raise ConfigError("study.alpha", "accommodation must lie in (0, 1]")
    if s.n_cells < 4:
        raise ConfigError("study.n_cells", "need at least 4 cells")
    if not 0 < s.cfl <= 1:
        raise ConfigError("study.cfl", "must lie in (0, 1]")
    if cfg.kernel.kind not in ("bgk", "cutoff"):
        raise ConfigError("kernel.kind", f"unknown kernel {cfg.kernel.kind!r}")
    if cfg.velocity.resolution < 4 or cfg.velocity.resolution % 2:
        raise ConfigError("velocity.resolution", "must be an even number >= 4")
    for sec, key in (("space", "n_x"), ("space", "n_zeta"), ("knudsen", "n_xi"), ("time", "n_t")):
        if getattr(getattr(cfg, sec), key) < 2:
            raise ConfigError(f"{sec}.{key}", "must be >= 2")
    for sec, key in (("velocity", "extent"), ("space", "x_max"), ("space", "zeta_max"), ("knudsen", "xi_max"), ("time", "t_final")):
        if getattr(getattr(cfg, sec), key) <= 0:
            raise ConfigError(f"{sec}.{key}", "must be positive")
    return cfg


def parse(text):
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"malformed TOML: {exc}") from None
    parts = {}
    for name, table in raw.items():
        if name == "shear":
            parts["shear"] = _shear(table)
        elif name in SECTIONS:
            parts[name] = _section(name, SECTIONS[name], table)
        else:
            raise ConfigError(name, "unknown section")
    return validate(RunConfig(**parts))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def to_dict(cfg):
    out = {name: asdict(getattr(cfg, name)) for name in SECTIONS}
    shear = {}
    for o, prof in (("order0", cfg.shear.order0), ("order1", cfg.shear.order1)):
        sub = {n: asdict(getattr(prof, n)) for n in PROFILE_FIELDS if not getattr(prof, n).is_zero}
        if sub:
            shear[o] = sub
    out["shear"] = shear
    return out


def dumps(cfg):
    return tomli_w.dumps(to_dict(cfg))

