"""Machine modeling and fusion-parameter planning.

Everything here is flop-per-byte accounting.  A machine's
compute-to-memory ratio (CMR) at a level is peak flop/s divided by that
level's bandwidth in bytes/s; a computation whose arithmetic intensity
(AI, useful flops per byte moved at that level) is below the CMR is
bound by that level.  The planner picks the largest task size R whose
scratch fits the per-core L2 budget and checks it against the smallest
R that saturates the shared-cache level.

Machine models are data, never probed: L3 bandwidth in particular must
be measured externally and written into a model file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidParameterError, MachineModelError
from .tensor import LayerSpec

_FP32 = 4

# JSON field -> attribute, all required.  The names are the interchange
# contract for model files.
_MODEL_FIELDS = {
    "name": "name",
    "peak_flops": "peak_flops",
    "mem_bandwidth_bytes_per_s": "mem_bandwidth",
    "l3_bandwidth_bytes_per_s": "l3_bandwidth",
    "l2_bytes_per_core": "l2_bytes",
    "l3_bytes": "l3_bytes",
    "cores": "cores",
}


@dataclass(frozen=True)
class MachineModel:
    name: str
    peak_flops: float
    mem_bandwidth: float     # bytes/s, main memory
    l3_bandwidth: float      # bytes/s, shared cache (measured, not nominal)
    l2_bytes: int            # per core
    l3_bytes: int            # total
    cores: int

    def __post_init__(self):
        for f in ("peak_flops", "mem_bandwidth", "l3_bandwidth",
                  "l2_bytes", "l3_bytes", "cores"):
            if getattr(self, f) <= 0:
                raise MachineModelError(f"machine field {f} must be positive")

    @property
    def cmr_mem(self) -> float:
        return self.peak_flops / self.mem_bandwidth

    @property
    def cmr_l3(self) -> float:
        return self.peak_flops / self.l3_bandwidth

    @classmethod
    def from_dict(cls, raw: dict) -> "MachineModel":
        kw = {}
        for field, attr in _MODEL_FIELDS.items():
            if field not in raw:
                raise MachineModelError(f"machine model is missing {field!r}")
            kw[attr] = raw[field]
        if not isinstance(kw["name"], str) or not kw["name"]:
            raise MachineModelError("machine field 'name' must be a label")
        for attr in ("peak_flops", "mem_bandwidth", "l3_bandwidth",
                     "l2_bytes", "l3_bytes", "cores"):
            if not isinstance(kw[attr], (int, float)) \
                    or isinstance(kw[attr], bool):
                raise MachineModelError(
                    f"machine field {_attr_field(attr)!r} must be a number")
        kw["l2_bytes"] = int(kw["l2_bytes"])
        kw["l3_bytes"] = int(kw["l3_bytes"])
        kw["cores"] = int(kw["cores"])
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "MachineModel":
        p = Path(path)
        try:
            raw = json.loads(p.read_text())
        except OSError as exc:
            raise MachineModelError(f"cannot read machine model: {exc}") \
                from exc
        except json.JSONDecodeError as exc:
            raise MachineModelError(
                f"machine model {p} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise MachineModelError(f"machine model {p} must be an object")
        return cls.from_dict(raw)


def _attr_field(attr: str) -> str:
    for field, a in _MODEL_FIELDS.items():
        if a == attr:
            return field
    return attr


def sample_model_path(name: str) -> Path:
    """Path of a machine model shipped with the package."""
    p = Path(__file__).parent / "machines" / f"{name}.json"
    if not p.exists():
        raise MachineModelError(f"no sample machine model {name!r}")
    return p


def _positive(**kw) -> None:
    for k, v in kw.items():
        if v <= 0:
            raise InvalidParameterError(f"{k} must be positive, got {v}")


def _fraction_ok(fraction: float) -> None:
    if not 0.0 < fraction <= 1.0:
        raise InvalidParameterError(
            f"occupancy fraction must be in (0, 1], got {fraction}")


def l3_fit(c_in: int, c_out: int, tile: int, l3_bytes: int,
           fraction: float = 0.5):
    """Whether the transformed-kernel pack fits its share of L3.

    Returns (fits, required_bytes) with required = 4 * C * C' * T^2.
    """
    _positive(c_in=c_in, c_out=c_out, tile=tile, l3_bytes=l3_bytes)
    _fraction_ok(fraction)
    required = _FP32 * c_in * c_out * tile * tile
    return required <= fraction * l3_bytes, required


def ai_l3(r: int, alpha: float = 1.0) -> float:
    """Arithmetic intensity at the shared-cache level: alpha * R / 2.

    Per task position, alpha*2*R*C*C'*T^2 flops stream 4*C*C'*T^2
    bytes of kernel matrices from L3; everything else cancels.
    """
    if r < 1:
        raise InvalidParameterError(f"R must be >= 1, got {r}")
    return alpha * r / 2.0


def ai_mem(c_in: int, c_out: int) -> float:
    """Arithmetic intensity at main memory: C*C' / (2*(C + C'))."""
    _positive(c_in=c_in, c_out=c_out)
    return (c_in * c_out) / (2.0 * (c_in + c_out))


def ai_mem_lower_bound(c_in: int, c_out: int) -> float:
    """min(C, C')/4, a lower bound on ai_mem."""
    _positive(c_in=c_in, c_out=c_out)
    return min(c_in, c_out) / 4.0


def r_lower_bound(cmr_l3: float, alpha: float = 1.0) -> int:
    """Smallest R whose L3-level intensity reaches the machine's CMR."""
    _positive(cmr_l3=cmr_l3, alpha=alpha)
    return math.ceil(2.0 * cmr_l3 / alpha)


def l2_element_budget(l2_bytes: int, fraction: float = 0.5) -> int:
    """f32 elements the scratch bound may use: fraction * L2 / 4."""
    _positive(l2_bytes=l2_bytes)
    _fraction_ok(fraction)
    return math.floor(fraction * l2_bytes / _FP32)


def r_upper_bound(c_in: int, c_out: int, tile: int, l2_bytes: int,
                  fraction: float = 0.5) -> int:
    """Largest R with R * max(C, C') * (T^2 + 1) within the L2 budget.

    The scratch buffer capacity is upper-bounded by
    4 * R * max(C, C') * (T^2 + 1) bytes, so this R keeps a task's
    working set inside its share of L2.  Returns 0 when even R=1 does
    not fit.
    """
    _positive(c_in=c_in, c_out=c_out, tile=tile, l2_bytes=l2_bytes)
    _fraction_ok(fraction)
    budget = l2_element_budget(l2_bytes, fraction)
    per_r = max(c_in, c_out) * (tile * tile + 1)
    return budget // per_r


@dataclass(frozen=True)
class PlanReport:
    layer: LayerSpec
    tile: int
    alpha: float
    machine: str
    l3_fits: bool
    l3_required_bytes: int
    r_lower: int
    r_upper: int
    chosen_r: int
    feasible: bool                 # r_lower <= r_upper (and r_upper >= 1)
    utilization: dict              # level -> min(1, AI/CMR)
    utilization_overall: float

    def format(self) -> str:
        u = self.utilization
        lines = [
            f"machine: {self.machine}",
            (f"layer: B={self.layer.batch} C={self.layer.in_channels} "
             f"C'={self.layer.out_channels} "
             f"D={self.layer.height} W={self.layer.width} "
             f"K={self.layer.kernel}  T={self.tile}  alpha={self.alpha:g}"),
            (f"kernel pack: {self.l3_required_bytes} bytes; "
             f"fits shared-cache share: {'yes' if self.l3_fits else 'NO'}"),
            (f"R lower bound (saturate shared cache): {self.r_lower}   "
             f"R upper bound (scratch fits L2 share): {self.r_upper}"),
            (f"chosen R: {self.chosen_r}   "
             f"feasible: {'yes' if self.feasible else 'NO'}"),
            (f"predicted utilization: shared-cache {u['l3']:.3f}, "
             f"memory {u['mem']:.3f} -> overall "
             f"{self.utilization_overall:.3f}"),
        ]
        return "\n".join(lines)


def plan(layer: LayerSpec, tile: int, machine: MachineModel,
         alpha: float = 1.0, l2_fraction: float = 0.5,
         l3_fraction: float = 0.5) -> PlanReport:
    """Combine the fit checks and R bounds into one report.

    chosen_r is the largest admissible R (the upper bound); the report
    is flagged infeasible when that cannot reach the lower bound needed
    to saturate the shared-cache level.  Utilization is the plain
    min-over-levels roofline prediction, capped at 1 per level.
    """
    fits, required = l3_fit(layer.in_channels, layer.out_channels, tile,
                            machine.l3_bytes, l3_fraction)
    r_lo = r_lower_bound(machine.cmr_l3, alpha)
    r_up = r_upper_bound(layer.in_channels, layer.out_channels, tile,
                         machine.l2_bytes, l2_fraction)
    chosen = r_up if r_up >= 1 else 0
    feasible = 1 <= r_lo <= r_up
    util_l3 = min(1.0, ai_l3(chosen, alpha) / machine.cmr_l3) \
        if chosen >= 1 else 0.0
    util_mem = min(1.0, ai_mem(layer.in_channels, layer.out_channels)
                   / machine.cmr_mem)
    util = {"l3": util_l3, "mem": util_mem}
    return PlanReport(layer=layer, tile=tile, alpha=alpha,
                      machine=machine.name, l3_fits=fits,
                      l3_required_bytes=required, r_lower=r_lo,
                      r_upper=r_up, chosen_r=chosen, feasible=feasible,
                      utilization=util,
                      utilization_overall=min(util_l3, util_mem))
