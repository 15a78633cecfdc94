"""Problem data model: query types, models, GPU tiers, calibration and file I/O.

All quantities are kept in one unit system:
  arrival rates      queries/hour
  token counts       tokens
  delays / SLOs      seconds
  delay penalty rho  $/second  (generator converts from $/ms quotes)
  weights B          GB
  KV footprint beta  bytes/token
  bandwidths         GB/s
  prices             $/hour, storage $/GB/h
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import CalibrationError, InstanceFormatError

SCHEMA_VERSION = "llm-alloc/1"

KB = 1024.0
GB = 1e9


@dataclass(frozen=True)
class QueryType:
    id: int
    lam: float          # arrival rate (queries/hour), serialized as "lambda"
    h: float            # mean input tokens
    f: float            # mean output tokens
    delta: float        # delay SLO (s)
    epsilon: float      # error SLO (fraction)
    rho: float          # delay penalty ($/s)
    phi: float          # unmet-demand penalty ($ per unit unserved fraction)
    theta: float        # per-token storage footprint (KB/token)
    tau: float          # decode overhead multiplier
    zeta: float = 1.0   # upper bound on unserved fraction

    @property
    def r(self) -> float:
        return self.h + self.f

    def validate(self, path: str) -> None:
        if not self.lam > 0:
            raise InstanceFormatError(f"{path}.lambda must be > 0, got {self.lam}")
        if self.h < 1 or self.f < 1:
            raise InstanceFormatError(f"{path}: h and f must be >= 1")
        if not self.delta > 0:
            raise InstanceFormatError(f"{path}.delta must be > 0")
        if not (0 < self.epsilon < 1):
            raise InstanceFormatError(f"{path}.epsilon must be in (0,1), got {self.epsilon}")
        if self.rho < 0 or self.phi < 0 or self.theta < 0:
            raise InstanceFormatError(f"{path}: rho, phi, theta must be >= 0")
        if not (0 <= self.zeta <= 1):
            raise InstanceFormatError(f"{path}.zeta must be in [0,1]")


@dataclass(frozen=True)
class ModelSpec:
    id: int
    B: float      # weight size (GB)
    beta: float   # KV-cache footprint (bytes/token)
    g: float      # base compute cost (GFLOP/token)
    act: float    # activation size per token (bytes)

    def validate(self, path: str) -> None:
        for name in ("B", "beta", "g", "act"):
            if not getattr(self, name) > 0:
                raise InstanceFormatError(f"{path}.{name} must be > 0")


QUANT_SCALES = (1.0, 0.5, 0.25)  # FP16, INT8, INT4


@dataclass(frozen=True)
class GpuTier:
    id: int
    cap: float       # GPU memory (GB)
    pflops: float    # compute (TFLOPS)
    bw: float        # memory bandwidth (GB/s)
    nvlink: float    # interconnect bandwidth (GB/s)
    price: float     # rental ($/h)
    sigma: float     # quantization scale
    err_infl: float  # error inflation factor
    tp_set: tuple[int, ...] = (1, 2, 4, 8)

    def validate(self, path: str) -> None:
        for name in ("cap", "pflops", "bw", "nvlink", "price"):
            if not getattr(self, name) > 0:
                raise InstanceFormatError(f"{path}.{name} must be > 0")
        if self.sigma not in QUANT_SCALES:
            raise InstanceFormatError(
                f"{path}.sigma must be one of {QUANT_SCALES}, got {self.sigma}")
        if self.err_infl < 1:
            raise InstanceFormatError(f"{path}.err_infl must be >= 1")
        if not self.tp_set:
            raise InstanceFormatError(f"{path}.tp_set must be non-empty")
        if list(self.tp_set) != sorted(self.tp_set):
            raise InstanceFormatError(f"{path}.tp_set must be sorted ascending")
        for n in self.tp_set:
            if n < 1 or (n & (n - 1)) != 0:
                raise InstanceFormatError(f"{path}.tp_set entries must be powers of two")


@dataclass(frozen=True)
class Globals:
    horizon: float = 24.0         # planning horizon (h)
    budget: float = 100.0         # $
    storage_price: float = 0.00075  # $/GB/h
    storage_cap: float = 1000.0   # GB
    eta: float = 0.9              # PP-bubble efficiency
    t_conv: float = 3600.0        # s/h
    phase1_frac: float = 0.8      # coverage-phase budget fraction
    pp_set: tuple[int, ...] = (1, 2, 4)

    def validate(self, path: str = "globals") -> None:
        for name in ("horizon", "budget", "storage_price", "storage_cap",
                     "eta", "t_conv", "phase1_frac"):
            v = getattr(self, name)
            if not v >= 0 or (name != "budget" and not v > 0):
                raise InstanceFormatError(f"{path}.{name} must be positive, got {v}")
        if self.eta > 1 or self.phase1_frac > 1:
            raise InstanceFormatError(f"{path}: eta and phase1_frac must be <= 1")
        if not self.pp_set or list(self.pp_set) != sorted(self.pp_set):
            raise InstanceFormatError(f"{path}.pp_set must be non-empty and sorted")


@dataclass(frozen=True)
class ErrorBase:
    e0: np.ndarray  # (I, J) base error rates

    def validate(self, path: str = "error_base") -> None:
        if np.any(self.e0 < 0) or np.any(self.e0 >= 1):
            bad = np.argwhere((self.e0 < 0) | (self.e0 >= 1))[0]
            raise InstanceFormatError(
                f"{path}.e0[{bad[0]}][{bad[1]}] outside [0,1)")


@dataclass(frozen=True)
class DerivedCoeffs:
    d_comp: np.ndarray  # (I,J,K) per-token compute delay (s/token)
    d_comm: np.ndarray  # (I,J,K) per-token communication delay (s/token)
    alpha: np.ndarray   # (I,J,K) per-token compute cost (GFLOP/token)
    t_res: np.ndarray   # (I,J,K) KV residency time (s)
    e_bar: np.ndarray   # (I,J,K) error rate


@dataclass(frozen=True)
class Instance:
    queries: tuple[QueryType, ...]
    models: tuple[ModelSpec, ...]
    tiers: tuple[GpuTier, ...]
    globals: Globals
    error_base: ErrorBase
    coeffs: Optional[DerivedCoeffs] = None
    _arrays: Optional["InstanceArrays"] = field(default=None, repr=False, compare=False)

    @property
    def I(self) -> int:
        return len(self.queries)

    @property
    def J(self) -> int:
        return len(self.models)

    @property
    def K(self) -> int:
        return len(self.tiers)

    @property
    def arrays(self) -> "InstanceArrays":
        if self._arrays is None:
            raise CalibrationError("instance is not calibrated; call calibrate() first")
        return self._arrays

    def validate(self) -> None:
        for i, q in enumerate(self.queries):
            q.validate(f"queries[{i}]")
        for j, m in enumerate(self.models):
            m.validate(f"models[{j}]")
        for k, t in enumerate(self.tiers):
            t.validate(f"tiers[{k}]")
        self.globals.validate()
        if self.error_base.e0.shape != (self.I, self.J):
            raise InstanceFormatError(
                f"error_base.e0 has shape {self.error_base.e0.shape}, "
                f"expected ({self.I}, {self.J})")
        self.error_base.validate()

    def instance_id(self) -> str:
        """Stable short identifier: hash of the canonical serialized form."""
        payload = json.dumps(to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


@dataclass(frozen=True)
class InstanceArrays:
    """Vectorized views of instance data, built once at calibration time."""
    lam: np.ndarray
    h: np.ndarray
    f: np.ndarray
    r: np.ndarray
    delta: np.ndarray
    eps: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    theta_gb: np.ndarray   # converted KB/token -> GB/token
    tau: np.ndarray
    zeta: np.ndarray
    B: np.ndarray
    beta: np.ndarray
    g: np.ndarray
    act: np.ndarray
    cap: np.ndarray
    pflops: np.ndarray
    bw: np.ndarray
    nvlink: np.ndarray
    price: np.ndarray
    sigma: np.ndarray
    err_infl: np.ndarray


def _build_arrays(inst: Instance) -> InstanceArrays:
    q, m, t = inst.queries, inst.models, inst.tiers
    return InstanceArrays(
        lam=np.array([x.lam for x in q]),
        h=np.array([x.h for x in q]),
        f=np.array([x.f for x in q]),
        r=np.array([x.r for x in q]),
        delta=np.array([x.delta for x in q]),
        eps=np.array([x.epsilon for x in q]),
        rho=np.array([x.rho for x in q]),
        phi=np.array([x.phi for x in q]),
        theta_gb=np.array([x.theta for x in q]) * KB / GB,
        tau=np.array([x.tau for x in q]),
        zeta=np.array([x.zeta for x in q]),
        B=np.array([x.B for x in m]),
        beta=np.array([x.beta for x in m]),
        g=np.array([x.g for x in m]),
        act=np.array([x.act for x in m]),
        cap=np.array([x.cap for x in t]),
        pflops=np.array([x.pflops for x in t]),
        bw=np.array([x.bw for x in t]),
        nvlink=np.array([x.nvlink for x in t]),
        price=np.array([x.price for x in t]),
        sigma=np.array([x.sigma for x in t]),
        err_infl=np.array([x.err_infl for x in t]),
    )


def calibrate(inst: Instance) -> Instance:
    """Derive the coefficient tensors from raw parameters.

    d_comp[i,j,k] = tau_i * B_j * sigma_k / bw_k          (s/token)
    t_res[i,j,k]  = r_i * beta_j / (bw_k * 1e9)           (s)
    alpha[i,j,k]  = g_j * sigma_k                         (GFLOP/token)
    d_comm[i,j,k] = act_j / (nvlink_k * 1e9)              (s/token)
    e_bar[i,j,k]  = e0[i,j] * err_infl_k
    """
    inst.validate()
    a = _build_arrays(inst)
    tau = a.tau[:, None, None]
    r = a.r[:, None, None]
    B = a.B[None, :, None]
    beta = a.beta[None, :, None]
    g = a.g[None, :, None]
    act = a.act[None, :, None]
    bw = a.bw[None, None, :]
    nvl = a.nvlink[None, None, :]
    sigma = a.sigma[None, None, :]

    d_comp = tau * B * sigma / bw
    t_res = r * beta / (bw * GB)
    alpha = np.broadcast_to(g * sigma, d_comp.shape).copy()
    d_comm = np.broadcast_to(act / (nvl * GB), d_comp.shape).copy()
    e_bar = inst.error_base.e0[:, :, None] * a.err_infl[None, None, :]

    for name, arr in (("d_comp", d_comp), ("d_comm", d_comm), ("alpha", alpha),
                      ("t_res", t_res), ("e_bar", e_bar)):
        if not np.all(np.isfinite(arr)):
            i, j, k = np.argwhere(~np.isfinite(arr))[0]
            raise CalibrationError(f"non-finite {name} at (i={i}, j={j}, k={k})")

    coeffs = DerivedCoeffs(d_comp=d_comp, d_comm=d_comm, alpha=alpha,
                           t_res=t_res, e_bar=e_bar)
    out = replace(inst, coeffs=coeffs)
    object.__setattr__(out, "_arrays", _build_arrays(out))
    return out


# ---------------------------------------------------------------------------
# Random instance generation
# ---------------------------------------------------------------------------

# Task archetypes, cycled when I > 6. Bands: (lam, h, f, delta, eps, rho $/ms,
# phi, theta KB/token, tau). rho is converted to $/s at draw time.
_ARCHETYPES = [
    # name            lam              h            f             delta        eps             rho(ms)            phi           theta      tau
    ("summarization", (18000, 25000), (600, 1200), (150, 300),   (3.0, 6.0),  (0.06, 0.08),   (0.0001, 0.0003), (1000, 1500), (10, 14),  (0.9, 1.1)),
    ("code",          (10000, 15000), (400, 900),  (300, 700),   (3.0, 8.0),  (0.038, 0.05),  (0.0001, 0.0003), (1000, 1500), (10, 14),  (0.9, 1.1)),
    ("translation",   (8000, 12000),  (300, 700),  (300, 700),   (2.5, 6.0),  (0.045, 0.06),  (0.0001, 0.0003), (1000, 1500), (10, 14),  (0.9, 1.1)),
    ("math",          (4000, 8000),   (200, 500),  (400, 900),   (5.0, 12.0), (0.035, 0.045), (0.0005, 0.0008), (1000, 1500), (10, 14),  (1.0, 1.2)),
    ("image",         (2000, 5000),   (50, 200),   (600, 1200),  (10.0, 18.0), (0.06, 0.08),   (0.0005, 0.001),  (2000, 3000), (40, 60),  (1.1, 1.3)),
    ("video",         (1000, 3000),   (50, 200),   (1200, 2500), (15.0, 25.0), (0.06, 0.08),   (0.0005, 0.001),  (2000, 3000), (80, 120), (1.2, 1.4)),
]

# Model catalog: Llama-3.x-like parameter counts (billions) for J <= 6;
# larger J interpolates geometrically over [1, 70].
_MODEL_PARAMS = [1.0, 3.0, 8.0, 13.0, 34.0, 70.0]

# Tier hardware archetypes: (cap GB, fp16 TFLOPS, bw GB/s, nvlink GB/s, base $/h, tp_set)
_HW = [
    ("a6000",   24.0, 155.0, 768.0, 600.0, 0.85, (1, 2, 4)),
    ("rtx4090", 24.0, 165.0, 1008.0, 600.0, 0.60, (1, 2, 4)),
    ("a100_40", 40.0, 312.0, 1555.0, 600.0, 1.40, (1, 2, 4, 8)),
    ("h100_80", 80.0, 989.0, 3350.0, 900.0, 2.45, (1, 2, 4, 8)),
]
# (hardware index, sigma, err_infl, price discount) per default tier slot;
# ordered so small-K prefixes still span cheap/fast and full/quantized modes
_TIER_SLOTS = [
    (0, 1.0, 1.0, 1.0),    # A6000 FP16
    (2, 1.0, 1.0, 1.0),    # A100-40 FP16
    (1, 0.5, 1.15, 0.92),  # RTX4090 INT8
    (3, 1.0, 1.0, 1.0),    # H100-80 FP16
    (0, 0.5, 1.15, 0.92),  # A6000 INT8
    (1, 1.0, 1.0, 1.0),    # RTX4090 FP16
    (2, 0.5, 1.15, 0.92),  # A100-40 INT8
    (3, 0.5, 1.15, 0.92),  # H100-80 INT8
    (1, 0.25, 1.35, 0.85), # RTX4090 INT4
    (3, 0.25, 1.35, 0.85), # H100-80 INT4
]


def _model_params_for(J: int) -> list[float]:
    if J <= len(_MODEL_PARAMS):
        return _MODEL_PARAMS[:J]
    return list(np.geomspace(_MODEL_PARAMS[0], _MODEL_PARAMS[-1], J))


def generate_instance(sizes: tuple[int, int, int], seed: int) -> Instance:
    """Draw a reproducible random instance at the given (I, J, K) sizes."""
    I, J, K = sizes
    if I < 1 or J < 1 or K < 1:
        raise InstanceFormatError(f"sizes must all be >= 1, got {sizes}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    queries = []
    for i in range(I):
        name, lam_b, h_b, f_b, d_b, e_b, rho_b, phi_b, th_b, tau_b = \
            _ARCHETYPES[i % len(_ARCHETYPES)]
        queries.append(QueryType(
            id=i,
            lam=float(rng.uniform(*lam_b)),
            h=float(np.floor(rng.uniform(*h_b))),
            f=float(np.floor(rng.uniform(*f_b))),
            delta=float(rng.uniform(*d_b)),
            epsilon=float(rng.uniform(*e_b)),
            rho=float(rng.uniform(*rho_b)) * 1000.0,  # $/ms -> $/s
            phi=float(rng.uniform(*phi_b)),
            theta=float(rng.uniform(*th_b)),
            tau=float(rng.uniform(*tau_b)),
            zeta=1.0,
        ))

    models = []
    for j, params in enumerate(_model_params_for(J)):
        B = 2.0 * params                       # FP16 weight bytes ~ 2/param
        beta = 32.0 * KB * params ** 0.542     # KV bytes/token, fit to 1B..70B
        g = 2.0 * params                       # GFLOP/token ~ 2*params
        act = 16384.0 * (B / 140.0) ** 0.5     # activation bytes/token proxy
        models.append(ModelSpec(id=j, B=B, beta=float(beta), g=g, act=float(act)))

    tiers = []
    for k in range(K):
        hw_idx, sigma, err_infl, disc = _TIER_SLOTS[k % len(_TIER_SLOTS)]
        _, cap, pflops, bw, nvlink, base_price, tp_set = _HW[hw_idx]
        price = float(np.clip(base_price * disc * rng.uniform(0.9, 1.1), 0.35, 2.50))
        tiers.append(GpuTier(id=k, cap=cap, pflops=pflops, bw=bw, nvlink=nvlink,
                             price=price, sigma=sigma, err_infl=err_infl,
                             tp_set=tp_set))

    glob = Globals(storage_price=float(rng.uniform(0.0005, 0.001)))

    # Base errors: anchored to each class's epsilon band ceiling, decaying
    # with model size so larger models are more accurate.
    B_min = min(m.B for m in models)
    e0 = np.empty((I, J))
    for i in range(I):
        eps_hi = _ARCHETYPES[i % len(_ARCHETYPES)][5][1]
        for j in range(J):
            e0[i, j] = np.clip(eps_hi * (B_min / models[j].B) ** 0.3, 0.005, 0.12)

    inst = Instance(queries=tuple(queries), models=tuple(models),
                    tiers=tuple(tiers), globals=glob,
                    error_base=ErrorBase(e0=e0))
    return calibrate(inst)


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

def to_dict(inst: Instance) -> dict:
    d = {
        "schema": SCHEMA_VERSION,
        "queries": [{
            "id": q.id, "lambda": q.lam, "h": q.h, "f": q.f, "delta": q.delta,
            "epsilon": q.epsilon, "rho": q.rho, "phi": q.phi, "theta": q.theta,
            "tau": q.tau, "zeta": q.zeta,
        } for q in inst.queries],
        "models": [{
            "id": m.id, "B": m.B, "beta": m.beta, "g": m.g, "act": m.act,
        } for m in inst.models],
        "tiers": [{
            "id": t.id, "cap": t.cap, "pflops": t.pflops, "bw": t.bw,
            "nvlink": t.nvlink, "price": t.price, "sigma": t.sigma,
            "err_infl": t.err_infl, "tp_set": list(t.tp_set),
        } for t in inst.tiers],
        "globals": {
            "horizon": inst.globals.horizon, "budget": inst.globals.budget,
            "storage_price": inst.globals.storage_price,
            "storage_cap": inst.globals.storage_cap, "eta": inst.globals.eta,
            "t_conv": inst.globals.t_conv,
            "phase1_frac": inst.globals.phase1_frac,
            "pp_set": list(inst.globals.pp_set),
        },
        "error_base": {"e0": inst.error_base.e0.tolist()},
    }
    if inst.coeffs is not None:
        d["coeffs"] = {
            "d_comp": inst.coeffs.d_comp.tolist(),
            "d_comm": inst.coeffs.d_comm.tolist(),
            "alpha": inst.coeffs.alpha.tolist(),
            "t_res": inst.coeffs.t_res.tolist(),
            "e_bar": inst.coeffs.e_bar.tolist(),
        }
    return d


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise InstanceFormatError(f"missing required field `{path}.{key}`"
                                  if path else f"missing required field `{key}`")
    return d[key]


def from_dict(d: dict) -> Instance:
    if _require(d, "schema", "") != SCHEMA_VERSION:
        raise InstanceFormatError(
            f"schema must be {SCHEMA_VERSION!r}, got {d.get('schema')!r}")

    queries = []
    for i, qd in enumerate(_require(d, "queries", "")):
        p = f"queries[{i}]"
        queries.append(QueryType(
            id=int(_require(qd, "id", p)), lam=float(_require(qd, "lambda", p)),
            h=float(_require(qd, "h", p)), f=float(_require(qd, "f", p)),
            delta=float(_require(qd, "delta", p)),
            epsilon=float(_require(qd, "epsilon", p)),
            rho=float(_require(qd, "rho", p)), phi=float(_require(qd, "phi", p)),
            theta=float(_require(qd, "theta", p)), tau=float(_require(qd, "tau", p)),
            zeta=float(qd.get("zeta", 1.0)),
        ))
    models = []
    for j, md in enumerate(_require(d, "models", "")):
        p = f"models[{j}]"
        models.append(ModelSpec(
            id=int(_require(md, "id", p)), B=float(_require(md, "B", p)),
            beta=float(_require(md, "beta", p)), g=float(_require(md, "g", p)),
            act=float(_require(md, "act", p)),
        ))
    tiers = []
    for k, td in enumerate(_require(d, "tiers", "")):
        p = f"tiers[{k}]"
        tiers.append(GpuTier(
            id=int(_require(td, "id", p)), cap=float(_require(td, "cap", p)),
            pflops=float(_require(td, "pflops", p)), bw=float(_require(td, "bw", p)),
            nvlink=float(_require(td, "nvlink", p)),
            price=float(_require(td, "price", p)),
            sigma=float(_require(td, "sigma", p)),
            err_infl=float(_require(td, "err_infl", p)),
            tp_set=tuple(int(x) for x in _require(td, "tp_set", p)),
        ))
    gd = _require(d, "globals", "")
    glob = Globals(
        horizon=float(_require(gd, "horizon", "globals")),
        budget=float(_require(gd, "budget", "globals")),
        storage_price=float(_require(gd, "storage_price", "globals")),
        storage_cap=float(_require(gd, "storage_cap", "globals")),
        eta=float(_require(gd, "eta", "globals")),
        t_conv=float(_require(gd, "t_conv", "globals")),
        phase1_frac=float(_require(gd, "phase1_frac", "globals")),
        pp_set=tuple(int(x) for x in _require(gd, "pp_set", "globals")),
    )
    eb = ErrorBase(e0=np.asarray(_require(_require(d, "error_base", ""), "e0",
                                          "error_base"), dtype=float))
    inst = Instance(queries=tuple(queries), models=tuple(models),
                    tiers=tuple(tiers), globals=glob, error_base=eb)
    # coeffs are recomputed rather than trusted; calibrate also validates.
    return calibrate(inst)


def write_instance(inst: Instance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(inst), fh, indent=1)
        fh.write("\n")


def read_instance(path) -> Instance:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    return from_dict(d)


def structurally_equal(a: Instance, b: Instance) -> bool:
    return json.dumps(to_dict(a), sort_keys=True) == json.dumps(to_dict(b), sort_keys=True)
