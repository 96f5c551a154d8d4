"""Networks of the pseudo-outcome model and its TARNet/CFRNet baselines.

Naming follows the roles of each network:

* ``psi_alpha``  covariate representation shared by the pseudo-outcome heads
* ``psi_eta``    post-treatment representation, phi = psi_eta(s)
* ``h0``/``h1``  pseudo-outcome heads; q(x, t, phi) = h_t(psi_alpha(x) ++ phi)
* ``f_trunk``, ``f0``/``f1``  the deployable outcome predictor f(x, t)
* ``g``/``g_tilde``  propensity models p(t=1 | x) and p(t=1 | x, phi)

f owns its trunk, so updating f can never move q.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from . import numgrad as ng
from .datagen import Scaler
from .numgrad import Tensor

PROB_CLAMP = 1e-6
CHECKPOINT_FORMAT = "pipcfr-bundle"
CHECKPOINT_VERSION = 1


class Method(str, Enum):
    TARNET = "TARNET"
    CFRNET_MMD = "CFRNET_MMD"
    CFRNET_WASS = "CFRNET_WASS"
    PIPCFR_MMD = "PIPCFR_MMD"
    PIPCFR_WASS = "PIPCFR_WASS"

    @property
    def is_pipcfr(self) -> bool:
        return self.value.startswith("PIPCFR")

    @property
    def ipm_kind(self) -> Optional[str]:
        if self is Method.TARNET:
            return None
        return "MMD" if self.value.endswith("MMD") else "WASS"


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple  # input width first
    activation: str = "relu"
    # "linear", "sigmoid", or "hidden" (reuse the hidden activation on the output)
    output_activation: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs an input width and at least one layer")
        if min(sizes) < 1:
            raise ValueError(f"layer sizes must be positive: {sizes}")
        if self.activation not in ("relu", "elu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_activation not in ("linear", "sigmoid", "hidden"):
            raise ValueError(f"unknown output activation {self.output_activation!r}")


_ACTS = {"relu": ng.relu, "elu": ng.elu, "sigmoid": ng.sigmoid}


class MLP:
    def __init__(self, spec: MlpSpec, rng: Optional[np.random.Generator] = None):
        self.spec = spec
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = spec.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)  # Kaiming-uniform, relu gain
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def in_dim(self) -> int:
        return self.spec.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.spec.layer_sizes[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x, frozen: bool = False) -> Tensor:
        """``frozen=True`` treats the weights as constants (no gradient to them)."""
        x = ng.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ng.ShapeError(f"MLP expects input (n, {self.in_dim}), got {x.shape}")
        act = _ACTS[self.spec.activation]
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if frozen:
                w, b = Tensor(w.data), Tensor(b.data)
            x = x @ w + b
            if i < n_layers - 1:
                x = act(x)
            elif self.spec.output_activation == "hidden":
                x = act(x)
            elif self.spec.output_activation == "sigmoid":
                x = ng.sigmoid(x)
        return x

    def state(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=float)
            if a.shape != p.data.shape:
                raise ng.ShapeError(f"parameter shape {p.data.shape} vs stored {a.shape}")
            p.data = a.copy()


@dataclass(frozen=True)
class ArchConfig:
    rep_width: int = 64
    rep_layers: int = 3
    head_width: int = 64
    head_layers: int = 4
    phi_hidden: int = 128
    phi_layers: int = 3
    phi_dim: int = 32
    prop_width: int = 64
    prop_layers: int = 4
    activation: str = "relu"


def _stack(in_dim, width, n_layers, out_dim=None):
    sizes = [in_dim] + [width] * (n_layers - (1 if out_dim is not None else 0))
    if out_dim is not None:
        sizes.append(out_dim)
    return tuple(sizes)


@dataclass
class ModelBundle:
    method: Method
    x_dim: int
    s_dim: int
    arch: ArchConfig
    nets: dict = field(default_factory=dict)
    scaler: Optional[Scaler] = None

    # -- construction ------------------------------------------------------
    @classmethod
    def build(cls, method, x_dim: int, s_dim: int, arch: ArchConfig = ArchConfig(),
              rng: Optional[np.random.Generator] = None, scaler: Optional[Scaler] = None) -> "ModelBundle":
        method = Method(method)
        if method.is_pipcfr and s_dim < 1:
            raise ValueError(f"{method.value} needs post-treatment variables (s_dim >= 1)")
        rng = rng if rng is not None else np.random.default_rng(0)
        act = arch.activation
        specs = cls.specs_for(method, x_dim, s_dim, arch)
        nets = {name: MLP(spec, rng) for name, spec in specs.items()}
        assert act in ("relu", "elu")
        return cls(method, x_dim, s_dim, arch, nets, scaler)

    @staticmethod
    def specs_for(method: Method, x_dim: int, s_dim: int, arch: ArchConfig) -> dict:
        act = arch.activation
        rep = lambda d: MlpSpec(_stack(d, arch.rep_width, arch.rep_layers), act, "hidden")  # noqa: E731
        head = lambda d: MlpSpec(_stack(d, arch.head_width, arch.head_layers, 1), act, "linear")  # noqa: E731
        specs = {
            "f_trunk": rep(x_dim),
            "f0": head(arch.rep_width),
            "f1": head(arch.rep_width),
        }
        if method.is_pipcfr:
            specs.update({
                "psi_alpha": rep(x_dim),
                "psi_eta": MlpSpec(_stack(s_dim, arch.phi_hidden, arch.phi_layers, arch.phi_dim), act, "hidden"),
                "h0": head(arch.rep_width + arch.phi_dim),
                "h1": head(arch.rep_width + arch.phi_dim),
                "g": MlpSpec(_stack(x_dim, arch.prop_width, arch.prop_layers, 1), act, "sigmoid"),
                "g_tilde": MlpSpec(_stack(x_dim + arch.phi_dim, arch.prop_width, arch.prop_layers, 1),
                                   act, "sigmoid"),
            })
        return specs

    def __getattr__(self, name):
        nets = self.__dict__.get("nets", {})
        if name in nets:
            return nets[name]
        raise AttributeError(name)

    # -- parameter groups --------------------------------------------------
    GROUPS = {
        "f": ("f_trunk", "f0", "f1"),
        "g": ("g", "g_tilde"),
        "psi_eta": ("psi_eta",),
        "q": ("psi_alpha", "h0", "h1"),
    }

    def params(self, *net_names: str) -> list[Tensor]:
        out = []
        for name in net_names:
            out += self.nets[name].parameters()
        return out

    def group(self, name: str) -> list[Tensor]:
        return self.params(*(n for n in self.GROUPS[name] if n in self.nets))

    def all_params(self) -> list[Tensor]:
        return self.params(*sorted(self.nets))

    def zero_grad(self) -> None:
        for p in self.all_params():
            p.grad = None

    def snapshot(self) -> dict:
        return {name: [a.copy() for a in net.state()] for name, net in self.nets.items()}

    def restore(self, snap: dict) -> None:
        for name, arrays in snap.items():
            self.nets[name].load_state(arrays)

    def check_x(self, x) -> None:
        d = np.shape(x)[1] if np.ndim(x) == 2 else None
        if d != self.x_dim:
            raise ng.ShapeError(f"covariate dimension mismatch: model expects x_dim={self.x_dim}, got {d}")

    def check_s(self, s) -> None:
        d = np.shape(s)[1] if np.ndim(s) == 2 else None
        if d != self.s_dim:
            raise ng.ShapeError(f"post-treatment dimension mismatch: model expects s_dim={self.s_dim}, got {d}")


# ---------------------------------------------------------------------------
# Forward functions
# ---------------------------------------------------------------------------
def _tcol(t) -> np.ndarray:
    t = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=float).reshape(-1)
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("treatment values must be 0 or 1")
    return t


def select_arm(out0: Tensor, out1: Tensor, t) -> Tensor:
    """Row-wise pick of ``out1`` where t == 1, else ``out0``."""
    tt = _tcol(t)
    return out1 * tt + out0 * (1.0 - tt)


def phi(bundle: ModelBundle, s, frozen: bool = False) -> Tensor:
    bundle.check_s(s)
    return bundle.psi_eta(s, frozen=frozen)


def q_heads(bundle: ModelBundle, x, phi_t: Tensor, frozen: bool = False) -> tuple[Tensor, Tensor]:
    rep = bundle.psi_alpha(x, frozen=frozen)
    z = ng.concat([rep, phi_t], axis=1)
    h0 = bundle.h0(z, frozen=frozen).reshape(-1)
    h1 = bundle.h1(z, frozen=frozen).reshape(-1)
    return h0, h1


def predict_q(bundle: ModelBundle, x, t, s) -> Tensor:
    bundle.check_x(x)
    tt = _tcol(t)
    h0, h1 = q_heads(bundle, x, phi(bundle, s))
    return select_arm(h0, h1, tt)


def f_heads(bundle: ModelBundle, x, frozen: bool = False) -> tuple[Tensor, Tensor]:
    bundle.check_x(x)
    rep = bundle.f_trunk(x, frozen=frozen)
    return bundle.f0(rep, frozen=frozen).reshape(-1), bundle.f1(rep, frozen=frozen).reshape(-1)


def f_representation(bundle: ModelBundle, x) -> Tensor:
    bundle.check_x(x)
    return bundle.f_trunk(x)


def predict_f(bundle: ModelBundle, x, t) -> Tensor:
    f0, f1 = f_heads(bundle, x)
    return select_arm(f0, f1, t)


def predict_ite(bundle: ModelBundle, x) -> np.ndarray:
    """tau_hat(x) = f_1(x) - f_0(x), in the units the bundle was trained in."""
    with ng.no_grad():
        f0, f1 = f_heads(bundle, x)
    return f1.data - f0.data


def propensity(bundle: ModelBundle, x, phi_t: Optional[Tensor] = None, frozen: bool = False) -> Tensor:
    """p(t=1 | x) from g, or p(t=1 | x, phi) from g_tilde when ``phi_t`` is given.

    Clamped to [1e-6, 1 - 1e-6] so logs stay finite.
    """
    bundle.check_x(x)
    if phi_t is None:
        p = bundle.g(x, frozen=frozen)
    else:
        p = bundle.g_tilde(ng.concat([ng.as_tensor(x), phi_t], axis=1), frozen=frozen)
    return ng.clamp(p.reshape(-1), PROB_CLAMP, 1.0 - PROB_CLAMP)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
def _enc(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


def bundle_to_dict(bundle: ModelBundle, extra: Optional[dict] = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "method": bundle.method.value,
        "x_dim": bundle.x_dim,
        "s_dim": bundle.s_dim,
        "arch": asdict(bundle.arch),
        "specs": {name: asdict(net.spec) for name, net in bundle.nets.items()},
        "params": {name: [_enc(a) for a in net.state()] for name, net in bundle.nets.items()},
        "scaler": None if bundle.scaler is None else bundle.scaler.to_dict(),
        "extra": extra or {},
    }


def bundle_from_dict(d: dict) -> ModelBundle:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a pipcfr checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    arch = ArchConfig(**d["arch"])
    nets = {}
    for name, spec in d["specs"].items():
        spec = MlpSpec(tuple(spec["layer_sizes"]), spec["activation"], spec["output_activation"])
        net = MLP(spec)
        net.load_state([_dec(a) for a in d["params"][name]])
        nets[name] = net
    scaler = None if d["scaler"] is None else Scaler.from_dict(d["scaler"])
    return ModelBundle(Method(d["method"]), int(d["x_dim"]), int(d["s_dim"]), arch, nets, scaler)


def save_bundle(bundle: ModelBundle, path, extra: Optional[dict] = None) -> None:
    text = json.dumps(bundle_to_dict(bundle, extra), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_bundle(path) -> ModelBundle:
    return bundle_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
