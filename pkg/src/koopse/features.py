"""Random Fourier Feature embeddings for the state, input and measurement kernels.

Each sampled basis emits ``R/2`` cos/sin pairs, so the embedding of a point has
exactly ``R`` entries and its squared norm equals the kernel diagonal.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import ive


@dataclass(frozen=True)
class SquaredExponential:
    """Unit-variance squared-exponential kernel with per-dimension lengthscales."""

    lengthscales: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.lengthscales)


@dataclass(frozen=True)
class Periodic:
    """Periodic kernel ``exp(-2 sin^2(pi (a - b) / period) / lengthscale^2)`` on one dimension."""

    period: float
    lengthscale: float

    @property
    def dim(self) -> int:
        return 1


@dataclass(frozen=True)
class Linear:
    """Linear kernel ``a^T b``; the embedding is the identity."""

    dim: int


@dataclass(frozen=True)
class Product:
    """Product of kernels acting on disjoint slices of the input."""

    parts: tuple[tuple["Kernel", tuple[int, ...]], ...]

    @property
    def dim(self) -> int:
        return sum(len(idx) for _, idx in self.parts)


Kernel = Union[SquaredExponential, Periodic, Linear, Product]


@dataclass(frozen=True)
class KernelSpec:
    kernel: Kernel
    rank: int = 256

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def validate(self) -> None:
        _validate_kernel(self.kernel, "kernel")
        if isinstance(self.kernel, Linear):
            return
        if self.rank < 2 or self.rank % 2:
            raise ValueError(f"rank must be an even integer >= 2, got {self.rank}")

    def to_dict(self) -> dict:
        return {"kernel": kernel_to_dict(self.kernel), "rank": int(self.rank)}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(kernel_from_dict(d["kernel"]), int(d.get("rank", 256)))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _validate_kernel(kernel: Kernel, where: str) -> None:
    if isinstance(kernel, SquaredExponential):
        if len(kernel.lengthscales) == 0:
            raise ValueError(f"{where}.lengthscales is empty")
        for d, ell in enumerate(kernel.lengthscales):
            if not np.isfinite(ell) or ell <= 0:
                raise ValueError(f"{where}.lengthscales[{d}] must be positive, got {ell}")
    elif isinstance(kernel, Periodic):
        if not np.isfinite(kernel.period) or kernel.period <= 0:
            raise ValueError(f"{where}.period must be positive, got {kernel.period}")
        if not np.isfinite(kernel.lengthscale) or kernel.lengthscale <= 0:
            raise ValueError(f"{where}.lengthscale must be positive, got {kernel.lengthscale}")
    elif isinstance(kernel, Linear):
        if kernel.dim < 1:
            raise ValueError(f"{where}.dim must be >= 1, got {kernel.dim}")
    elif isinstance(kernel, Product):
        if not kernel.parts:
            raise ValueError(f"{where}.parts is empty")
        seen: list[int] = []
        for i, (sub, idx) in enumerate(kernel.parts):
            if isinstance(sub, (Linear, Product)):
                raise ValueError(
                    f"{where}.parts[{i}] is {type(sub).__name__}; only sampled kernels "
                    "(squared-exponential, periodic) can be combined"
                )
            _validate_kernel(sub, f"{where}.parts[{i}]")
            if len(idx) != sub.dim:
                raise ValueError(
                    f"{where}.parts[{i}] slice has {len(idx)} indices but the kernel acts on {sub.dim}"
                )
            seen.extend(idx)
        if sorted(seen) != list(range(len(seen))):
            raise ValueError(f"{where} slices {sorted(seen)} do not partition 0..{len(seen) - 1}")
    else:
        raise TypeError(f"{where}: unknown kernel type {type(kernel).__name__}")


def kernel_to_dict(kernel: Kernel) -> dict:
    if isinstance(kernel, SquaredExponential):
        return {"type": "se", "lengthscales": [float(v) for v in kernel.lengthscales]}
    if isinstance(kernel, Periodic):
        return {"type": "periodic", "period": float(kernel.period), "lengthscale": float(kernel.lengthscale)}
    if isinstance(kernel, Linear):
        return {"type": "linear", "dim": int(kernel.dim)}
    if isinstance(kernel, Product):
        return {
            "type": "product",
            "parts": [{"kernel": kernel_to_dict(k), "dims": [int(i) for i in idx]} for k, idx in kernel.parts],
        }
    raise TypeError(type(kernel).__name__)


def kernel_from_dict(d: dict) -> Kernel:
    kind = d["type"]
    if kind == "se":
        return SquaredExponential(tuple(float(v) for v in d["lengthscales"]))
    if kind == "periodic":
        return Periodic(float(d["period"]), float(d["lengthscale"]))
    if kind == "linear":
        return Linear(int(d["dim"]))
    if kind == "product":
        return Product(tuple((kernel_from_dict(p["kernel"]), tuple(int(i) for i in p["dims"])) for p in d["parts"]))
    raise ValueError(f"unknown kernel type {kind!r}")


@dataclass(frozen=True, eq=False)
class FeatureBasis:
    """A frozen feature map. ``frequencies`` is ``(R/2, D)``; empty for Linear bases."""

    spec: KernelSpec
    frequencies: np.ndarray
    scale: float
    seed: int
    output_dim: int
    input_shift: np.ndarray | None = field(default=None)
    input_scale: np.ndarray | None = field(default=None)

    @property
    def input_dim(self) -> int:
        return self.spec.dim

    @property
    def is_linear(self) -> bool:
        return isinstance(self.spec.kernel, Linear)


def _periodic_harmonics(kernel: Periodic, n: int, rng: np.random.Generator) -> np.ndarray:
    # Fourier-series weights of exp(cos(d)/l^2 - 1/l^2): I_0 for n=0, 2 I_n for n>=1.
    z = 1.0 / kernel.lengthscale**2
    nmax = int(np.ceil(z + 12.0 * np.sqrt(z) + 30.0))
    orders = np.arange(nmax + 1)
    weights = ive(orders, z)
    weights[1:] *= 2.0
    weights /= weights.sum()
    draws = rng.choice(orders, size=n, p=weights)
    return draws * (2.0 * np.pi / kernel.period)


def _sample_frequencies(kernel: Kernel, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(kernel, SquaredExponential):
        ell = np.asarray(kernel.lengthscales, dtype=float)
        return rng.standard_normal((n, ell.size)) / ell
    if isinstance(kernel, Periodic):
        return _periodic_harmonics(kernel, n, rng)[:, None]
    if isinstance(kernel, Product):
        freqs = np.zeros((n, kernel.dim))
        for sub, idx in kernel.parts:
            freqs[:, list(idx)] = _sample_frequencies(sub, n, rng)
        return freqs
    raise TypeError(type(kernel).__name__)


def sample_basis(spec: KernelSpec, seed: int) -> FeatureBasis:
    """Draw a frozen feature basis for ``spec``.

    Same ``(spec, seed)`` always yields bitwise-identical frequencies.
    """
    spec.validate()
    if isinstance(spec.kernel, Linear):
        return FeatureBasis(spec, np.zeros((0, spec.dim)), 1.0, int(seed), spec.dim)
    rng = np.random.default_rng(seed)
    freqs = _sample_frequencies(spec.kernel, spec.rank // 2, rng)
    freqs.setflags(write=False)
    return FeatureBasis(spec, freqs, float(np.sqrt(2.0 / spec.rank)), int(seed), spec.rank)


def with_standardization(basis: FeatureBasis, data: np.ndarray) -> FeatureBasis:
    """Return a copy of ``basis`` that whitens inputs by the per-dimension mean/std of ``data``."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    std = data.std(axis=0)
    std[std == 0] = 1.0
    return FeatureBasis(
        basis.spec, basis.frequencies, basis.scale, basis.seed, basis.output_dim,
        input_shift=data.mean(axis=0), input_scale=std,
    )


def embed(basis: FeatureBasis, points: np.ndarray) -> np.ndarray:
    """Embed one point ``(D,)`` or a batch ``(n, D)``; returns ``(R,)`` or ``(n, R)``.

    Sampled kernels emit interleaved pairs ``scale * [cos(w_i.p), sin(w_i.p)]``.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.ndim != 2 or pts.shape[1] != basis.input_dim:
        raise ValueError(f"expected points of dimension {basis.input_dim}, got shape {np.shape(points)}")
    if basis.input_shift is not None:
        pts = (pts - basis.input_shift) / basis.input_scale
    if basis.is_linear:
        out = pts.copy()
    else:
        phase = pts @ basis.frequencies.T
        out = np.empty((pts.shape[0], basis.output_dim))
        out[:, 0::2] = np.cos(phase)
        out[:, 1::2] = np.sin(phase)
        out *= basis.scale
    return out[0] if single else out


def embed_product(basis: FeatureBasis, points: np.ndarray) -> np.ndarray:
    """Embed with a product-kernel basis; phases of the factors add per feature pair."""
    if not isinstance(basis.spec.kernel, Product):
        raise ValueError(f"embed_product needs a Product basis, got {type(basis.spec.kernel).__name__}")
    return embed(basis, points)


def kernel_eval(spec: KernelSpec | Kernel, a, b) -> float:
    """Exact kernel value ``k(a, b)``."""
    kernel = spec.kernel if isinstance(spec, KernelSpec) else spec
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.size != kernel.dim:
        raise ValueError(f"kernel acts on dimension {kernel.dim}, got shapes {a.shape} and {b.shape}")
    if isinstance(kernel, SquaredExponential):
        r = (a - b) / np.asarray(kernel.lengthscales)
        return float(np.exp(-0.5 * r @ r))
    if isinstance(kernel, Periodic):
        s = np.sin(np.pi * (a[0] - b[0]) / kernel.period)
        return float(np.exp(-2.0 * s * s / kernel.lengthscale**2))
    if isinstance(kernel, Linear):
        return float(a @ b)
    if isinstance(kernel, Product):
        out = 1.0
        for sub, idx in kernel.parts:
            out *= kernel_eval(sub, a[list(idx)], b[list(idx)])
        return out
    raise TypeError(type(kernel).__name__)


def basis_arrays(basis: FeatureBasis, prefix: str) -> dict[str, np.ndarray]:
    """Arrays needed to rebuild ``basis`` bit-for-bit (see ``basis_from_arrays``)."""
    out = {f"{prefix}.frequencies": np.asarray(basis.frequencies)}
    if basis.input_shift is not None:
        out[f"{prefix}.input_shift"] = basis.input_shift
        out[f"{prefix}.input_scale"] = basis.input_scale
    return out


def basis_meta(basis: FeatureBasis) -> dict:
    return {"spec": basis.spec.to_dict(), "seed": basis.seed, "scale": basis.scale, "output_dim": basis.output_dim}


def basis_from_arrays(meta: dict, arrays: dict[str, np.ndarray], prefix: str) -> FeatureBasis:
    freqs = np.array(arrays[f"{prefix}.frequencies"])
    freqs.setflags(write=False)
    shift = arrays.get(f"{prefix}.input_shift")
    scale = arrays.get(f"{prefix}.input_scale")
    return FeatureBasis(
        KernelSpec.from_dict(meta["spec"]), freqs, float(meta["scale"]), int(meta["seed"]),
        int(meta["output_dim"]),
        input_shift=None if shift is None else np.array(shift),
        input_scale=None if scale is None else np.array(scale),
    )
