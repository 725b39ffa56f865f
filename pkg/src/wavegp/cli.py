"""Command line driver.

Usage::

    wavegp SUBCOMMAND [CONFIG_FILE] [key=value ...] [--strict]

The config file holds one ``key=value`` per line with ``#`` comments; keys
given on the command line override it. Unknown keys are rejected before any
computation starts, and artifacts are written atomically, so a failed run
never leaves a partial file behind.

Exit status: 0 success, 2 configuration error, 3 numeric failure, 4 failed
verification under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from typing import Callable, Optional

import numpy as np

from . import __version__
from .errors import ConfigError, NumericFailure, WaveGPError
from .gpr import fit_posterior, posterior_mean, posterior_std, read_observations
from .kernels import KernelSpec, cross_matrix
from .verify import (
    GaussianFieldSampler,
    PathwiseWaveSampler,
    DEFAULT_RULES,
    BumpTestFunction,
    all_passed,
    dalembertian,
    kernel_field_factory,
    make_bump_bank,
    make_rule,
    monte_carlo_pathwise,
    parse_terms,
    residual_second_moment,
    transport2d,
    verify_kernel_constraint,
)
from .wave import WaveModel, kw_matrix, sample_wave_field

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

SUBCOMMANDS = ("kernel-eval", "gram", "wave-cov", "krige", "verify", "mc-verify", "sample")

DEFAULT_TOL = {"transport2d": 1e-4, "dalembert": 1e-3, "custom": 1e-4}

KERNEL_PRESETS = {
    "shiftinvariant-matern12": dict(family="matern12", lengthscale="1.0", projection="1,-1"),
}
_EXECUTION_KEYS = ("threads", "output")
_KERNEL_KEYS = ("lengthscale", "variance", "value", "trunc_center", "trunc_radius", "projection")


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def parse_config_text(text: str, source: str = "<config>") -> dict:
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        items[key] = val
    return items


class RunConfig:
    """Flat key-value settings with consumption tracking.

    Every lookup records the resolved value (including defaults) so that
    the output header echoes exactly what the run used; :meth:`finish`
    rejects keys that nothing consumed.
    """

    def __init__(self, subcommand: str, items: dict):
        self.subcommand = subcommand
        self.items = dict(items)
        self.resolved: dict = {}

    def has(self, key: str) -> bool:
        return key in self.items

    def get(self, key: str, default: Optional[str] = None, required: bool = False) -> Optional[str]:
        if key in self.items:
            val = self.items[key]
        elif required:
            raise ConfigError(f"missing required key {key!r}")
        else:
            val = default
        if val is not None:
            self.resolved[key] = str(val)
        return val

    def number(self, key, default=None, required=False, kind=float):
        val = self.get(key, None if default is None else str(default), required)
        if val is None:
            return None
        try:
            return kind(val)
        except ValueError:
            raise ConfigError(f"{key}: expected {kind.__name__}, got {val!r}") from None

    def vector(self, key, default=None, required=False) -> Optional[np.ndarray]:
        val = self.get(key, default, required)
        if val is None:
            return None
        try:
            return np.array([float(v) for v in val.split(",")])
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated numbers, got {val!r}") from None

    def prefixed(self, prefix: str) -> dict:
        out = {}
        for key in list(self.items):
            if key.startswith(prefix):
                out[key[len(prefix):]] = self.get(key)
        return out

    def finish(self):
        unused = sorted(set(self.items) - set(self.resolved))
        if unused:
            raise ConfigError(f"unknown keys for {self.subcommand}: {', '.join(unused)}")

    def echoed(self) -> dict:
        """Resolved settings that determine the result; execution-only keys
        are left out so artifacts do not depend on them."""
        return {k: self.resolved[k] for k in sorted(self.resolved) if k not in _EXECUTION_KEYS}

    def header_lines(self) -> list:
        lines = [f"wavegp {__version__} {self.subcommand}"]
        lines += [f"{k}={v}" for k, v in self.echoed().items()]
        return lines


def _threads(cfg: RunConfig) -> int:
    n = cfg.number("threads", 1, kind=int)
    if n < 1:
        raise ConfigError("threads must be >= 1")
    return n


def _seed(cfg: RunConfig, key: str = "seed", default=None) -> int:
    seed = cfg.number(key, default, required=default is None, kind=int)
    if not -(2**63) <= seed < 2**64:
        raise ConfigError(f"{key} must be a 64-bit integer")
    return seed


def _kernel_spec(cfg: RunConfig) -> KernelSpec:
    name = cfg.get("kernel", required=True)
    if name in KERNEL_PRESETS:
        items = dict(KERNEL_PRESETS[name])
    else:
        items = {"family": name}
    for key in _KERNEL_KEYS:
        if cfg.has(key):
            items[key] = cfg.get(key)
    return KernelSpec.from_mapping(items)


def _wave_model(cfg: RunConfig) -> WaveModel:
    items = {k: cfg.get(k) for k in ("c", "ntheta", "nphi", "method") if cfg.has(k)}
    for part in ("ku", "kv"):
        items.update({f"{part}.{k}": v for k, v in cfg.prefixed(part + ".").items()})
    return WaveModel.from_mapping(items)


def _covariance(cfg: RunConfig):
    """KernelSpec, or WaveModel when ``kernel=wave``."""
    if cfg.items.get("kernel") == "wave":
        cfg.get("kernel")
        return _wave_model(cfg)
    return _kernel_spec(cfg)


def _points(cfg: RunConfig, key: str = "points", dim: Optional[int] = None, required: bool = True) -> Optional[np.ndarray]:
    """Points from ``key=x,y,..;x,y,..``, ``key_file=path.csv`` or
    ``key.lo / key.hi / key.n`` (tensor grid, axis 0 slowest).
    ``key.n`` alone does not select a grid; for anchors it is the number of
    random draws."""
    if cfg.has(key):
        try:
            P = np.array([[float(v) for v in row.split(",")] for row in cfg.get(key).split(";") if row.strip()])
        except ValueError:
            raise ConfigError(f"{key}: malformed point list") from None
    elif cfg.has(key + "_file"):
        path = cfg.get(key + "_file")
        try:
            P = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{key}_file: {exc}") from None
    elif cfg.has(key + ".lo") or cfg.has(key + ".hi"):
        lo = cfg.vector(key + ".lo", required=True)
        hi = cfg.vector(key + ".hi", required=True)
        n = cfg.vector(key + ".n", required=True).astype(int)
        if not (lo.shape == hi.shape == n.shape) or np.any(n < 1):
            raise ConfigError(f"{key}.lo, {key}.hi and {key}.n must have equal lengths and n >= 1")
        axes = [np.linspace(a, b, k) for a, b, k in zip(lo, hi, n)]
        P = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    elif required:
        raise ConfigError(f"no points given: set {key}, {key}_file or {key}.lo/.hi/.n")
    else:
        return None
    if P.ndim != 2 or P.shape[0] == 0 or not np.all(np.isfinite(P)):
        raise ConfigError(f"{key}: need a non-empty list of finite points")
    if dim is not None and P.shape[1] != dim:
        raise ConfigError(f"{key}: expected {dim} coordinates per point, got {P.shape[1]}")
    return P


def _operator(cfg: RunConfig):
    name = cfg.get("op", required=True)
    if name == "transport2d":
        return transport2d(), "transport2d"
    if name == "dalembert":
        return dalembertian(cfg.number("c", required=True)), "dalembert"
    if name == "custom":
        return parse_terms(cfg.get("terms", required=True)), "custom"
    raise ConfigError(f"unknown operator {name!r}; expected transport2d, dalembert or custom")


def _bank(cfg: RunConfig, dim: int):
    lo = cfg.vector("domain.lo", ",".join(["-1"] * dim))
    hi = cfg.vector("domain.hi", ",".join(["1"] * dim))
    if lo.shape != (dim,) or hi.shape != (dim,) or np.any(hi <= lo):
        raise ConfigError(f"domain.lo/domain.hi must be {dim}-vectors with lo < hi")
    n = cfg.number("bank.n", 8, kind=int)
    if n < 1:
        raise ConfigError("bank.n must be >= 1")
    seed = _seed(cfg, "bank.seed", 0)
    scale = cfg.number("bank.scale", 1.0)
    return make_bump_bank(n, lo, hi, seed, scale=scale), lo, hi


def _rule(cfg: RunConfig, dim: int) -> str:
    default = DEFAULT_RULES.get(dim)
    rule = cfg.get("rule", default, required=default is None)
    make_rule(BumpTestFunction(np.zeros(dim), np.ones(dim)), rule)  # validate early
    return rule


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".wavegp-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(cfg: RunConfig, columns: list, rows, notes=()) -> str:
    lines = ["# " + h for h in list(cfg.header_lines()) + list(notes)]
    lines.append(",".join(columns))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def json_text(cfg: RunConfig, body: dict) -> str:
    meta = {"tool": "wavegp", "version": __version__, "subcommand": cfg.subcommand, "config": cfg.echoed()}
    return json.dumps({"meta": meta, **body}, indent=2) + "\n"


# --------------------------------------------------------------------------
# subcommands; each returns (artifact text, verification passed)
# --------------------------------------------------------------------------


def _cmd_kernel_eval(cfg):
    threads = _threads(cfg)
    kern = _covariance(cfg)
    dim = 4 if isinstance(kern, WaveModel) else None
    P = _points(cfg, "points", dim)
    Q = _points(cfg, "points2", P.shape[1], required=False)
    Q = P if Q is None else Q
    cfg.finish()
    K = kw_matrix(kern, P, Q, threads=threads) if isinstance(kern, WaveModel) else cross_matrix(kern, P, Q, threads=threads)
    d = P.shape[1]
    cols = [f"a{i}" for i in range(d)] + [f"b{i}" for i in range(d)] + ["k"]
    rows = (list(P[i]) + list(Q[j]) + [K[i, j]] for i in range(P.shape[0]) for j in range(Q.shape[0]))
    return csv_text(cfg, cols, rows), True


def _cmd_gram(cfg):
    threads = _threads(cfg)
    kern = _covariance(cfg)
    P = _points(cfg, "points", 4 if isinstance(kern, WaveModel) else None)
    cfg.finish()
    K = kw_matrix(kern, P, threads=threads) if isinstance(kern, WaveModel) else cross_matrix(kern, P, P, threads=threads)
    notes = [f"p{j}=" + ",".join(_fmt(v) for v in P[j]) for j in range(P.shape[0])]
    return csv_text(cfg, [f"p{j}" for j in range(K.shape[1])], K, notes), True


def _cmd_wave_cov(cfg):
    threads = _threads(cfg)
    model = _wave_model(cfg)
    part = cfg.get("part", "kw")
    if part not in ("kw", "kv", "ku"):
        raise ConfigError("part must be kw, kv or ku")
    P = _points(cfg, "points", 4)
    A = _points(cfg, "anchors", 4, required=False)
    A = P if A is None else A
    cfg.finish()
    K = kw_matrix(model, P, A, part=part, threads=threads)
    cols = ["x", "y", "z", "t", "xp", "yp", "zp", "tp", part]
    rows = (list(P[i]) + list(A[j]) + [K[i, j]] for i in range(P.shape[0]) for j in range(A.shape[0]))
    return csv_text(cfg, cols, rows), True


def _cmd_krige(cfg):
    threads = _threads(cfg)
    kern = _covariance(cfg)
    obs = read_observations(cfg.get("observations", required=True), cfg.number("jitter", 0.0))
    if isinstance(kern, WaveModel) and obs.X.shape[1] != 4:
        raise ConfigError("wave kernels need x,y,z,t,value observations")
    Z = _points(cfg, "points", obs.X.shape[1])
    cfg.finish()
    post = fit_posterior(kern, obs, threads=threads)
    mean = posterior_mean(post, Z)
    std = posterior_std(post, Z)
    cols = ["x", "y", "z", "t"][: Z.shape[1]] + ["mean", "std"]
    return csv_text(cfg, cols, (list(Z[i]) + [mean[i], std[i]] for i in range(Z.shape[0]))), True


def _cmd_verify(cfg):
    threads = _threads(cfg)
    op, kind = _operator(cfg)
    kern = _covariance(cfg)
    bank, lo, hi = _bank(cfg, op.dim)
    rule = _rule(cfg, op.dim)
    tol = cfg.number("tol", DEFAULT_TOL[kind])
    anchors = _points(cfg, "anchors", op.dim, required=False)
    if anchors is None:
        n = cfg.number("anchors.n", 5, kind=int)
        rng = np.random.default_rng(np.uint64(_seed(cfg, "anchors.seed", 1) & 0xFFFFFFFFFFFFFFFF))
        anchors = rng.uniform(lo, hi, size=(n, op.dim))
    cfg.finish()
    reports = verify_kernel_constraint(kernel_field_factory(kern, threads), op, anchors, bank, rule, tol)
    ok = all_passed(reports)
    body = {
        "pass": ok,
        "max_normalized": max(abs(r.normalized) for r in reports),
        "reports": [r.to_dict() for r in reports],
    }
    return json_text(cfg, body), ok


def _cmd_mc_verify(cfg):
    threads = _threads(cfg)
    op, _ = _operator(cfg)
    kern = _covariance(cfg)
    if cfg.has("bump.center") or cfg.has("bump.radii"):
        bump = BumpTestFunction(cfg.vector("bump.center", required=True), cfg.vector("bump.radii", required=True))
    else:
        bank, _, _ = _bank(cfg, op.dim)
        bump = bank[cfg.number("bump.index", 0, kind=int) % len(bank)]
    if bump.dim != op.dim:
        raise ConfigError("bump dimension does not match the operator")
    rule = _rule(cfg, op.dim)
    n = cfg.number("samples", 200, kind=int)
    seed = _seed(cfg)
    sampler_kind = cfg.get("sampler", "gaussian")
    if sampler_kind == "gaussian":
        sampler = GaussianFieldSampler(kern, threads)
    elif sampler_kind == "pathwise" and isinstance(kern, WaveModel):
        sampler = PathwiseWaveSampler(kern)
    else:
        raise ConfigError("sampler must be gaussian, or pathwise with kernel=wave")
    cfg.finish()
    stats = monte_carlo_pathwise(sampler, op, bump, rule, n, seed)
    floor = residual_second_moment(kern, op, bump, rule, threads)
    body = {
        "bump_center": [float(v) for v in bump.center],
        "bump_radii": [float(v) for v in bump.radii],
        "resolution": make_rule(bump, rule).label,
        **stats.to_dict(),
        "second_moment_floor": floor,
        "mean_within_3se": bool(abs(stats.mean) <= 3.0 * stats.se_mean),
    }
    return json_text(cfg, body), True


def _cmd_sample(cfg):
    model = _wave_model(cfg)
    P = _points(cfg, "points", 4)
    seed = _seed(cfg)
    _threads(cfg)  # accepted like every subcommand; the sampler runs serially
    cfg.finish()
    s = sample_wave_field(model, P, seed)
    rows = (list(s.points[i]) + [s.values[i]] for i in range(P.shape[0]))
    return csv_text(cfg, ["x", "y", "z", "t", "value"], rows), True


COMMANDS: dict[str, Callable] = {
    "kernel-eval": _cmd_kernel_eval,
    "gram": _cmd_gram,
    "wave-cov": _cmd_wave_cov,
    "krige": _cmd_krige,
    "verify": _cmd_verify,
    "mc-verify": _cmd_mc_verify,
    "sample": _cmd_sample,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_config(subcommand: str, args: list) -> RunConfig:
    items = {}
    overrides = {}
    for arg in args:
        if "=" in arg:
            key, val = arg.split("=", 1)
            if not key:
                raise ConfigError(f"malformed override {arg!r}")
            overrides[key.strip()] = val.strip()
        else:
            try:
                with open(arg) as fh:
                    items.update(parse_config_text(fh.read(), arg))
            except OSError as exc:
                raise ConfigError(f"cannot read config {arg}: {exc.strerror}") from None
    items.update(overrides)
    return RunConfig(subcommand, items)


def run(subcommand: str, args: list, strict: bool = False, stdout=None) -> int:
    """Execute one subcommand; returns the exit status."""
    stdout = stdout or sys.stdout
    cfg = build_config(subcommand, args)
    output = cfg.items.pop("output", None)
    text, ok = COMMANDS[subcommand](cfg)
    if output is None:
        stdout.write(text)
    else:
        atomic_write(output, text)
    return EXIT_VERIFY if strict and not ok else EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wavegp", description="Wave-equation Gaussian process kernels.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("settings", nargs="*", help="config files and key=value overrides")
    parser.add_argument("--strict", action="store_true", help="exit with status 4 when a verification fails")
    ns = parser.parse_args(argv)
    try:
        return run(ns.subcommand, ns.settings, ns.strict)
    except (ConfigError, WaveGPError, ValueError, OSError) as exc:
        category = getattr(exc, "category", "config-error")
        if isinstance(exc, NumericFailure):
            status = EXIT_NUMERIC
        else:
            status, category = EXIT_CONFIG, ("config-error" if category == "error" else category)
        sys.stderr.write(f"error: {category}: {exc}\n")
        return status
    except np.linalg.LinAlgError as exc:
        sys.stderr.write(f"error: numeric-failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
