"""JSON round trip of fitted models.

Arrays are stored as nested lists of floats; Python's shortest-repr float
formatting makes the round trip exact and the output byte-stable.
"""

import json

import numpy as np

from .basic import BasicParams
from .cov_latent import CovLatentParams, DiffLogitGa
from .cov_manifest import CovManifestParams
from .fitting import FitConfig, FitResult
from .inference import variant_of
from .mixed import MixedParams

FORMAT_VERSION = 1


def _arr(x):
    return np.asarray(x, dtype=float).tolist()


def params_to_dict(params):
    v = variant_of(params)
    if v == "basic":
        return {"piv": _arr(params.piv), "PI": _arr(params.PI), "Psi": _arr(params.Psi),
                "categories": list(params.categories)}
    if v == "cov-latent":
        if params.param == "difflogit":
            Ga = {"G0": _arr(params.Ga.G0), "G1": _arr(params.Ga.G1)}
        else:
            Ga = _arr(params.Ga)
        return {"param": params.param, "Be": _arr(params.Be), "Ga": Ga, "Psi": _arr(params.Psi),
                "categories": list(params.categories)}
    if v == "cov-manifest":
        return {"mu": _arr(params.mu), "al": _arr(params.al), "be": _arr(params.be), "PI": _arr(params.PI)}
    return {"la": _arr(params.la), "Piv": _arr(params.Piv), "PI": _arr(params.PI), "Psi": _arr(params.Psi),
            "categories": list(params.categories)}


def _np(x, ndim):
    a = np.asarray(x, dtype=float)
    if a.size == 0 and a.ndim != ndim:
        a = a.reshape((0,) * ndim)
    return a


def params_from_dict(variant, d):
    if variant == "basic":
        PI = np.asarray(d["PI"], dtype=float)
        k = len(d["piv"])
        if PI.size == 0:
            PI = PI.reshape(0, k, k)
        return BasicParams(np.asarray(d["piv"], float), PI, np.asarray(d["Psi"], float), tuple(d["categories"]))
    if variant == "cov-latent":
        param = d.get("param", "multilogit")
        if param == "difflogit":
            G1 = np.asarray(d["Ga"]["G1"], float)
            G0 = np.asarray(d["Ga"]["G0"], float)
            Ga = DiffLogitGa(G0, G1.reshape(G0.shape[0], -1))
        else:
            Ga = np.asarray(d["Ga"], float)
        return CovLatentParams(np.asarray(d["Be"], float), Ga, np.asarray(d["Psi"], float), tuple(d["categories"]), param)
    if variant == "cov-manifest":
        return CovManifestParams(np.asarray(d["mu"], float), np.asarray(d["al"], float),
                                 _np(d["be"], 1), np.asarray(d["PI"], float))
    if variant == "mixed":
        return MixedParams(np.asarray(d["la"], float), np.asarray(d["Piv"], float), np.asarray(d["PI"], float),
                           np.asarray(d["Psi"], float), tuple(d["categories"]))
    raise ValueError(f"unknown variant {variant!r}")


def fit_to_dict(fit, extra=None):
    """Deterministic dictionary of a fit: no timestamps or machine details."""
    d = {
        "format_version": FORMAT_VERSION,
        "variant": fit.variant,
        "config": fit.config.echo(),
        "loglik": float(fit.loglik),
        "n_params": int(fit.n_params),
        "n_total": int(fit.n_total),
        "AIC": float(fit.aic),
        "BIC": float(fit.bic),
        "iterations": int(fit.iterations),
        "converged": bool(fit.converged),
        "warnings": list(fit.warnings),
        "params": params_to_dict(fit.params),
    }
    if extra:
        d.update(extra)
    return d


def fit_to_json(fit, extra=None):
    return json.dumps(fit_to_dict(fit, extra), indent=2) + "\n"


def fit_from_dict(d):
    cfg = {k: v for k, v in d["config"].items() if k in FitConfig.__dataclass_fields__}
    cfg["start"] = 0 if cfg.get("start") == 2 else cfg.get("start", 0)
    config = FitConfig(**cfg)
    params = params_from_dict(d["variant"], d["params"])
    return FitResult(
        variant=d["variant"],
        params=params,
        loglik=d["loglik"],
        trace=np.asarray([d["loglik"]]),
        n_params=d["n_params"],
        n_total=d["n_total"],
        iterations=d["iterations"],
        converged=d["converged"],
        config=config,
        warnings=list(d.get("warnings", [])),
    )


def load_fit(path):
    with open(path) as fh:
        return fit_from_dict(json.load(fh))
