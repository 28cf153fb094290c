"""Command-line front end.

Every subcommand reads an optional YAML config (``--config``); command-line
flags override values from the file, and the effective configuration is echoed
into the JSON report.  Exit codes: 0 success, 2 invalid configuration, 3
numerical failure, 4 I/O error.  ``QUARKS_NUM_THREADS`` limits BLAS threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .als import AlsOptions, SensorBatch, als_fit, predict
from .baselines import DEFAULT_TAU_GRID, fit_dense_var, fit_sparse_var
from .datagen import (
    TurbulenceConfig,
    TurbulenceLayer,
    ao_dataset,
    quarks_input_output,
    quarks_var_data,
    random_quarks_model,
    sample_grid,
    separability_spectrum,
)
from .errors import ConfigError, NumericalError
from .io import (
    export_coefficients_csv,
    load_model,
    read_batch_csv,
    read_mask_csv,
    save_model,
    write_batch_csv,
    write_json,
)
from .metrics import default_bench_methods, fit_loglog, model_complexity, scaling_bench, validation_vaf, write_bench_csv
from .missing import fit_with_missing, impute_given_model
from .regularizers import RegularizationConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
THREADS_ENV = "QUARKS_NUM_THREADS"

DEFAULTS = {
    "generate": {
        "kind": "ao",
        "N": 10,
        "Nt": 5000,
        "Nv": 5000,
        "seed": 0,
        "snr_db": 15.0,
        "p": 2,
        "r": 2,
        "noise_std": 1.0,
        "out_dir": ".",
        "layers": [{"r0": 0.2, "L0": 10.0, "speed": 1}, {"r0": 0.4, "L0": 10.0, "speed": 2}],
        "D": 1.0,
        "n_phi": 3,
        "frequency": 500.0,
    },
    "fit": {
        "train": None,
        "inputs": None,
        "valid": None,
        "valid_inputs": None,
        "mask": None,
        "method": "quarks",
        "p": 2,
        "r": 2,
        "tau": 1.0,
        "beta": 0.0,
        "xi": 0.8,
        "eta": 0.5,
        "mu": 0.0,
        "zeta": 0.1,
        "lam": 0.0,
        "max_iters": 100,
        "tol": 1e-5,
        "patience": 3,
        "seed": 0,
        "solver": "qr",
        "model_out": "model.qrk",
        "report_out": "report.json",
        "coefficients_csv": None,
        "completed_out": None,
    },
    "validate": {"model": None, "batch": None, "inputs": None, "residuals_out": None, "report_out": None},
    "impute": {
        "batch": None,
        "mask": None,
        "model": None,
        "p": 2,
        "r": 2,
        "beta": 0.0,
        "max_iters": 100,
        "tol": 1e-5,
        "patience": 3,
        "seed": 0,
        "solver": "qr",
        "out": "completed.csv",
        "model_out": None,
        "report_out": "impute_report.json",
    },
    "bench": {
        "methods": ["quarks", "dense"],
        "N_quarks": [6, 8, 10, 12, 14, 16, 18, 20],
        "N_dense": [6, 8, 10, 12, 14, 16],
        "p": 4,
        "r": 2,
        "iterations": 10,
        "repetitions": 3,
        "threads": 1,
        "seed": 0,
        "out": "bench.csv",
        "report_out": "bench_report.json",
    },
    "spectrum": {
        "kernel": "gaussian",
        "inputs": "rect",
        "outputs": "rect",
        "N": 8,
        "sigma": 2.0,
        "seeds": [0, 1, 2, 3, 4],
        "out": "spectrum.csv",
    },
}


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _optional_float(text):
    return None if str(text).lower() in ("none", "inf") else float(text)


def _words(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _parser():
    ap = argparse.ArgumentParser(prog="quarks", description="Kronecker-structured VAR identification.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="YAML file with parameters for this command")
        return p

    g = add("generate", "write identification and validation batches")
    g.add_argument("--kind", choices=["ao", "quarks", "var"], help="AO slopes, QUARKS input/output, or QUARKS VAR data")
    g.add_argument("--N", type=int, help="grid size (lenslets per side)")
    g.add_argument("--Nt", type=int, help="identification samples")
    g.add_argument("--Nv", type=int, help="validation samples")
    g.add_argument("--seed", type=int)
    g.add_argument("--snr-db", dest="snr_db", type=_optional_float, help="'none' for noiseless data")
    g.add_argument("--p", type=int, help="temporal order of the generating QUARKS model")
    g.add_argument("--r", type=int, help="Kronecker rank of the generating QUARKS model")
    g.add_argument("--noise-std", dest="noise_std", type=float, help="innovation std for --kind var")
    g.add_argument("--out-dir", dest="out_dir")

    f = add("fit", "identify a model from a batch file")
    f.add_argument("--train", help="identification batch CSV")
    f.add_argument("--inputs", help="regressor batch CSV (input/output models)")
    f.add_argument("--valid", help="validation batch CSV for a VAF report")
    f.add_argument("--valid-inputs", dest="valid_inputs")
    f.add_argument("--mask", help="CSV of missing lifted channel indices")
    f.add_argument("--method", choices=["quarks", "dense", "sparse"])
    f.add_argument("--p", type=int)
    f.add_argument("--r", type=int)
    f.add_argument("--tau", type=float, help="l1 weight for --method sparse")
    for name in ("beta", "xi", "eta", "mu", "zeta", "lam", "tol"):
        f.add_argument(f"--{name}", type=float)
    f.add_argument("--max-iters", dest="max_iters", type=int)
    f.add_argument("--patience", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--solver", choices=["qr", "gram"])
    f.add_argument("--model-out", dest="model_out")
    f.add_argument("--report-out", dest="report_out")
    f.add_argument("--coefficients-csv", dest="coefficients_csv", help="debug export of dense A_i")
    f.add_argument("--completed-out", dest="completed_out", help="completed batch when --mask is given")

    v = add("validate", "VAF and per-step residuals of a model on a batch")
    v.add_argument("--model")
    v.add_argument("--batch")
    v.add_argument("--inputs")
    v.add_argument("--residuals-out", dest="residuals_out")
    v.add_argument("--report-out", dest="report_out")

    i = add("impute", "fill in missing channels")
    i.add_argument("--batch")
    i.add_argument("--mask")
    i.add_argument("--model", help="fixed model; omit to estimate it jointly")
    i.add_argument("--p", type=int)
    i.add_argument("--r", type=int)
    i.add_argument("--beta", type=float)
    i.add_argument("--max-iters", dest="max_iters", type=int)
    i.add_argument("--tol", type=float)
    i.add_argument("--patience", type=int)
    i.add_argument("--seed", type=int)
    i.add_argument("--solver", choices=["qr", "gram"])
    i.add_argument("--out")
    i.add_argument("--model-out", dest="model_out")
    i.add_argument("--report-out", dest="report_out")

    b = add("bench", "wall-clock scaling study")
    b.add_argument("--methods", type=_words, help="comma-separated subset of quarks,dense")
    b.add_argument("--N-quarks", dest="N_quarks", type=_ints, help="comma-separated grid sizes")
    b.add_argument("--N-dense", dest="N_dense", type=_ints)
    b.add_argument("--p", type=int)
    b.add_argument("--r", type=int)
    b.add_argument("--iterations", type=int, help="fixed ALS passes per fit")
    b.add_argument("--repetitions", type=int)
    b.add_argument("--threads", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.add_argument("--report-out", dest="report_out")

    s = add("spectrum", "singular values of a reshuffled kernel map")
    s.add_argument("--kernel", choices=["gaussian", "exponential"])
    s.add_argument("--inputs", choices=["rect", "hex", "random"])
    s.add_argument("--outputs", choices=["rect", "hex", "random"])
    s.add_argument("--N", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--seeds", type=_ints)
    s.add_argument("--out")
    return ap


def effective_config(command, flags):
    """Defaults, then the YAML file, then flags."""
    cfg = dict(DEFAULTS[command])
    path = flags.pop("config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        loaded = loaded.get(command, loaded)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"{path}: unknown keys for '{command}': {sorted(unknown)}")
        cfg.update(loaded)
    cfg.update(flags)
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise ConfigError(f"missing required parameter '{k}'")


def _positive_int(cfg, key, minimum=1):
    v = cfg[key]
    if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"'{key}' must be an integer >= {minimum}, got {v!r}")
    return int(v)


def _reg(cfg):
    return RegularizationConfig(
        xi=cfg["xi"], eta=cfg["eta"], mu=cfg["mu"], zeta=cfg["zeta"], lam=cfg["lam"], beta=cfg.get("beta", 0.0)
    )


def _als_options(cfg):
    return AlsOptions(
        max_iters=_positive_int(cfg, "max_iters"),
        tol=float(cfg["tol"]),
        patience=_positive_int(cfg, "patience"),
        seed=int(cfg["seed"]),
        solver=cfg["solver"],
    )


def cmd_generate(cfg):
    N = _positive_int(cfg, "N", 2)
    Nt, Nv = _positive_int(cfg, "Nt"), _positive_int(cfg, "Nv")
    seed = int(cfg["seed"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    kind = cfg["kind"]
    if kind == "ao":
        tcfg = TurbulenceConfig(
            layers=tuple(TurbulenceLayer(**layer) for layer in cfg["layers"]),
            D=float(cfg["D"]),
            N=N,
            n_phi=_positive_int(cfg, "n_phi"),
            frequency=float(cfg["frequency"]),
            snr_db=float(cfg["snr_db"]),
            seed=seed,
        )
        clean, noisy = ao_dataset(tcfg, Nt + Nv, seed=seed)
        batches = {"ident": noisy.frames[:Nt], "valid": noisy.frames[Nt:],
                   "ident_clean": clean.frames[:Nt], "valid_clean": clean.frames[Nt:]}
    elif kind in ("quarks", "var"):
        p, r = _positive_int(cfg, "p"), _positive_int(cfg, "r")
        model = random_quarks_model(N, p, r, seed=seed)
        save_model(out / "truth.qrk", model)
        files["truth"] = str(out / "truth.qrk")
        if kind == "quarks":
            snr = cfg["snr_db"]
            y, u = quarks_input_output(model, Nt + Nv, seed=seed + 1, snr_db=None if snr is None else float(snr))
            batches = {"ident": y[:Nt], "valid": y[Nt:], "ident_inputs": u[:Nt], "valid_inputs": u[Nt:]}
        else:
            frames = quarks_var_data(model, Nt + Nv, noise_std=float(cfg["noise_std"]), seed=seed + 1).frames
            batches = {"ident": frames[:Nt], "valid": frames[Nt:]}
    else:
        raise ConfigError(f"unknown kind {kind!r}")
    for name, frames in batches.items():
        path = out / f"{name}.csv"
        write_batch_csv(path, frames)
        files[name] = str(path)
    return {"files": files, "channels": int(batches["ident"].shape[1] * batches["ident"].shape[2])}


def _load_batch(path):
    return read_batch_csv(path) if path else None


def cmd_fit(cfg):
    _require(cfg, "train")
    train = read_batch_csv(cfg["train"])
    inputs = _load_batch(cfg["inputs"])
    p = _positive_int(cfg, "p")
    method = cfg["method"]
    result = {"method": method}
    completed = None
    if method == "quarks":
        r = _positive_int(cfg, "r")
        reg = _reg(cfg)
        opts = _als_options(cfg)
        if cfg["mask"]:
            if inputs is not None:
                raise ConfigError("--mask cannot be combined with --inputs")
            mask = read_mask_csv(cfg["mask"], train.n_channels)
            model, completed, report = fit_with_missing(train, mask, p, r, opts, reg, beta=float(cfg["beta"]))
            result["routed_to"] = "fit_with_missing"
        else:
            model, report = als_fit(train, p, r, opts, reg, inputs=inputs)
            result["routed_to"] = "als_fit"
        result["als"] = report.to_dict()
    elif method == "dense":
        model = fit_dense_var(train, p, inputs=inputs)
    elif method == "sparse":
        model = fit_sparse_var(train, p, float(cfg["tau"]), inputs=inputs)
        result["sparse"] = {k: v for k, v in model.info.items() if k != "objective_trace"}
    else:
        raise ConfigError(f"unknown method {method!r}")
    result["complexity"] = model_complexity(model)
    if cfg["valid"]:
        valid = read_batch_csv(cfg["valid"])
        vinputs = _load_batch(cfg["valid_inputs"])
        result["validation_vaf"] = _vaf(model, valid, vinputs)
    save_model(cfg["model_out"], model)
    result["model_file"] = str(cfg["model_out"])
    if cfg["coefficients_csv"]:
        export_coefficients_csv(cfg["coefficients_csv"], model)
    if completed is not None and cfg["completed_out"]:
        write_batch_csv(cfg["completed_out"], completed)
    return result


def _predictions(model, batch, inputs=None):
    regress = batch.frames if inputs is None else inputs.frames
    if hasattr(model, "left"):
        return predict(model, regress)
    return model.predict(regress)


def _vaf(model, batch, inputs=None):
    if inputs is None:
        return validation_vaf(model, batch)
    from .metrics import vaf

    return vaf(batch.frames[model.p :], _predictions(model, batch, inputs))


def cmd_validate(cfg):
    _require(cfg, "model", "batch")
    model = load_model(cfg["model"])
    batch = read_batch_csv(cfg["batch"])
    inputs = _load_batch(cfg["inputs"])
    pred = _predictions(model, batch, inputs)
    actual = batch.frames[model.p :]
    result = {"vaf": _vaf(model, batch, inputs), "samples": int(actual.shape[0])}
    if cfg["residuals_out"]:
        err = np.sum((actual - pred) ** 2, axis=(1, 2))
        power = np.sum(actual**2, axis=(1, 2))
        with open(cfg["residuals_out"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write("k,residual_energy,signal_energy\n")
            for k, (e, s) in enumerate(zip(err, power), start=model.p):
                fh.write(f"{k},{e:.17g},{s:.17g}\n")
    return result


def cmd_impute(cfg):
    _require(cfg, "batch", "mask")
    batch = read_batch_csv(cfg["batch"])
    mask = read_mask_csv(cfg["mask"], batch.n_channels)
    beta = float(cfg["beta"])
    result = {"missing_ratio": mask.ratio, "beta": beta}
    if cfg["model"]:
        model = load_model(cfg["model"])
        completed = impute_given_model(model, batch, mask, beta)
        result["routed_to"] = "impute_given_model"
    else:
        p, r = _positive_int(cfg, "p"), _positive_int(cfg, "r")
        model, completed, report = fit_with_missing(batch, mask, p, r, _als_options(cfg), None, beta=beta)
        result["routed_to"] = "fit_with_missing"
        result["als"] = report.to_dict()
        if cfg["model_out"]:
            save_model(cfg["model_out"], model)
    write_batch_csv(cfg["out"], completed)
    result["completed_file"] = str(cfg["out"])
    return result


def cmd_bench(cfg):
    methods = list(cfg["methods"])
    unknown = set(methods) - {"quarks", "dense"}
    if unknown:
        raise ConfigError(f"unknown bench methods {sorted(unknown)}")
    ranges = {"quarks": list(cfg["N_quarks"]), "dense": list(cfg["N_dense"])}
    for m in methods:
        if not ranges[m]:
            raise ConfigError(f"empty N range for method '{m}'")
        if min(ranges[m]) < 2:
            raise ConfigError("grid sizes must exceed 1")
    setups = default_bench_methods(p=_positive_int(cfg, "p"), r=_positive_int(cfg, "r"),
                                   iterations=_positive_int(cfg, "iterations"), seed=int(cfg["seed"]))
    threads = cfg["threads"]
    records, fits = [], {}
    for m in methods:
        recs, f = scaling_bench({m: setups[m]}, ranges[m], repetitions=_positive_int(cfg, "repetitions"),
                                threads=threads)
        records += recs
        fits.update(f)
    write_bench_csv(cfg["out"], records, fits)
    return {"records": len(records), "fits": {k: v.to_dict() for k, v in fits.items()}, "csv": str(cfg["out"])}


def cmd_spectrum(cfg):
    N = _positive_int(cfg, "N", 2)
    rows = []
    seeds = list(cfg["seeds"]) or [0]
    for seed in seeds:
        inp = sample_grid(cfg["inputs"], N, seed=seed)
        out = sample_grid(cfg["outputs"], N, seed=None if seed is None else seed + 1000)
        sv = separability_spectrum(cfg["kernel"], inp, out, sigma=float(cfg["sigma"]))
        rows.append(sv)
    with open(cfg["out"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("seed,index,singular_value,relative\n")
        for seed, sv in zip(seeds, rows):
            for k, v in enumerate(sv, start=1):
                fh.write(f"{seed},{k},{v:.17g},{v / sv[0]:.17g}\n")
    ratio5 = [float(sv[4] / sv[0]) if sv.size > 4 else float("nan") for sv in rows]
    return {"csv": str(cfg["out"]), "sigma5_over_sigma1": ratio5}


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "validate": cmd_validate,
    "impute": cmd_impute,
    "bench": cmd_bench,
    "spectrum": cmd_spectrum,
}


def _report_path(command, cfg):
    if command in ("fit", "impute", "bench", "validate"):
        return cfg.get("report_out")
    if command == "generate":
        return str(Path(cfg["out_dir"]) / "generate_report.json")
    return None


def _fail(category, code, exc):
    print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    flags = vars(args)
    command = flags.pop("command")
    threads = os.environ.get(THREADS_ENV)
    limiter = None
    try:
        if threads:
            try:
                n_threads = int(threads)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {threads!r}") from None
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=n_threads)
        cfg = effective_config(command, flags)
        result = COMMANDS[command](cfg)
        payload = {"command": command, "config": cfg, "result": result}
        path = _report_path(command, cfg)
        if path:
            write_json(path, payload)
        print(json.dumps({"command": command, "result": result}, default=str))
        return EXIT_OK
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except NumericalError as exc:
        return _fail("numerical", EXIT_NUMERICAL, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
