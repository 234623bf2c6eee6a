"""Command-line interface.

    rrq train --config train.json [--output model.rrq] [--seed N]
    rrq encode --model model.rrq --input data.npy|image_dir --output codes.rrqc
    rrq decode --model model.rrq --input codes.rrqc --output out.npy|out_dir
    rrq experiment table1 [--config cfg.json] --output report.json [--csv curves.dat]
    rrq experiment superres --config cfg.json --output report.json
    rrq inspect --model model.rrq

Configs are JSON or TOML; relative paths inside a config resolve against
the config file's directory. Failures print a single line
``error code=<name> status=<int> message=<json string>`` to stderr.
Set ``RRQ_THREADS`` to cap BLAS threads.
"""

import argparse
from dataclasses import fields
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import experiments, formats, imaging, rrq, transform
from .errors import DimensionError, FormatError
from .vr_kmeans import VrKmeansConfig

logger = logging.getLogger("rrquant")

EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_DIMENSION = 4
EXIT_IO = 5


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            cfg = tomllib.loads(text.decode())
        else:
            cfg = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    cfg["_base"] = str(path.resolve().parent)
    return cfg


def _path(cfg, key, required=True):
    value = cfg.get(key)
    if value is None:
        if required:
            raise ConfigError(f"missing config key {key!r}")
        return None
    p = Path(value)
    return p if p.is_absolute() or "_base" not in cfg else Path(cfg["_base"]) / p


def _vr_config(cfg: dict, seed=None) -> VrKmeansConfig:
    names = {f.name for f in fields(VrKmeansConfig)}
    section = dict(cfg.get("vr_kmeans", {}))
    for key in ("max_iters", "rel_tol", "newton_max_iters", "newton_grad_tol"):
        if key in cfg:
            section[key] = cfg[key]
    if "lambda" in section:
        section["lam"] = section.pop("lambda")
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown vr_kmeans settings: {sorted(unknown)}")
    section["seed"] = int(seed if seed is not None else cfg.get("seed", 0))
    try:
        return VrKmeansConfig(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _layer_specs(cfg: dict) -> list:
    try:
        if "layers" in cfg:
            return [rrq.LayerSpec(int(s["K"]), float(s.get("lambda", 0.0))) for s in cfg["layers"]]
        L = int(cfg["L"])
        K = cfg["K"]
        lam = cfg.get("lambda", 0.0)
        Ks = K if isinstance(K, list) else [K] * L
        lams = lam if isinstance(lam, list) else [lam] * L
        if len(Ks) != L or len(lams) != L:
            raise ConfigError("per-layer K/lambda lists must have L entries")
        return [rrq.LayerSpec(int(k), float(x)) for k, x in zip(Ks, lams)]
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad layer specification: {exc}") from None


def _read_vectors_or_images(path: Path, tmodel):
    """Load an input as an ``n x N`` matrix; image inputs go through ``tmodel``."""
    if path.is_dir() or path.suffix.lower() in imaging.IMAGE_SUFFIXES:
        if tmodel is None:
            raise DimensionError("image input needs a model with a transform")
        paths = imaging.list_images(path) if path.is_dir() else [path]
        stack = np.stack([imaging.read_image(p) for p in paths])
        return transform.apply(tmodel, stack), [p.stem for p in paths]
    X = np.load(path, allow_pickle=False)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError("vector input must be a 1-D or 2-D array")
    return np.asarray(X, dtype=np.float64), None


def _write_json(path, obj) -> None:
    formats.atomic_write(path, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode())


def _write_npy(path, arr) -> None:
    import io
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    formats.atomic_write(path, buf.getvalue())


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    config = _vr_config(cfg, args.seed)
    specs = _layer_specs(cfg)
    tmodel = None
    if "images" in cfg:
        paths = imaging.list_images(_path(cfg, "images"))
        if len(paths) < 2:
            raise ConfigError("need at least two training images")
        stack = np.stack([imaging.read_image(p) for p in paths])
        tmodel = transform.fit_transform_model(
            stack, int(cfg.get("num_bands", transform.DEFAULT_NUM_BANDS)))
        X = transform.apply(tmodel, stack)
    else:
        X, _ = _read_vectors_or_images(_path(cfg, "data"), None)
    model, dist = rrq.train(X, specs, config)
    out = args.output or _path(cfg, "output")
    formats.save_model(out, model, tmodel)
    logger.info("trained %d layers, final train distortion %.6f", model.L, dist[-1])
    return 0


def cmd_encode(args) -> int:
    model, tmodel = formats.load_model(args.model)
    X, _ = _read_vectors_or_images(Path(args.input), tmodel)
    codes = rrq.encode(X, model)
    formats.save_codes(args.output, codes, model)
    return 0


def cmd_decode(args) -> int:
    model, tmodel = formats.load_model(args.model)
    codes = formats.load_codes(args.input)
    if codes.shape[0] > model.L:
        raise DimensionError(f"codes have {codes.shape[0]} layers, model has {model.L}")
    try:
        Y = rrq.decode(codes, model)
    except IndexError as exc:
        raise DimensionError(str(exc)) from None
    out = Path(args.output)
    if out.suffix.lower() == ".npy" or tmodel is None:
        _write_npy(out, Y)
        return 0
    images = transform.invert(tmodel, Y)
    out.mkdir(parents=True, exist_ok=True)
    for k, im in enumerate(images):
        imaging.write_pgm(out / f"decoded{k:05d}.pgm", im)
    return 0


def _table1_from_config(cfg: dict, seed=None) -> dict:
    src = cfg.get("source", {})
    try:
        spec = experiments.SyntheticSourceSpec(**src)
    except TypeError as exc:
        raise ConfigError(f"bad source settings: {exc}") from None
    seeds = [int(s) for s in cfg.get("seeds", [0, 1, 2, 3, 4])]
    if seed is not None:
        seeds = [seed + k for k in range(len(seeds))]
    vr = _vr_config({"vr_kmeans": {"max_iters": 50}, **cfg}, 0)
    return experiments.run_table1(
        spec, lambdas=cfg.get("lambdas", [0.1, 10.0, 1000.0]), K=int(cfg.get("K", 256)),
        seeds=seeds, config=vr, curves=bool(cfg.get("curves", True)))


def _superres_from_config(cfg: dict, seed=None) -> dict:
    vr = _vr_config({"vr_kmeans": {"max_iters": 30}, **cfg}, seed)
    kwargs = dict(downsample=int(cfg.get("downsample", 8)), L=int(cfg.get("L", 50)),
                  K=int(cfg.get("K", 256)), lam=float(cfg.get("lambda", 10.0)),
                  num_bands=int(cfg.get("num_bands", transform.DEFAULT_NUM_BANDS)),
                  config=vr, output_dir=_path(cfg, "output_dir", required=False))
    if "synthetic" in cfg:
        syn = cfg["synthetic"]
        n_train, n_test = int(syn.get("n_train", 400)), int(syn.get("n_test", 10))
        faces = experiments.make_synthetic_faces(n_train + n_test, int(syn.get("size", 64)),
                                                 int(syn.get("seed", 0)))
        return experiments.run_superresolution(train_images=faces[:n_train],
                                               test_images=faces[n_train:], **kwargs)
    return experiments.run_superresolution(_path(cfg, "train_dir"), _path(cfg, "test_dir"),
                                           **kwargs)


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.name == "table1":
        report = _table1_from_config(cfg, args.seed)
        if args.csv:
            import io
            buf = io.BytesIO()
            experiments.write_curves_csv(report, buf)
            formats.atomic_write(args.csv, buf.getvalue())
    else:
        report = _superres_from_config(cfg, args.seed)
    if args.output:
        _write_json(args.output, report)
    else:
        sys.stdout.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_inspect(args) -> int:
    header = formats.model_header(Path(args.model).read_bytes())
    sys.stdout.write(json.dumps(header, sort_keys=True, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrq", description="Regularized residual quantization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an RRQ model")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode vectors or images")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a codes file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("experiment", help="run a reproduction experiment")
    p.add_argument("name", choices=["table1", "superres"])
    p.add_argument("--config")
    p.add_argument("--output")
    p.add_argument("--csv", help="table1 only: write per-dimension curves here")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("inspect", help="print a model header")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def _fail(code: str, status: int, message) -> int:
    sys.stderr.write(f"error code={code} status={status} message={json.dumps(str(message))}\n")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("RRQ_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(threads)):
                return args.func(args)
        return args.func(args)
    except FormatError as exc:
        return _fail("format", EXIT_FORMAT, exc)
    except DimensionError as exc:
        return _fail("dimension", EXIT_DIMENSION, exc)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    except ValueError as exc:
        return _fail("config", EXIT_CONFIG, exc)


if __name__ == "__main__":
    sys.exit(main())
