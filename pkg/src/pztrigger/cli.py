"""Command-line entry point: ``pztrigger <subcommand> [options]``.

Options may also come from a TOML config (``--config run.toml``): top-level
keys apply to every subcommand, a ``[<subcommand>]`` table to that one only.
Keys are option names with dashes replaced by underscores.  Flags given on
the command line win.

Exit codes: 0 success, 2 invalid arguments, 3 data/format errors,
4 acceptance-gate failure (``fxp-run --gate``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import camera, fixedpoint, modelsel, pzernike, svm
from .errors import DataFormatError, ExportRangeError, InvalidArgument

log = logging.getLogger("pztrigger")

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_GATE = 0, 2, 3, 4
DEFAULT_SEED = 42


class GateFailure(Exception):
    pass


def _range3(text: str) -> tuple:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:step, got {text!r}")
    return lo, hi, step


def _qformat(text: str):
    if text.lower() == "auto":
        return None
    try:
        return fixedpoint.QFormat.parse(text)
    except InvalidArgument as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _require(*paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise InvalidArgument(f"input file not found: {p}")


def _geometry(args) -> camera.CameraGeometry:
    if getattr(args, "geometry", None):
        _require(args.geometry)
        with open(args.geometry, encoding="utf-8") as fh:
            return camera.geometry_from_json(fh.read())
    return camera.build_geometry(args.rings, args.pitch)


def _labels_to_y(labels) -> np.ndarray:
    if any(lab is None for lab in labels):
        raise DataFormatError("every row needs a gamma/hadron label here")
    return np.array([1 if lab == camera.GAMMA else -1 for lab in labels])


def _load_model(path) -> svm.SvmModel:
    _require(path)
    with open(path, encoding="utf-8") as fh:
        return svm.SvmModel.from_json(fh.read())


def _write(path, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _clean_events(events, geom, args):
    return [camera.clean_image(ev, geom, args.core, args.boundary) for ev in events]


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args):
    geom = _geometry(args)
    params = camera.GeneratorParams()
    if args.params:
        _require(args.params)
        with open(args.params, encoding="utf-8") as fh:
            params = camera.GeneratorParams.from_dict(json.load(fh))
    events = camera.generate_dataset(args.gammas, args.hadrons, params, args.seed, geom)
    camera.write_events(args.out, events)
    if args.geometry_out:
        _write(args.geometry_out, camera.geometry_to_json(geom))
    print(f"wrote {len(events)} events to {args.out}")


def cmd_extract(args):
    _require(args.events)
    geom = _geometry(args)
    table = pzernike.build_basis_table(camera.map_to_unit_disk(geom), args.n_max)
    events = camera.read_events(args.events)
    for ev in events:
        if len(ev.pixel_phe) != geom.n_pixels:
            raise DataFormatError(f"event {ev.event_id} has {len(ev.pixel_phe)} pixels, "
                                  f"geometry has {geom.n_pixels}")
    cleaned = _clean_events(events, geom, args)
    X = pzernike.extract_many(cleaned, table)
    pzernike.write_features_csv(args.out, [e.event_id for e in events],
                                [e.label for e in events], X)
    if args.basis_out:
        pzernike.write_basis_table(args.basis_out, table)
    print(f"wrote {X.shape[0]} x {X.shape[1]} features to {args.out}")


def cmd_hillas(args):
    _require(args.events)
    geom = _geometry(args)
    rows = ["event_id,label,size,cog_x,cog_y,length,width,dist,alpha"]
    for ev in camera.iter_events(args.events):
        c = camera.clean_image(ev, geom, args.core, args.boundary)
        try:
            h = camera.hillas(c, geom)
        except camera.EmptyImageError:
            rows.append(f"{ev.event_id},{ev.label or ''},0,,,,,,")
            continue
        vals = [h.size, h.cog[0], h.cog[1], h.length, h.width, h.dist, h.alpha]
        rows.append(f"{ev.event_id},{ev.label or ''}," + ",".join(f"{v:.17g}" for v in vals))
    _write(args.out, "\n".join(rows) + "\n")
    print(f"wrote Hillas parameters for {len(rows) - 1} events to {args.out}")


def _training_set(path):
    _require(path)
    _, labels, X = pzernike.read_features_csv(path)
    y = _labels_to_y(labels)
    norm = modelsel.zscore_fit(X)
    return svm.LabeledDataset(norm.apply(X), y), norm


def cmd_train(args):
    data, norm = _training_set(args.features)
    model = svm.train_smo(data, args.C, args.gamma, tol=args.tol, seed=args.seed,
                          normalizer=norm)
    _write(args.out, model.to_json())
    state = "converged" if model.converged else "NOT converged"
    print(f"trained: {model.n_support} support vectors, {model.iterations} iterations, {state}")


def _grid_spec(args) -> modelsel.GridSpec:
    return modelsel.GridSpec(
        log2C=args.log2c, log2gamma=args.log2g, fine_halfwidth=args.fine_halfwidth,
        fine_step=args.fine_step, folds=args.folds, fraction=args.fraction, seed=args.seed,
        tol=args.tol, refine=not args.no_refine)


def cmd_gridsearch(args):
    data, norm = _training_set(args.features)
    res = modelsel.grid_search(data, _grid_spec(args))
    _write(args.out, res.to_csv())
    print(f"best log2C={res.best_log2C} log2gamma={res.best_log2gamma} "
          f"(C={res.best_C:.6g}, gamma={res.best_gamma:.6g}) cv_accuracy={res.best_accuracy:.4f}")
    if args.model_out:
        model = svm.train_smo(data, res.best_C, res.best_gamma, tol=args.tol, seed=args.seed,
                              normalizer=norm)
        _write(args.model_out, model.to_json())
        print(f"trained final model: {model.n_support} support vectors -> {args.model_out}")


def cmd_predict(args):
    model = _load_model(args.model)
    _require(args.features)
    ids, labels, X = pzernike.read_features_csv(args.features)
    f = svm.decision_values(model, X, raw=True) if len(X) else np.zeros(0)
    lines = ["event_id,decision,label"]
    for eid, v in zip(ids, f):
        lines.append(f"{eid},{v!r},{camera.GAMMA if v >= 0 else camera.HADRON}")
    _write(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(ids)} predictions to {args.out}")


def cmd_evaluate(args):
    model = _load_model(args.model)
    _require(args.features)
    _, labels, X = pzernike.read_features_csv(args.features)
    y = _labels_to_y(labels)
    metrics = modelsel.evaluate(model, svm.LabeledDataset(X, y), raw=True)
    if args.out:
        _write(args.out, metrics.to_json())
    print(metrics.table())


def _formats(args) -> fixedpoint.TriggerFormats:
    if args.wide:
        return fixedpoint.wide_formats()
    fm = fixedpoint.TriggerFormats(dual_coeffs=args.dual_format)
    if args.basis_format is not None:
        fm = fixedpoint.replace(fm, basis=args.basis_format)
    return fm


def cmd_fxp_export(args):
    model = _load_model(args.model)
    geom = _geometry(args)
    table = pzernike.build_basis_table(camera.map_to_unit_disk(geom), args.n_max)
    trig = fixedpoint.export_trigger(model, table, _formats(args))
    with open(args.out, "wb") as fh:
        fh.write(trig.to_bytes())
    print(f"wrote trigger image ({trig.n_sv} support vectors, dual format "
          f"{trig.formats.dual_coeffs}) to {args.out}")


def _load_trigger(path):
    _require(path)
    with open(path, "rb") as fh:
        return fixedpoint.TriggerImage.from_bytes(fh.read())


def cmd_fxp_run(args):
    model = _load_model(args.model)
    trig = _load_trigger(args.trigger)
    geom = _geometry(args)
    _require(args.events)
    table = pzernike.build_basis_table(camera.map_to_unit_disk(geom), trig.n_max)
    if table.n_pixels != trig.n_pixels:
        raise DataFormatError("trigger image and geometry disagree on the pixel count")
    events = _clean_events(camera.read_events(args.events), geom, args)
    rep = fixedpoint.agreement_report(model, trig, table, events)
    _write(args.out, rep.to_csv())
    s = rep.summary()
    near = [r.abs_err for r in rep.rows if abs(r.float_decision) <= args.dev_window]
    s["max_abs_err_in_window"] = max(near, default=0.0)
    print(json.dumps(s))
    if args.gate:
        ok = s["agreement"] >= args.min_agreement and s["max_abs_err_in_window"] <= args.max_dev
        if not ok:
            raise GateFailure(f"agreement {s['agreement']:.4f} (need >= {args.min_agreement}), "
                              f"max deviation {s['max_abs_err_in_window']:.4g} "
                              f"(need <= {args.max_dev})")
        print("gate: PASS")


def cmd_bench(args):
    model = _load_model(args.model)
    trig = _load_trigger(args.trigger)
    geom = _geometry(args)
    table = pzernike.build_basis_table(camera.map_to_unit_disk(geom), trig.n_max)
    if args.events:
        _require(args.events)
        events = camera.read_events(args.events)
    else:
        half = args.n // 2
        events = camera.generate_dataset(half, args.n - half, camera.GeneratorParams(),
                                         args.seed, geom)
    events = _clean_events(events[: args.n], geom, args)
    pipe = fixedpoint.FxPipeline(trig)

    def run_float(ev):
        feats = pzernike.extract_features(ev, table)
        return svm.decision_value(model, feats, raw=True)

    def run_fx(ev):
        raw, _ = pipe.quantize_pixels(ev.pixel_phe)
        return pipe.run(raw).decision

    report = {"events": len(events)}
    for name, fn in (("float", run_float), ("fixed", run_fx)):
        lat = np.empty(len(events))
        t0 = time.perf_counter()
        for i, ev in enumerate(events):
            t = time.perf_counter()
            fn(ev)
            lat[i] = time.perf_counter() - t
        wall = time.perf_counter() - t0
        report[name] = {
            "events_per_s": len(events) / wall if wall > 0 else float("inf"),
            "p50_us": float(np.percentile(lat, 50) * 1e6) if len(lat) else 0.0,
            "p99_us": float(np.percentile(lat, 99) * 1e6) if len(lat) else 0.0,
        }
    text = json.dumps(report, indent=2)
    if args.out:
        _write(args.out, text)
    print(text)


def cmd_reconstruct(args):
    _require(args.events)
    geom = _geometry(args)
    mapping = camera.map_to_unit_disk(geom)
    table = pzernike.build_basis_table(mapping, args.n_max)
    for ev in camera.iter_events(args.events):
        if ev.event_id == args.event_id:
            break
    else:
        raise DataFormatError(f"event {args.event_id} not found")
    img = camera.clean_image(ev, geom, args.core, args.boundary).pixel_phe
    rec = pzernike.reconstruct(pzernike.moments(img, table), mapping, args.n_max)
    lines = ["pixel_id,x,y,original,reconstructed"]
    for i, ((x, y), a, b) in enumerate(zip(geom.pixel_positions, img, rec)):
        lines.append(f"{i},{x!r},{y!r},{a!r},{b!r}")
    _write(args.out, "\n".join(lines) + "\n")
    err = np.linalg.norm(img - rec) / max(np.linalg.norm(img), 1e-300)
    print(f"relative L2 reconstruction error at n_max={args.n_max}: {err:.4f}")


# ---------------------------------------------------------------------------
# parser

def _add_geometry(p):
    p.add_argument("--geometry", help="geometry JSON (default: build from --rings/--pitch)")
    p.add_argument("--rings", type=int, default=11)
    p.add_argument("--pitch", type=float, default=1.0)


def _add_cleaning(p):
    p.add_argument("--core", type=float, default=10.0, help="core tail-cut threshold (phe)")
    p.add_argument("--boundary", type=float, default=5.0, help="boundary threshold (phe)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pztrigger", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="TOML config file")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic events (JSONL)")
    p.add_argument("--gammas", type=int, default=100)
    p.add_argument("--hadrons", type=int, default=100)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--params", help="generator parameters JSON")
    p.add_argument("--geometry-out")
    p.add_argument("--out", required=True)
    _add_geometry(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="clean events and write pseudo-Zernike features (CSV)")
    p.add_argument("--events", required=True)
    p.add_argument("--n-max", type=int, default=pzernike.DEFAULT_N_MAX)
    p.add_argument("--basis-out", help="also write the float basis table")
    p.add_argument("--out", required=True)
    _add_geometry(p)
    _add_cleaning(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("hillas", help="Hillas parameters of cleaned events (CSV)")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    _add_geometry(p)
    _add_cleaning(p)
    p.set_defaults(func=cmd_hillas)

    def add_train_opts(p):
        p.add_argument("--features", required=True)
        p.add_argument("--tol", type=float, default=1e-3)
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = sub.add_parser("train", help="train an RBF SVM with SMO")
    add_train_opts(p)
    p.add_argument("--C", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="cross-validated grid search over (C, gamma)")
    add_train_opts(p)
    p.add_argument("--log2c", type=_range3, default=modelsel.GridSpec.log2C, metavar="LO:HI:STEP")
    p.add_argument("--log2g", type=_range3, default=modelsel.GridSpec.log2gamma,
                   metavar="LO:HI:STEP")
    p.add_argument("--fine-halfwidth", type=float, default=modelsel.GridSpec.fine_halfwidth)
    p.add_argument("--fine-step", type=float, default=modelsel.GridSpec.fine_step)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--folds", type=int, default=modelsel.GridSpec.folds)
    p.add_argument("--fraction", type=float, default=modelsel.GridSpec.fraction)
    p.add_argument("--model-out", help="train the final model at the best cell")
    p.add_argument("--out", required=True, help="grid CSV")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("predict", help="decision values for a features file")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="per-class recognition table and accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="metrics JSON")
    p.set_defaults(func=cmd_evaluate)

    def add_fx_formats(p):
        p.add_argument("--dual-format", type=_qformat, default=fixedpoint.QFormat(32, 8),
                       help="dual coefficient format, e.g. q24.8, or 'auto'")
        p.add_argument("--basis-format", type=_qformat, default=None)
        p.add_argument("--wide", action="store_true", help="64-bit Q24.40 everywhere")

    p = sub.add_parser("fxp-export", help="quantise model and basis into a trigger image")
    p.add_argument("--model", required=True)
    p.add_argument("--n-max", type=int, default=pzernike.DEFAULT_N_MAX)
    p.add_argument("--out", required=True)
    add_fx_formats(p)
    _add_geometry(p)
    p.set_defaults(func=cmd_fxp_export)

    p = sub.add_parser("fxp-run", help="fixed vs float agreement report (CSV)")
    p.add_argument("--model", required=True)
    p.add_argument("--trigger", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gate", action="store_true", help="exit 4 unless the agreement gate passes")
    p.add_argument("--min-agreement", type=float, default=0.99)
    p.add_argument("--max-dev", type=float, default=0.01)
    p.add_argument("--dev-window", type=float, default=8.0)
    _add_geometry(p)
    _add_cleaning(p)
    p.set_defaults(func=cmd_fxp_run)

    p = sub.add_parser("bench", help="time float and fixed pipelines per event")
    p.add_argument("--model", required=True)
    p.add_argument("--trigger", required=True)
    p.add_argument("--events", help="events JSONL (default: generate --n events)")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out")
    _add_geometry(p)
    _add_cleaning(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("reconstruct", help="reconstruct one event from its moments")
    p.add_argument("--events", required=True)
    p.add_argument("--event-id", type=int, default=0)
    p.add_argument("--n-max", type=int, default=pzernike.DEFAULT_N_MAX)
    p.add_argument("--out", required=True)
    _add_geometry(p)
    _add_cleaning(p)
    p.set_defaults(func=cmd_reconstruct)
    return ap


def _config_defaults(path: str, command: str) -> dict:
    import tomli

    _require(path)
    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    out = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    out.update(doc.get(command, {}))
    for key in ("log2c", "log2g"):
        if isinstance(out.get(key), list):
            out[key] = tuple(out[key])
    for key in ("dual_format", "basis_format"):
        if isinstance(out.get(key), str):
            out[key] = _qformat(out[key])
    return {k.replace("-", "_"): v for k, v in out.items()}


def main(argv=None) -> int:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = ap.parse_args(argv)
        if args.config:
            cfg = _config_defaults(args.config, args.command)
            subparser = ap._subparsers._group_actions[0].choices[args.command]
            subparser.set_defaults(**cfg)
            args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (InvalidArgument, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except GateFailure as exc:
        print(f"gate: FAIL: {exc}", file=sys.stderr)
        return EXIT_GATE
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (DataFormatError, ExportRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
