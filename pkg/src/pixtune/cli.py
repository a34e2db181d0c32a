"""Command line: synth, train, apply, eval and dump-params.

Exit codes: 0 success, 1 usage error (bad flags, incompatible model and
input), 2 runtime error (I/O failures and the like).
"""

from __future__ import annotations

import argparse
import csv
import glob
import os
import sys

import numpy as np

from . import __version__
from .demosaic import blend_map_image, export_blend_map
from .imaging import (LAYOUTS, BayerMosaic, ImageIOError, add_gaussian_noise, add_poisson_noise,
                      convolve, gaussian_kernel, image_seed, load_image, load_kernel, mosaic,
                      save_image, to_grayscale)
from .model import constant_model, load_model, save_model
from .processors import PROCESSORS, make_processor, process, processor_for
from .simplex import write_trace
from .training import ReportRow, TrainingReport, load_run, train
from .metrics import METRICS, metric_function

MANIFEST_COLUMNS = ["input_path", "reference_path", "seed", "mode", "param1", "param2"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _check_output(path, inputs, force):
    out = os.path.abspath(path)
    if out in {os.path.abspath(p) for p in inputs if p}:
        raise UsageError(f"refusing to overwrite input file {path}")
    if os.path.exists(out) and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _parse_global(text, n):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--global expects {n} comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"--global expects {n} values, got {len(vals)}")
    return vals


def _overrides(args, processor):
    cfg = {}
    if processor == "anlm" and getattr(args, "sigma", None) is not None:
        cfg["sigma"] = args.sigma / 255.0
    if processor == "tv":
        if getattr(args, "kernel", None):
            cfg["kernel"] = load_kernel(args.kernel).tolist()
        if getattr(args, "photons", None) is not None:
            cfg["photon_max"] = float(args.photons)
    if processor == "blend" and getattr(args, "cfa", None):
        cfg["layout"] = args.cfa
    return cfg


def _resolve_model(args):
    """Model from --model and/or --global, with processor flags applied."""
    from dataclasses import replace

    if args.model:
        model = load_model(args.model)
        if args.processor and args.processor != model.processor:
            raise UsageError(f"model is for {model.processor}, not {args.processor}")
        processor = model.processor
    elif args.processor:
        model = None
        processor = args.processor
    else:
        raise UsageError("give --model or --processor with --global")
    cfg = dict(model.processor_config) if model else {}
    cfg.update(_overrides(args, processor))
    proc = make_processor(processor, cfg)
    if getattr(args, "global_params", None):
        specs = model.params if model else proc.param_specs()
        vals = _parse_global(args.global_params, len(specs))
        try:
            model = constant_model(processor, specs, vals, proc.config_dict())
        except ValueError as exc:
            raise UsageError(f"--global: {exc}") from None
    elif model is None:
        raise UsageError("--processor without --model needs --global")
    else:
        model = replace(model, processor_config=proc.config_dict())
    return model, proc


def _load_input(path, processor, layout):
    img = load_image(path)
    if processor == "blend":
        if img.ndim != 2:
            raise UsageError("blend input must be a single-channel mosaic")
        try:
            return BayerMosaic(img, layout)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if processor == "tv":
        return to_grayscale(img)
    return img


def _externals(args, stem, proc, mosaic_in):
    if not getattr(args, "external", None):
        return None
    outputs = proc.context(mosaic_in)
    for item in args.external:
        try:
            k, pattern = item.split("=", 1)
            k = int(k)
        except ValueError:
            raise UsageError(f"--external expects k=pattern, got {item!r}") from None
        if not 0 <= k < len(outputs):
            raise UsageError(f"--external index {k} out of range")
        path = pattern % stem if "%s" in pattern else pattern
        ext = load_image(path)
        if ext.shape != outputs[k].shape:
            raise UsageError(f"external output {path} has the wrong shape")
        outputs[k] = ext
    return outputs


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    refs = []
    for pattern in args.references:
        found = sorted(glob.glob(pattern)) or [pattern]
        refs.extend(found)
    os.makedirs(args.outdir, exist_ok=True)
    kernel = load_kernel(args.blur) if args.blur else gaussian_kernel()
    manifest = os.path.join(args.outdir, "manifest.csv")
    _check_output(manifest, refs, args.force)
    rows = []
    for index, ref in enumerate(refs):
        img = load_image(ref)
        seed = image_seed(args.seed, index)
        stem = _stem(ref)
        if args.mode == "gaussian":
            out, p1, p2 = add_gaussian_noise(img, args.sigma / 255.0, seed), args.sigma, ""
            path = os.path.join(args.outdir, f"{stem}.png")
        elif args.mode == "poisson":
            blurred = convolve(to_grayscale(img), kernel)
            out, p1, p2 = add_poisson_noise(blurred, args.photons, seed), args.photons, args.blur or "gaussian-7-2"
            path = os.path.join(args.outdir, f"{stem}.png")
        else:
            if img.ndim != 3:
                raise UsageError(f"{ref}: mosaicing needs an RGB image")
            out, p1, p2 = mosaic(img, args.cfa), args.cfa, ""
            path = os.path.join(args.outdir, f"{stem}.pgm")
        _check_output(path, refs, args.force)
        save_image(out, path, args.bitdepth)
        rows.append([os.path.relpath(path, args.outdir), os.path.abspath(ref), seed, args.mode, p1, p2])
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        w.writerows(rows)
    print(f"wrote {len(rows)} images and {manifest}")
    return 0


def cmd_train(args):
    run = load_run(args.config)
    run.threads = args.threads
    for path in (args.out, args.trace, args.report, args.report_csv, args.global_out):
        if path:
            _check_output(path, [args.config] + run.dataset, args.force)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    result = train(run, log=log)
    save_model(result.final, args.out)
    if args.global_out:
        save_model(result.global_model, args.global_out)
    if args.trace:
        from .simplex import OptResult
        joint = OptResult(result.final, 0.0, len(result.trace()), result.trace())
        write_trace(joint, args.trace)
    result.report.write(args.report, args.report_csv)
    sys.stdout.write(result.report.to_text())
    return 0


def cmd_apply(args):
    model, proc = _resolve_model(args)
    _check_output(args.output, [args.input, args.model], args.force)
    if args.dump_blend:
        if model.processor != "blend":
            raise UsageError("--dump-blend only applies to blend models")
        _check_output(args.dump_blend, [args.input, args.model], args.force)
    x = _load_input(args.input, model.processor, proc.config_dict().get("layout", args.cfa))
    ctx = _externals(args, _stem(args.input), proc, x) if model.processor == "blend" else None
    try:
        out, field = process(model, x, ctx=ctx, proc=proc)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_image(out, args.output, args.bitdepth)
    if args.dump_blend:
        export_blend_map(field, args.dump_blend)
    return 0


def _read_manifest(path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise UsageError(f"manifest lacks columns {sorted(missing)}")
        rows = list(reader)
    for r in rows:
        for key in ("input_path", "reference_path"):
            if not os.path.isabs(r[key]):
                r[key] = os.path.join(base, r[key])
    return rows


def cmd_eval(args):
    rows = _read_manifest(args.manifest)
    models = []
    for path in args.model:
        m = load_model(path)
        cfg = dict(m.processor_config)
        cfg.update(_overrides(args, m.processor))
        models.append((_stem(path), m, make_processor(m.processor, cfg)))
    processors = {m.processor for _, m, _ in models}
    if len(processors) != 1:
        raise UsageError("all models must share one processor")
    processor = processors.pop()
    report_rows = []
    for r in rows:
        layout = r["param1"] if r["mode"] == "mosaic" else "RGGB"
        x = _load_input(r["input_path"], processor, layout)
        ref = load_image(r["reference_path"])
        if processor == "tv":
            ref = to_grayscale(ref)
        name = _stem(r["input_path"])
        candidates = []
        if processor == "blend":
            proc = models[0][2]
            candidates += list(zip(proc.ids, proc.context(x)))
        else:
            candidates.append(("input", x))
        for label, m, proc in models:
            try:
                out, _ = process(m, x, proc=proc)
            except ValueError as exc:
                raise UsageError(f"{name}: {exc}") from None
            candidates.append((label, out))
        for label, out in candidates:
            if out.shape != ref.shape:
                raise UsageError(f"{name}: output and reference differ in shape")
            scores = [metric_function(k)(out, ref) for k in METRICS]
            report_rows.append(ReportRow("eval", name, label, *scores))
    report = TrainingReport(processor, args.metric.upper(), report_rows)
    for path in (args.report, args.csv):
        if path:
            _check_output(path, [args.manifest] + args.model, args.force)
    report.write(args.report, args.csv)
    sys.stdout.write(report.to_text())
    return 0


def cmd_dump_params(args):
    model, proc = _resolve_model(args)
    x = _load_input(args.image, model.processor, proc.config_dict().get("layout", args.cfa))
    try:
        features = proc.features(proc.check_input(x), model.feature_spec)
        from .model import map_field
        field = map_field(features, model)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    outputs = [f"{args.out}_{p.name}.png" for p in model.params] + [f"{args.out}.csv"]
    if model.processor == "blend":
        outputs.append(f"{args.out}_blend.png")
    for path in outputs:
        _check_output(path, [args.image, args.model], args.force)
    for k, p in enumerate(model.params):
        scaled = (field.values[..., k] - p.p_min) / (p.p_max - p.p_min)
        save_image(scaled, f"{args.out}_{p.name}.png", 16)
    h, w = field.shape
    with open(f"{args.out}.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", "y"] + list(model.names))
        for y in range(h):
            for x_ in range(w):
                wr.writerow([x_, y] + [repr(float(v)) for v in field.values[y, x_]])
    if model.processor == "blend":
        save_image(blend_map_image(field), f"{args.out}_blend.png")
    return 0


# ---------------------------------------------------------------------------
# parser


def _processor_flags(p, with_model=True):
    if with_model:
        p.add_argument("--model", help="model JSON file")
    p.add_argument("--processor", choices=PROCESSORS, help="processor (checked against the model)")
    p.add_argument("--global", dest="global_params", metavar="P0[,P1..]",
                   help="use these constant parameters instead of the model's mapping")
    p.add_argument("--sigma", type=float, help="anlm: noise std on the 0-255 scale")
    p.add_argument("--kernel", help="tv: blur kernel file (side, then side*side weights)")
    p.add_argument("--photons", type=float, help="tv: photon count of a white pixel")
    p.add_argument("--cfa", choices=LAYOUTS, default="RGGB", help="blend: mosaic layout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pixtune", description="Learned per-pixel parameter tuning for "
                     "denoising, demosaicing and deblurring.")
    parser.add_argument("--version", action="version", version=__version__,
                        help="print the model-format version and exit")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker cap for per-image parallelism (default: all cores)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write degraded images and a manifest")
    p.add_argument("--mode", choices=("gaussian", "poisson", "mosaic"), required=True)
    p.add_argument("--sigma", type=float, default=20.0, help="gaussian noise std, 0-255 scale")
    p.add_argument("--photons", type=float, default=1024.0, help="poisson: photons of a white pixel")
    p.add_argument("--blur", help="poisson: kernel file (default 7x7 Gaussian, std 2)")
    p.add_argument("--cfa", choices=LAYOUTS, default="RGGB", help="mosaic layout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=16)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("references", nargs="+", help="clean images (globs allowed)")
    p.add_argument("outdir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train global and adaptive models from a run config")
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--out", required=True, help="final model JSON")
    p.add_argument("--global-out", help="also save the global model here")
    p.add_argument("--trace", help="CSV of (eval_index, best_value)")
    p.add_argument("--report", help="text table of the evaluation")
    p.add_argument("--report-csv", help="per-image evaluation CSV")
    p.add_argument("--verbose", action="store_true", help="progress on stderr")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("apply", help="run a processor with a learned model")
    _processor_flags(p)
    p.add_argument("--dump-blend", help="blend: write the normalized blend factors as RGB")
    p.add_argument("--external", action="append", metavar="K=PATTERN",
                   help="blend: replace demosaicer K by images from PATTERN (%%s = input stem)")
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=8)
    p.add_argument("--force", action="store_true")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eval", help="score models on a manifest")
    p.add_argument("--model", action="append", required=True, help="model JSON (repeatable)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--metric", default="PSNR", choices=METRICS, help="metric named in the header")
    p.add_argument("--sigma", type=float, help="anlm: override the noise std, 0-255 scale")
    p.add_argument("--report", help="write the text table here")
    p.add_argument("--csv", help="write per-image scores here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-params", help="export per-pixel parameter maps")
    _processor_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_dump_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pixtune {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ImageIOError, OSError, ValueError, KeyError) as exc:
        print(f"pixtune {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
