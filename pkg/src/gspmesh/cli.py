"""Command-line interface.

``gspmesh <command> [options]`` with commands ``compress``,
``decompress``, ``denoise``, ``denoise-dynamic``, ``bench`` and
``coherence``.  Options can also come from a ``key=value`` file given by
``--config``; command-line flags win.  Exit status is 0 on success, 2 for
invalid parameters and 3 for failures while running.
"""

from __future__ import annotations

import argparse
import csv
import glob
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import compress, denoise, metrics, pipeline, shapes, spectral
from .mesh import add_gaussian_noise, face_normals, load_mesh, save_mesh

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
THREADS_ENV = "GSPMESH_THREADS"


class ValidationError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every tunable of every command; unused fields are ignored."""

    command: str = ""
    input: list = field(default_factory=list)
    output: str = ""
    reference: list = field(default_factory=list)
    metrics: str = ""
    k: int = 70
    growth: float = 1.15
    c: int | None = None
    c_fraction: float = 0.1
    q_c: int = 12
    z: int = 2
    t_max: int = 2
    init_t_max: int = 100
    eps_l: float | None = None
    eps_h: float | None = None
    c_min: int = 1
    c_max: int | None = None
    doi_t_max: int = 50
    basis_mode: str = "oi"
    weighting: str = "binary"
    stitching: str = "weighted"
    delta_rel: float = spectral.DEFAULT_SHIFT
    sigma_s: float | None = None
    sigma_r: float = 0.35
    normal_iterations: int = 5
    vertex_iterations: int = 10
    neighborhood: int = 1
    mode: str = "coarse-fine"
    noise: float = 0.0
    seed: int = 0
    threads: int = 1
    # bench / coherence
    c_fractions: list = field(default_factory=lambda: [0.1])
    z_values: list = field(default_factory=lambda: [2])
    t_max_values: list = field(default_factory=lambda: [2])
    k_values: list = field(default_factory=list)
    growths: list = field(default_factory=list)
    modes: list = field(default_factory=lambda: ["oi"])
    size: int = 100
    samples: int = 8

    def spectral_config(self, **over):
        kw = dict(k=self.k, growth=self.growth, c=self.c, c_fraction=self.c_fraction,
                  basis_mode=self.basis_mode, z=self.z, t_max=self.t_max,
                  init_t_max=self.init_t_max, eps_l=self.eps_l, eps_h=self.eps_h,
                  c_min=self.c_min, c_max=self.c_max, doi_t_max=self.doi_t_max,
                  weighting=self.weighting, delta_rel=self.delta_rel, seed=self.seed,
                  stitching=self.stitching)
        kw.update(over)
        return pipeline.SpectralConfig(**kw)

    def bilateral(self):
        return denoise.BilateralParams(self.sigma_s, self.sigma_r, self.normal_iterations,
                                       self.vertex_iterations, self.neighborhood)

    def echo(self):
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k}={'' if v is None else v}")
        return "\n".join(lines) + "\n"


_LIST_FIELDS = {"input": str, "reference": str, "c_fractions": float, "z_values": int,
                "t_max_values": int, "k_values": int, "growths": float, "modes": str}


def _field_types():
    out = {}
    for f in fields(RunConfig):
        t = str(f.type)
        if f.name in _LIST_FIELDS:
            out[f.name] = ("list", _LIST_FIELDS[f.name])
        elif t.startswith("int"):
            out[f.name] = ("scalar", int)
        elif t.startswith("float"):
            out[f.name] = ("scalar", float)
        else:
            out[f.name] = ("scalar", str)
    return out


_TYPES = _field_types()


def _convert(key, raw):
    if key not in _TYPES:
        raise ValidationError(f"unknown config key {key!r}")
    kind, typ = _TYPES[key]
    try:
        if kind == "list":
            raw = raw.strip()
            return [] if raw == "" else [typ(x.strip()) for x in raw.split(",")]
        if raw.strip() in ("", "none", "None"):
            return None
        return typ(raw.strip())
    except ValueError as exc:
        raise ValidationError(f"bad value for {key}: {raw!r}") from exc


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment, keys may use dashes."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            out[key] = _convert(key, value)
    return out


def _add_common(p):
    p.add_argument("--config", help="key=value file; flags override it")
    a = p.add_argument
    a("--k", type=int, help="number of parts")
    a("--growth", type=float, help="submesh size as a multiple of the largest part")
    a("--c", type=int, help="subspace size (overrides --c-fraction)")
    a("--c-fraction", type=float, help="subspace size as a fraction of n_d")
    a("--basis-mode", choices=pipeline.BASIS_MODES)
    a("--z", type=int, help="power of the shifted inverse")
    a("--t-max", type=int, help="orthogonal iterations per warm-started block")
    a("--init-t-max", type=int)
    a("--eps-l", type=float, help="lower residual bound for dynamic sizing")
    a("--eps-h", type=float, help="upper residual bound for dynamic sizing")
    a("--c-min", type=int)
    a("--c-max", type=int)
    a("--doi-t-max", type=int)
    a("--weighting", choices=spectral.WEIGHTINGS)
    a("--stitching", choices=("weighted", "simple"))
    a("--delta-rel", type=float)
    a("--seed", type=int)
    a("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    a("--metrics", help="write a metrics CSV here")


def _add_bilateral(p):
    p.add_argument("--sigma-s", type=float)
    p.add_argument("--sigma-r", type=float)
    p.add_argument("--normal-iterations", type=int)
    p.add_argument("--vertex-iterations", type=int)
    p.add_argument("--neighborhood", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="gspmesh", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="encode a mesh into a bitstream")
    p.add_argument("input", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--q-c", type=int, help="bits per coefficient")
    _add_common(p)

    p = sub.add_parser("decompress", help="decode a bitstream into a mesh")
    p.add_argument("input", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--reference", action="append", help="ground-truth mesh for metrics")
    _add_common(p)

    p = sub.add_parser("denoise", help="coarse, fine or coarse-to-fine denoising")
    p.add_argument("input", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--mode", choices=("coarse", "fine", "coarse-fine"))
    p.add_argument("--reference", action="append", help="ground-truth mesh for metrics")
    _add_common(p)
    _add_bilateral(p)

    p = sub.add_parser("denoise-dynamic", help="denoise frames sharing one connectivity")
    p.add_argument("input", nargs="*", help="frame files or glob patterns, in order")
    p.add_argument("--output", help="output directory")
    p.add_argument("--mode", choices=("coarse", "coarse-fine"))
    p.add_argument("--reference", action="append", help="ground-truth frames for metrics")
    _add_common(p)
    _add_bilateral(p)

    p = sub.add_parser("bench", help="timing/quality sweep, one CSV row per cell")
    p.add_argument("input", nargs="?", help="mesh file or shape:<name>")
    p.add_argument("output", nargs="?", help="CSV path")
    p.add_argument("--q-c", type=int)
    p.add_argument("--noise", type=float)
    for name in ("c-fractions", "z-values", "t-max-values", "k-values", "growths", "modes"):
        p.add_argument(f"--{name}", help="comma-separated list")
    _add_common(p)

    p = sub.add_parser("coherence", help="operator-image MSE between models")
    p.add_argument("input", nargs="*", help="mesh files or shape:<name>")
    p.add_argument("--output", help="CSV path")
    p.add_argument("--size", type=int)
    p.add_argument("--samples", type=int)
    _add_common(p)
    return parser


def resolve_config(args):
    cfg = RunConfig(command=args.command)
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key, val in vars(args).items():
        if key in ("config", "command") or val is None:
            continue
        if key in ("input", "reference"):
            val = [val] if isinstance(val, str) else list(val)
            if not val:
                continue
        elif key in _LIST_FIELDS and isinstance(val, str):
            val = _convert(key, val)
        values[key] = val
    for key, val in values.items():
        if key not in _TYPES:
            raise ValidationError(f"unknown option {key!r}")
        setattr(cfg, key, val)
    if "threads" not in values:
        cfg.threads = denoise.default_threads()
    return cfg


def validate(cfg):
    try:
        cfg.spectral_config()
        cfg.bilateral()
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if not 1 <= cfg.q_c <= 16:
        raise ValidationError("q_c must be between 1 and 16")
    if cfg.threads < 1:
        raise ValidationError("threads must be >= 1")
    if cfg.noise < 0:
        raise ValidationError("noise must be nonnegative")
    if cfg.command in ("compress", "decompress", "denoise") and (len(cfg.input) != 1 or not cfg.output):
        raise ValidationError(f"{cfg.command} needs one input and one output path")
    if cfg.command in ("denoise-dynamic", "coherence") and not cfg.input:
        raise ValidationError(f"{cfg.command} needs at least one input")
    if cfg.command == "denoise-dynamic" and not cfg.output:
        raise ValidationError("denoise-dynamic needs --output DIR")
    if cfg.command == "bench" and (len(cfg.input) != 1 or not cfg.output):
        raise ValidationError("bench needs one input mesh and an output CSV")
    if cfg.command == "coherence" and not cfg.output:
        raise ValidationError("coherence needs --output CSV")
    for g in cfg.growths:
        if g < 1.0:
            raise ValidationError("growth values must be >= 1")
    for v in cfg.c_fractions:
        if not 0 < v <= 1:
            raise ValidationError("c fractions must be in (0, 1]")
    if any(z < 1 for z in cfg.z_values) or any(t < 0 for t in cfg.t_max_values):
        raise ValidationError("z values must be >= 1 and t_max values >= 0")
    if any(m not in pipeline.BASIS_MODES for m in cfg.modes):
        raise ValidationError(f"modes must be among {pipeline.BASIS_MODES}")
    if cfg.size < 1 or cfg.samples < 1:
        raise ValidationError("size and samples must be positive")


def check_k(k, n):
    if not 1 <= k <= n / 4:
        raise ValidationError(f"k={k} must satisfy 1 <= k <= n/4 = {n / 4:g}")


def write_echo(cfg, path):
    with open(path, "w") as fh:
        fh.write(cfg.echo())


def load_model(source, seed=0):
    """A mesh file path, or ``shape:<name>`` for a built-in synthetic model."""
    if source.startswith("shape:"):
        name = source.split(":", 1)[1]
        builders = {
            "sphere": lambda: shapes.icosphere(4),
            "bumpy": lambda: shapes.bumpy_sphere(5),
            "bumpy_small": lambda: shapes.bumpy_sphere(4),
            "torus": lambda: shapes.torus(160, 80),
            "cube": lambda: shapes.cube(32),
            "plane": lambda: shapes.grid_plane(100, 100, jitter=0.2, seed=seed),
            "bumpy_torus": lambda: shapes.bumpy_torus(320, 320),
        }
        if name not in builders:
            raise ValidationError(f"unknown shape {name!r}; choose from {sorted(builders)}")
        return builders[name]()
    return load_mesh(source)


def _atomic_save_mesh(mesh, path):
    tmp = path + ".tmp"
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    save_mesh(mesh, tmp, format=ext)
    os.replace(tmp, path)


def _report(original, result, label, timings=None, bpv=None, submeshes=None):
    return metrics.evaluate(original, result, label=label, timings=timings, bpv=bpv,
                            submeshes=submeshes)


# ---------------------------------------------------------------------------
# commands

def cmd_compress(cfg):
    mesh = load_mesh(cfg.input[0])
    check_k(cfg.k, mesh.n_vertices)
    timings = {}
    enc = compress.compress_mesh(mesh, cfg.spectral_config(), cfg.q_c, timings)
    tmp = cfg.output + ".tmp"
    compress.save_encoded(enc, tmp)
    os.replace(tmp, cfg.output)
    write_echo(cfg, cfg.output + ".config.txt")
    if cfg.metrics:
        rec = compress.decompress_mesh(enc)
        rep = _report(mesh, rec.vertices, os.path.basename(cfg.input[0]), timings, enc.bpv(),
                      enc.submeshes)
        metrics.write_reports_csv([rep], cfg.metrics)
    return EXIT_OK


def cmd_decompress(cfg):
    enc = compress.load_encoded(cfg.input[0])
    timings = {}
    mesh = compress.decompress_mesh(enc, timings)
    _atomic_save_mesh(mesh, cfg.output)
    write_echo(cfg, cfg.output + ".config.txt")
    if cfg.metrics and cfg.reference:
        ref = load_mesh(cfg.reference[0])
        rep = _report(ref, mesh.vertices, os.path.basename(cfg.input[0]), timings, enc.bpv(),
                      enc.submeshes)
        metrics.write_reports_csv([rep], cfg.metrics)
    return EXIT_OK


def _denoise_one(mesh, cfg):
    if cfg.mode == "fine":
        return denoise.fine_denoise(mesh, cfg.bilateral())
    check_k(cfg.k, mesh.n_vertices)
    coarse = denoise.coarse_denoise(mesh, cfg.spectral_config())
    if cfg.mode == "coarse":
        return coarse
    return denoise.fine_denoise(coarse, cfg.bilateral())


def cmd_denoise(cfg):
    mesh = load_mesh(cfg.input[0])
    if cfg.mode not in ("coarse", "fine", "coarse-fine"):
        raise ValidationError("mode must be coarse, fine or coarse-fine")
    t0 = time.perf_counter()
    out = _denoise_one(mesh, cfg)
    elapsed = time.perf_counter() - t0
    _atomic_save_mesh(out, cfg.output)
    write_echo(cfg, cfg.output + ".config.txt")
    if cfg.metrics and cfg.reference:
        ref = load_mesh(cfg.reference[0])
        metrics.write_reports_csv(
            [_report(ref, out.vertices, cfg.mode, {"total": elapsed})], cfg.metrics)
    return EXIT_OK


def _expand(patterns):
    out = []
    for p in patterns:
        hits = sorted(glob.glob(p))
        out.extend(hits if hits else [p])
    return out


def cmd_denoise_dynamic(cfg):
    paths = _expand(cfg.input)
    frames = [load_mesh(p) for p in paths]
    check_k(cfg.k, frames[0].n_vertices)
    if cfg.mode not in ("coarse", "coarse-fine"):
        raise ValidationError("denoise-dynamic mode must be coarse or coarse-fine")
    params = cfg.bilateral() if cfg.mode == "coarse-fine" else None
    outs = denoise.denoise_dynamic(frames, cfg.spectral_config(), cfg.threads, params)
    os.makedirs(cfg.output, exist_ok=True)
    for p, m in zip(paths, outs):
        _atomic_save_mesh(m, os.path.join(cfg.output, os.path.basename(p)))
    write_echo(cfg, os.path.join(cfg.output, "config.txt"))
    if cfg.metrics and cfg.reference:
        refs = [load_mesh(p) for p in _expand(cfg.reference)]
        if len(refs) != len(outs):
            raise ValidationError("need one reference per frame")
        reps = [_report(r, o.vertices, os.path.basename(p))
                for p, r, o in zip(paths, refs, outs)]
        metrics.write_reports_csv(reps, cfg.metrics)
    return EXIT_OK


BENCH_COLUMNS = ["model", "k", "growth", "n_d", "c_fraction", "c", "mode", "z", "t_max",
                 "nmsve", "theta", "mnd", "bpv", "time_laplacian", "time_basis", "speedup"]


def bench_rows(mesh, cfg, label="model"):
    """Run the sweep; returns a list of dicts keyed by :data:`BENCH_COLUMNS`.

    The quality columns compare the unquantized block low-pass against the
    input; ``bpv`` is what the codec would spend at ``q_c``.  ``speedup`` is
    the dense-basis time of the same (k, growth, c) cell divided by the row's
    basis time.
    """
    rows = []
    ks = cfg.k_values or [cfg.k]
    growths = cfg.growths or [cfg.growth]
    ref_normals = face_normals(mesh)
    signal = mesh if cfg.noise == 0 else add_gaussian_noise(mesh, cfg.noise, cfg.seed)
    for k in ks:
        check_k(k, mesh.n_vertices)
        for g in growths:
            base = cfg.spectral_config(k=k, growth=g)
            blocks = pipeline.prepare_blocks(signal, base)
            for frac in cfg.c_fractions:
                c = base.with_(c=None, c_fraction=frac).subspace_size(blocks.n_d)
                cells = [("svd", None, None)] + [
                    (m, z, t) for m in cfg.modes if m != "svd"
                    for z in cfg.z_values for t in cfg.t_max_values]
                svd_time = None
                for mode, z, t in cells:
                    conf = base.with_(c=c, basis_mode=mode, z=z or base.z,
                                      t_max=base.t_max if t is None else t)
                    tr = pipeline.track_bases(blocks.submeshes, blocks.order, conf,
                                              signal.vertices, signal.vertices)
                    res = pipeline.spectral_filter(signal, conf, blocks, tr)
                    if mode == "svd":
                        svd_time = tr.timings["basis"]
                    sizes = tr.subspace_sizes
                    nrm = face_normals(mesh, res.vertices)
                    rows.append(dict(
                        model=label, k=k, growth=g, n_d=blocks.n_d, c_fraction=frac,
                        c=float(sizes.mean()), mode=mode, z="" if z is None else z,
                        t_max="" if t is None else t,
                        nmsve=metrics.nmsve(mesh, res.vertices),
                        theta=metrics.mean_angle_theta(ref_normals, nrm),
                        mnd=metrics.mnd(ref_normals, nrm),
                        bpv=3.0 * cfg.q_c * float(sizes.sum()) / mesh.n_vertices,
                        time_laplacian=tr.timings["laplacian"], time_basis=tr.timings["basis"],
                        speedup=svd_time / max(tr.timings["basis"], 1e-12)))
    return rows


def cmd_bench(cfg):
    empty = not cfg.c_fractions or not cfg.z_values or not cfg.t_max_values or not cfg.modes
    rows = []
    if not empty:
        mesh = load_model(cfg.input[0], cfg.seed)
        rows = bench_rows(mesh, cfg, label=os.path.basename(cfg.input[0]))
    with open(cfg.output, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    write_echo(cfg, cfg.output + ".config.txt")
    return EXIT_OK


def coherence_images(mesh, cfg):
    """Operator images of up to ``cfg.samples`` submeshes spread over the processing order."""
    conf = cfg.spectral_config()
    blocks = pipeline.prepare_blocks(mesh, conf)
    if blocks.n_d < cfg.size:
        raise ValidationError(f"n_d={blocks.n_d} is smaller than the image size {cfg.size}")
    picks = np.unique(np.linspace(0, len(blocks.order) - 1, cfg.samples).round().astype(int))
    images = []
    for i in picks:
        sub = blocks.submeshes[blocks.order[i]]
        lap = spectral.build_laplacian(sub, mesh.vertices, conf.weighting)
        images.append(metrics.operator_image(lap, cfg.size, conf.delta_rel))
    return images


def cmd_coherence(cfg):
    models = {}
    for source in cfg.input:
        mesh = load_model(source, cfg.seed)
        check_k(cfg.k, mesh.n_vertices)
        models[os.path.basename(source)] = coherence_images(mesh, cfg)
    names, table = metrics.coherence_matrix(models)
    with open(cfg.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["probe"] + names)
        for name, row in zip(names, table):
            w.writerow([name] + [repr(float(x)) for x in row])
    write_echo(cfg, cfg.output + ".config.txt")
    return EXIT_OK


COMMANDS = {
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "denoise": cmd_denoise,
    "denoise-dynamic": cmd_denoise_dynamic,
    "bench": cmd_bench,
    "coherence": cmd_coherence,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        validate(cfg)
    except (ValidationError, OSError) as exc:
        print(f"gspmesh: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[cfg.command](cfg)
    except ValidationError as exc:
        print(f"gspmesh: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - the CLI maps every failure to an exit code
        print(f"gspmesh: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
