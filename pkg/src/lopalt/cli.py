"""Command-line experiment harness.

Subcommands
-----------
synth      write the Cantor test signal to CSV
denoise    denoise a 1-D signal (single lambda/alpha) over seeded noise trials
sweep      full-factorial lambda x alpha grid over noise levels and trials
denoise2d  denoise a grayscale PGM image with the 2-D gradient transform
eval       SNR of an estimate against a reference (CSV or PGM)

Every flag can also come from ``--config FILE`` (``key = value`` lines, or the
``[config]`` block of an earlier report); flags given on the command line win.
Reports are flat ``key = value`` text. Everything above the trailing ``[run]``
section is reproducible from the embedded config; ``[run]`` holds wall times
and output locations.
"""

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import fileio, signals, solver
from .exceptions import DivergenceError, FormatError, ParameterError
from .linops import Diff2D, make_diff_1d

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3
WORKERS_ENV = "LOPALT_MAX_WORKERS"
RUN_SECTION = fileio.RUN_SECTION

COMMANDS = ("synth", "denoise", "sweep", "denoise2d", "eval")
METHODS = ("proposed", "tv")


class UsageError(Exception):
    pass


# -- configuration -----------------------------------------------------------

def _floats(text) -> List[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    if not items:
        raise UsageError(f"empty list {text!r}")
    try:
        return [float(t) for t in items]
    except ValueError:
        raise UsageError(f"not a number list: {text!r}") from None


def _noise_levels(text) -> Optional[List[float]]:
    return None if str(text).strip().lower() == "none" else _floats(text)


def _optional_float(text) -> Optional[float]:
    return None if text is None or str(text).strip().lower() in ("", "none") else float(text)


def _crop(text) -> Optional[Tuple[int, int, int, int]]:
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    parts = [int(t) for t in str(text).split(",")]
    if len(parts) != 4 or min(parts) < 0 or parts[2] < 2 or parts[3] < 2:
        raise UsageError(f"crop must be row,col,height,width with height, width >= 2, got {text!r}")
    return tuple(parts)


@dataclass
class ExperimentConfig:
    """Resolved settings of one run; every field is echoed in the report."""

    command: str
    input: Optional[str] = None
    reference: Optional[str] = None
    estimate: Optional[str] = None
    n: int = 1000
    depth: int = 12
    loss: str = "quadratic"
    lam: List[float] = field(default_factory=lambda: [1.0])
    lam_scale: str = "absolute"
    alpha: List[float] = field(default_factory=lambda: [math.inf])
    noise: str = "gaussian"
    noise_snr_db: Optional[List[float]] = field(default_factory=lambda: [10.0])
    sp_fraction: float = 0.1
    trials: int = 1
    seed: int = 0
    method: str = "both"
    tv_solver: str = "exact"
    tau1: Optional[float] = None
    tau2: Optional[float] = None
    balance: Optional[float] = None
    max_iter: int = 10000
    tol: float = 1e-6
    crop: Optional[Tuple[int, int, int, int]] = None

    # not echoed in the reproducible body
    output: Optional[str] = None
    estimate_output: Optional[str] = None
    workers: int = 1

    RUN_ONLY = ("output", "estimate_output", "workers")

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.loss not in ("quadratic", "absolute"):
            raise UsageError(f"loss must be quadratic or absolute, got {self.loss!r}")
        if self.lam_scale not in ("absolute", "noise"):
            raise UsageError(f"lam_scale must be absolute or noise, got {self.lam_scale!r}")
        if self.noise not in ("gaussian", "salt_pepper"):
            raise UsageError(f"noise must be gaussian or salt_pepper, got {self.noise!r}")
        if self.method not in ("both",) + METHODS:
            raise UsageError(f"method must be both, proposed or tv, got {self.method!r}")
        if self.tv_solver not in ("exact", "iterative"):
            raise UsageError(f"tv_solver must be exact or iterative, got {self.tv_solver!r}")
        if self.trials < 1:
            raise UsageError("trials must be >= 1")
        if not self.lam or not self.alpha:
            raise UsageError("lambda and alpha grids must be non-empty")
        if any(v < 0 for v in self.lam) or any(v < 0 for v in self.alpha):
            raise UsageError("lambda and alpha must be nonnegative")
        if self.noise_snr_db is not None and not self.noise_snr_db:
            raise UsageError("noise level list must be non-empty")
        if (self.tau1 is None) != (self.tau2 is None):
            raise UsageError("tau1 and tau2 must be given together")
        if self.balance is None:
            # primal/dual balance that worked across the Cantor and image grids
            self.balance = 0.3 if self.command == "denoise2d" else 0.03
        if not self.balance > 0 or self.max_iter < 1 or not self.tol > 0:
            raise UsageError("balance and tol must be positive, max_iter >= 1")
        if self.lam_scale == "noise" and (self.noise_snr_db is None or self.noise != "gaussian"):
            raise UsageError("lam_scale = noise needs Gaussian noise at a given SNR")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")

    @property
    def methods(self) -> Tuple[str, ...]:
        return METHODS if self.method == "both" else (self.method,)

    def echo(self) -> List[Tuple[str, str]]:
        out = []
        for f in fields(self):
            if f.name in self.RUN_ONLY:
                continue
            out.append((f.name, _render_value(getattr(self, f.name))))
        return out


def _render_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(_render_value(v) for v in value)
    if isinstance(value, float):
        return fileio.format_float(value)
    return str(value)


_CONVERTERS = {
    "n": int, "depth": int, "trials": int, "seed": int, "max_iter": int, "workers": int,
    "lam": _floats, "alpha": _floats, "noise_snr_db": _noise_levels,
    "sp_fraction": float, "tol": float, "tau1": _optional_float, "tau2": _optional_float,
    "balance": _optional_float, "crop": _crop,
}
_PATHS = ("input", "reference", "estimate", "output", "estimate_output")


def resolve_config(command: str, file_values: Dict[str, str], flag_values: Dict[str, object]):
    """Merge defaults, config-file values and command-line flags (in that order)."""
    known = {f.name for f in fields(ExperimentConfig)}
    merged: Dict[str, object] = {}
    for source in (file_values, flag_values):
        for key, value in source.items():
            if value is None:
                continue
            if key not in known:
                raise UsageError(f"unknown setting {key!r}")
            merged[key] = value
    file_command = merged.pop("command", command)
    if file_command != command:
        raise UsageError(f"config is for {file_command!r}, not {command!r}")
    kwargs = {}
    for key, value in merged.items():
        conv = _CONVERTERS.get(key)
        if key in _PATHS:
            kwargs[key] = None if str(value).lower() == "none" else str(value)
        elif conv is None:
            kwargs[key] = str(value)
        else:
            try:
                kwargs[key] = conv(value) if isinstance(value, str) else value
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for {key}: {value!r} ({exc})") from None
    return ExperimentConfig(command=command, **kwargs)


def _worker_count(config: ExperimentConfig) -> int:
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        try:
            return max(1, min(config.workers, int(cap)))
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {cap!r}") from None
    return config.workers


# -- solving -----------------------------------------------------------------

@dataclass
class ResultRecord:
    """All trials of one method at one (noise level, lambda, alpha) cell."""

    method: str
    noise_snr_db: Optional[float]
    lam: float
    lam_value: float
    alpha: float
    snr_db: List[float]
    input_snr_db: List[float]
    iterations: List[int]
    converged: List[bool]
    errors: List[str]
    wall_time: float

    @property
    def failed(self) -> bool:
        return any(self.errors)

    @property
    def mean_snr_db(self) -> float:
        if self.failed or not self.snr_db:
            return math.nan
        return float(np.mean(self.snr_db))

    def items(self) -> List[Tuple[str, str]]:
        f = fileio.format_float
        out = [
            ("method", self.method),
            ("noise_snr_db", _render_value(self.noise_snr_db)),
            ("lam", f(self.lam)),
            ("lam_value", f(self.lam_value)),
            ("alpha", f(self.alpha)),
            ("trials", str(len(self.iterations))),
        ]
        if self.snr_db:
            out += [
                ("input_snr_db", ",".join(f(v) for v in self.input_snr_db)),
                ("snr_db", ",".join(f(v) for v in self.snr_db)),
                ("mean_snr_db", f(self.mean_snr_db)),
            ]
        out += [
            ("iterations", ",".join(str(i) for i in self.iterations)),
            ("converged", f"{sum(self.converged)}/{len(self.converged)}"),
            ("status", "failed: " + "; ".join(e for e in self.errors if e) if self.failed else "ok"),
        ]
        return out


def _step_params(problem, config: ExperimentConfig):
    if config.tau1 is not None:
        norms = [op.exact_norm() or solver.estimate_operator_norm(op, seed=config.seed).value
                 for op in (problem.L, problem.R, problem.D_sigma)]
        return solver.derive_step_params(*norms, config.tau1, config.tau2,
                                         max_iter=config.max_iter, tol=config.tol,
                                         seed=config.seed)
    return solver.default_params(problem, max_iter=config.max_iter, tol=config.tol,
                                 seed=config.seed, balance=config.balance)


def run_method(method, y, lam, alpha, config: ExperimentConfig, shape=None):
    """Solve one instance; returns ``(x_hat, iterations, converged)``.

    ``shape`` selects the 2-D gradient transform for images.
    """
    R = Diff2D(*shape) if shape is not None else make_diff_1d(y.size)
    if method == "tv":
        if shape is None and config.tv_solver == "exact" and config.loss == "quadratic":
            return solver.taut_string_tv_1d(y, lam), 0, True
        alpha = math.inf
    problem = solver.denoising_problem(y, lam, alpha, R=R, loss=config.loss)
    params = _step_params(problem, config)
    report = solver.solve(problem, params, check=config.tau1 is not None)
    return report.x_hat, report.iterations, report.converged


def _observe(x, level, trial, config: ExperimentConfig):
    seed = config.seed + trial
    if config.noise == "salt_pepper":
        return signals.salt_and_pepper(x, config.sp_fraction, seed)
    return signals.add_awgn(x, level, seed)


def _noise_std(x, level) -> float:
    return float(np.linalg.norm(x) / math.sqrt(x.size) * 10.0 ** (-level / 20.0))


def _unit(args):
    # one solve; module-level so process pools can pickle it
    method, x, level, trial, lam_value, alpha, config, shape = args
    y = _observe(x, level, trial, config)
    t0 = time.perf_counter()
    try:
        x_hat, its, conv = run_method(method, y, lam_value, alpha, config, shape)
        err = ""
        score = signals.snr(x, x_hat)
    except DivergenceError as exc:
        x_hat, its, conv, err, score = None, exc.iteration, False, str(exc), math.nan
    return dict(snr=min(score, signals.SNR_CAP_DB), input_snr=signals.snr(x, y), iterations=its,
                converged=conv, error=err, time=time.perf_counter() - t0, x_hat=x_hat)


def _cells(config: ExperimentConfig, levels):
    for level in levels:
        for method in config.methods:
            alphas = [math.inf] if method == "tv" else sorted(config.alpha)
            for lam in sorted(config.lam):
                for alpha in alphas:
                    yield level, method, lam, alpha


def run_grid(x, config: ExperimentConfig, shape=None, keep_estimates=False):
    """Every (noise level, method, lambda, alpha, trial) unit, in report order."""
    levels = config.noise_snr_db if config.noise == "gaussian" else [None]
    cells = list(_cells(config, levels))
    units = []
    for level, method, lam, alpha in cells:
        scale = _noise_std(x, level) if config.lam_scale == "noise" else 1.0
        for trial in range(config.trials):
            units.append((method, x, level, trial, lam * scale, alpha, config, shape))
    workers = _worker_count(config)
    if workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_unit, units))
    else:
        results = [_unit(u) for u in units]

    records, estimates = [], []
    for k, (level, method, lam, alpha) in enumerate(cells):
        chunk = results[k * config.trials:(k + 1) * config.trials]
        lam_value = units[k * config.trials][4]
        records.append(ResultRecord(
            method=method, noise_snr_db=level, lam=lam, lam_value=lam_value, alpha=alpha,
            snr_db=[r["snr"] for r in chunk], input_snr_db=[r["input_snr"] for r in chunk],
            iterations=[r["iterations"] for r in chunk],
            converged=[r["converged"] for r in chunk], errors=[r["error"] for r in chunk],
            wall_time=sum(r["time"] for r in chunk)))
        if keep_estimates:
            estimates.append(chunk[0]["x_hat"])
    return records, estimates


def best_records(records: Sequence[ResultRecord]) -> List[ResultRecord]:
    """Highest mean SNR per (noise level, method); ties go to smaller lambda, then alpha."""
    groups: Dict[tuple, List[ResultRecord]] = {}
    for rec in records:
        groups.setdefault((rec.noise_snr_db, rec.method), []).append(rec)
    out = []
    for recs in groups.values():
        ok = [r for r in recs if not r.failed]
        if ok:
            out.append(min(ok, key=lambda r: (-r.mean_snr_db, r.lam, r.alpha)))
    return out


# -- reports -----------------------------------------------------------------

def build_report(config: ExperimentConfig, body: Sequence[fileio.Section],
                 run: Sequence[Tuple[str, str]]) -> str:
    sections = [("config", config.echo())] + list(body) + [(RUN_SECTION, list(run))]
    return fileio.render_report(sections)


def _write_text(path, text):
    if path is None:
        sys.stdout.write(text)
        return
    fileio.ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _run_items(config, records=(), started=None):
    items = [("output", _render_value(config.output)),
             ("estimate_output", _render_value(config.estimate_output)),
             ("workers", str(_worker_count(config)))]
    for k, rec in enumerate(records):
        items.append((f"record_{k}_wall_time_s", f"{rec.wall_time:.3f}"))
    if started is not None:
        items.append(("total_wall_time_s", f"{time.perf_counter() - started:.3f}"))
    return items


def _load_signal(config: ExperimentConfig) -> np.ndarray:
    if config.input is None:
        return signals.cantor_signal(config.n, config.depth)
    return fileio.read_csv(config.input)


def cmd_synth(config: ExperimentConfig) -> int:
    if config.output is None:
        raise UsageError("synth needs --output")
    x = signals.cantor_signal(config.n, config.depth)
    fileio.ensure_parent(config.output)
    fileio.write_csv(config.output, x)
    return EXIT_OK


def _grid_report(config, records, started, extra=()):
    body = [("record", rec.items()) for rec in records]
    body += [("best", rec.items()) for rec in best_records(records)]
    body += list(extra)
    _write_text(config.output, build_report(config, body, _run_items(config, records, started)))
    return EXIT_SOLVER if any(r.failed for r in records) else EXIT_OK


def cmd_sweep(config: ExperimentConfig) -> int:
    started = time.perf_counter()
    x = _load_signal(config)
    records, _ = run_grid(x, config)
    return _grid_report(config, records, started)


def _observation_only(config, y, shape=None):
    """Denoise data that has no clean reference (``noise_snr_db = none``)."""
    started = time.perf_counter()
    records, estimates = [], []
    lam, alpha = config.lam[0], config.alpha[0]
    for method in config.methods:
        t0 = time.perf_counter()
        try:
            x_hat, its, conv = run_method(method, y, lam, alpha, config, shape)
            err = ""
        except DivergenceError as exc:
            x_hat, its, conv, err = None, exc.iteration, False, str(exc)
        records.append(ResultRecord(method, None, lam, lam, math.inf if method == "tv" else alpha,
                                    [], [], [its], [conv], [err], time.perf_counter() - t0))
        estimates.append(x_hat)
    _write_estimates(config, records, estimates, y, shape)
    body = [("record", rec.items()) for rec in records]
    _write_text(config.output, build_report(config, body, _run_items(config, records, started)))
    return EXIT_SOLVER if any(r.failed for r in records) else EXIT_OK


def _write_estimates(config, records, estimates, observed, shape):
    if config.estimate_output is None:
        return
    fileio.ensure_parent(config.estimate_output)
    if shape is None:
        for rec, est in zip(records, estimates):
            if est is not None:
                fileio.write_csv(f"{config.estimate_output}_{rec.method}.csv", est)
        return
    fileio.write_pgm(f"{config.estimate_output}_noisy.pgm",
                     fileio.unit_to_image(observed.reshape(shape)))
    for rec, est in zip(records, estimates):
        if est is not None:
            fileio.write_pgm(f"{config.estimate_output}_{rec.method}.pgm",
                             fileio.unit_to_image(est.reshape(shape)))


def _require_single(config):
    if len(config.lam) != 1 or len(config.alpha) != 1:
        raise UsageError(f"{config.command} takes a single lambda and alpha; use sweep for grids")


def cmd_denoise(config: ExperimentConfig) -> int:
    _require_single(config)
    if config.noise_snr_db is None:
        if config.input is None:
            raise UsageError("noise_snr_db = none needs --input with the observed signal")
        return _observation_only(config, fileio.read_csv(config.input))
    started = time.perf_counter()
    x = _load_signal(config)
    records, estimates = run_grid(x, config, keep_estimates=True)
    if len(config.noise_snr_db) == 1:
        y0 = _observe(x, config.noise_snr_db[0], 0, config)
        _write_estimates(config, records, estimates, y0, None)
    return _grid_report(config, records, started)


def _load_image(config):
    if config.input is None:
        raise UsageError("denoise2d needs --input (PGM image)")
    pixels, maxval = fileio.read_pgm(config.input)
    img = fileio.image_to_unit(pixels, maxval)
    if config.crop is not None:
        r, c, h, w = config.crop
        if r + h > img.shape[0] or c + w > img.shape[1]:
            raise UsageError(f"crop {config.crop} exceeds image size {img.shape}")
        img = img[r:r + h, c:c + w]
    if min(img.shape) < 2:
        raise UsageError(f"image must be at least 2x2, got {img.shape}")
    return img


def cmd_denoise2d(config: ExperimentConfig) -> int:
    _require_single(config)
    img = _load_image(config)
    shape = img.shape
    if config.noise_snr_db is None:
        return _observation_only(config, img.ravel(), shape)
    if config.noise == "gaussian" and len(config.noise_snr_db) != 1:
        raise UsageError("denoise2d takes a single noise level")
    started = time.perf_counter()
    x = img.ravel()
    records, estimates = run_grid(x, config, shape=shape, keep_estimates=True)
    level = config.noise_snr_db[0] if config.noise == "gaussian" else None
    _write_estimates(config, records, estimates, _observe(x, level, 0, config), shape)
    return _grid_report(config, records, started)


def _load_any(path):
    if path is None:
        raise UsageError("eval needs --reference and --estimate")
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P2", b"P5"):
        pixels, maxval = fileio.read_pgm(path)
        return fileio.image_to_unit(pixels, maxval).ravel()
    return fileio.read_csv(path)


def cmd_eval(config: ExperimentConfig) -> int:
    ref, est = _load_any(config.reference), _load_any(config.estimate)
    if ref.shape != est.shape:
        raise UsageError(f"reference has {ref.size} samples, estimate {est.size}")
    value = min(signals.snr(ref, est), signals.SNR_CAP_DB)
    body = [("eval", [("samples", str(ref.size)), ("snr_db", fileio.format_float(value))])]
    _write_text(config.output, build_report(config, body, _run_items(config)))
    return EXIT_OK


HANDLERS = {"synth": cmd_synth, "denoise": cmd_denoise, "sweep": cmd_sweep,
            "denoise2d": cmd_denoise2d, "eval": cmd_eval}


# -- argument parsing --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--config", help="key = value file (or an earlier report)")
    p.add_argument("--output", "-o", help="report (or CSV for synth) path; stdout if omitted")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help=f"parallel solves (capped by ${WORKERS_ENV})")


def _add_solver(p):
    p.add_argument("--loss", choices=("quadratic", "absolute"))
    p.add_argument("--lam", help="lambda value(s), comma separated")
    p.add_argument("--lam-scale", choices=("absolute", "noise"),
                   help="'noise' multiplies lambda by the noise standard deviation")
    p.add_argument("--alpha", help="alpha value(s), comma separated; 'inf' allowed")
    p.add_argument("--noise", choices=("gaussian", "salt_pepper"))
    p.add_argument("--noise-snr-db", help="input SNR level(s); 'none' treats input as observed")
    p.add_argument("--sp-fraction", type=float, help="corrupted fraction for salt_pepper")
    p.add_argument("--trials", type=int)
    p.add_argument("--method", choices=("both",) + METHODS)
    p.add_argument("--tv-solver", choices=("exact", "iterative"))
    p.add_argument("--tau1", type=float)
    p.add_argument("--tau2", type=float)
    p.add_argument("--balance", type=float, help="tau1/tau2 ratio of the default steps")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--estimate-output", help="prefix for estimate files")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lopalt", description="Block-sparse denoising experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write the Cantor signal as CSV")
    _add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--depth", type=int)

    for name, text in (("denoise", "denoise a 1-D signal"), ("sweep", "grid sweep")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        _add_solver(p)
        p.add_argument("--input", help="clean reference CSV (Cantor signal if omitted)")
        p.add_argument("--n", type=int)
        p.add_argument("--depth", type=int)

    p = sub.add_parser("denoise2d", help="denoise a PGM image")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--input", help="grayscale PGM image")
    p.add_argument("--crop", help="row,col,height,width")

    p = sub.add_parser("eval", help="SNR of an estimate against a reference")
    _add_common(p)
    p.add_argument("--reference")
    p.add_argument("--estimate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    try:
        file_values = fileio.read_config_file(config_path) if config_path else {}
    except FormatError as exc:
        print(f"lopalt: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        config = resolve_config(command, file_values, args)
        return HANDLERS[command](config)
    except (UsageError, ParameterError) as exc:
        print(f"lopalt: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"lopalt: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"lopalt: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
