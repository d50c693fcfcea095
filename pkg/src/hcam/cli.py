"""Command-line harness: ``hcam gen|fit|eval|table|hmec``.

Experiments are described by an INI file with an ``[experiment]`` section
and optional ``[discovery]`` and ``[basis]`` overrides. ``--show-config``
prints every effective setting. Outputs land in
``<out>/<config hash>/seed_<s>/``; existing files are only replaced with
``--force``.

Exit codes: 0 success, 2 invalid input or configuration, 1 other failures.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import logging
import re
import sys
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._utils import config_hash
from .dgp import Dataset, dataset_meta, generate, sample_sem
from .discovery import DiscoveryConfig, DiscoveryResult, run_cam, run_hcam, run_zero
from .equivalence import FAMILIES, enumerate_hmec, hmec_report
from .exceptions import HcamError, InvalidConfig, ParseError
from .gam import BasisSpec
from .graphs import read_hdag, reduced_dag, write_hdag
from .metrics import DEFAULT_TRUNCATION, REPORT_COLUMNS, MetricsReport, evaluate

log = logging.getLogger("hcam")

METHODS = {"hcam": run_hcam, "cam": run_cam, "zero": run_zero}
# methods whose output is a plain DAG, scored under the all-subsets reading
DAG_METHODS = frozenset({"cam", "zero"})


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 8
    n: int = 2000
    avg_parents: float = 2.0
    order: int = 2
    smooth: bool = False
    seeds: tuple[int, ...] = (0,)
    methods: tuple[str, ...] = ("hcam", "cam", "zero")
    truncation: int = DEFAULT_TRUNCATION
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)

    def __post_init__(self):
        if self.d < 2:
            raise InvalidConfig("d must be at least 2")
        if self.n < 10 * self.d:
            raise InvalidConfig(f"n={self.n} is below 10*d={10 * self.d}")
        if self.order not in (1, 2, 3):
            raise InvalidConfig("order must be 1, 2 or 3")
        if not self.seeds:
            raise InvalidConfig("seeds must be nonempty")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise InvalidConfig(f"unknown methods {sorted(bad)}; choose from {sorted(METHODS)}")
        if self.truncation < 2:
            raise InvalidConfig("truncation must be at least 2")
        if not 0 < self.avg_parents <= (self.d - 1) / 2:
            raise InvalidConfig(f"avg_parents must lie in (0, {(self.d - 1) / 2}] for d={self.d}")

    def generator_dict(self) -> dict:
        return {"d": self.d, "n": self.n, "avg_parents": self.avg_parents, "order": self.order,
                "smooth": self.smooth}

    def hash(self) -> str:
        blob = self.generator_dict()
        # the per-seed directory already records the seed
        blob["discovery"] = {k: v for k, v in self.discovery.to_dict().items() if k != "seed"}
        blob["truncation"] = self.truncation
        return config_hash(blob)

    def dataset_id(self) -> str:
        return f"ER{self.avg_parents:g}-{self.order}D-{self.hash()}"


# ---------------------------------------------------------------- config I/O


def _convert(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidConfig(f"not a boolean: {raw!r}")
    try:
        if default is None:
            return None if raw.lower() == "none" else int(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    return raw


def _section(parser, name, cls, skip=()):
    if not parser.has_section(name):
        return {}
    known = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    out = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise InvalidConfig(f"unknown key [{name}] {key}")
        f = known[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        out[key] = _convert(raw, default)
    return out


def _int_list(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in re.split(r"[,\s]+", raw.strip()) if s)
    except ValueError as exc:
        raise InvalidConfig(f"bad integer list {raw!r}") from exc


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).exists():
            raise InvalidConfig(f"config file {path} not found")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise InvalidConfig(str(exc)) from exc
    unknown = set(parser.sections()) - {"experiment", "discovery", "basis"}
    if unknown:
        raise InvalidConfig(f"unknown sections {sorted(unknown)}")
    exp = {}
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            if key == "seeds":
                exp[key] = _int_list(raw)
            elif key == "methods":
                exp[key] = tuple(s for s in re.split(r"[,\s]+", raw.strip()) if s)
            elif key in ("d", "n", "order", "truncation"):
                exp[key] = _convert(raw, 0)
            elif key == "avg_parents":
                exp[key] = _convert(raw, 0.0)
            elif key == "smooth":
                exp[key] = _convert(raw, False)
            else:
                raise InvalidConfig(f"unknown key [experiment] {key}")
    basis = BasisSpec(**_section(parser, "basis", BasisSpec))
    disc = _section(parser, "discovery", DiscoveryConfig, skip=("basis", "seed"))
    exp.update(overrides or {})
    return ExperimentConfig(discovery=DiscoveryConfig(basis=basis, **disc), **exp)


def format_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "d": str(cfg.d), "n": str(cfg.n), "avg_parents": repr(cfg.avg_parents), "order": str(cfg.order),
        "smooth": str(cfg.smooth).lower(), "seeds": ",".join(map(str, cfg.seeds)),
        "methods": ",".join(cfg.methods), "truncation": str(cfg.truncation),
    }
    disc = cfg.discovery.to_dict()
    parser["basis"] = {k: str(v) for k, v in disc.pop("basis").items()}
    parser["discovery"] = {k: str(v) for k, v in disc.items() if k != "seed"}
    buf = io.StringIO()
    parser.write(buf)
    return f"# config hash {cfg.hash()}\n" + buf.getvalue()


# ---------------------------------------------------------------- paths


def seed_dir(out, cfg: ExperimentConfig, seed: int) -> Path:
    return Path(out) / cfg.hash() / f"seed_{seed}"


def _guard(paths, force: bool):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise FileExistsError(f"refusing to overwrite {existing[0]} (use --force)")


def _write_text(path: Path, text: str):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------- commands


def cmd_gen(cfg: ExperimentConfig, out, force=False) -> list[Path]:
    """Dataset CSV, metadata sidecar and true HDag per seed."""
    written = []
    for seed in cfg.seeds:
        sd = seed_dir(out, cfg, seed)
        files = [sd / "data.csv", sd / "data.json", sd / "truth.hdag"]
        _guard(files, force)
        sd.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(seed)
        model = sample_sem(cfg.d, cfg.avg_parents, cfg.order, rng, smooth=cfg.smooth)
        meta = dataset_meta(cfg.generator_dict(), seed)
        meta["dataset_id"] = cfg.dataset_id()
        data = generate(model, cfg.n, rng, meta)
        data.to_csv(files[0], files[1])
        write_hdag(files[2], model.hdag)
        written.extend(files)
    cfg_path = Path(out) / cfg.hash() / "config.ini"
    _write_text(cfg_path, format_config(cfg))
    return written


def fit_dataset(data: Dataset, method: str, dcfg: DiscoveryConfig, dest: Path, force=False) -> DiscoveryResult:
    files = [dest / f"{method}.hdag", dest / f"{method}.trace", dest / f"{method}.models.json"]
    _guard(files, force)
    dest.mkdir(parents=True, exist_ok=True)
    result = METHODS[method](data.values, dcfg)
    write_hdag(files[0], result.hdag)
    _write_text(files[1], result.trace_text())
    _write_text(files[2], json.dumps(result.models_blob(), indent=1, sort_keys=True) + "\n")
    return result


def cmd_fit(cfg: ExperimentConfig, out, force=False, data_path=None, jobs: int = 1) -> list[Path]:
    """Discovered graph, trace log and model blob per (seed, method)."""
    if data_path is not None:
        data = Dataset.from_csv(data_path)
        for m in cfg.methods:
            fit_dataset(data, m, cfg.discovery, Path(out), force)
        return [Path(out)]

    def one(seed):
        sd = seed_dir(out, cfg, seed)
        if not (sd / "data.csv").exists():
            raise FileNotFoundError(f"{sd / 'data.csv'} missing; run gen first")
        data = Dataset.from_csv(sd / "data.csv")
        dcfg = dataclasses.replace(cfg.discovery, seed=seed)
        for m in cfg.methods:
            log.info("fit seed=%s method=%s", seed, m)
            fit_dataset(data, m, dcfg, sd, force)
        return sd

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(one, cfg.seeds))


def eval_files(truth_path, estimate_path, method="", dataset_id="", seed=0, as_dag=None,
               truncation=DEFAULT_TRUNCATION, cfg_hash="") -> MetricsReport:
    truth = read_hdag(truth_path)
    est = read_hdag(estimate_path)
    if as_dag if as_dag is not None else method in DAG_METHODS:
        est = reduced_dag(est)
    return evaluate(truth, est, dataset_id, method, seed, truncation, cfg_hash)


def cmd_eval(cfg: ExperimentConfig, out, force=False) -> list[MetricsReport]:
    rows = []
    for seed in cfg.seeds:
        sd = seed_dir(out, cfg, seed)
        path = sd / "metrics.csv"
        _guard([path], force)
        seed_rows = [
            eval_files(sd / "truth.hdag", sd / f"{m}.hdag", m, cfg.dataset_id(), seed,
                       truncation=cfg.truncation, cfg_hash=cfg.hash())
            for m in cfg.methods
        ]
        _write_text(path, ",".join(REPORT_COLUMNS) + "\n" + "".join(r.csv_row() for r in seed_rows))
        rows.extend(seed_rows)
    return rows


def read_metrics(root) -> list[MetricsReport]:
    rows = []
    for path in sorted(Path(root).rglob("metrics.csv")):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not set(REPORT_COLUMNS) <= set(reader.fieldnames):
                raise ParseError(f"{path}: expected columns {REPORT_COLUMNS}")
            try:
                rows.extend(MetricsReport.from_row(r) for r in reader)
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}: {exc}") from exc
    return rows


def _order_of(dataset_id: str) -> str:
    m = re.search(r"-(\d+)D-", dataset_id)
    return m.group(1) if m else "?"


def _cell(values, lower_bound=False) -> str:
    a = np.asarray(values, dtype=float)
    cell = f"{a.mean():.2f}±{a.std():.2f}"
    return (">" if lower_bound else "") + cell


def cmd_table(rows: list[MetricsReport]) -> str:
    """``mean±std`` per (order, method); lower-bound HO-SHD cells get ``>``."""
    groups = defaultdict(list)
    for r in rows:
        groups[(_order_of(r.dataset_id), r.method)].append(r)
    method_rank = {m: i for i, m in enumerate(METHODS)}
    lines = ["order,method,n_seeds,shd,sid,hoshd"]
    for (order, method) in sorted(groups, key=lambda k: (k[0], method_rank.get(k[1], 99), k[1])):
        g = groups[(order, method)]
        lines.append(",".join([
            order, method, str(len(g)),
            _cell([r.shd for r in g]), _cell([r.sid for r in g]),
            _cell([r.hoshd for r in g], any(r.hoshd_lb for r in g)),
        ]))
    return "\n".join(lines) + "\n"


def cmd_hmec(d: int, max_order: int, family: str = "all") -> str:
    return hmec_report(enumerate_hmec(d, max_order, family))


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hcam", description="Hypergraph causal additive model toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI experiment file")
        sp.add_argument("--seed", type=int, help="run this seed only")
        sp.add_argument("--order", type=int, help="override the generator order")
        sp.add_argument("--method", help="comma-separated subset of hcam,cam,zero")
        sp.add_argument("--out", help="output root (required unless --show-config)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("--show-config", action="store_true", help="print effective settings and exit")

    common(sub.add_parser("gen", help="generate datasets and true graphs"))
    fit = sub.add_parser("fit", help="run discovery methods")
    common(fit)
    fit.add_argument("--data", help="fit this CSV instead of the config layout")
    fit.add_argument("--jobs", type=int, default=1, help="worker threads across seeds")

    ev = sub.add_parser("eval", help="score estimates against the truth")
    common(ev)
    ev.add_argument("--truth", help="true graph file")
    ev.add_argument("--estimate", help="estimated graph file")
    ev.add_argument("--as-dag", action="store_true", help="read the estimate as a plain DAG")
    ev.add_argument("--dataset-id", default="")

    tb = sub.add_parser("table", help="aggregate metrics.csv files")
    tb.add_argument("root", help="directory searched recursively for metrics.csv")

    hm = sub.add_parser("hmec", help="enumerate hyper-Markov equivalence classes")
    hm.add_argument("--d", type=int, required=True)
    hm.add_argument("--order", type=int, default=2, help="largest tail size")
    hm.add_argument("--family", choices=FAMILIES, default="all")
    hm.add_argument("--out", help="write the report here instead of stdout")
    return p


def _overrides(args) -> dict:
    ov = {}
    if getattr(args, "seed", None) is not None:
        ov["seeds"] = (args.seed,)
    if getattr(args, "order", None) is not None:
        ov["order"] = args.order
    if getattr(args, "method", None):
        ov["methods"] = tuple(m.strip() for m in args.method.split(",") if m.strip())
    return ov


def _dispatch(args) -> int:
    if args.verb == "hmec":
        text = cmd_hmec(args.d, args.order, args.family)
        if args.out:
            _write_text(Path(args.out), text)
        else:
            sys.stdout.write(text)
        return 0
    if args.verb == "table":
        rows = read_metrics(args.root)
        if not rows:
            raise InvalidConfig(f"no metrics.csv under {args.root}")
        sys.stdout.write(cmd_table(rows))
        return 0

    if args.verb == "eval" and args.truth:
        if not args.estimate:
            raise InvalidConfig("--estimate is required with --truth")
        method = args.method or ""
        row = eval_files(args.truth, args.estimate, method, args.dataset_id, args.seed or 0,
                         as_dag=True if args.as_dag else None)
        sys.stdout.write(",".join(REPORT_COLUMNS) + "\n" + row.csv_row())
        return 0

    cfg = load_config(args.config, _overrides(args))
    if args.show_config:
        sys.stdout.write(format_config(cfg))
        return 0
    if not args.out:
        raise InvalidConfig("--out is required")
    if args.verb == "gen":
        cmd_gen(cfg, args.out, args.force)
    elif args.verb == "fit":
        cmd_fit(cfg, args.out, args.force, args.data, args.jobs)
    elif args.verb == "eval":
        rows = cmd_eval(cfg, args.out, args.force)
        sys.stdout.write(",".join(REPORT_COLUMNS) + "\n" + "".join(r.csv_row() for r in rows))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (ValueError, KeyError, FileExistsError, FileNotFoundError) as exc:
        # HcamError subclasses of ValueError/KeyError land here too
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HcamError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
