"""Command line runner: ``fracgreen run <config>`` and ``fracgreen report <files...>``.

Config files are plain ``key = value`` lines; ``#`` starts a comment. Lists
are comma separated and a list of balls is ``cx, cy, r; cx, cy, r``. Every
field is parsed and range checked before any computation starts.

Exit codes: 0 all criteria passed, 2 configuration or input error, 3 some
criterion failed, 4 numerical failure.
"""

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from .errors import ConfigError, FracGreenError, ParameterError
from .experiments import COLUMNS, RUNNERS, build_domain, build_drift, build_params

SCHEMA = "fracgreen.result/1"
EXIT_OK, EXIT_CONFIG, EXIT_CRITERION, EXIT_NUMERICAL = 0, 2, 3, 4


def _version():
    from . import __version__

    return __version__


# ---------------------------------------------------------------------------
# Schema: name -> (parser, check, default). ``check`` returns an error string or None.


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(s):
    f = float(s)
    if f != int(f):
        raise ValueError("not an integer")
    return int(f)


def _floats(s):
    return tuple(_float(p) for p in s.split(",") if p.strip())


def _balls(s):
    return tuple(_floats(g) for g in s.split(";") if g.strip())


def _bool(s):
    t = s.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError("expected true or false")


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError("expected one of " + ", ".join(options))
        return s

    return parse


def _between(lo, hi, open_lo=False, open_hi=False):
    def check(v):
        ok = (v > lo if open_lo else v >= lo) and (v < hi if open_hi else v <= hi)
        if not ok:
            lb, rb = "(" if open_lo else "[", ")" if open_hi else "]"
            return f"must lie in {lb}{lo}, {hi}{rb}"

    return check


def _positive(v):
    if not v > 0:
        return "must be positive"


def _all_positive(v):
    if not v or any(not p > 0 for p in v):
        return "must be a nonempty list of positive numbers"


def _any(v):
    return None


SCHEMA_FIELDS = {
    "kind": (_choice(*RUNNERS), _any, None),
    "name": (str, _any, None),
    "d": (_int, _between(2, 3), 2),
    "alpha": (_float, _between(1, 2, True, True), 1.5),
    "seed": (_int, _between(0, 2**63 - 1), 0),
    "domain": (_choice("ball", "annulus", "union"), _any, "ball"),
    "center": (_floats, _any, None),
    "radius": (_float, _positive, 1.0),
    "r_in": (_float, _positive, 0.5),
    "r_out": (_float, _positive, 1.0),
    "balls": (_balls, _any, None),
    "drift": (_choice("zero", "constant", "ou", "singular"), _any, "zero"),
    "drift_k": (_float, _between(-1e3, 1e3), 0.5),
    "drift_vector": (_floats, _any, None),
    "drift_center": (_floats, _any, None),
    "drift_eps": (_float, _between(-2, 1), 0.25),
    "drift_scale": (_float, _positive, 1.0),
    "drift_strict": (_bool, _any, True),
    "contraction": (_float, _between(0, 1, True, True), 0.25),
    "x": (_floats, _any, None),
    "y": (_floats, _any, None),
    "n_pairs": (_int, _between(1, 10**6), 25),
    "n_gradient": (_int, _between(1, 10**7), 1000),
    "radii": (_floats, _all_positive, None),
    "tolerance": (_float, _positive, None),
    "expect": (_choice("in class", "not in class", "inconclusive", "any"), _any, "any"),
    "n_points": (_int, _between(1, 10**4), 10),
    "bump_radius_fraction": (_float, _between(0, 1, True, True), 0.3),
    "grid": (_int, _between(2, 200), 20),
    "band": (_floats, _any, (2 / 3 - 0.05, 4 / 3 + 0.05)),
    "quad_budget": (_float, _positive, 0.02),
    "mode": (_choice("wos", "euler-series", "exit-law", "stable-cf", "survival"), _any, "stable-cf"),
    "n_paths": (_int, _between(2, 10**9), 10**6),
    "h": (_float, _between(0, 1e3), 0.0),
    "h_factor": (_float, _between(0, 1, True), 4e-3),
    "time": (_float, _positive, 1.0),
    "min_count": (_int, _between(1, 10**9), 100),
    "k_max": (_int, _between(0, 20), 3),
    "set_index": (_int, _between(0, 9), 0),
}

KIND_DEFAULTS = {
    "kernel-check": {"radii": (0.5, 1.0, 2.0)},
    "kato": {"tolerance": 1e-2, "drift": "constant"},
    "series": {"tolerance": 1e-3},
    "comparability-grid": {"drift": "ou"},
    "harnack": {"grid": 12},
    "poisson-sharpness": {},
    "mc-oracle": {},
}


def parse_config(text):
    """Parse ``key = value`` text into a dict of typed values plus the line of each key."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno)
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA_FIELDS:
            raise ConfigError(f"unknown key {key!r}", lineno, key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first on line {lines[key]})", lineno, key)
        parser, check, _ = SCHEMA_FIELDS[key]
        try:
            v = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {val!r} ({exc})", lineno, key) from None
        msg = check(v)
        if msg:
            raise ConfigError(f"{key} = {val}: {msg}", lineno, key)
        values[key], lines[key] = v, lineno
    return values, lines


def validate(values, lines):
    """Fill defaults and check cross-field consistency; returns the full config."""
    if "kind" not in values:
        raise ConfigError("missing required key 'kind'", None, "kind")
    kind = values["kind"]
    cfg = {k: entry[2] for k, entry in SCHEMA_FIELDS.items()}
    cfg.update(KIND_DEFAULTS[kind])
    cfg.update(values)
    cfg["name"] = cfg["name"] or kind
    d = cfg["d"]

    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}", lines.get(key), key)

    for key in ("center", "x", "y", "drift_vector", "drift_center"):
        if cfg[key] is not None and len(cfg[key]) != d:
            fail(key, f"needs {d} components")
    needs_2d = kind in ("series", "comparability-grid", "harnack")
    needs_2d |= kind == "mc-oracle" and cfg["mode"] in ("euler-series", "exit-law")
    if needs_2d and d != 2:
        fail("d", f"experiment {kind} is implemented for d = 2")
    if cfg["domain"] == "annulus" and not cfg["r_in"] < cfg["r_out"]:
        fail("r_in", "must be smaller than r_out")
    if cfg["domain"] == "union":
        if not cfg["balls"]:
            fail("balls", "a union domain needs 'balls'")
        if any(len(b) != d + 1 or not b[-1] > 0 for b in cfg["balls"]):
            fail("balls", f"each ball needs {d} center coordinates and a positive radius")
    if cfg["drift"] == "constant" and cfg["drift_vector"] is None:
        fail("drift_vector", "a constant drift needs 'drift_vector'")
    if len(cfg["band"]) != 2 or not 0 < cfg["band"][0] < cfg["band"][1]:
        fail("band", "needs two numbers 0 < lo < hi")
    if cfg["mode"] == "survival" and cfg["drift"] == "singular":
        fail("drift", "the Euler scheme needs a locally bounded drift")
    # object construction is part of validation
    try:
        build_params(cfg)
        build_domain(cfg)
        build_drift(cfg)
    except ParameterError as exc:
        key = next((k for k in ("drift_eps", "balls", "r_in", "radius", "drift") if k in values), "kind")
        raise ConfigError(str(exc), lines.get(key), key) from None
    return cfg


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return validate(*parse_config(text))


def canonical(cfg):
    return json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Output


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(kind, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = COLUMNS[kind]
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r[c]) for c in cols])
    return buf.getvalue()


def environment():
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "machine": platform.machine(),
    }


def render_json(cfg, outcome, csv_name):
    doc = {
        "schema": SCHEMA,
        "experiment": cfg["name"],
        "kind": cfg["kind"],
        "config": cfg,
        "config_hash": hashlib.sha256(canonical(cfg).encode()).hexdigest(),
        "seed": cfg["seed"],
        "version": _version(),
        "environment": environment(),
        "csv": csv_name,
        "n_rows": len(outcome.rows),
        "passed": outcome.passed,
        "criteria": outcome.criteria,
        "estimates": outcome.estimates,
    }
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


def run(config_path, seed=None, out=None, threads=1, stdout=None, stderr=None):
    """Run one experiment; returns the exit status."""
    stdout, stderr = stdout or sys.stdout, stderr or sys.stderr
    try:
        cfg = load_config(config_path)
        if seed is not None:
            if seed < 0:
                raise ConfigError("--seed must be nonnegative", None, "seed")
            cfg["seed"] = int(seed)
        if threads < 1:
            raise ConfigError("--threads must be at least 1", None, "threads")
    except ConfigError as exc:
        print(f"{config_path}: config error: {exc}", file=stderr)
        return EXIT_CONFIG
    try:
        outcome = RUNNERS[cfg["kind"]](cfg, threads)
    except FracGreenError as exc:
        print(f"{config_path}: numerical failure: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_NUMERICAL
    except FloatingPointError as exc:
        print(f"{config_path}: numerical failure: {exc}", file=stderr)
        return EXIT_NUMERICAL
    out_dir = Path(out) if out else Path(config_path).resolve().parent
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_name = cfg["name"] + ".csv"
    (out_dir / csv_name).write_text(render_csv(cfg["kind"], outcome.rows))
    (out_dir / (cfg["name"] + ".json")).write_text(render_json(cfg, outcome, csv_name))
    for c in outcome.criteria:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {cfg['name']}: {c['name']} {c['detail']}".rstrip(), file=stdout)
    return EXIT_OK if outcome.passed else EXIT_CRITERION


# ---------------------------------------------------------------------------
# Report


RESIDUAL_COLUMNS = ("residual", "relative", "rel_error", "error")


def _load_result(path):
    path = Path(path)
    if path.suffix == ".csv":
        path = path.with_suffix(".json")
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path}: cannot read result: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise ConfigError(f"{path}: schema mismatch (expected {SCHEMA}, found {doc.get('schema') if isinstance(doc, dict) else None})")
    rows = []
    csv_path = path.parent / doc["csv"]
    if csv_path.exists():
        with open(csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames and list(reader.fieldnames) != COLUMNS.get(doc["kind"]):
                raise ConfigError(f"{csv_path}: column schema mismatch")
            rows = list(reader)
    return path, doc, rows


def _column_stats(rows):
    out = []
    vals = lambda c: [float(r[c]) for r in rows if r.get(c) not in (None, "", "nan")]
    if rows and "ratio" in rows[0]:
        v = vals("ratio")
        if v:
            out.append(f"ratio in [{min(v):.6g}, {max(v):.6g}]")
    for c in RESIDUAL_COLUMNS:
        if rows and c in rows[0]:
            v = [abs(t) for t in vals(c)]
            if v:
                out.append(f"max |{c}| {max(v):.3g}")
                break
    return out


def report(paths, stdout=None, stderr=None):
    stdout, stderr = stdout or sys.stdout, stderr or sys.stderr
    try:
        results = [_load_result(p) for p in paths]
    except ConfigError as exc:
        print(f"report error: {exc}", file=stderr)
        return EXIT_CONFIG
    total_rows = sum(len(r) for _, _, r in results)
    if not results or total_rows == 0 and not any(d["criteria"] for _, d, _ in results):
        print("no rows", file=stdout)
        return EXIT_OK
    lines = []
    for path, doc, _ in results:
        for c in doc["criteria"]:
            lines.append((c["passed"], f"{'PASS' if c['passed'] else 'FAIL'} {doc['experiment']} (seed {doc['seed']}): {c['name']} {c['detail']}".rstrip()))
    # failures first, stable otherwise
    for _, text in sorted(lines, key=lambda t: t[0]):
        print(text, file=stdout)
    n_fail = sum(not p for p, _ in lines)
    print(f"{len(results)} files, {total_rows} rows, {len(lines) - n_fail} passed, {n_fail} failed", file=stdout)
    for path, doc, rows in results:
        stats = _column_stats(rows)
        print(f"{path.name}: seed {doc['seed']}, {len(rows)} rows" + ("; " + "; ".join(stats) if stats else ""), file=stdout)
    # estimator overlap across runs of the same experiment
    by_key = {}
    for path, doc, _ in results:
        for e in doc.get("estimates", []):
            by_key.setdefault((doc["experiment"], e["name"]), []).append((doc["seed"], e))
    for (exp, name), runs in sorted(by_key.items()):
        for i in range(len(runs)):
            for j in range(i + 1, len(runs)):
                (s1, a), (s2, b) = runs[i], runs[j]
                diff = abs(a["mean"] - b["mean"])
                lim = 3 * math.hypot(a["stderr"], b["stderr"])
                flag = "overlap" if diff <= lim else "NO OVERLAP"
                print(f"{exp} {name}: seeds {s1} vs {s2}: |diff| {diff:.4g} vs 3se {lim:.4g}: {flag}", file=stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="fracgreen", description="Run and summarize fractional Green function experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--out", default=None, help="output directory (default: next to the config)")
    r.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo blocks")
    s = sub.add_parser("report", help="summarize result files")
    s.add_argument("files", nargs="*")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "run":
        return run(args.config, args.seed, args.out, args.threads)
    return report(args.files)


if __name__ == "__main__":
    sys.exit(main())
