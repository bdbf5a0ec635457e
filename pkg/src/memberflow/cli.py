"""Command-line pipeline: ``mfl <subcommand> --input DIR --out DIR``.

Every artifact is a flat CSV or JSON file. Floats are written with ``repr`` and
rows in a fixed order, so reruns on unchanged inputs are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from memberflow import behavior, herding, network, regress, spectral, synth
from memberflow.errors import MemberFlowError
from memberflow.panel import INVESTOR_TYPES, TradePanel, ingest, investor_share

SUBCOMMANDS = ("ingest", "synth", "classify", "measures", "herding", "network", "rmt", "regress", "report", "all")
GROUPS = (herding.HerdGroup.ALL, herding.HerdGroup.DIM, herding.HerdGroup.DSM, herding.HerdGroup.FRM)
MP_GRID_POINTS = 200

log = logging.getLogger("memberflow")


class UsageError(MemberFlowError, ValueError):
    module = "cli"


# -- output helpers --------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.datetime64):
        return str(np.datetime_as_string(v, unit="D"))
    return getattr(v, "value", v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return None if not math.isfinite(v) else float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.datetime64):
        return str(np.datetime_as_string(v, unit="D"))
    return getattr(v, "value", v)


def write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- context ---------------------------------------------------------------------

class Run:
    """Holds the parsed flags and lazily computed shared state for one invocation."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self._panel = None
        self._profiles = None

    @property
    def input(self) -> Path:
        if self.args.input is None:
            raise UsageError("--input is required for this subcommand")
        return Path(self.args.input)

    @property
    def panel(self) -> TradePanel:
        if self._panel is None:
            self._panel = ingest(self.input)
        return self._panel

    @property
    def profiles(self):
        if self._profiles is None:
            self._profiles = behavior.classified_profiles(
                self.panel, decile=self.args.decile or 1, year=self.args.year,
                min_volume_ratio=self.args.min_volume_ratio)
        return self._profiles

    @property
    def classes(self):
        return {p.member_id: p.member_class for p in self.profiles}

    def deciles(self):
        return [self.args.decile] if self.args.decile else list(range(1, 11))

    def years(self):
        return [self.args.year] if self.args.year else self.panel.year_list


# -- subcommands -----------------------------------------------------------------

def cmd_ingest(run: Run):
    panel = run.panel
    rows = []
    for d in range(1, 11):
        shares = investor_share(panel, d)
        rows.append([d, panel.decile_stocks(d).size] + [shares[t] for t in INVESTOR_TYPES])
    write_csv(run.out / "investor_shares.csv",
              ["decile", "n_stocks"] + [f"share_{t.value}" for t in INVESTOR_TYPES], rows)
    write_json(run.out / "panel.json", {
        "n_days": panel.n_days, "n_stocks": panel.n_stocks, "n_members": panel.n_members,
        "first_day": panel.dates[0], "last_day": panel.dates[-1], "years": panel.year_list,
        "warnings": list(panel.warnings),
    })


def cmd_synth(run: Run):
    a = run.args
    if a.spec:
        market, agents = synth.load_spec(a.spec)
    else:
        market, agents = synth.MarketSpec(), None
    if a.seed is not None:
        market = synth.with_seed(market, a.seed)
    if a.regression and market.regression_betas is None:
        market = replace(market, regression_betas=(0.9, 0.0015, -0.03, 0.002))
    synth.generate(market, agents).write(run.out)


def cmd_classify(run: Run):
    rows = [[p.member_id, p.domicile, p.volume, p.corr_individual, p.corr_institution,
             p.corr_foreigner, p.member_class] for p in run.profiles]
    write_csv(run.out / "member_profiles.csv",
              ["member_id", "domicile", "volume", "corr_individual", "corr_institution",
               "corr_foreigner", "class"], rows)


def cmd_measures(run: Run):
    panel = run.panel
    entities = list(INVESTOR_TYPES) + list(panel.member_ids)
    classes = run.classes
    rows = []
    for year in [None] + run.years():
        for s in behavior.behavior_scores(panel, entities, run.deciles(), [year], theta=run.args.theta):
            label = s.entity if s.entity not in classes else classes[s.entity]
            rows.append([s.entity, label, s.decile, "all" if year is None else year,
                         s.directionality, s.trend, s.n_stocks])
    write_csv(run.out / "behavior_scores.csv",
              ["entity", "class", "decile", "year", "D", "T", "n_stocks"], rows)


def _herding_panels(run: Run, decile=None, year=None):
    out = {}
    for g in GROUPS:
        try:
            out[g] = herding.herding_panel(run.panel, g, decile=decile, year=year,
                                           classes=run.classes, alpha=run.args.alpha)
        except herding.EmptyGroup as exc:
            log.warning("%s", exc)
    return out


def cmd_herding(run: Run):
    panels = _herding_panels(run, run.args.decile, run.args.year)
    years = run.panel.years
    rows, drows = [], []
    for g, hp in panels.items():
        cols = np.searchsorted(run.panel.dates, hp.dates)
        for y in sorted(set(years[cols].tolist())):
            sel = years[cols] == y
            v = hp.valid[:, sel]
            n_valid = int(v.sum())
            rows.append([g, y, n_valid, int(v.size - n_valid),
                         float(hp.h[:, sel][v].mean()) if n_valid else float("nan"),
                         float(hp.H[:, sel][v].mean()) if n_valid else float("nan")])
        for d in herding.herding_directions(hp, run.panel):
            drows.append([g, d.stock_id, d.year, d.dh])
    write_csv(run.out / "herding.csv", ["group", "year", "valid_days", "skipped_days", "mean_h", "mean_H"], rows)
    write_csv(run.out / "herding_direction.csv", ["group", "stock_id", "year", "DH"], drows)


def cmd_network(run: Run):
    a = run.args
    net = network.build_network(run.panel, decile=a.decile or 1, threshold=a.edge_threshold,
                                min_volume_ratio=a.min_volume_ratio, classes=run.classes)
    part = network.detect_communities(net, seed=a.seed or 0)
    write_json(run.out / "network.json", {
        "decile": a.decile or 1,
        "threshold": a.edge_threshold,
        "nodes": [{"id": n, "community": c, **net.node_info.get(n, {})}
                  for n, c in zip(net.nodes, part.labels)],
        "edges": [{"source": s, "target": t, "weight": w} for s, t, w in net.edges()],
        "n_communities": part.n_communities,
        "modularity": part.modularity,
        "codelength": part.codelength,
        "codelength_trace": list(part.codelength_trace),
    })


def cmd_rmt(run: Run):
    panel = run.panel
    reports, skipped = spectral.spectral_reports(panel, run.args.year, run.args.decile)
    spec_rows, fac_rows = [], []
    for r in reports:
        for k, lam in enumerate(r.eigenvalues, start=1):
            spec_rows.append([r.stock_id, r.year, k, lam, r.bounds.q, r.bounds.lambda_min, r.bounds.lambda_max])
        for d, f in zip(r.dates, r.factor):
            fac_rows.append([r.stock_id, r.year, d, f])
    write_csv(run.out / "spectrum.csv",
              ["stock_id", "year", "rank", "eigenvalue", "Q", "lambda_min", "lambda_max"], spec_rows)
    write_csv(run.out / "factors.csv", ["stock_id", "year", "date", "factor"], fac_rows)
    ref = []
    if reports:
        q = float(np.median([r.bounds.q for r in reports]))
        b = spectral.mp_bounds(q)
        for lam in np.linspace(b.lambda_min, b.lambda_max, MP_GRID_POINTS):
            ref.append([q, lam, spectral.mp_density(lam, b)])
    write_csv(run.out / "mp_reference.csv", ["Q", "lambda", "density"], ref)
    rows = []
    try:
        summary = spectral.decile_spectral_summary(panel, run.args.year, reports=reports)
    except spectral.InsufficientCoverage as exc:
        log.warning("%s", exc)
        summary = []
    for s in summary:
        rows.append([s.decile, s.n_stocks, s.n_reports, s.mean_lambda1, s.mean_abs_factor_corr])
    write_csv(run.out / "decile_summary.csv",
              ["decile", "n_stocks", "n_reports", "mean_lambda1", "mean_abs_factor_corr"], rows)
    write_csv(run.out / "spectral_skipped.csv", ["stock_id", "year", "reason"],
              [[s["stock_id"], s["year"], s["reason"]] for s in skipped])


def _series_file(flag, default: Path):
    if flag:
        return Path(flag)
    return default if default.is_file() else None


def cmd_regress(run: Run):
    panel = run.panel
    mfile = _series_file(run.args.market_index, run.input / "market_index.csv")
    rfile = _series_file(run.args.riskfree, run.input / "riskfree.csv")
    if rfile is None:
        raise regress.MissingRiskFree("no --riskfree file given and no riskfree.csv in the input directory")
    market = regress.load_series(mfile, panel, "return") if mfile else regress.market_proxy(panel)
    rf = regress.riskfree_daily(regress.load_series(rfile, panel, "yield"))
    panels = _herding_panels(run)
    grids = {f"H_{g.value}": panels[g] for g in GROUPS[1:] if g in panels}
    result = regress.run_regression(panel, grids, market, rf)
    r2_small, r2_full = regress.r2_delta(panel, grids, market, rf)
    extra = {"market_source": mfile.name if mfile else "decile-1 cap-weighted proxy",
             "r2_market_only": r2_small, "r2_full": r2_full}
    out = result.as_dict()
    out.update(extra)
    write_json(run.out / "regression.json", out)
    (run.out / "regression.txt").write_text(result.to_text(), encoding="utf-8")


def _read_csv(path: Path):
    return pd.read_csv(path) if path.is_file() else None


def cmd_report(run: Run):
    out = run.out
    summary = {}
    profiles = _read_csv(out / "member_profiles.csv")
    if profiles is not None:
        summary["class_counts"] = {k: int(v) for k, v in sorted(profiles["class"].value_counts().items())}
        summary["classes"] = dict(zip(profiles["member_id"], profiles["class"]))
    scores = _read_csv(out / "behavior_scores.csv")
    if scores is not None:
        s = scores[(scores["year"].astype(str) == "all") & (scores["decile"] == scores["decile"].min())]
        summary["measures"] = {
            str(cls): {"mean_D": float(g["D"].mean()), "mean_T": float(g["T"].mean()), "n": int(len(g))}
            for cls, g in s.groupby("class", sort=True)}
    hd = _read_csv(out / "herding_direction.csv")
    if hd is not None:
        summary["herding_direction_mean"] = {str(k): float(v) for k, v in hd.groupby("group", sort=True)["DH"].mean().items()}
    hh = _read_csv(out / "herding.csv")
    if hh is not None:
        summary["herding_mean_h"] = {
            str(g): float((d["mean_h"] * d["valid_days"]).sum() / max(d["valid_days"].sum(), 1))
            for g, d in hh.groupby("group", sort=True)}
    if (out / "network.json").is_file():
        net = json.loads((out / "network.json").read_text(encoding="utf-8"))
        summary["network"] = {
            "n_nodes": len(net["nodes"]), "n_edges": len(net["edges"]),
            "n_communities": net["n_communities"], "modularity": net["modularity"],
            "partition": {n["id"]: n["community"] for n in net["nodes"]},
        }
    dec = _read_csv(out / "decile_summary.csv")
    if dec is not None:
        summary["decile_factor_corr"] = {int(r.decile): float(r.mean_abs_factor_corr) for r in dec.itertuples()}
        summary["decile_lambda1"] = {int(r.decile): float(r.mean_lambda1) for r in dec.itertuples()}
    if (out / "regression.json").is_file():
        reg = json.loads((out / "regression.json").read_text(encoding="utf-8"))
        summary["regression"] = {
            "coefficients": {c["name"]: {k: c[k] for k in ("coef", "std_err", "t", "p")} for c in reg["coefficients"]},
            "r_squared": reg["r_squared"], "n_observations": reg["n_observations"],
            "r2_market_only": reg.get("r2_market_only"),
        }
    if (out / "panel.json").is_file():
        summary["panel"] = json.loads((out / "panel.json").read_text(encoding="utf-8"))
    write_json(out / "summary.json", summary)


PIPELINE = (cmd_ingest, cmd_classify, cmd_measures, cmd_herding, cmd_network, cmd_rmt)


def cmd_all(run: Run):
    for step in PIPELINE:
        step(run)
    try:
        cmd_regress(run)
    except regress.MissingRiskFree as exc:
        log.warning("regression skipped: %s", exc)
    cmd_report(run)


COMMANDS = {
    "ingest": cmd_ingest, "synth": cmd_synth, "classify": cmd_classify, "measures": cmd_measures,
    "herding": cmd_herding, "network": cmd_network, "rmt": cmd_rmt, "regress": cmd_regress,
    "report": cmd_report, "all": cmd_all,
}


# -- argument parsing ------------------------------------------------------------

def _unit_interval(name):
    def parse(raw):
        v = float(raw)
        if not 0 < v < 1:
            raise argparse.ArgumentTypeError(f"{name} must lie in (0, 1)")
        return v
    return parse


def _non_negative(raw):
    v = float(raw)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _decile(raw):
    v = int(raw)
    if not 1 <= v <= 10:
        raise argparse.ArgumentTypeError("decile must be 1..10")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="bundle directory with the panel CSV files")
    common.add_argument("--out", required=True, help="directory for artifacts (created if missing)")
    common.add_argument("--theta", type=_unit_interval("theta"), default=behavior.DEFAULT_THETA)
    common.add_argument("--alpha", type=_unit_interval("alpha"), default=herding.DEFAULT_ALPHA)
    common.add_argument("--edge-threshold", type=float, default=network.DEFAULT_THRESHOLD)
    common.add_argument("--min-volume-ratio", type=_non_negative, default=behavior.MIN_VOLUME_RATIO)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--decile", type=_decile, default=None)
    common.add_argument("--year", type=int, default=None)
    common.add_argument("--market-index", help="CSV with columns date,return")
    common.add_argument("--riskfree", help="CSV with columns date,yield (annual)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mfl", description="Member trading-flow analysis pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "synth":
            p.add_argument("--spec", help="market/agent spec file (INI key = value)")
            p.add_argument("--regression", action="store_true",
                           help="plant herding effects in returns (default betas)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    run = Run(args)
    try:
        run.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](run)
    except MemberFlowError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"module": "cli", "error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
