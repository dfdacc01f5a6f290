"""Batch pipeline driver: simulate | mesh | fit | predict | ecc | verify.

Every command reads a flat key=value config file, accepts ``--seed`` and
``--out``, writes its artifacts under the output directory together with a
manifest recording the config hash and seed, and is deterministic given
(config, seed).  Evaluation days are processed in date order and only ever
read data strictly before each valid date.

Config keys (defaults in parentheses):
  seed (0)                 window (25)            min_train (10)
  m (50)                   n (100)                bins (17)
  cases (cases.csv)        eval_start (first date + window)
  eval_days (rest of data) mesh_min_angle (20)    mesh_max_edge (none)
  memos_burnin (1000)      memos_thin (5)         memos_alpha (1)
  memos_vfix (1e6)         sigma_floor handled by the fit module
  prior_logkappa_mean (-0.082)  prior_logkappa_var (1.5)
  prior_logtau_mean (-0.878)    prior_logtau_var (1.5)
  prior_precision_shape (1)     prior_precision_rate (0.00005)
  sim_stations (50)  sim_days (60)  sim_m (50)  sim_sigma (1.5)
  sim_kappa_a (0.9)  sim_tau_a (0.5)  sim_kappa_b (0.9)  sim_tau_b (8.0)
  sim_a_mean (0)     sim_b_mean (1)   sim_alpha (2)  sim_field_mode (gmrf)
  sim_domain_km (10) sim_start (2010-06-01)
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, ecc, emos, memos, mesh as mesh_mod, verify

METHODS_FIT = ("global", "local", "memos")
METHODS_ALL = ("raw",) + METHODS_FIT


class CliError(RuntimeError):
    pass


@dataclass
class RunConfig:
    raw: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def load(cls, path, seed_override=None) -> "RunConfig":
        raw = {}
        p = Path(path)
        if not p.exists():
            raise CliError(f"config file not found: {p}")
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{p}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            raw[key] = value
        cfg = cls(raw=raw)
        cfg.seed = int(seed_override if seed_override is not None else raw.get("seed", 0))
        return cfg

    def get(self, key, default=None, cast=str):
        if key not in self.raw or self.raw[key] == "":
            return default
        value = self.raw[key]
        if cast is bool:
            return value.lower() in ("1", "true", "yes")
        return cast(value)

    def date(self, key, default=None):
        value = self.raw.get(key, "")
        return dt.date.fromisoformat(value) if value else default

    @property
    def config_hash(self) -> str:
        canon = "\n".join(f"{k}={self.raw[k]}" for k in sorted(self.raw))
        canon += f"\nseed={self.seed}"
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def sim_config(self) -> data.SimConfig:
        return data.SimConfig(
            n_stations=self.get("sim_stations", 50, int),
            n_days=self.get("sim_days", 60, int),
            start=self.date("sim_start", dt.date(2010, 6, 1)),
            m=self.get("sim_m", 50, int),
            sigma=self.get("sim_sigma", 1.5, float),
            kappa_a=self.get("sim_kappa_a", 0.9, float),
            tau_a=self.get("sim_tau_a", 0.5, float),
            kappa_b=self.get("sim_kappa_b", 0.9, float),
            tau_b=self.get("sim_tau_b", 8.0, float),
            a_mean=self.get("sim_a_mean", 0.0, float),
            b_mean=self.get("sim_b_mean", 1.0, float),
            alpha=self.get("sim_alpha", 2, int),
            field_mode=self.get("sim_field_mode", "gmrf"),
            domain_km=self.get("sim_domain_km", 10.0, float),
            mesh_min_angle=self.get("mesh_min_angle", 20.0, float),
        )

    def priors(self) -> memos.Priors:
        return memos.Priors(
            logkappa_mean=self.get("prior_logkappa_mean", -0.082, float),
            logkappa_var=self.get("prior_logkappa_var", 1.5, float),
            logtau_mean=self.get("prior_logtau_mean", -0.878, float),
            logtau_var=self.get("prior_logtau_var", 1.5, float),
            precision_shape=self.get("prior_precision_shape", 1.0, float),
            precision_rate=self.get("prior_precision_rate", 0.00005, float),
            v_fix=self.get("memos_vfix", 1e6, float),
        )

    def mcmc(self) -> memos.McmcConfig:
        return memos.McmcConfig(
            burn_in=self.get("memos_burnin", 1000, int),
            thin=self.get("memos_thin", 5, int),
            alpha=self.get("memos_alpha", 1, int),
        )


def subseed(seed: int, *keys) -> np.random.SeedSequence:
    parts = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        parts.append(zlib.crc32(str(key).encode()))
    return np.random.SeedSequence(parts)


def _write_manifest(out: Path, command: str, cfg: RunConfig, inputs, outputs) -> None:
    def rel(p):
        p = Path(p)
        try:
            return str(p.relative_to(out))
        except ValueError:
            return p.name
    manifest = {
        "command": command,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "inputs": sorted(rel(p) for p in inputs),
        "outputs": sorted(rel(p) for p in outputs),
    }
    (out / f"manifest_{command}.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n"
    )


def _load_table(cfg: RunConfig, out: Path) -> data.CaseTable:
    cases = out / cfg.get("cases", "cases.csv")
    if not cases.exists():
        raise CliError(f"missing upstream file: {cases} (run `simulate` first?)")
    return data.load_cases(cases)


def _eval_days(cfg: RunConfig, table: data.CaseTable) -> list:
    window = cfg.get("window", 25, int)
    dates = table.dates
    start = cfg.date("eval_start", dates[0] + dt.timedelta(days=window))
    n_days = cfg.get("eval_days", max(1, (dates[-1] - start).days + 1), int)
    return [start + dt.timedelta(days=i) for i in range(n_days)
            if start + dt.timedelta(days=i) in set(dates)]


def cmd_simulate(cfg: RunConfig, out: Path) -> list:
    table, truth = data.simulate(cfg.sim_config(), cfg.seed)
    cases_path = out / cfg.get("cases", "cases.csv")
    data.write_cases(table, cases_path)
    truth_path = out / "truth.json"
    truth_path.write_text(
        json.dumps(
            {
                "a_true": truth.a_true,
                "b_true": truth.b_true,
                "sigma": truth.sigma,
                "seed": truth.seed,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        + "\n"
    )
    print(f"simulate: {len(table)} cases at {len(table.stations)} stations -> {cases_path}")
    return [cases_path, truth_path]


def cmd_mesh(cfg: RunConfig, out: Path) -> list:
    table = _load_table(cfg, out)
    locs = [table.locations[s] for s in table.stations]
    msh = mesh_mod.build_mesh(
        locs,
        min_angle=cfg.get("mesh_min_angle", 20.0, float),
        max_edge=cfg.get("mesh_max_edge", None, float),
    )
    path = out / "mesh.json"
    path.write_text(msh.to_json() + "\n")
    print(f"mesh: {msh.n_vertices} vertices, {len(msh.triangles)} triangles -> {path}")
    return [path]


class _MeshCache:
    """One mesh per distinct station set within a run."""

    def __init__(self, min_angle: float, max_edge):
        self.min_angle = min_angle
        self.max_edge = max_edge
        self._cache = {}

    def get(self, locations: dict):
        key = frozenset(locations)
        if key not in self._cache:
            self._cache[key] = mesh_mod.build_mesh(
                [locations[k] for k in sorted(locations)],
                min_angle=self.min_angle,
                max_edge=self.max_edge,
            )
        return self._cache[key]


def cmd_fit(cfg: RunConfig, out: Path, method: str) -> list:
    table = _load_table(cfg, out)
    days = _eval_days(cfg, table)
    if not days:
        raise CliError("no evaluation days fall inside the dataset")
    window = cfg.get("window", 25, int)
    min_train = cfg.get("min_train", 10, int)
    outputs = []

    if method == "global":
        fits = {}
        for day in days:
            params = emos.fit_global(table, day, length=window, min_cases=min_train)
            fits[day.isoformat()] = {"a": params.a, "b": params.b, "sigma": params.sigma}
        path = out / "params_global.json"
        path.write_text(json.dumps(fits, sort_keys=True, separators=(",", ":")) + "\n")
        outputs.append(path)
    elif method == "local":
        fits = {}
        for day in days:
            per_station = {}
            for station in table.stations:
                params = emos.fit_local(table, day, station, length=window,
                                        min_cases=min_train)
                per_station[station] = {"a": params.a, "b": params.b, "sigma": params.sigma}
            fits[day.isoformat()] = per_station
        path = out / "params_local.json"
        path.write_text(json.dumps(fits, sort_keys=True, separators=(",", ":")) + "\n")
        outputs.append(path)
    else:
        draws_dir = out / "draws_memos"
        draws_dir.mkdir(exist_ok=True)
        cache = _MeshCache(cfg.get("mesh_min_angle", 20.0, float),
                           cfg.get("mesh_max_edge", None, float))
        sites = [table.locations[s] for s in table.stations]
        for day in days:
            training = data.rolling_window(table, day, length=window, mode="global",
                                           min_cases=min_train)
            merged = dict(training.locations)
            for loc in sites:
                merged[loc.id] = loc
            msh = cache.get(merged)
            draws = memos.sample_posterior(
                training,
                sites,
                n=cfg.get("n", 100, int),
                seed=subseed(cfg.seed, "memos-fit", day.isoformat()).generate_state(1)[0],
                mesh=msh,
                priors=cfg.priors(),
                config=cfg.mcmc(),
            )
            path = draws_dir / f"{day.isoformat()}.csv"
            draws.to_csv(path)
            outputs.append(path)
    print(f"fit[{method}]: {len(days)} day(s) -> {outputs[-1] if outputs else out}")
    return outputs


def cmd_predict(cfg: RunConfig, out: Path, method: str) -> list:
    table = _load_table(cfg, out)
    days = _eval_days(cfg, table)
    m = cfg.get("m", 50, int)
    outputs = []

    if method in ("global", "local"):
        params_path = out / f"params_{method}.json"
        if not params_path.exists():
            raise CliError(f"missing upstream file: {params_path} (run `fit` first?)")
        fits = json.loads(params_path.read_text())
        path = out / f"predict_{method}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "site", "mu", "sigma"])
            for day in days:
                key = day.isoformat()
                if key not in fits:
                    raise CliError(f"no fitted parameters for {key} in {params_path}")
                for station, case in sorted(table.on(day).items()):
                    entry = fits[key] if method == "global" else fits[key][station]
                    params = emos.EmosParams(entry["a"], entry["b"], entry["sigma"])
                    forecast = emos.predict(params, case.fbar)
                    writer.writerow([key, station, repr(forecast.mu), repr(forecast.sigma)])
        outputs.append(path)
    else:
        pred_dir = out / "predict_memos"
        pred_dir.mkdir(exist_ok=True)
        for day in days:
            draws_path = out / "draws_memos" / f"{day.isoformat()}.csv"
            if not draws_path.exists():
                raise CliError(f"missing upstream file: {draws_path} (run `fit` first?)")
            draws = memos.PosteriorDraws.from_csv(draws_path)
            cases = table.on(day)
            sites = [s for s in draws.sites if s in cases]
            idx = [draws.sites.index(s) for s in sites]
            sub = memos.PosteriorDraws(
                sites=sites, a=draws.a[:, idx], b=draws.b[:, idx],
                sigma=draws.sigma, theta=draws.theta, seed=draws.seed,
                acceptance=draws.acceptance,
            )
            fbar = {s: cases[s].fbar for s in sites}
            sample = memos.predictive_sample(sub, fbar, m=m)
            path = pred_dir / f"{day.isoformat()}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["date", "site", "subsample", "member", "value"])
                for j, site in enumerate(sites):
                    grouped = sample.values[:, :, j]
                    for i in range(grouped.shape[0]):
                        for k in range(grouped.shape[1]):
                            writer.writerow(
                                [day.isoformat(), site, i + 1, k + 1, repr(float(grouped[i, k]))]
                            )
            outputs.append(path)
    print(f"predict[{method}]: {len(days)} day(s)")
    return outputs


def _load_memos_sample(path) -> dict:
    """predict_memos CSV -> {site: (n, m) array} preserving subsample order."""
    per_site: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            per_site.setdefault(row["site"], {}).setdefault(int(row["subsample"]), {})[
                int(row["member"])
            ] = float(row["value"])
    out = {}
    for site, subs in per_site.items():
        n = max(subs)
        m = max(len(v) for v in subs.values())
        arr = np.empty((n, m))
        for i in range(1, n + 1):
            for k in range(1, m + 1):
                arr[i - 1, k - 1] = subs[i][k]
        out[site] = arr
    return out


def cmd_ecc(cfg: RunConfig, out: Path, method: str, structure: str) -> list:
    table = _load_table(cfg, out)
    days = _eval_days(cfg, table)
    m = cfg.get("m", 50, int)
    path = out / f"ens_{method}_{structure}.csv"

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "site", "member", "value"])
        for day in days:
            key = day.isoformat()
            cases = table.on(day)
            raw_by_site = {s: np.asarray(c.members) for s, c in cases.items()}

            if method == "raw":
                sample_by_site = {
                    s: np.sort(v) for s, v in raw_by_site.items()
                }
            elif method in ("global", "local"):
                pred_path = out / f"predict_{method}.csv"
                if not pred_path.exists():
                    raise CliError(f"missing upstream file: {pred_path} (run `predict` first?)")
                sample_by_site = {}
                with open(pred_path, newline="") as pfh:
                    for row in csv.DictReader(pfh):
                        if row["date"] == key and row["site"] in cases:
                            forecast = emos.GaussianForecast(float(row["mu"]), float(row["sigma"]))
                            sample_by_site[row["site"]] = forecast.quantile_sample(m)
            else:
                pred_path = out / "predict_memos" / f"{key}.csv"
                if not pred_path.exists():
                    raise CliError(f"missing upstream file: {pred_path} (run `predict` first?)")
                grouped_by_site = _load_memos_sample(pred_path)

            if method == "memos":
                sites = sorted(grouped_by_site)
                sample = memos.PredictiveSample(
                    sites=sites,
                    values=np.stack([grouped_by_site[s] for s in sites], axis=2),
                )
                if structure == "ecc":
                    rng = np.random.default_rng(subseed(cfg.seed, "ecc-ties", key))
                    merged = ecc.ecc_memos(raw_by_site, sample, rng)
                else:
                    rng = np.random.default_rng(subseed(cfg.seed, "independence", key))
                    merged = ecc.independence_shuffle(
                        {s: sample.pooled(s) for s in sites}, rng
                    )
            else:
                sites = sorted(sample_by_site)
                if structure == "ecc":
                    rng = np.random.default_rng(subseed(cfg.seed, "ecc-ties", key))
                    merged = {
                        s: ecc.ecc_q(raw_by_site[s], np.sort(sample_by_site[s]), rng)
                        for s in sites
                    }
                else:
                    rng = np.random.default_rng(subseed(cfg.seed, "independence", key))
                    merged = ecc.independence_shuffle(sample_by_site, rng)

            for site in sorted(merged):
                for k, value in enumerate(merged[site], start=1):
                    writer.writerow([key, site, k, repr(float(value))])
    print(f"ecc[{method}/{structure}]: {len(days)} day(s) -> {path}")
    return [path]


def _univariate_scores(cfg: RunConfig, out: Path, table, days, scores: verify.ScoreSeries,
                       pit_values: dict) -> None:
    m = cfg.get("m", 50, int)
    have_global = (out / "predict_global.csv").exists()
    have_local = (out / "predict_local.csv").exists()
    preds = {}
    for method in ("global", "local"):
        if (out / f"predict_{method}.csv").exists():
            lookup = {}
            with open(out / f"predict_{method}.csv", newline="") as fh:
                for row in csv.DictReader(fh):
                    lookup[(row["date"], row["site"])] = (float(row["mu"]), float(row["sigma"]))
            preds[method] = lookup

    for day in days:
        key = day.isoformat()
        cases = table.on(day)
        memos_path = out / "predict_memos" / f"{key}.csv"
        memos_sample = _load_memos_sample(memos_path) if memos_path.exists() else None
        for station in sorted(cases):
            case = cases[station]
            if case.observation is None:
                continue
            y = case.observation
            rng = np.random.default_rng(subseed(cfg.seed, "verify-rank", key, station))
            members = np.asarray(case.members)
            scores.add(key, station, "raw", "crps", verify.crps_empirical(members, y))
            scores.add(key, station, "raw", "ae", verify.abs_error(members, y))
            pit_values.setdefault("raw", []).append(
                verify.verification_rank(members, y, rng)
            )
            for method in ("global", "local"):
                if method in preds and (key, station) in preds[method]:
                    mu, sigma = preds[method][(key, station)]
                    scores.add(key, station, method, "crps",
                               emos.crps_gaussian(mu, sigma, y))
                    scores.add(key, station, method, "ae", abs(mu - y))
                    forecast = emos.GaussianForecast(mu, sigma)
                    pit_values.setdefault(method, []).append(verify.pit(forecast.cdf, y))
            if memos_sample is not None and station in memos_sample:
                pooled = memos_sample[station].reshape(-1)
                scores.add(key, station, "memos", "crps", verify.crps_empirical(pooled, y))
                scores.add(key, station, "memos", "ae", verify.abs_error(pooled, y))
                pit_values.setdefault("memos", []).append(
                    verify.normalized_rank(pooled, y, rng)
                )


def _multivariate_scores(cfg: RunConfig, out: Path, table, days,
                         scores: verify.ScoreSeries, mv_ranks: dict) -> None:
    for ens_path in sorted(out.glob("ens_*_*.csv")):
        stem = ens_path.stem[len("ens_"):]
        method, structure = stem.rsplit("_", 1)
        label = f"{method}_{structure}"
        per_day: dict = {}
        with open(ens_path, newline="") as fh:
            for row in csv.DictReader(fh):
                per_day.setdefault(row["date"], {}).setdefault(row["site"], []).append(
                    float(row["value"])
                )
        for day in days:
            key = day.isoformat()
            if key not in per_day:
                continue
            cases = table.on(day)
            sites = sorted(s for s in per_day[key] if s in cases
                           and cases[s].observation is not None)
            if len(sites) < 2:
                continue
            ens = np.array([per_day[key][s] for s in sites]).T  # (members, d)
            y = np.array([cases[s].observation for s in sites])
            scores.add(key, "ALL", label, "es", verify.energy_score(ens, y))
            rng = np.random.default_rng(subseed(cfg.seed, "mvrank", label, key))
            mv_ranks.setdefault(label, []).append(
                (verify.multivariate_rank(ens, y, rng), len(ens) + 1)
            )


def cmd_verify(cfg: RunConfig, out: Path, compare=None, score: str = "crps",
               daily_mean: bool = False, lag: int = 0) -> list:
    table = _load_table(cfg, out)
    days = _eval_days(cfg, table)
    bins = verify.HistogramSpec(cfg.get("bins", 17, int))
    outputs = []

    scores = verify.ScoreSeries()
    pit_values: dict = {}
    _univariate_scores(cfg, out, table, days, scores, pit_values)
    mv_ranks: dict = {}
    _multivariate_scores(cfg, out, table, days, scores, mv_ranks)

    scores_path = out / "scores.csv"
    scores.to_csv(scores_path)
    outputs.append(scores_path)

    for method, values in sorted(pit_values.items()):
        hist_path = out / f"hist_{method}.csv"
        if method == "raw":
            spec = verify.HistogramSpec(min(bins.bins, table.m + 1))
            counts = verify.histogram(np.asarray(values), spec, rank_max=table.m + 1)
        else:
            counts = verify.histogram(np.asarray(values), bins)
        with open(hist_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "bin", "frequency"])
            for b, freq in enumerate(counts, start=1):
                writer.writerow([method, b, repr(float(freq))])
        outputs.append(hist_path)

    for label, ranked in sorted(mv_ranks.items()):
        rank_max = ranked[0][1]
        spec = verify.HistogramSpec(min(bins.bins, rank_max))
        counts = verify.histogram(np.asarray([r for r, _ in ranked]), spec,
                                  rank_max=rank_max)
        hist_path = out / f"mvhist_{label}.csv"
        with open(hist_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "bin", "frequency"])
            for b, freq in enumerate(counts, start=1):
                writer.writerow([label, b, repr(float(freq))])
        outputs.append(hist_path)

    for method in METHODS_ALL:
        try:
            mean_crps = scores.mean(method, "crps")
            print(f"verify: mean crps[{method}] = {mean_crps:.4f}")
        except KeyError:
            pass

    if compare:
        method_a, method_b = compare
        if daily_mean:
            dates_a, series_a = scores.daily_mean(method_a, score)
            dates_b, series_b = scores.daily_mean(method_b, score)
        else:
            rows_a = {}
            rows_b = {}
            for d, s, meth, sc, v in scores.rows():
                if sc != score:
                    continue
                if meth == method_a:
                    rows_a[(d, s)] = v
                elif meth == method_b:
                    rows_b[(d, s)] = v
            keys = sorted(set(rows_a) & set(rows_b))
            dates_a = keys
            series_a = np.array([rows_a[k] for k in keys])
            series_b = np.array([rows_b[k] for k in keys])
        result = verify.dm_test(series_a, series_b, lag=lag)
        dm_path = out / f"dm_{method_a}_{method_b}_{score}.csv"
        with open(dm_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method_a", "method_b", "score", "statistic", "pvalue",
                             "mean_difference", "n"])
            writer.writerow([method_a, method_b, score, repr(result.statistic),
                             repr(result.pvalue), repr(result.mean_difference),
                             len(series_a)])
        outputs.append(dm_path)
        print(
            f"verify: DM {method_a} vs {method_b} on {score}"
            f"{' (daily means)' if daily_mean else ''}: "
            f"statistic={result.statistic:.4f} p={result.pvalue:.4g}"
        )
    return outputs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="enspost",
        description="Ensemble postprocessing pipelines on forecast case files.",
    )
    parser.add_argument("--config", required=True, help="key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate")
    sub.add_parser("mesh")
    for name in ("fit", "predict"):
        p = sub.add_parser(name)
        p.add_argument("--method", choices=METHODS_FIT, required=True)
    p = sub.add_parser("ecc")
    p.add_argument("--method", choices=METHODS_ALL, required=True)
    p.add_argument("--structure", choices=("ecc", "independence"), default="ecc")
    p = sub.add_parser("verify")
    p.add_argument("--compare", nargs=2, metavar=("A", "B"))
    p.add_argument("--score", default="crps", choices=("crps", "ae", "es"))
    p.add_argument("--daily-mean", action="store_true")
    p.add_argument("--lag", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, seed_override=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            outputs = cmd_simulate(cfg, out)
        elif args.command == "mesh":
            outputs = cmd_mesh(cfg, out)
        elif args.command == "fit":
            outputs = cmd_fit(cfg, out, args.method)
        elif args.command == "predict":
            outputs = cmd_predict(cfg, out, args.method)
        elif args.command == "ecc":
            outputs = cmd_ecc(cfg, out, args.method, args.structure)
        else:
            outputs = cmd_verify(cfg, out, compare=args.compare, score=args.score,
                                 daily_mean=args.daily_mean, lag=args.lag)
        _write_manifest(out, args.command, cfg, [args.config], outputs)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
