"""Benchmark stages.

Output layout under ``config.out``::

    config.json                       resolved configuration
    dataset/<law>/                    val/test signals and increments
    dataset/<law>/<operator>/         operator matrix, val/test measurements
    gold/<law>/<operator>/            per test item: mean, var, thinned draws
    tuning/<law>/<operator>/<key>.json  grid, validation curve, optimum
    runs/<law>/<operator>/<method>/<denoiser>/   per test item draws
    results/gaps.csv, results/coverage.csv       per item scores
    report/                           aggregate CSV and text tables
    diagnose/                         burn-in and sample-count protocol data

Stages only read what earlier stages persisted.  The run stage loads test
measurements and operators, never the test signals; truths are read by the
evaluate stage alone.
"""

import logging
import time
from pathlib import Path

import numpy as np

from .. import baselines
from ..diffusion import build_schedule, desk_schedule, get_denoiser
from ..dps import DpsConfig, run_dps
from ..errors import ConvergenceError
from ..evaluation import burn_in_diagnostic, hpd_coverage, log_posterior, mmse_gap_db, sample_count_diagnostic
from ..gibbs import default_init, sample_posterior
from ..levy import jump_law, synthesize_signals
from ..operators import build_operator, calibrate_noise, model_from_descriptor, synthesize_measurements
from . import report as report_mod
from .seeds import SPLITS, seed_sequence, stream
from .storage import ArrayBundle, ItemStore, StorageError, read_json, write_json

log = logging.getLogger("dpsbench")

TRAIN_CHUNK = 100_000
GOLD_SEGMENT = 20_000
POINT = "-"


def _out(config):
    return Path(config.out)


def _spawn_key(config, purpose, *keys):
    return list(seed_sequence(config.seed, purpose, *keys).spawn_key)


def schedule_for(config):
    T = int(config.diffusion["T"])
    return build_schedule(T) if T == 1000 else desk_schedule(T)


def make_denoiser(config, den, law_key):
    options = {k: v for k, v in den.items() if k not in ("name", "label")}
    if "command" in options:
        options["command"] = [str(c).replace("{law}", law_key) for c in options["command"]]
    return get_denoiser(den["name"], jump_law(law_key), n_burn=int(config.denoise["burn_in"]), **options)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def _calibration_signals(config, law_key):
    """Training signals, drawn in fixed-size chunks from their own stream."""
    rng = stream(config.seed, "signals", law_key, SPLITS["train"])
    law = jump_law(law_key)
    n = int(config.counts["train"])
    parts = []
    while n > 0:
        k = min(TRAIN_CHUNK, n)
        parts.append(synthesize_signals(law, config.d, k, rng)[0])
        n -= k
    return np.concatenate(parts)


def _operator(config, op):
    return build_operator(op, config.d, stream(config.seed, "operator", op))


def generate_dataset(config):
    """Signals, operators and measurements for every configured (law, operator)."""
    out = _out(config) / "dataset"
    for law_key in config.laws:
        law = jump_law(law_key)
        bundle = ArrayBundle(out / law_key)
        if not bundle.exists():
            arrays, seeds = {}, {}
            for split in ("val", "test"):
                rng = stream(config.seed, "signals", law_key, SPLITS[split])
                arrays[f"{split}_signals"], arrays[f"{split}_increments"] = synthesize_signals(
                    law, config.d, int(config.counts[split]), rng
                )
                seeds[split] = _spawn_key(config, "signals", law_key, SPLITS[split])
            seeds["train"] = _spawn_key(config, "signals", law_key, SPLITS["train"])
            bundle.save(arrays, {"law": law_key, "d": config.d, "counts": config.counts, "seed": config.seed,
                                 "spawn_keys": seeds})
        train = None
        for op in config.operators:
            ob = ArrayBundle(out / law_key / op)
            if ob.exists():
                continue
            if train is None:
                train = _calibration_signals(config, law_key)
            model = _operator(config, op)
            model = model.with_noise(calibrate_noise(model, train, config.snr_db))
            arrays, seeds = {"matrix": model.matrix}, {}
            for split in ("val", "test"):
                rng = stream(config.seed, "noise", law_key, op, SPLITS[split])
                arrays[f"{split}_y"] = synthesize_measurements(model, bundle.load(f"{split}_signals"), rng)
                seeds[split] = _spawn_key(config, "noise", law_key, op, SPLITS[split])
            ob.save(arrays, {"law": law_key, "operator": model.descriptor(), "snr_db": config.snr_db,
                             "seed": config.seed, "spawn_keys": seeds,
                             "operator_spawn_key": _spawn_key(config, "operator", op)})
            log.info("dataset %s/%s: sigma_n = %.6g", law_key, op, model.sigma_n)


def load_model(config, law_key, op):
    return model_from_descriptor(ArrayBundle(_out(config) / "dataset" / law_key / op).meta["operator"])


def load_measurements(config, law_key, op, split):
    return ArrayBundle(_out(config) / "dataset" / law_key / op).load(f"{split}_y")


def load_truths(config, law_key, split):
    return ArrayBundle(_out(config) / "dataset" / law_key).load(f"{split}_signals")


def gold_chain(matrix, y, sigma_n, law, burn_in, samples, keep, rng, segment=GOLD_SEGMENT):
    """Long Gibbs run summarized by its mean, marginal variance and ``keep`` evenly thinned draws.

    The chain runs in segments restarted from the last draw, which is
    exact because the signal (or increment) vector is the full chain state.
    """
    thin = samples // keep
    x = default_init(matrix, y)
    if burn_in:
        x = sample_posterior(matrix, y, sigma_n, law, burn_in, 1, rng, init=x).draws[-1]
    shift = None
    total = np.zeros_like(x)
    total2 = np.zeros_like(x)
    kept = []
    done = 0
    while done < samples:
        n = min(segment, samples - done)
        draws = sample_posterior(matrix, y, sigma_n, law, 0, n, rng, init=x).draws
        if shift is None:
            shift = draws.mean(axis=0)
        c = draws - shift
        total += c.sum(axis=0)
        total2 += (c * c).sum(axis=0)
        idx = np.arange(done, done + n)
        sel = (idx % thin == thin - 1) & (idx // thin < keep)
        kept.append(draws[sel])
        x = draws[-1]
        done += n
    mean_c = total / samples
    var = (total2 - samples * mean_c**2) / (samples - 1)
    return shift + mean_c, var, np.concatenate(kept)


def generate_gold(config):
    g = config.gold
    for law_key in config.laws:
        law = jump_law(law_key)
        for op in config.operators:
            model = load_model(config, law_key, op)
            ys = load_measurements(config, law_key, op, "test")
            store = ItemStore(_out(config) / "gold" / law_key / op)
            start = time.perf_counter()
            for i in range(int(config.counts["test"])):
                if store.done(i):
                    continue
                rng = stream(config.seed, "gold", law_key, op, i)
                mean, var, draws = gold_chain(model.matrix, ys[i], model.sigma_n, law, int(g["burn_in"]),
                                              int(g["samples"]), int(g["keep"]), rng)
                store.put(i, {"mean": mean, "var": var, "draws": draws},
                          {"burn_in": int(g["burn_in"]), "samples": int(g["samples"]),
                           "spawn_key": _spawn_key(config, "gold", law_key, op, i)})
            log.info("gold %s/%s done in %.1f s", law_key, op, time.perf_counter() - start)


def generate(config):
    """Dataset plus gold-standard posterior summaries for every test item."""
    _out(config).mkdir(parents=True, exist_ok=True)
    write_json(_out(config) / "config.json", config.to_dict())
    generate_dataset(config)
    generate_gold(config)
    return 0


# ---------------------------------------------------------------------------
# tune
# ---------------------------------------------------------------------------


def dps_grid(config, method):
    spec = config.tuning["grids"][method]
    pts = baselines.loglinear_grid(spec["a"], spec["b"], int(spec["n"]))
    if method == "cdps":
        return [{"zeta": float(z)} for z in pts]
    if method == "diffpir":
        return [{"lam": float(lam), "zeta": float(z)} for z in spec.get("zeta", baselines.DIFFPIR_ZETAS) for lam in pts]
    if method == "dpnp":
        return [{"eta_initial": float(e)} for e in pts]
    return [{"theta": float(v)} for v in pts]


def _dps_config(config, method, params, n_samples):
    return DpsConfig(method, dict(params), schedule_for(config), int(config.denoise["samples"]), int(n_samples))


def _tuning_path(config, law_key, op, key):
    return _out(config) / "tuning" / law_key / op / f"{key}.json"


def tuning_key(method, label=None):
    return method if label is None else f"{method}__{label}"


def load_tuning(config, law_key, op, key):
    path = _tuning_path(config, law_key, op, key)
    if not path.exists():
        raise StorageError(f"no tuning result for {key} on {law_key}/{op}; run the tune stage first")
    return read_json(path)


def tune(config):
    """Grid-search every method's parameters on the validation split; cached per (law, operator, method)."""
    tc = config.tuning
    for law_key in config.laws:
        truths_all = load_truths(config, law_key, "val")
        for op in config.operators:
            model = load_model(config, law_key, op)
            ys_all = load_measurements(config, law_key, op, "val")
            n_model = len(ys_all) if tc.get("model_items") is None else min(int(tc["model_items"]), len(ys_all))
            for method in config.model_methods():
                path = _tuning_path(config, law_key, op, method)
                if path.exists():
                    continue
                spec = tc["grids"][method]
                grid = baselines.loglinear_grid(spec["a"], spec["b"], int(spec["n"]))
                ys, xs = ys_all[:n_model], truths_all[:n_model]
                missed = 0
                if method == "l2":
                    best, curve = baselines.tune_l2(model.matrix, ys, xs, grid)
                else:
                    best, curve, missed = baselines.tune_l1(model.matrix, ys, xs, grid)
                write_json(path, {"method": method, "grid": grid.tolist(), "curve": curve.tolist(),
                                  "best": {"lam": best}, "items": n_model, "unconverged": missed})
                log.info("tuned %s on %s/%s: lam = %.4g", method, law_key, op, best)
            n_dps = min(int(tc["dps_items"]), len(ys_all))
            for method in config.dps_methods():
                grid = dps_grid(config, method)
                for den in config.denoisers:
                    label = config.denoiser_label(den)
                    path = _tuning_path(config, law_key, op, tuning_key(method, label))
                    if path.exists():
                        continue
                    denoiser = make_denoiser(config, den, law_key)

                    def run_one(theta, i, method=method, label=label, denoiser=denoiser):
                        rng = stream(config.seed, "tune", law_key, op, method, label, i)
                        cfg = _dps_config(config, method, theta, tc["dps_samples"])
                        return run_dps(cfg, ys_all[i], model, denoiser, rng).draws

                    start = time.perf_counter()
                    best, curve = baselines.tune_dps(run_one, truths_all[:n_dps], grid)
                    write_json(path, {"method": method, "denoiser": label, "grid": grid, "curve": curve.tolist(),
                                      "best": best, "items": n_dps})
                    log.info("tuned %s/%s on %s/%s: %s (%.1f s)", method, label, law_key, op, best,
                             time.perf_counter() - start)
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def run_store(config, law_key, op, method, label):
    return ItemStore(_out(config) / "runs" / law_key / op / method / label)


def _fail(store, i, exc):
    write_json(store.directory / f"failed_{i:05d}.json", {"item": i, "error": f"{type(exc).__name__}: {exc}"})


def _clear_failure(store, i):
    path = store.directory / f"failed_{i:05d}.json"
    if path.exists():
        path.unlink()


def run(config):
    """Posterior draws (or point estimates) for every requested cell and test item.

    Returns the number of items that failed; failures are recorded next to
    the results and retried by the next invocation.
    """
    failures = 0
    for law_key in config.laws:
        for op in config.operators:
            model = load_model(config, law_key, op)
            ys = load_measurements(config, law_key, op, "test")
            n = config.n_run
            for method in config.model_methods():
                store = run_store(config, law_key, op, method, POINT)
                try:
                    lam = load_tuning(config, law_key, op, method)["best"]["lam"]
                except StorageError as exc:
                    log.error("%s", exc)
                    failures += n - len(store.items())
                    continue
                solver = baselines.L1Path(model.matrix) if method == "l1" else None
                for i in range(n):
                    if store.done(i):
                        continue
                    meta = {"lam": lam}
                    try:
                        if method == "l2":
                            est = baselines.solve_l2(ys[i], model.matrix, lam)
                        else:
                            try:
                                est = solver.solve(ys[i], lam)
                            except ConvergenceError as exc:
                                est = exc.solution
                                meta.update(converged=False, gap=float(exc.gap))
                        store.put(i, {"estimate": est[None, :]}, meta)
                        _clear_failure(store, i)
                    except Exception as exc:  # recorded, the run goes on
                        failures += 1
                        _fail(store, i, exc)
                        log.error("%s %s/%s item %d failed: %s", method, law_key, op, i, exc)
            for method in config.dps_methods():
                for den in config.denoisers:
                    label = config.denoiser_label(den)
                    store = run_store(config, law_key, op, method, label)
                    try:
                        params = load_tuning(config, law_key, op, tuning_key(method, label))["best"]
                    except StorageError as exc:
                        log.error("%s", exc)
                        failures += n - len(store.items())
                        continue
                    denoiser = make_denoiser(config, den, law_key)
                    cfg = _dps_config(config, method, params, config.run["n_samples"])
                    start = time.perf_counter()
                    for i in range(n):
                        if store.done(i):
                            continue
                        rng = stream(config.seed, "run", law_key, op, method, label, i)
                        try:
                            draws = run_dps(cfg, ys[i], model, denoiser, rng).draws
                            store.put(i, {"draws": draws}, {"params": params,
                                      "spawn_key": _spawn_key(config, "run", law_key, op, method, label, i)})
                            _clear_failure(store, i)
                        except Exception as exc:  # recorded, the run goes on
                            failures += 1
                            _fail(store, i, exc)
                            log.error("%s/%s %s/%s item %d failed: %s", method, label, law_key, op, i, exc)
                    log.info("ran %s/%s on %s/%s (%.1f s)", method, label, law_key, op, time.perf_counter() - start)
                    if hasattr(denoiser, "close"):
                        denoiser.close()
    return failures


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _cells(config):
    for method in config.model_methods():
        yield method, POINT
    for method in config.dps_methods():
        for den in config.denoisers:
            yield method, config.denoiser_label(den)


def evaluate(config):
    """Per-item gap and coverage scores written to ``results/``.

    Items without a gold standard or without results are skipped; the
    gold-standard chain itself appears as method ``gibbs`` in the coverage
    table.
    """
    gaps, cover = [], []
    alpha = float(config.alpha)
    for law_key in config.laws:
        law = jump_law(law_key)
        truths = load_truths(config, law_key, "test")
        for op in config.operators:
            model = load_model(config, law_key, op)
            ys = load_measurements(config, law_key, op, "test")
            gold = ItemStore(_out(config) / "gold" / law_key / op)
            gold_items = [i for i in gold.items() if i < int(config.counts["test"])]
            post = {i: log_posterior(model.matrix, ys[i], model.sigma_n, law) for i in gold_items}
            gold_means = {i: gold.get(i, "mean") for i in gold_items}
            for i in gold_items:
                rec = hpd_coverage([gold.get(i, "draws")], [truths[i]], [post[i]], alpha)
                cover.append((op, law_key, "gibbs", POINT, i, float(rec.covered[0])))
            for method, label in _cells(config):
                store = run_store(config, law_key, op, method, label)
                for i in store.items():
                    if i not in gold_means:
                        continue
                    name = "estimate" if label == POINT else "draws"
                    draws = store.get(i, name)
                    gaps.append((op, law_key, method, label, i, mmse_gap_db(draws.mean(axis=0), gold_means[i], truths[i])))
                    if label != POINT:
                        rec = hpd_coverage([draws], [truths[i]], [post[i]], alpha)
                        cover.append((op, law_key, method, label, i, float(rec.covered[0])))
    res = _out(config) / "results"
    report_mod.write_rows(res / "gaps.csv", gaps)
    report_mod.write_rows(res / "coverage.csv", cover)
    return 0


# ---------------------------------------------------------------------------
# report and diagnose
# ---------------------------------------------------------------------------


def report(config):
    res = _out(config) / "results"
    order = {
        "laws": list(config.laws),
        "operators": list(config.operators),
        "methods": ["gibbs"] + list(config.methods),
        "reference": config.denoiser_label(config.denoisers[0]),
    }
    report_mod.build_report(res / "gaps.csv", res / "coverage.csv", _out(config) / "report", order)
    return 0


def diagnose(config):
    """Burn-in and sample-count protocols for one denoising problem."""
    dg = config.diagnose
    law = jump_law(dg["law"])
    out = _out(config) / "diagnose"
    args = (law, float(dg["sigma"]), int(dg["chains"]), int(dg["iterations"]), int(dg["n_avg"]))
    burn = burn_in_diagnostic(*args, stream(config.seed, "diagnose", dg["law"], 0), d=config.d)
    count = sample_count_diagnostic(*args, float(dg["tol"]), stream(config.seed, "diagnose", dg["law"], 1), d=config.d)
    report_mod.write_table(out / "burn_in_trace.csv", ["iteration", "w1"],
                           [(i + 1, v) for i, v in enumerate(burn["trace"])])
    report_mod.write_table(out / "sample_count_curve.csv", ["window", "mse"],
                           [(i + 1, v) for i, v in enumerate(count["curve"])])
    summary = {"law": dg["law"], "sigma": float(dg["sigma"]), "chains": int(dg["chains"]),
               "plateau_iteration": burn["plateau_iteration"], "plateau_level": burn["plateau_level"],
               "window": count["window"], "reached": count["reached"], "tol": float(dg["tol"])}
    write_json(out / "summary.json", summary)
    log.info("diagnose: plateau after %d iterations, window %d", burn["plateau_iteration"], count["window"])
    return 0
