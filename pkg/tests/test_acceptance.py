"""Acceptance gate: one test per stated criterion, one printed line each.

The desk-scale directional criteria share one module-scoped fixture that
generates the datasets and trains every model; expect roughly half an hour
of CPU for the full gate.  Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import sys
import time

import numpy as np
import pytest
from scipy import stats

from dasloc import channels as ch, evaluation as ev, nn, selection as sel, training
from dasloc import io

from oracles import brute_ecdf_at, brute_percentile, brute_rmse, channel_composition

SEEDS = (1, 2, 3)
DESK_R = 8000
SCEN_SEED = 101
DATA_SEED = 201


def criterion(number: int, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number:02d}: {detail}")
    assert ok, f"criterion {number}: {detail}"


def log(msg: str):
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# 1-2: channel model

def test_criterion_01_channel_model_oracle():
    rng = np.random.default_rng(42)
    t0 = time.time()
    worst = 0.0
    for _ in range(1000):
        n_scatter = int(rng.integers(0, 11))
        rrh = rng.uniform(-50, 50, size=2)
        while True:
            user = rng.uniform(-50, 50, size=2)
            if np.hypot(*(user - rrh)) > 0.5:
                break
        gamma = float(rng.uniform(0.5, 4.0))
        wavelength = float(rng.uniform(0.05, 0.5))
        scatterers = []
        for _ in range(n_scatter):
            while True:
                pos = rng.uniform(-70, 70, size=2)
                if (np.hypot(*(pos - rrh)) > 0.5 and np.hypot(*(pos - user)) > 0.5):
                    break
            scatterers.append(ch.Scatterer(ch.Position2D(*pos),
                                           float(rng.uniform(0, 2 * np.pi)), gamma))
        scenario = ch.Scenario(rrh_positions=rrh[None, :], scatterers=tuple(scatterers),
                               roi=(-50, 50, -50, 50), wavelength=wavelength, gamma=gamma)
        got = ch.channel_coefficient(user, rrh, scenario)
        ref = channel_composition(
            user, rrh,
            [((s.position.x, s.position.y), s.phase_shift, s.amplitude_gain)
             for s in scatterers],
            wavelength)
        worst = max(worst, abs(got - ref) / abs(ref))
    elapsed = time.time() - t0
    criterion(1, worst < 1e-10 and elapsed < 60,
              f"max rel err {worst:.3e} over 1000 instances in {elapsed:.1f}s")


def test_criterion_02_free_space_law():
    rng = np.random.default_rng(43)
    worst = 0.0
    for _ in range(1000):
        wavelength = float(rng.uniform(0.05, 2.0))
        rrh = rng.uniform(-50, 50, size=(1, 2))
        scenario = ch.Scenario(rrh_positions=rrh, scatterers=(),
                               roi=(-50, 50, -50, 50), wavelength=wavelength, gamma=0.0)
        while True:
            user = rng.uniform(-50, 50, size=2)
            if np.hypot(*(user - rrh[0])) > 0.5:
                break
        h = ch.channel_vector(user, scenario).channel[0]
        d = float(np.hypot(*(user - rrh[0])))
        target = wavelength / (4 * np.pi)
        worst = max(worst, abs(abs(h) * d - target) / target)
    criterion(2, worst < 1e-12, f"|h|*d vs wavelength/4pi, max rel err {worst:.3e}")


# ---------------------------------------------------------------------------
# 3: end-to-end gradients

def _kink_free_batch(trunk, logits, noise, tau, rng, batch, n):
    """Inputs whose pre-activations all clear the ReLU kink by >> the h=1e-6
    finite-difference step, so central differences are valid."""
    soft = sel.concrete_sample(logits[None, :, :], noise, tau)
    for _ in range(1000):
        x = rng.standard_normal((batch, n))
        gathered = (soft * x[:, None, :]).sum(axis=-1)
        _, cache = nn.mlp_forward(trunk, gathered)
        if min(np.min(np.abs(z)) for z in cache.preacts) > 3e-4:
            return x
    raise AssertionError("no kink-free batch found")


def test_criterion_03_gradient_fidelity():
    rng = np.random.default_rng(44)
    t0 = time.time()
    worst_theta = 0.0
    worst_phi = 0.0
    tau = 1.0
    for _ in range(20):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, min(4, n) + 1))
        batch = int(rng.integers(4, 9))
        trunk = nn.init_mlp([m, 16, 16, 2], seed=rng)
        for b in trunk.biases:  # spread pre-activations away from the origin
            b[:] = rng.uniform(-0.5, 0.5, b.shape)
        logits = nn.glorot_init(m, n, rng)
        noise = sel.gumbel_icdf(rng.random((batch, m, n)))
        x = _kink_free_batch(trunk, logits, noise, tau, rng, batch, n)
        y = rng.standard_normal((batch, 2))

        template = trunk
        plist = [logits] + trunk.parameter_arrays()
        flat, shapes = nn.flatten_arrays(plist)

        def loss_at(vec):
            arrs = nn.unflatten_arrays(vec, shapes)
            phi, rest = arrs[0], arrs[1:]
            net = nn.MlpParams(weights=rest[0::2], biases=rest[1::2],
                               activations=template.activations,
                               dropout_rates=template.dropout_rates)
            soft = sel.concrete_sample(phi[None, :, :], noise, tau)
            gathered = (soft * x[:, None, :]).sum(axis=-1)
            pred, _ = nn.mlp_forward(net, gathered)
            loss, _ = nn.mse_loss_grad(pred, y)
            return loss

        soft = sel.concrete_sample(logits[None, :, :], noise, tau)
        gathered = (soft * x[:, None, :]).sum(axis=-1)
        pred, cache = nn.mlp_forward(trunk, gathered)
        _, dpred = nn.mse_loss_grad(pred, y)
        grads = nn.backprop(trunk, cache, dpred)
        dsoft = grads.dinput[:, :, None] * x[:, None, :]
        dlogits = sel.concrete_sample_grad(soft, dsoft, tau).sum(axis=0)
        analytic, _ = nn.flatten_arrays([dlogits] + grads.parameter_arrays())
        numeric = nn.finite_diff_gradients(loss_at, flat, h=1e-6)

        n_phi = logits.size
        def rel(a, b):
            return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6))
        worst_phi = max(worst_phi, rel(analytic[:n_phi], numeric[:n_phi]))
        worst_theta = max(worst_theta, rel(analytic[n_phi:], numeric[n_phi:]))
    elapsed = time.time() - t0
    criterion(3, worst_theta < 1e-4 and worst_phi < 1e-4 and elapsed < 120,
              f"max rel err theta {worst_theta:.3e}, phi {worst_phi:.3e} "
              f"over 20 configs in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4-5: sampling and annealing

def test_criterion_04_gumbel_max_fidelity():
    logits = np.log(np.array([1.0, 2.0, 3.0, 4.0]))
    trials = 200_000
    draws = np.array([sel.gumbel_max_sample(logits, seed=[45, i]) for i in range(trials)])
    counts = np.bincount(draws, minlength=4)
    expected = np.array([0.1, 0.2, 0.3, 0.4]) * trials
    result = stats.chisquare(counts, f_exp=expected)
    criterion(4, result.pvalue > 0.001,
              f"chi-square p={result.pvalue:.4f}, counts={counts.tolist()}")


def test_criterion_05_annealing_exactness():
    schedule = sel.TemperatureSchedule(tau_start=10.0, tau_end=0.1, total_epochs=800)
    start = sel.temperature(0, schedule)
    end = sel.temperature(800, schedule)
    start_err = abs(start - 10.0) / 10.0
    end_err = abs(end - 0.1) / 0.1
    values = [sel.temperature(t, schedule) for t in range(801)]
    decreasing = all(a > b for a, b in zip(values, values[1:]))
    criterion(5, start_err < 1e-12 and end_err < 1e-12 and decreasing,
              f"tau(0) err {start_err:.2e}, tau(T) err {end_err:.2e}, "
              f"strictly decreasing={decreasing}")


# ---------------------------------------------------------------------------
# 6: planted-feature recovery

def planted_dataset(r, seed, n=6):
    rng = np.random.default_rng([seed, 77])
    pos = rng.uniform(-50, 50, size=(r, 2))
    feats = np.empty((r, n))
    feats[:, 0] = pos[:, 0] / 50.0
    feats[:, 1] = pos[:, 1] / 50.0
    feats[:, 2:] = rng.standard_normal((r, n - 2))
    return ch.Dataset(positions=pos, features=feats, feature_mode="magnitude", n=n)


def test_criterion_06_planted_feature_recovery():
    hits = 0
    slowest = 0.0
    for seed in range(10):
        t0 = time.time()
        dataset = planted_dataset(2000, seed=seed)
        cfg = training.TrainConfig(epochs=200, batch_size=128, m=2, seed=seed,
                                   hidden_layers=2, hidden_units=32, patience=200)
        trained = training.train_rsd(dataset, cfg)
        picks = set(sel.hard_select(trained.selector).tolist())
        hits += picks == {0, 1}
        slowest = max(slowest, time.time() - t0)
    criterion(6, hits >= 8 and slowest < 120,
              f"recovered planted dims in {hits}/10 seeds, slowest seed {slowest:.1f}s")


# ---------------------------------------------------------------------------
# 7-11: desk-scale directional reproductions (shared trained state)

def _desk_dataset(n, gamma, mode="magnitude", layout="grid"):
    cfg = ch.ScenarioConfig(n=n, gamma=gamma, layout=layout)
    scenario = ch.generate_scenario(cfg, SCEN_SEED)
    return ch.generate_dataset(scenario, DESK_R, mode, DATA_SEED, workers=2)


def _fit_and_score(dataset, indices, seed):
    cfg = training.TrainConfig(seed=seed, m=len(indices))
    t0 = time.time()
    model = training.train_lud(dataset, indices, cfg)
    samples = ev.evaluate_on_test(model, dataset, cfg)
    errors = np.array([s.error for s in samples])
    return {
        "rmse": ev.rmse(samples),
        "p90": ev.percentile(errors, 0.9),
        "secs": time.time() - t0,
        "unique": sel.unique_count(indices),
    }


@pytest.fixture(scope="module")
def desk():
    """All desk-scale datasets and trained models behind criteria 7-11."""
    t0 = time.time()
    datasets = {
        "n16_g12": _desk_dataset(16, 1.2),
        "n16_g30": _desk_dataset(16, 3.0),
        "n36_g30": _desk_dataset(36, 3.0),
        "cent_g30": _desk_dataset(16, 3.0, mode="complex_split", layout="circle"),
    }
    log(f"[desk] datasets generated in {time.time() - t0:.0f}s")
    results: dict[str, list[dict]] = {}

    for key in ("n16_g12", "n16_g30", "n36_g30", "cent_g30"):
        dataset = datasets[key]
        rows = []
        for seed in SEEDS:
            row = _fit_and_score(dataset, np.arange(dataset.feature_dim), seed)
            rows.append(row)
            log(f"[desk] {key} seed {seed}: rmse={row['rmse']:.3f} "
                f"p90={row['p90']:.3f} ({row['secs']:.0f}s)")
        results[key] = rows

    ds = datasets["n16_g30"]
    for m in (6, 12):
        rows = []
        for seed in SEEDS:
            cfg = training.TrainConfig(seed=seed, m=m)
            t1 = time.time()
            trained = training.train_rsd(ds, cfg)
            indices = training.run_selection(trained)
            row = _fit_and_score(ds, indices, seed)
            row["rsd_secs"] = time.time() - t1 - row["secs"]
            row["indices"] = sorted(set(int(i) for i in indices))
            rows.append(row)
            log(f"[desk] rsd m={m} seed {seed}: rmse={row['rmse']:.3f} "
                f"picks={row['indices']} ({row['rsd_secs']:.0f}s select)")
        results[f"m{m}_rsd"] = rows

    for method in ("cg", "random"):
        rows = []
        for seed in SEEDS:
            if method == "cg":
                tr, va, _ = training.split_indices(ds.r, 0.8, seed)
                indices = sel.select_cg(ds.subset(np.concatenate([tr, va])), 6)
            else:
                indices = sel.select_random(16, 6, seed)
            row = _fit_and_score(ds, indices, seed)
            rows.append(row)
            log(f"[desk] {method} m=6 seed {seed}: rmse={row['rmse']:.3f}")
        results[f"m6_{method}"] = rows

    log(f"[desk] all trainings done in {time.time() - t0:.0f}s")
    return results


def _mean(rows, key):
    return float(np.mean([r[key] for r in rows]))


def test_criterion_07_nlos_strength_degrades_accuracy(desk):
    low = _mean(desk["n16_g12"], "p90")
    high = _mean(desk["n16_g30"], "p90")
    slowest = max(r["secs"] for r in desk["n16_g12"] + desk["n16_g30"])
    criterion(7, high > low and slowest < 1200,
              f"p90 gamma=3.0 {high:.3f} m > gamma=1.2 {low:.3f} m "
              f"(slowest run {slowest:.0f}s)")


def test_criterion_08_more_antennas_help(desk):
    n36 = _mean(desk["n36_g30"], "rmse")
    n16 = _mean(desk["n16_g30"], "rmse")
    criterion(8, n36 < n16, f"rmse N=36 {n36:.3f} m < N=16 {n16:.3f} m at gamma=3.0")


def test_criterion_09_distributed_beats_centralized(desk):
    das = _mean(desk["n16_g30"], "p90")
    cent = _mean(desk["cent_g30"], "p90")
    criterion(9, das < cent,
              f"p90 distributed {das:.3f} m < centralized circular array {cent:.3f} m")


def test_criterion_10_learned_selection_beats_baselines(desk):
    rsd = _mean(desk["m6_rsd"], "rmse")
    cg = _mean(desk["m6_cg"], "rmse")
    rand = _mean(desk["m6_random"], "rmse")
    criterion(10, rsd < cg and rsd < rand,
              f"rmse learned {rsd:.3f} m vs channel-gain {cg:.3f} m "
              f"vs random {rand:.3f} m (M=6 of 16)")


def test_criterion_11_small_selection_cost(desk):
    m12 = _mean(desk["m12_rsd"], "rmse")
    full = _mean(desk["n16_g30"], "rmse")
    criterion(11, m12 <= 1.25 * full,
              f"rmse M=12 {m12:.3f} m within 25% of full-array {full:.3f} m "
              f"(ratio {m12 / full:.3f})")


# ---------------------------------------------------------------------------
# 12: metric oracles

def test_criterion_12_metric_oracles():
    rng = np.random.default_rng(46)
    for _ in range(100):
        errors = rng.uniform(0, 10, size=int(rng.integers(1, 60))).tolist()
        assert ev.rmse(errors) == brute_rmse(errors)
        for x in rng.uniform(0, 11, size=5):
            assert ev.ecdf_at(errors, float(x)) == brute_ecdf_at(errors, float(x))
        p = float(rng.uniform(0.01, 1.0))
        assert ev.percentile(errors, p) == brute_percentile(errors, p)
        curve = ev.ecdf(errors)
        assert curve[-1, 1] == 1.0
    criterion(12, True, "rmse/ecdf/percentile equal brute force on 100 random multisets")


# ---------------------------------------------------------------------------
# 13: byte-level reproducibility

def test_criterion_13_reproducibility(tmp_path):
    cfg = ch.ScenarioConfig(n=4, k=12, gamma=1.5, roi=(-20, 20, -20, 20))
    scenario = ch.generate_scenario(cfg, seed=7)
    paths = {}
    for tag, workers in (("serial", 1), ("eight", 8), ("again", 1)):
        dataset = ch.generate_dataset(scenario, 300, "magnitude", seed=8, workers=workers)
        path = tmp_path / f"{tag}.dasl"
        io.write_dataset(path, dataset)
        paths[tag] = path.read_bytes()
    datasets_ok = paths["serial"] == paths["eight"] == paths["again"]

    dataset = ch.generate_dataset(scenario, 300, "magnitude", seed=8)
    tcfg = training.TrainConfig(epochs=6, batch_size=64, m=4, seed=9,
                                hidden_layers=1, hidden_units=16, patience=6)
    blobs = []
    for tag in ("m1", "m2"):
        model = training.train_lud(dataset, np.arange(4), tcfg)
        path = tmp_path / f"{tag}.dasm"
        io.write_model(path, model)
        blobs.append(path.read_bytes())
    models_ok = blobs[0] == blobs[1]
    criterion(13, datasets_ok and models_ok,
              f"dataset bytes identical across reruns and 1-vs-8 workers: {datasets_ok}; "
              f"model bytes identical across retrains: {models_ok}")
