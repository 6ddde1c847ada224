"""Acceptance suite: one group of tests per criterion, summarised one line each.

Run with ``python3 -m pytest tests/test_acceptance.py -v``; the terminal
summary ends with a ``criterion N PASS/FAIL`` line per criterion.
"""
import csv
import json
import math
import time

import numpy as np
import pytest

from conftest import geometry, reference
from oracles import brute_force, random_rotation
from specgeo import autodiff as ad
from specgeo import config as config_mod
from specgeo.autoencoder import GeoAutoencoder, ae_loss, build_edge_features, inject_spectral_edges
from specgeo.chem import perceive_bonds
from specgeo.config import ModelConfig, RunConfig
from specgeo.diffusion import Denoiser, forward_sample, ldm_loss, make_schedule, sample_latents
from specgeo.egnn import EGNN, GraphBatch, com_residual, zero_com_project
from specgeo.encoder import SpectralClassifier, bce_loss
from specgeo.evaluation import evaluate
from specgeo.fingerprint import canonical_key
from specgeo.nn import Attention, lr_rate
from specgeo.sampling import load_samples, replay_sampling, run_sampling
from specgeo.smarts import default_groups, match_pattern
from specgeo.spectra import DEFAULT_GRID, ModeList, Spectrum, WavenumberGrid, broaden, sis, sis_star
from specgeo.store import ingest
from specgeo.training import replay, train_stage

C1 = pytest.mark.criterion(1, "equivariance of EGNN stacks, encoder, decoder and denoiser")
C2 = pytest.mark.criterion(2, "gradients match central differences")
C3 = pytest.mark.criterion(3, "zero centre of mass along full diffusion trajectories")
C4 = pytest.mark.criterion(4, "spectral similarity metrics")
C5 = pytest.mark.criterion(5, "Lorentzian broadening constants")
C6 = pytest.mark.criterion(6, "bond perception on the 30-molecule corpus")
C7 = pytest.mark.criterion(7, "pattern matching agrees with the brute-force oracle")
C8 = pytest.mark.criterion(8, "learning-rate schedule")
C9 = pytest.mark.criterion(9, "toy overfit: classifier, autoencoder, diffusion, graph recovery")
C10 = pytest.mark.criterion(10, "bitwise reproducibility from manifests")

TEST_SCALE = ModelConfig()


def _activate(module, rng, scale=0.3):
    """Replace zero-initialised coordinate heads by random weights so equivariance is not vacuous."""
    for name, p in module.named_parameters().items():
        if "phi_x" in name and not p.data.any():
            p.data[:] = rng.normal(scale=scale, size=p.shape)


def _spectral(rng, cfg, formulas):
    clf = SpectralClassifier(cfg, 20, rng)
    return clf([np.abs(rng.normal(size=3200)) for _ in formulas], list(formulas)).encoded


# ---------------------------------------------------------------- 1

ELAPSED: dict[int, float] = {}


@pytest.fixture
def timed(request):
    """Add this test's wall time to its criterion's running total."""
    number = request.node.get_closest_marker("criterion").args[0]
    start = time.perf_counter()
    yield
    ELAPSED[number] = ELAPSED.get(number, 0.0) + time.perf_counter() - start


@C1
def test_c1_egnn_stack(timed):
    rng = np.random.default_rng(101)
    net = EGNN(8, 8, 9, rng, d_node=64, hidden=64, d_edge=4)
    _activate(net, rng, 0.1)
    batch = GraphBatch((5, 7, 3))
    h = ad.tensor(rng.normal(size=(15, 8)))
    a = ad.tensor(rng.normal(size=(batch.n_edges, 4)))
    x = rng.normal(size=(15, 3))
    h0, x0 = net(h, ad.tensor(x), batch, a)
    for _ in range(10):
        q, g = random_rotation(rng), rng.normal(size=3)
        h1, x1 = net(h, ad.tensor(x @ q.T + g), batch, a)
        assert np.abs(x1.data - (x0.data @ q.T + g)).max() < 1e-8
        assert np.abs(h1.data - h0.data).max() < 1e-10


@C1
def test_c1_autoencoder(timed):
    rng = np.random.default_rng(102)
    ae = GeoAutoencoder(TEST_SCALE, rng)
    _activate(ae, rng, 0.1)
    enc = _spectral(rng, TEST_SCALE, ["C2H6O", "CH4"])
    batch = GraphBatch((9, 5))
    elements = ["C", "C", "O", "H", "H", "H", "H", "H", "H", "C", "H", "H", "H", "H"]
    x = rng.normal(size=(14, 3)) * 1.2
    base = ae(x, elements, enc, batch)
    for _ in range(10):
        q, g = random_rotation(rng), rng.normal(size=3)
        out = ae(x @ q.T + g, elements, enc, batch)
        assert np.abs(out.mean.data - base.mean.data @ q.T).max() < 1e-8      # encoder
        assert np.abs(out.x_rec.data - base.x_rec.data @ q.T).max() < 1e-8    # decoder
        assert np.abs(out.z_h_aug.data - base.z_h_aug.data).max() < 1e-10


@C1
def test_c1_denoiser(timed):
    rng = np.random.default_rng(103)
    model = Denoiser(TEST_SCALE, rng)
    _activate(model, rng, 0.1)
    enc = _spectral(rng, TEST_SCALE, ["CH4O", "C2H2"])
    batch = GraphBatch((6, 4))
    ae = GeoAutoencoder(TEST_SCALE, rng)
    z_h = ae.condition(["C", "O", "H", "H", "H", "H", "C", "C", "H", "H"], enc, batch, batch.node_graph)[0]
    z = zero_com_project(rng.normal(size=(10, 3)), batch)
    t = np.array([37, 80])
    base = model(ad.tensor(z), t, z_h, enc, batch).eps.data
    edges = inject_spectral_edges(build_edge_features(ad.tensor(z), z_h, batch, model.edge_builder),
                                  enc, batch, model.edge_attn)[0].data
    for _ in range(10):
        q, g = random_rotation(rng), rng.normal(size=3)
        moved = z @ q.T + g
        out = model(ad.tensor(moved), t, z_h, enc, batch).eps.data
        assert np.abs(out - base @ q.T).max() < 1e-8
        e2 = inject_spectral_edges(build_edge_features(ad.tensor(moved), z_h, batch, model.edge_builder),
                                   enc, batch, model.edge_attn)[0].data
        assert np.abs(e2 - edges).max() < 1e-10


@C1
def test_c1_runtime():
    assert 0 < ELAPSED.get(1, 0.0) < 60.0


# ---------------------------------------------------------------- 2

POINTS = 20


def _unary(fn, domain=None):
    return fn, domain


OPS = {
    "add": lambda x: (x + x[::-1] * 0.5).sum(),
    "sub": lambda x: (x - x * x).sum(),
    "mul": lambda x: (x * x[::-1]).sum(),
    "div": lambda x: (x / (x * x + 1.0)).sum(),
    "power": lambda x: ad.power(x * x + 0.5, 1.5).sum(),
    "square": lambda x: ad.square(x).sum(),
    "exp": lambda x: ad.exp(x).sum(),
    "log": lambda x: ad.log(x * x + 0.1).sum(),
    "sqrt": lambda x: ad.sqrt(x * x + 0.2).sum(),
    "sigmoid": lambda x: ad.sigmoid(x).sum(),
    "silu": lambda x: ad.silu(x).sum(),
    "softplus": lambda x: ad.softplus(x * 3.0).sum(),
    "tanh": lambda x: ad.tanh(x).sum(),
    "sum_axis": lambda x: (x.reshape(3, 4).sum(axis=0) ** 2).sum(),
    "mean_axis": lambda x: (x.reshape(3, 4).mean(axis=1, keepdims=True) ** 2).sum(),
    "reshape_transpose": lambda x: (x.reshape(3, 4).transpose() * np.arange(12.0).reshape(4, 3)).sum(),
    "getitem": lambda x: (x[2:7] ** 3).sum(),
    "take": lambda x: (ad.take(x.reshape(6, 2), np.array([0, 3, 3, 5])) ** 2).sum(),
    "segment_sum": lambda x: (ad.segment_sum(x.reshape(6, 2), np.array([0, 1, 1, 2, 0, 2]), 3) ** 2).sum(),
    "concat": lambda x: (ad.concat([x.reshape(3, 4), x.reshape(3, 4) * 2.0], axis=1) ** 3).sum(),
    "matmul": lambda x: (ad.matmul(x.reshape(3, 4), x.reshape(4, 3)) ** 2).sum(),
    "linear": lambda x: (ad.linear(x.reshape(3, 4), x.reshape(4, 3), x[:3]) ** 2).sum(),
    "softmax_masked": lambda x: (ad.softmax(x.reshape(3, 4), mask=np.array([[0, 0, -np.inf, 0]] * 3))
                                 * np.arange(12.0).reshape(3, 4)).sum(),
    "layer_norm": lambda x: (ad.layer_norm(x.reshape(3, 4), ad.tensor(np.linspace(0.5, 1.5, 4)),
                                           ad.tensor(np.linspace(-0.2, 0.2, 4))) * np.arange(12.0).reshape(3, 4)).sum(),
}




@C2
@pytest.mark.parametrize("name", sorted(OPS))
def test_c2_operations(name, timed):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(POINTS):
        report = ad.grad_check(OPS[name], rng.normal(size=12))
        assert report.max_rel_error < 1e-4, (name, report.max_rel_error)


@C2
def test_c2_attention(timed):
    rng = np.random.default_rng(7)
    attn = Attention(8, 6, 2, rng)
    ctx = ad.tensor(rng.normal(size=(5, 6)))
    w = rng.normal(size=(3, 8))
    for _ in range(POINTS):
        report = ad.grad_check(lambda q: (attn(q, ctx)[0] * w).sum(), rng.normal(size=(3, 8)))
        assert report.max_rel_error < 1e-4


def _directional_errors(loss_fn, params, rng, count=POINTS, step=1e-5):
    """Compare gradient . v with central differences along random directions v."""
    grads = ad.gradients(loss_fn(), params)
    errors = []
    for _ in range(count):
        dirs = [rng.normal(size=p.shape) for p in params]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        originals = [p.data.copy() for p in params]
        values = []
        for sign in (1.0, -1.0):
            for p, d, o in zip(params, dirs, originals):
                p.data[...] = o + sign * step * d
            values.append(loss_fn().item())
        for p, o in zip(params, originals):
            p.data[...] = o
        numeric = (values[0] - values[1]) / (2 * step)
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3))
    return errors


SMALL = ModelConfig(d_s=16, heads=2, enc_layers=1, dec_layers=1, d_h=8, d_edge=8, egnn_hidden=16,
                    decoder_layers=2, denoiser_layers=2, cross_layers=2, cross_heads=2, t_dim=8)


@C2
def test_c2_classification_loss(timed):
    rng = np.random.default_rng(21)
    clf = SpectralClassifier(SMALL, 6, rng)
    spectra = [np.abs(rng.normal(size=3200)) for _ in range(2)]
    y = (rng.random((2, 6)) > 0.5).astype(float)
    loss = lambda: bce_loss(clf(spectra, ["CH4", "C2H6O"]).logits, y)
    assert max(_directional_errors(loss, clf.parameters(), rng)) < 1e-4


@C2
def test_c2_autoencoder_loss(timed):
    rng = np.random.default_rng(22)
    ae = GeoAutoencoder(SMALL, rng)
    _activate(ae, rng, 0.1)
    enc = _spectral(rng, SMALL, ["CH4O", "H2O"])
    batch = GraphBatch((6, 3))
    elements = ["C", "O", "H", "H", "H", "H", "O", "H", "H"]
    x = rng.normal(size=(9, 3))

    def loss():
        out = ae(x, elements, enc, batch, rng=np.random.default_rng(5))
        return ae_loss(out, batch, SMALL.sigma0, SMALL.lambda_kl)[0]

    assert max(_directional_errors(loss, ae.parameters(), rng)) < 1e-4


@C2
def test_c2_diffusion_loss(timed):
    rng = np.random.default_rng(23)
    model = Denoiser(SMALL, rng)
    _activate(model, rng, 0.1)
    enc = _spectral(rng, SMALL, ["CH4O", "H2O"])
    batch = GraphBatch((6, 3))
    z_h = GeoAutoencoder(SMALL, rng).condition(["C", "O", "H", "H", "H", "H", "O", "H", "H"],
                                                enc, batch, batch.node_graph)[0].detach()
    z0 = zero_com_project(rng.normal(size=(9, 3)), batch)
    schedule = make_schedule(SMALL.steps)

    def loss():
        predict = lambda z, t: model(z, t, z_h, enc, batch).eps
        return ldm_loss(z0, batch, schedule, predict, np.random.default_rng(6))[0]

    assert max(_directional_errors(loss, model.parameters(), rng)) < 1e-4


@C2
def test_c2_runtime():
    assert 0 < ELAPSED.get(2, 0.0) < 300.0


# ---------------------------------------------------------------- 3

@C3
def test_c3_forward_trajectory():
    rng = np.random.default_rng(31)
    s = make_schedule(100)
    batch = GraphBatch((7, 4, 9))
    z = zero_com_project(rng.normal(size=(20, 3)), batch)
    z0 = z.copy()
    worst = 0.0
    for t in range(1, 101):
        eps = zero_com_project(rng.normal(size=z.shape), batch)
        z = np.sqrt(1 - s.beta[t]) * z + np.sqrt(s.beta[t]) * eps
        worst = max(worst, com_residual(z, batch))
        marginal = forward_sample(z0, t, s, zero_com_project(rng.normal(size=z.shape), batch))
        worst = max(worst, com_residual(marginal, batch))
    assert worst <= 1e-9


@C3
def test_c3_reverse_trajectory():
    rng = np.random.default_rng(32)
    model = Denoiser(TEST_SCALE, rng)
    _activate(model, rng, 0.02)
    enc = _spectral(rng, TEST_SCALE, ["CH4", "H2O"])
    batch = GraphBatch((5, 3))
    z_h = GeoAutoencoder(TEST_SCALE, rng).condition(["C", "H", "H", "H", "H", "O", "H", "H"],
                                                     enc, batch, batch.node_graph)[0]
    s = make_schedule(100)

    def eps_fn(z, t):
        # exact predictor for data at the origin keeps the untrained trajectory bounded
        scale = 1.0 / np.sqrt(1.0 - s.alpha[t])[batch.node_graph][:, None]
        return scale * z + model(ad.tensor(z), t, z_h, enc, batch).eps.data

    trace = []
    sample_latents(eps_fn, batch, s, np.random.default_rng(1), trace=trace)
    assert len(trace) == 101
    assert max(com_residual(z, batch) for z in trace) <= 1e-9


# ---------------------------------------------------------------- 4

@C4
def test_c4_self_similarity():
    rng = np.random.default_rng(41)
    for _ in range(5):
        a = Spectrum(rng.random(3200) ** 2)
        assert sis(a, a) == 1.0
        assert sis_star(a, a) == 1.0


@C4
def test_c4_two_bin_example():
    grid = WavenumberGrid(400.0, 2, 1.0)
    a, b = Spectrum(np.array([0.5, 0.5]), grid), Spectrum(np.array([0.25, 0.75]), grid)
    assert abs(sis(a, b) - 0.78450) <= 1e-4


@C4
def test_c4_scale_invariance():
    rng = np.random.default_rng(42)
    a, b = Spectrum(rng.random(3200)), Spectrum(rng.random(3200))
    ref = sis(a, b)
    for c in (0.1, 1.0, 10.0):
        assert sis(a.scaled(c), b) == pytest.approx(ref, rel=1e-12)
        assert sis(a, b.scaled(c)) == pytest.approx(ref, rel=1e-12)


@C4
def test_c4_single_peak_integral():
    f = 15.0
    for y in (0.3, 1.0, 7.5):
        grid = WavenumberGrid(start=1500 - 60 * f, count=int(120 * f / 0.05), spacing=0.05)
        s = broaden(ModeList.from_pairs([[1500 / 0.965, y]]), grid, half_width=f)
        area = float(np.sum(0.5 * (s.intensities[1:] + s.intensities[:-1])) * grid.spacing)
        assert abs(area - y) / y < 0.02


# ---------------------------------------------------------------- 5

@C5
def test_c5_peak_position():
    for x in (800.0, 1000.0, 1712.3, 2500.0, 3100.0):
        s = broaden(ModeList.from_pairs([[x, 1.0]]))
        assert int(np.argmax(s.intensities)) == DEFAULT_GRID.nearest(0.965 * x)


@C5
def test_c5_center_height():
    for x, y in ((1000.0, 1.0), (2000.0, 3.5)):
        center = 0.965 * x
        grid = WavenumberGrid(start=center - 10.0, count=21, spacing=1.0)
        s = broaden(ModeList.from_pairs([[x, y]]), grid)
        expected = 2 * y / (math.pi * 15.0)
        assert abs(s.intensities[10] - expected) <= 0.005 * expected


# ---------------------------------------------------------------- 6

@C6
def test_c6_corpus(bond_corpus):
    assert len(bond_corpus) == 30
    hits = sum(canonical_key(perceive_bonds(geometry(r))) == canonical_key(reference(r)) for r in bond_corpus)
    assert hits == 30


@C6
def test_c6_invariance(bond_corpus):
    rng = np.random.default_rng(61)
    for r in bond_corpus:
        geom = geometry(r)
        key = canonical_key(reference(r))
        perm = rng.permutation(len(geom))
        assert canonical_key(perceive_bonds(geom.permuted(perm))) == key, r["id"]
        moved = geom.transformed(random_rotation(rng), rng.normal(size=3) * 5)
        assert canonical_key(perceive_bonds(moved)) == key, r["id"]


# ---------------------------------------------------------------- 7

@C7
def test_c7_patterns_parse():
    groups = default_groups()
    assert len(groups) == 20 and len(groups.patterns) == 20


@C7
def test_c7_oracle_counts(pattern_corpus):
    groups = default_groups()
    for rec in pattern_corpus:
        graph = reference(rec)
        for name, pattern in zip(groups.names, groups.patterns):
            assert len(match_pattern(pattern, graph)) == len(brute_force(pattern, graph)), (rec["id"], name)


# ---------------------------------------------------------------- 8

@C8
def test_c8_lr_schedule():
    assert abs(lr_rate(3000, 3000, 1) - 8.0688e-4) <= 1e-8
    rates = np.array([lr_rate(s, 3000, 1) for s in range(1, 12001)])
    assert int(np.argmax(rates)) + 1 == 3000
    assert np.all(np.diff(rates[:2999]) > 0) and np.all(np.diff(rates[2999:]) < 0)


# ---------------------------------------------------------------- 9 and 10

def _fixture_store(root, records):
    xyz = root / "xyz"
    xyz.mkdir(parents=True)
    with open(root / "spectra.jsonl", "w") as fh:
        for r in records:
            (xyz / f"{r['id']}.xyz").write_text(r["xyz"])
            fh.write(json.dumps({"id": r["id"], "modes": r["modes"], "graph": r["graph"]}) + "\n")
    store, drops = ingest(xyz, root / "spectra.jsonl", root / "store")
    assert not drops
    return store


@pytest.fixture(scope="module")
def toy_overfit(tmp_path_factory, toy10):
    """Whole pipeline on ten molecules with the packaged toy configuration."""
    root = tmp_path_factory.mktemp("overfit")
    start = time.perf_counter()
    store = _fixture_store(root, toy10)
    cfg = config_mod.preset("toy_overfit")
    cls = train_stage("classifier", store, cfg, root / "run")
    ae = train_stage("ae", store, cfg, root / "run", init=cls.checkpoint)
    ldm = train_stage("ldm", store, cfg, root / "run", init=ae.checkpoint)
    run_sampling(store, ldm.checkpoint, root / "samples", k=20, seed=cfg.seed)
    report = evaluate(load_samples(root / "samples"), store)
    elapsed = time.perf_counter() - start
    (root / "report.csv").write_text(report.to_csv())
    return {"cls": cls, "ae": ae, "ldm": ldm, "report": report, "seconds": elapsed, "root": root}


@C9
@pytest.mark.slow
def test_c9_classifier_accuracy(toy_overfit):
    assert toy_overfit["cls"].metrics["label_acc"] >= 0.95


@C9
@pytest.mark.slow
def test_c9_reconstruction(toy_overfit):
    assert toy_overfit["ae"].metrics["recon_mse"] <= 1e-3


@C9
@pytest.mark.slow
def test_c9_graph_recovery(toy_overfit):
    rows = toy_overfit["report"].rows
    recovered = sum(r.mol_acc == 1.0 for r in rows)
    print(toy_overfit["report"].to_csv())
    assert len(rows) == 10
    assert recovered >= 8, f"{recovered}/10 spectra recovered"


@C9
@pytest.mark.slow
def test_c9_runtime(toy_overfit):
    assert toy_overfit["seconds"] <= 30 * 60


def _windowed_ldm_loss(result):
    with open(result.log) as fh:
        return np.array([float(row["ldm_loss"]) for row in csv.DictReader(fh)])


@pytest.mark.slow
def test_ldm_loss_falls_during_overfit(toy_overfit):
    losses = _windowed_ldm_loss(toy_overfit["ldm"])
    assert toy_overfit["ldm"].log.read_text().count("\n") > 10
    assert losses[-10:].mean() < 0.6 * losses[0]


@pytest.mark.slow
@pytest.mark.xfail(reason="50-step window means plateau with noise after a few hundred steps", strict=False)
def test_ldm_loss_windowed_monotone(toy_overfit):
    losses = _windowed_ldm_loss(toy_overfit["ldm"])
    assert np.all(np.diff(losses) <= 0)


TINY = RunConfig(
    model=ModelConfig(d_s=16, heads=2, enc_layers=1, dec_layers=1, d_h=8, d_edge=8, egnn_hidden=16,
                      decoder_layers=2, denoiser_layers=2, cross_layers=1, cross_heads=2, t_dim=8, steps=100),
    batch_size=4, warmup=5, seed=11, log_every=1,
)


@pytest.fixture(scope="module")
def short_runs(tmp_path_factory, toy10):
    root = tmp_path_factory.mktemp("determinism")
    store = _fixture_store(root, toy10)
    cls = train_stage("classifier", store, TINY, root / "run", steps=4)
    ae = train_stage("ae", store, TINY, root / "run", init=cls.checkpoint, steps=4)
    ldm = train_stage("ldm", store, TINY, root / "run", init=ae.checkpoint, steps=4)
    run_sampling(store, ldm.checkpoint, root / "samples", k=3, seed=5)
    return {"classifier": cls, "ae": ae, "ldm": ldm, "root": root}


@C10
@pytest.mark.parametrize("stage", ["classifier", "ae", "ldm"])
def test_c10_stage_replay(short_runs, tmp_path, stage):
    original = short_runs[stage]
    again = replay(original.manifest, tmp_path / stage)
    assert again.checkpoint.read_bytes() == original.checkpoint.read_bytes()
    assert again.log.read_bytes() == original.log.read_bytes()


@C10
def test_c10_sampling_replay(short_runs, tmp_path):
    first = short_runs["root"] / "samples"
    assert replay_sampling(first / "sampling_manifest.json", tmp_path / "again")
    # the listing records every draw, including ones a barely trained model lets diverge
    assert (tmp_path / "again" / "samples.jsonl").read_bytes() == (first / "samples.jsonl").read_bytes()
    assert len((first / "samples.jsonl").read_text().splitlines()) == 30
    files = sorted(p.relative_to(first) for p in (first / "xyz").rglob("*.xyz"))
    assert files
    for rel in files:
        assert (tmp_path / "again" / rel).read_bytes() == (first / rel).read_bytes()


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
