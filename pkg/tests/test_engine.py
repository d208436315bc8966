import numpy as np
import pytest

from conftest import central_diff, rel_err
from feded.data import Dataset, batch_iter, gen_synthetic
from feded.engine import (
    ABLATION_ROWS,
    ClientState,
    FedConfig,
    Method,
    aggregate,
    initial_model,
    local_update,
    make_clients,
    method_loss,
    run_ablation_suite,
    run_experiment,
    run_lambda_sweep,
    select_clients,
)
from feded.errors import ConfigError, ShapeError, TrainingDivergenceError
from feded.losses import ClassPrior, class_priors, loss_cal, loss_ce, loss_dis, prox_term
from feded.nn import Model, OptimizerState, backward, forward, init_model, sgd_step
from feded.partition import Partition, dirichlet_partition

SMALL = dict(rounds=2, num_clients=3, local_epochs=1, batch_size=16, hidden=(8,))


def scalar_model(v):
    return Model([np.array([[float(v)]])], [np.array([0.0])])


# ----- configuration -----

def test_config_defaults():
    cfg = FedConfig()
    assert (cfg.learning_rate, cfg.momentum, cfg.weight_decay, cfg.batch_size) == (0.01, 0.9, 1e-5, 64)
    assert cfg.method is Method.FEDED


@pytest.mark.parametrize("bad", [dict(participation=0.0), dict(participation=1.5), dict(rounds=0),
                                 dict(batch_size=0), dict(momentum=1.0), dict(lam=-1.0),
                                 dict(method="sgd"), dict(clip_norm=0.0)])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        FedConfig(**bad)


def test_method_parse():
    assert Method.parse("FedED-no-dis") is Method.FEDED_NO_DIS
    assert Method.parse(Method.FEDPROX) is Method.FEDPROX
    assert Method.FEDED.terms == (True, True) and Method.FEDAVG.terms == (False, False)
    assert not Method.FEDPROX.calibrated and Method.CALIBRATED.calibrated


# ----- client selection -----

@pytest.mark.parametrize("n,r,m", [(10, 1.0, 10), (10, 0.3, 3), (10, 0.05, 1), (100, 0.29, 29), (7, 0.5, 3)])
def test_select_size(n, r, m):
    chosen = select_clients(n, r, 1, 0)
    assert len(chosen) == m == len(set(chosen))
    assert all(0 <= i < n for i in chosen)
    assert FedConfig(num_clients=n, participation=r).clients_per_round == m


def test_select_deterministic_per_round():
    a = [select_clients(20, 0.25, t, 5) for t in range(1, 30)]
    b = [select_clients(20, 0.25, t, 5) for t in range(1, 30)]
    assert a == b
    assert len({tuple(x) for x in a}) > 1
    assert a != [select_clients(20, 0.25, t, 6) for t in range(1, 30)]


def test_select_roughly_uniform():
    hits = np.zeros(10)
    for t in range(2000):
        hits[select_clients(10, 0.3, t, 1)] += 1
    assert np.all(np.abs(hits / 2000 - 0.3) < 0.04)


# ----- aggregation -----

def test_aggregate_scalar_oracle():
    g = scalar_model(1.0)
    out = aggregate(g, [(scalar_model(2.0), 50), (scalar_model(3.0), 30), (scalar_model(5.0), 20)])
    # 1 + .5*1 + .3*2 + .2*4
    assert out.weights[0][0, 0] == pytest.approx(2.9, abs=1e-14)


def test_aggregate_equal_weights_is_mean(rng):
    g = init_model([5, 4, 3], seed=0)
    locals_ = [init_model([5, 4, 3], seed=s) for s in range(1, 5)]
    out = aggregate(g, [(m, 10) for m in locals_])
    for k, p in enumerate(out.params()):
        mean = np.mean([m.params()[k] for m in locals_], axis=0)
        assert np.max(np.abs(p - mean)) <= 1e-12


def test_aggregate_strict_total():
    g = scalar_model(0.0)
    out = aggregate(g, [(scalar_model(4.0), 25)], total=100)
    assert out.weights[0][0, 0] == pytest.approx(1.0)
    out = aggregate(g, [(scalar_model(4.0), 25)])
    assert out.weights[0][0, 0] == pytest.approx(4.0)


def test_aggregate_shape_mismatch():
    with pytest.raises(ShapeError):
        aggregate(scalar_model(0.0), [(Model([np.zeros((2, 1))], [np.zeros(2)]), 3)])


# ----- local update -----

def _client(ds, idx, cid=0):
    idx = np.asarray(idx)
    return ClientState(cid, idx, class_priors(ds.labels[idx], ds.num_classes))


def test_zero_learning_rate_is_identity(small_synth):
    train, _ = small_synth
    g = init_model([train.dim, 8, train.num_classes], 0)
    cfg = FedConfig(**SMALL, learning_rate=0.0)
    out = local_update(g, _client(train, np.arange(40)), train, cfg, 1)
    for a, b in zip(out.params(), g.params()):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("method", list(Method))
def test_single_step_matches_finite_differences(small_synth, method):
    """One full-batch plain SGD step equals -lr times the numerical gradient."""
    train, _ = small_synth
    # six samples each of classes 0 and 1; classes 2 and 3 are empty here
    idx = np.concatenate([np.flatnonzero(train.labels == c)[:6] for c in (0, 1)])
    client = _client(train, idx)
    g = init_model([train.dim, 5, train.num_classes], 1)
    cfg = FedConfig(**{**SMALL, "batch_size": 64}, method=method, lam=0.7, mu=0.3,
                    learning_rate=0.1, momentum=0.0, weight_decay=0.0)
    x, y = train.features[idx], train.labels[idx]
    teacher = forward(g, x)[0] if method.terms[0] else None
    params = g.params()

    def objective(ps):
        m = Model.from_params(ps)
        v = method_loss(method, forward(m, x)[0], teacher, y, client.prior, cfg).value
        if method is Method.FEDPROX:
            v += prox_term(m, g, cfg.mu)[0]
        return v

    out = local_update(g, client, train, cfg, 1)
    for k, (new, old) in enumerate(zip(out.params(), params)):
        def f(z, k=k):
            ps = [q.copy() for q in params]
            ps[k] = z
            return objective(ps)
        assert rel_err(new - old, -cfg.learning_rate * central_diff(f, old, h=1e-6)) <= 1e-5


def test_global_model_not_mutated(small_synth):
    train, _ = small_synth
    g = init_model([train.dim, 8, train.num_classes], 2)
    before = [p.copy() for p in g.params()]
    local_update(g, _client(train, np.arange(0, 96, 3)), train, FedConfig(**SMALL), 1)
    assert all(np.array_equal(a, b) for a, b in zip(before, g.params()))


def test_divergence_is_reported(small_synth):
    train, _ = small_synth
    g = init_model([train.dim, 8, train.num_classes], 0)
    cfg = FedConfig(**{**SMALL, "local_epochs": 20}, method=Method.FEDAVG, learning_rate=1e40)
    with pytest.raises(TrainingDivergenceError, match="client 4, round 7"):
        local_update(g, _client(train, np.arange(60), cid=4), train, cfg, 7)


def test_clip_bounds_first_step(small_synth):
    train, _ = small_synth
    g = init_model([train.dim, 8, train.num_classes], 0)
    cfg = FedConfig(**{**SMALL, "batch_size": 200}, method=Method.FEDAVG, learning_rate=1.0,
                    momentum=0.0, weight_decay=0.0, clip_norm=1e-3)
    out = local_update(g, _client(train, np.arange(40)), train, cfg, 1)
    step = np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(out.params(), g.params())))
    assert step == pytest.approx(1e-3, rel=1e-9)


# ----- full loop -----

def test_one_client_fedavg_is_centralized(small_synth):
    train, test = small_synth
    cfg = FedConfig(rounds=3, num_clients=1, local_epochs=2, batch_size=16, hidden=(8,),
                    method=Method.FEDAVG, master_seed=9)
    part = Partition.from_assignments([np.arange(len(train))], train.labels, train.num_classes)
    reports = run_experiment(cfg, train, test, part)

    # reference: plain minibatch SGD with momentum reset at every round boundary
    model = initial_model(cfg, train)
    for t in range(1, cfg.rounds + 1):
        state = OptimizerState.for_model(model, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
        for e in range(cfg.local_epochs):
            for batch in batch_iter(train, np.arange(len(train)), cfg.batch_size, [9, 2, 0, t, e]):
                logits, cache = forward(model, batch.features)
                sgd_step(model, backward(model, cache, loss_ce(logits, batch.labels).dlogits), state)
    pred = np.argmax(forward(model, test.features)[0], axis=1)
    assert reports[-1].global_accuracy == pytest.approx(np.mean(pred == test.labels), abs=1e-12)


def _partition(train, n=3, seed=0):
    return dirichlet_partition(train.labels, n, 0.5, seed, train.num_classes)


def test_run_reports_shape(small_synth):
    train, test = small_synth
    cfg = FedConfig(**SMALL, participation=0.67, diagnostics=True)
    reports = run_experiment(cfg, train, test, _partition(train))
    assert [r.round for r in reports] == [1, 2]
    for r in reports:
        assert len(r.participants) == 2
        assert len(r.classwise_accuracy) == train.num_classes
        assert sum(c is not None for c in r.client_classwise) == 2
        assert 0 <= r.global_accuracy <= 1


def test_run_deterministic_and_thread_safe(small_synth):
    train, test = small_synth
    part = _partition(train)
    cfg = FedConfig(**SMALL, method=Method.FEDED_NO_LOGIT, master_seed=3, diagnostics=True)
    a = [r.to_dict() for r in run_experiment(cfg, train, test, part)]
    b = [r.to_dict() for r in run_experiment(cfg, train, test, part)]
    c = [r.to_dict() for r in run_experiment(cfg.with_(workers=3), train, test, part)]
    assert a == b == c


def test_run_checks_client_count(small_synth):
    train, test = small_synth
    with pytest.raises(ConfigError):
        run_experiment(FedConfig(**{**SMALL, "num_clients": 4}), train, test, _partition(train))


def test_suites_have_expected_rows(small_synth):
    train, test = small_synth
    base = FedConfig(**{**SMALL, "rounds": 1}, method=Method.FEDAVG)
    source = lambda s: _partition(train, seed=s)
    abl = run_ablation_suite(base, train, test, source, seeds=[1, 2])
    assert list(abl) == list(ABLATION_ROWS)
    assert abl["calibrated"]["delta"] == 0.0
    assert all(len(row["final"]) == 2 for row in abl.values())
    sweep = run_lambda_sweep(base, train, test, source, seeds=[1])
    assert list(sweep) == ["lambda=0.05", "lambda=0.1", "lambda=0.25", "lambda=0.5", "lambda=1"]
    assert all(row["config"].method is Method.FEDED for row in sweep.values())


def test_feded_without_empty_classes_matches_logit_only(small_synth):
    train, _ = small_synth
    client = _client(train, np.arange(len(train)))
    assert client.prior.empty.size == 0
    g = init_model([train.dim, 8, train.num_classes], 4)
    cfg = FedConfig(**SMALL, lam=3.0)
    a = local_update(g, client, train, cfg.with_(method=Method.FEDED), 1)
    b = local_update(g, client, train, cfg.with_(method=Method.FEDED_NO_DIS), 1)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))


def test_zero_learning_rate_keeps_initial_accuracy(small_synth):
    from feded.metrics import evaluate
    train, test = small_synth
    cfg = FedConfig(**{**SMALL, "rounds": 1}, learning_rate=0.0)
    reports = run_experiment(cfg, train, test, _partition(train))
    assert reports[0].global_accuracy == evaluate(initial_model(cfg, train), test)[0]
