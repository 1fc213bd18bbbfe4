import numpy as np
import pytest

from popshm.errors import (
    AlignmentError,
    CalibrationError,
    CompatibilityError,
    TrainingError,
)
from popshm.families import StructureInstance, geodesic, two_span_family
from popshm.graphs import Population
from popshm.physics import DamageState, ModalFeatureOracle
from popshm.transfer import (
    AffineStep,
    TransferMap,
    accuracy,
    calibrate_threshold,
    cross_val_accuracy,
    ddt_map,
    domain_adaptation_baseline,
    evaluate_transfer,
    identity_map,
    nca,
    train_localiser,
    two_step_transfer,
)

ORACLE = ModalFeatureOracle(n_records=6, n_t=1024, n_w=256, noise_std=0.02)
# jitter-free twin for tests that compare mapped means against modal truth
STILL_ORACLE = ModalFeatureOracle(n_records=6, n_t=1024, n_w=256,
                                  noise_std=0.02, stiffness_jitter=0.0)


def b2_instance(scale=1.0, l1=20.0):
    deck = lambda l: (l, 5.0, 1.0, 3.0e10 * scale, 2500.0, 0.2)
    pillar = (8.0, 0.3, 0.3, 3.0e10 * scale, 2500.0, 0.2)
    return StructureInstance(two_span_family(), np.array(deck(l1) + pillar + deck(24.0)))


def simulated_member(population, sid, inst, seed, oracle=ORACLE):
    conditions = [(0, None), (1, DamageState("D1", 0.25)),
                  (2, DamageState("P1", 0.25)), (3, DamageState("D2", 0.25))]
    fibre, labels = oracle.simulate(inst, conditions, seed=seed, structure_id=sid)
    return population.add(sid, inst.graph(), instance=inst, fibre=fibre,
                          labels=labels)


def member_view(member):
    fibre = member.fibre
    stratum = ORACLE.feature_stratum(fibre)
    features, cells = fibre.feature_matrix(stratum)
    labels = np.array([member.labels[k] for (_, k) in cells])
    nc_rows = np.nonzero(labels == 0)[0]
    return (fibre, stratum, nc_rows), features, labels


# ---------------------------------------------------------------------------
# Normal Condition Alignment
# ---------------------------------------------------------------------------

def test_nca_standardises_nc_rows_exactly(rng):
    x = rng.normal(5.0, 3.0, size=(40, 4))
    aligned, step = nca(x, np.arange(40))
    assert np.allclose(aligned.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(aligned.std(axis=0), 1.0, atol=1e-12)
    assert np.allclose(step.apply(x), aligned)


def test_nca_constant_dimension_guard(rng):
    x = rng.normal(size=(20, 3))
    x[:, 1] = 7.0
    aligned, step = nca(x, np.arange(20))
    assert step.scale[1] == 1.0
    assert np.allclose(aligned[:, 1], 0.0)


def test_nca_fresh_draws_statistical(rng):
    inst = b2_instance()
    sample_a = ORACLE.nc_features(inst, seed=1)
    sample_b = ORACLE.nc_features(inst, seed=2)
    _, step = nca(sample_a, np.arange(len(sample_a)))
    fresh = step.apply(sample_b)
    n = len(sample_b)
    margin = 3.0 * fresh.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(fresh.mean(axis=0)) <= np.maximum(margin, 1e-9))


def test_nca_rejects_empty_nc_rows(rng):
    with pytest.raises(AlignmentError):
        nca(rng.normal(size=(5, 2)), [])


def test_nca_idempotence(rng):
    x = rng.normal(2.0, 1.5, size=(60, 3))
    aligned, _ = nca(x, np.arange(60))
    _, step2 = nca(aligned, np.arange(60))
    assert np.allclose(step2.shift, 0.0, atol=1e-9)
    assert np.allclose(step2.scale, 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# Affine-map algebra
# ---------------------------------------------------------------------------

def test_affine_map_algebra(rng):
    def random_map():
        steps = tuple(
            AffineStep(scale=rng.uniform(0.5, 2.0, 3), shift=rng.normal(size=3))
            for _ in range(int(rng.integers(1, 4))))
        return TransferMap(steps=steps)

    x = rng.normal(size=(10, 3))
    for _ in range(20):
        a, b, c = random_map(), random_map(), random_map()
        left = a.then(b).then(c).apply(x)
        right = a.then(b.then(c)).apply(x)
        assert np.allclose(left, right, atol=1e-12)
        assert np.allclose(identity_map().then(a).apply(x), a.apply(x))
        assert np.allclose(a.then(identity_map()).apply(x), a.apply(x))
        round_trip = a.inverse().apply(a.apply(x))
        assert np.allclose(round_trip, x, atol=1e-12)
    assert np.array_equal(identity_map().apply(x), x)


# ---------------------------------------------------------------------------
# Direct domain transfer
# ---------------------------------------------------------------------------

def test_ddt_same_fibre_is_numerically_identity():
    pop = Population()
    member = simulated_member(pop, "a", b2_instance(), seed=3)
    view, features, _ = member_view(member)
    tmap = ddt_map(view, view, steps=1)
    assert np.array_equal(tmap.apply(features), features)


def test_ddt_single_step_matches_nc_moments():
    pop = Population()
    src = simulated_member(pop, "src", b2_instance(), seed=4)
    tgt = simulated_member(pop, "tgt", b2_instance(scale=1.1), seed=5)
    s_view, s_x, s_y = member_view(src)
    t_view, t_x, t_y = member_view(tgt)
    tmap = ddt_map(s_view, t_view, steps=1)
    mapped_nc = tmap.apply(t_x[t_view[2]])
    source_nc = s_x[s_view[2]]
    assert np.allclose(mapped_nc.mean(axis=0), source_nc.mean(axis=0), atol=1e-9)


def test_ddt_multi_step_telescopes_onto_endpoint_matching():
    # chained re-anchoring through shared intermediate statistics composes
    # exactly onto the single-step endpoint map; the lifted path adds no
    # extra affine freedom
    pop = Population()
    src = simulated_member(pop, "src", b2_instance(scale=4.0), seed=6,
                           oracle=STILL_ORACLE)
    tgt = simulated_member(pop, "tgt", b2_instance(scale=1.0), seed=7,
                           oracle=STILL_ORACLE)
    s_view, s_x, _ = member_view(src)
    t_view, t_x, t_y = member_view(tgt)
    path = geodesic(tgt.instance, src.instance)
    one = ddt_map(s_view, t_view, path, steps=1, oracle=STILL_ORACLE, seed=100)
    many = ddt_map(s_view, t_view, path, steps=8, oracle=STILL_ORACLE, seed=100)
    assert len(many.steps) == 8
    mapped_one = one.apply(t_x)
    mapped_many = many.apply(t_x)
    scale = np.abs(mapped_one).max()
    assert np.allclose(mapped_many, mapped_one, atol=1e-9 * scale)
    # and the map is useful: mapped target NC features land on the modal
    # truth of the source structure (frequencies scale by sqrt(4) = 2)
    truth = STILL_ORACLE.modal_frequencies(src.instance)
    mapped_nc_mean = mapped_many[t_view[2]].mean(axis=0)
    assert np.all(np.abs(mapped_nc_mean - truth) < 0.1)


def test_ddt_dimension_mismatch_raises():
    pop = Population()
    src = simulated_member(pop, "src", b2_instance(), seed=8)
    s_view, s_x, _ = member_view(src)
    small_oracle = ModalFeatureOracle(n_records=4, n_t=1024, n_w=256, n_peaks=3)
    fibre, labels = small_oracle.simulate(b2_instance(), [(0, None)], seed=9)
    stratum = small_oracle.feature_stratum(fibre)
    rows = fibre.feature_matrix(stratum)[0].shape[0]
    with pytest.raises(CompatibilityError):
        ddt_map(s_view, (fibre, stratum, np.arange(rows)), steps=1)


# ---------------------------------------------------------------------------
# Localiser
# ---------------------------------------------------------------------------

def test_single_label_task_always_predicts_it(rng):
    x = rng.normal(size=(8, 2))
    task = train_localiser(x, np.zeros(8, dtype=int), k=3)
    assert np.all(task.predict(rng.normal(size=(5, 2))) == 0)


def test_k1_returns_own_label(rng):
    x = rng.normal(size=(12, 3))
    y = np.arange(12) % 4
    task = train_localiser(x, y, k=1)
    assert np.array_equal(task.predict(x), y)


def test_training_requires_k_samples_per_label(rng):
    x = rng.normal(size=(5, 2))
    y = np.array([0, 0, 0, 1, 1])
    with pytest.raises(TrainingError):
        train_localiser(x, y, k=3)


def test_three_cluster_separation_gives_high_cv_accuracy(rng):
    centres = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    x = np.vstack([rng.normal(c, 1.0, size=(40, 2)) for c in centres])
    y = np.repeat([0, 1, 2], 40)
    # separation 5 units vs pooled std 1: comfortably past 4 pooled stds
    assert cross_val_accuracy(x, y, k=3, folds=5) >= 0.95


def test_argmax_invariance_under_uniform_scaling(rng):
    x = rng.normal(size=(30, 4))
    y = np.arange(30) % 3
    task = train_localiser(x, y, k=3)
    queries = rng.normal(size=(10, 4))
    base = task.predict(queries)
    for c in (0.1, 7.3):
        scaled_task = train_localiser(x * c, y, k=3)
        assert np.array_equal(scaled_task.predict(queries * c), base)


def test_scores_sum_to_one_and_ties_break_low(rng):
    x = np.array([[0.0], [0.5], [1.5], [2.0]])
    y = np.array([1, 1, 0, 0])
    task = train_localiser(x, y, k=2, weighting="uniform")
    scores = task.scores(np.array([[1.0]]))
    assert scores.sum() == pytest.approx(1.0)
    # equal uniform votes: smallest label index wins
    assert task.predict(np.array([[1.0]]))[0] == 0


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def test_identity_map_on_held_out_matches_in_domain(rng):
    centres = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    x = np.vstack([rng.normal(c, 0.5, size=(30, 2)) for c in centres])
    y = np.repeat([0, 1, 2], 30)
    train = np.arange(len(y)) % 3 != 0
    task = train_localiser(x[train], y[train], k=3)
    held_x, held_y = x[~train], y[~train]
    report = evaluate_transfer(task, identity_map(), held_x, held_y)
    assert report.raw_accuracy == report.mapped_accuracy
    direct = accuracy(task.predict(held_x), held_y)
    assert report.mapped_accuracy == direct


def test_random_labels_score_at_chance(rng):
    x = rng.normal(size=(400, 3))
    y = rng.integers(0, 4, size=400)
    train = np.arange(400) < 200
    task = train_localiser(x[train], y[train], k=3)
    report = evaluate_transfer(task, identity_map(), x[~train], y[~train])
    p = 1.0 / 4.0
    bound = 4.0 * np.sqrt(p * (1 - p) / 200)
    assert abs(report.mapped_accuracy - p) <= bound


# ---------------------------------------------------------------------------
# Two-step transfer
# ---------------------------------------------------------------------------

def test_two_step_legs_are_half_the_distance():
    pop = Population()
    simulated_member(pop, "src", b2_instance(l1=18.0), seed=10)
    simulated_member(pop, "tgt", b2_instance(l1=26.0), seed=11)
    report = two_step_transfer(pop, "src", "tgt", oracle=ORACLE, steps=1, seed=50)
    assert len(report.leg_distances) == 2
    assert report.leg_distances[0] == pytest.approx(report.path_length / 2, rel=1e-12)
    assert report.leg_distances[1] == pytest.approx(report.path_length / 2, rel=1e-12)
    assert f"interp(src,tgt)" in pop


def test_two_step_composition_equals_doubled_single_map():
    pop = Population()
    src = simulated_member(pop, "src", b2_instance(l1=18.0), seed=12)
    tgt = simulated_member(pop, "tgt", b2_instance(l1=26.0), seed=13)
    seed = 77
    report = two_step_transfer(pop, "src", "tgt", oracle=ORACLE, steps=1, seed=seed)
    s_view, s_x, s_y = member_view(src)
    t_view, t_x, t_y = member_view(tgt)
    doubled = ddt_map(s_view, t_view, geodesic(tgt.instance, src.instance),
                      steps=2, oracle=ORACLE, seed=seed)
    task = train_localiser(s_x, s_y, k=3)
    direct = evaluate_transfer(task, doubled, t_x, t_y)
    assert direct.mapped_accuracy == report.mapped_accuracy
    # the composed affine chain is coordinate-identical to the doubled map
    star_id = "interp(src,tgt)"
    star = pop.member(star_id)
    star_view = (star.fibre, ORACLE.feature_stratum(star.fibre),
                 np.arange(star.fibre.feature_matrix(
                     ORACLE.feature_stratum(star.fibre))[0].shape[0]))
    leg_a = ddt_map(star_view, t_view, geodesic(tgt.instance, star.instance),
                    steps=1, oracle=ORACLE, seed=seed)
    leg_b = ddt_map(s_view, star_view, geodesic(star.instance, src.instance),
                    steps=1, oracle=ORACLE, seed=seed, seed_offset=1)
    composed = leg_a.then(leg_b)
    assert len(composed.steps) == len(doubled.steps) == 2
    for ours, theirs in zip(composed.steps, doubled.steps):
        assert np.array_equal(ours.scale, theirs.scale)
        assert np.array_equal(ours.shift, theirs.shift)


# ---------------------------------------------------------------------------
# Threshold calibration
# ---------------------------------------------------------------------------

def test_calibration_all_successful_returns_max_distance():
    pairs = [(0.05 * i, 0.97) for i in range(25)]
    result = calibrate_threshold(pairs, target_accuracy=0.9)
    assert result.d_s == pytest.approx(0.05 * 24)
    assert not result.warning


def test_calibration_all_failing_returns_zero_with_warning():
    pairs = [(0.05 * i, 0.3) for i in range(25)]
    result = calibrate_threshold(pairs, target_accuracy=0.9)
    assert result.d_s == 0.0
    assert result.warning


def test_calibration_recovers_planted_breakpoint(rng):
    distances = np.linspace(0.02, 0.6, 30)
    breakpoint = 0.3
    accuracies = np.where(distances < breakpoint, 0.97, 0.55)
    accuracies = accuracies + rng.uniform(-0.02, 0.02, len(distances))
    result = calibrate_threshold(list(zip(distances, accuracies)),
                                 target_accuracy=0.9)
    gap = distances[1] - distances[0]
    below = distances[distances < breakpoint].max()
    assert abs(result.d_s - below) <= gap + 1e-12


def test_calibration_needs_twenty_pairs():
    with pytest.raises(CalibrationError):
        calibrate_threshold([(0.1, 0.9)] * 19, target_accuracy=0.8)


def test_calibration_threshold_monotone_in_target(rng):
    distances = np.linspace(0.0, 1.0, 40)
    accuracies = np.clip(1.0 - distances + rng.normal(0, 0.03, 40), 0, 1)
    pairs = list(zip(distances, accuracies))
    previous = np.inf
    for target in (0.5, 0.6, 0.7, 0.8, 0.9, 0.95):
        d_s = calibrate_threshold(pairs, target_accuracy=target).d_s
        assert d_s <= previous + 1e-12
        previous = d_s


# ---------------------------------------------------------------------------
# Domain adaptation baseline
# ---------------------------------------------------------------------------

def test_da_on_identical_domains_equals_in_domain(rng):
    centres = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    x = np.vstack([rng.normal(c, 0.5, size=(30, 2)) for c in centres])
    y = np.repeat([0, 1, 2], 30)
    nc_rows = np.nonzero(y == 0)[0]
    _, task, aligned_target = domain_adaptation_baseline(x, y, nc_rows, x, nc_rows)
    da_accuracy = accuracy(task.predict(aligned_target), y)
    in_domain = cross_val_accuracy(x, y, k=3)
    assert da_accuracy >= in_domain  # training data scored in-sample
    assert da_accuracy == accuracy(task.predict(task.train_x), y)


def test_da_recovers_accuracy_under_pure_mean_shift(rng):
    centres = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]])
    def draw():
        x = np.vstack([rng.normal(c, 0.4, size=(40, 2)) for c in centres])
        y = np.repeat([0, 1, 2, 3], 40)
        return x, y
    source_x, source_y = draw()
    target_x, target_y = draw()
    target_x = target_x + np.array([25.0, -13.0])   # pure domain shift
    nc_source = np.nonzero(source_y == 0)[0]
    nc_target = np.nonzero(target_y == 0)[0]
    _, task, aligned_target = domain_adaptation_baseline(
        source_x, source_y, nc_source, target_x, nc_target)
    da_accuracy = accuracy(task.predict(aligned_target), target_y)
    in_domain = cross_val_accuracy(source_x, source_y, k=3)
    assert abs(da_accuracy - in_domain) <= 0.02


def test_da_requires_matching_dimensions(rng):
    with pytest.raises(CompatibilityError):
        domain_adaptation_baseline(
            rng.normal(size=(10, 3)), np.zeros(10, dtype=int), [0, 1],
            rng.normal(size=(10, 2)), [0, 1])
