import numpy as np
import pytest

from crmgrasp.tasks import AFFORDANCE_ORDER, TOPOLOGIES, Affordance, ObjectState, in_workspace
from crmgrasp.taxonomy import (
    FEATURE_DIM, FeatureVector, GeneratorRanges, generate_tasks, label_oracle, oracle_agreement, oracle_dataset,
    select_topology, selected_label, topology_spec, train_selector,
)


def fv(dims, aff, shape="box"):
    return FeatureVector(tuple(dims), shape, 0.2, aff)


@pytest.mark.parametrize("dims, aff, label", [
    ((0.05, 0.05, 0.05), Affordance.PRESS, "platform"),
    ((0.05, 0.05, 0.05), Affordance.TWIST, "InSiAd2"),
    ((0.05, 0.05, 0.05), Affordance.LEVER, "InSiAd2"),
    ((0.05, 0.05, 0.05), Affordance.PULL, "pPdAb25"),
    ((0.05, 0.05, 0.05), Affordance.LIFT, "pPdAb23"),
    ((0.05, 0.05, 0.06), Affordance.LIFT, "poPmAb25"),
    ((0.04, 0.1, 0.04), Affordance.WRAP_GRASP, "poPmAb25"),
])
def test_rule_oracle(dims, aff, label):
    assert label_oracle(fv(dims, aff)) == label


def test_topology_table():
    for label in TOPOLOGIES:
        spec = topology_spec(label)
        assert spec.n_sources == 2 * sum(spec.active_fingers) + 1
        assert np.linalg.norm(spec.palm_normal) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        topology_spec("fist")


def test_feature_vector_encoding():
    x = fv((0.1, 0.2, 0.3), Affordance.PULL, "cylinder").to_array()
    assert x.shape == (FEATURE_DIM,)
    np.testing.assert_array_equal(x[:3], [0.1, 0.2, 0.3])
    assert x[3:6].tolist() == [0.0, 1.0, 0.0]
    assert x[6] == 0.2
    assert x[7:].sum() == 1.0 and x[7 + AFFORDANCE_ORDER.index(Affordance.PULL)] == 1.0


def test_selector_fallback_is_oracle_one_hot():
    f = fv((0.05, 0.05, 0.05), Affordance.PRESS)
    probs = select_topology(f, None)
    assert probs.sum() == 1.0 and selected_label(probs) == "platform"
    with pytest.raises(ValueError):
        select_topology(f.to_array(), None)


def test_selector_agreement_on_held_out_set():
    x, y = oracle_dataset(np.random.default_rng(0), 4000)
    xt, yt = oracle_dataset(np.random.default_rng(1), 1000)
    net = train_selector(x, y, seed=0)
    assert oracle_agreement(net, xt, yt) >= 0.99
    probs = select_topology(xt[:5], net)
    assert probs.shape == (5, len(TOPOLOGIES)) and np.all((probs > 0) & (probs < 1))


def test_generated_tasks_cover_affordances_and_are_seeded():
    tasks = generate_tasks(7, 26)
    assert len(tasks) == 26
    assert {t.affordance for t in tasks[:len(AFFORDANCE_ORDER)]} == set(AFFORDANCE_ORDER)
    assert all(in_workspace(t.grasp_location) for t in tasks)
    again = generate_tasks(7, 26)
    assert [t.to_dict() for t in tasks] == [t.to_dict() for t in again]
    assert [t.to_dict() for t in generate_tasks(8, 26)] != [t.to_dict() for t in tasks]


def test_generated_tasks_respect_ranges():
    ranges = GeneratorRanges(mass=(0.1, 0.2), mu=(0.4, 0.5))
    for t in generate_tasks(3, 40, ranges):
        assert 0.1 <= t.object.mass <= 0.2 and 0.4 <= t.object.mu <= 0.5
        assert t.topology == label_oracle(FeatureVector.from_object(t.object, t.affordance))


def test_generate_tasks_needs_room_for_every_affordance():
    with pytest.raises(ValueError):
        generate_tasks(0, len(AFFORDANCE_ORDER) - 1)


def test_feature_vector_validation():
    with pytest.raises(ValueError):
        FeatureVector((0.1, 0.0, 0.1), "box", 0.1, Affordance.LIFT)
    with pytest.raises(ValueError):
        FeatureVector((0.1, 0.1, 0.1), "torus", 0.1, Affordance.LIFT)
    assert FeatureVector.from_object(ObjectState("cylinder", [0.02, 0.05], [0, 0, 0]), Affordance.LIFT).dims == \
        pytest.approx((0.04, 0.04, 0.1))
