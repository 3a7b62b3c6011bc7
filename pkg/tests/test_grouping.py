"""Group sizing, formation, staggering, and escrow pairing."""

from fractions import Fraction

import pytest
from scipy import stats

from gridmix.crypto import seeded_rng
from gridmix.grouping import (
    GroupPlan, NotEnoughGroups, RegistryTooSmall, ServerRecord,
    assign_buddies, form_groups, load_registry, make_plan,
    malicious_group_probability, required_group_size, save_registry,
    stagger_positions,
)


class TestRequiredGroupSize:
    def test_reference_deployment_needs_32(self):
        # 20% malicious registry, 1024 groups, 2^-64 failure budget
        assert required_group_size(0.2, 1024, -64) == 32

    def test_31_is_one_too_few(self):
        # independent check of both sides of the threshold
        bound = Fraction(2) ** -64
        assert 1024 * malicious_group_probability(31, 0.2) >= bound
        assert 1024 * malicious_group_probability(32, 0.2) < bound

    def test_single_group_coin_flip_adversary(self):
        # 0.5^k < 2^-10 first holds at k=11
        assert required_group_size(0.5, 1, -10) == 11

    def test_two_honest_members_cost_three_more(self):
        assert required_group_size(0.2, 1024, -64, h=2) == 35
        bound = Fraction(2) ** -64
        assert 1024 * malicious_group_probability(34, 0.2, 2) >= bound
        assert 1024 * malicious_group_probability(35, 0.2, 2) < bound

    def test_monotone_in_every_hardness_knob(self):
        base = required_group_size(0.2, 64, -32)
        assert required_group_size(0.3, 64, -32) > base
        assert required_group_size(0.2, 64, -48) > base
        assert required_group_size(0.2, 64, -32, h=2) > base
        assert required_group_size(0.2, 4096, -32) >= base

    def test_all_honest_registry(self):
        assert required_group_size(0, 16, -64) == 1
        assert required_group_size(0, 16, -64, h=3) == 3

    def test_probability_is_exact_rational(self):
        p = malicious_group_probability(3, Fraction(1, 5), 1)
        assert p == Fraction(1, 125)
        p2 = malicious_group_probability(3, Fraction(1, 5), 2)
        assert p2 == Fraction(1, 125) + 3 * Fraction(4, 5) * Fraction(1, 25)

    def test_bad_inputs(self):
        with pytest.raises(NotEnoughGroups):
            required_group_size(0.2, 0, -64)
        with pytest.raises(ValueError):
            required_group_size(1.0, 16, -64)
        with pytest.raises(ValueError):
            required_group_size(0.2, 16, -64, h=0)
        with pytest.raises(ValueError):
            # all-malicious is infeasible at any size
            required_group_size(0.99, 1, -400, max_k=64)


class TestFormGroups:
    def ids(self, n):
        return [f"s{i:03d}" for i in range(n)]

    def test_distinct_within_shared_across(self):
        rng = seeded_rng("grouping-test", 1)
        groups = form_groups(self.ids(8), 40, 5, rng)
        assert len(groups) == 40
        for g in groups:
            assert len(set(g)) == 5
        appearances = {}
        for g in groups:
            for m in g:
                appearances[m] = appearances.get(m, 0) + 1
        assert max(appearances.values()) > 1

    def test_membership_counts_are_uniform(self):
        rng = seeded_rng("grouping-test", 2)
        counts = {m: 0 for m in self.ids(16)}
        for g in form_groups(self.ids(16), 2000, 4, rng):
            for m in g:
                counts[m] += 1
        _, p = stats.chisquare(list(counts.values()))
        assert p > 0.01

    def test_registry_too_small(self):
        with pytest.raises(RegistryTooSmall):
            form_groups(self.ids(4), 10, 5, seeded_rng("grouping-test", 3))

    def test_duplicate_ids_collapse(self):
        with pytest.raises(RegistryTooSmall):
            form_groups(["a", "a", "a", "b"], 1, 3,
                        seeded_rng("grouping-test", 4))

    def test_zero_groups(self):
        with pytest.raises(NotEnoughGroups):
            form_groups(self.ids(8), 0, 4, seeded_rng("grouping-test", 5))


class TestStagger:
    def test_repeat_member_shifts_one_slot(self):
        # a server listed first in two groups leads the first pipeline
        # and is second in the other, so it is never doubly critical
        slots = stagger_positions([["a", "b", "c"], ["a", "d", "e"]])
        assert slots[0] == [0, 1, 2]
        assert slots[1][0] == 1

    def test_slots_are_permutations(self):
        rng = seeded_rng("grouping-test", 6)
        groups = form_groups([f"s{i}" for i in range(10)], 30, 6, rng)
        for assigned in stagger_positions(groups):
            assert sorted(assigned) == list(range(6))

    def test_collision_takes_next_free_slot(self):
        # "a" wants 1 in the second group, pushing "d" from 1 to 2
        slots = stagger_positions([["a", "x", "y"], ["a", "d", "e"]])
        assert slots[1] == [1, 2, 0]


class TestBuddies:
    def test_rotation(self):
        assert assign_buddies(4) == [1, 2, 3, 0]

    def test_lone_group_escrows_to_itself(self):
        assert assign_buddies(1) == [0]

    def test_nobody_left_out(self):
        buddies = assign_buddies(7)
        assert sorted(buddies) == list(range(7))
        with pytest.raises(NotEnoughGroups):
            assign_buddies(0)


def test_registry_csv_roundtrip(tmp_path):
    records = [ServerRecord("alpha", 0), ServerRecord("beta", 1),
               ServerRecord("gamma", 1)]
    path = tmp_path / "registry.csv"
    save_registry(path, records)
    assert load_registry(path) == records


def test_plan_builds_and_roundtrips(tmp_path):
    ids = [f"s{i:02d}" for i in range(40)]
    plan = make_plan(ids, 0.5, 4, -10, seed=7)
    # union bound over 4 groups: 4 * 0.5^k < 2^-10 first holds at k=13
    assert plan.k == 13
    assert len(plan.groups) == 4
    assert plan.buddies == [1, 2, 3, 0]
    for g, s in zip(plan.groups, plan.slots):
        assert len(g) == plan.k and sorted(s) == list(range(plan.k))
    again = GroupPlan.from_json(plan.to_json())
    assert again == plan
    # same seed, same plan
    assert make_plan(ids, 0.5, 4, -10, seed=7) == plan
    assert make_plan(ids, 0.5, 4, -10, seed=8) != plan
