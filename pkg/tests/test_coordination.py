import pytest

from uhrsim.coordination import (ContentionDomain, CoordinationError,
                                 MemberBudget, Scheme, cofdma_split,
                                 ctdma_slots, form_set, null_budget_check,
                                 rewrite_contention)

BSS_OF = {"ap1": "ap1", "ap2": "ap2", "sta1": "ap1", "sta2": "ap2"}


def two_bss_domain() -> ContentionDomain:
    d = ContentionDomain()
    ids = list(BSS_OF)
    for link in (0, 1):
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                d.add_edge(link, a, b)
    return d


class TestNullBudget:
    def test_truth_table(self):
        assert null_budget_check(4, 2, 2) is True
        assert null_budget_check(4, 2, 3) is False
        assert null_budget_check(16, 8, 8) is True
        assert null_budget_check(2, 2, 0) is True
        assert null_budget_check(2, 2, 1) is False
        assert null_budget_check(0, 0, 0) is True

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            null_budget_check(-1, 0, 0)


class TestFormSet:
    def test_case_study_cbf_valid(self):
        budgets = [MemberBudget("ap1", 4, 2, 2), MemberBudget("ap2", 4, 2, 2)]
        cs = form_set(budgets, Scheme.CBF, nulling_db=30.0)
        assert cs.members == ("ap1", "ap2")
        assert cs.nulling_db == 30.0

    def test_singleton_rejected(self):
        with pytest.raises(CoordinationError):
            form_set([MemberBudget("ap1", 4, 2, 0)], Scheme.CTDMA)

    def test_no_spare_degrees_of_freedom(self):
        budgets = [MemberBudget("ap1", 2, 2, 2), MemberBudget("ap2", 4, 2, 2)]
        with pytest.raises(CoordinationError, match="ap1"):
            form_set(budgets, Scheme.CBF, nulling_db=20.0)


class TestRewriteContention:
    def test_none_is_deep_identity(self):
        domain = two_bss_domain()
        budgets = [MemberBudget("ap1", 4, 2, 2), MemberBudget("ap2", 4, 2, 2)]
        cs = form_set(budgets, Scheme.CTDMA)
        out = rewrite_contention(domain, cs, BSS_OF)
        assert out == domain
        assert out is not domain

    def test_cbf_removes_cross_bss_edges_and_registers_nulls(self):
        domain = two_bss_domain()
        budgets = [MemberBudget("ap1", 4, 2, 2), MemberBudget("ap2", 4, 2, 2)]
        cs = form_set(budgets, Scheme.CBF, nulling_db=30.0)
        out = rewrite_contention(domain, cs, BSS_OF)
        for link in (0, 1):
            assert not out.hears(link, "ap1", "ap2")
            assert not out.hears(link, "ap1", "sta2")
            assert not out.hears(link, "ap2", "sta1")
            assert out.hears(link, "ap1", "sta1")  # intra-BSS untouched
        assert out.suppression_db("ap1", "sta2") == 30.0
        assert out.suppression_db("ap2", "sta1") == 30.0
        assert out.suppression_db("ap1", "sta1") == 0.0

    def test_third_uncoordinated_ap_untouched(self):
        bss = dict(BSS_OF, ap3="ap3", sta3="ap3")
        d = ContentionDomain()
        ids = list(bss)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                d.add_edge(0, a, b)
        budgets = [MemberBudget("ap1", 4, 2, 2), MemberBudget("ap2", 4, 2, 2)]
        out = rewrite_contention(d, form_set(budgets, Scheme.CBF, 30.0), bss)
        assert out.hears(0, "ap3", "ap1")
        assert out.hears(0, "ap3", "sta2")
        assert not out.hears(0, "ap1", "ap2")


class TestCtdmaSlots:
    def test_two_members(self):
        slots = ctdma_slots(5_484_000, ("ap1", "ap2"), 16_000)
        assert [s[2] for s in slots] == [2_734_000, 2_734_000]
        assert slots[0][1] == 0
        assert slots[1][1] == 2_750_000  # separated by SIFS
        assert slots[-1][1] + slots[-1][2] <= 5_484_000

    def test_three_members(self):
        slots = ctdma_slots(5_484_000, ("a", "b", "c"), 16_000)
        assert all(s[2] == 1_817_333 for s in slots)
        assert slots[-1][1] + slots[-1][2] <= 5_484_000

    def test_member_id_order(self):
        slots = ctdma_slots(1_000_000, ("z", "a"), 16_000)
        assert [s[0] for s in slots] == ["a", "z"]

    def test_single_member_rejected(self):
        with pytest.raises(CoordinationError):
            ctdma_slots(5_484_000, ("ap1",), 16_000)


class TestCofdmaSplit:
    def test_halving_160(self):
        got = cofdma_split(160, ("ap1", "ap2"), 1960)
        assert got == {"ap1": (80.0, 980), "ap2": (80.0, 980)}

    def test_three_way_rejected(self):
        with pytest.raises(CoordinationError):
            cofdma_split(160, ("a", "b", "c"), 1960)

    def test_320_into_two(self):
        got = cofdma_split(320, ("a", "b"), 3920)
        assert got["a"] == (160.0, 1960)
