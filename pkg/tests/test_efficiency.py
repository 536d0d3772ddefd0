import json
import random

import pytest

from s2bnet.efficiency import FLOPS_DIVISOR, PARAMS_DIVISOR, CostLedger, LedgerRow, account
from s2bnet.network import S2BNetConfig, build


@pytest.fixture(scope="module")
def model():
    return build(S2BNetConfig())


@pytest.fixture(scope="module")
def ledger(model):
    return account(model, (128, 128))


def test_discount_examples():
    row = LedgerRow("x", "conv_b", "stem", True, flops=6.4e9, params=32000)
    assert row.params_b == 1000 and row.flops_b == 1e8
    assert row.params_f == 0 and row.flops_f == 0


def test_rules_per_row(ledger):
    binarized = [r for r in ledger.rows if r.binarized]
    assert binarized and all(r.kind == "conv_b" for r in binarized)
    for r in binarized:
        assert r.flops_b * FLOPS_DIVISOR == r.flops and r.params_b * PARAMS_DIVISOR == r.params
    for r in ledger.rows:
        if not r.binarized:
            assert r.flops_b == 0 and r.params_b == 0


def test_conv_flops_formula(ledger, model):
    rows = {r.name: r for r in ledger.rows}
    assert rows["head"].flops == 2 * 32 * 5 * 9 * 128**2 + 32 * 128**2
    assert rows["encoders.0.down.conv"].flops == 2 * 64 * 32 * 9 * 64**2
    assert rows["bottleneck.increase"].flops == 2 * 256 * 128 * 32**2
    assert rows["decoders.1.up.conv"].flops == 2 * 32 * 64 * 9 * 128**2
    assert rows["tail"].params == 4 * 32 * 9 + 4


def test_totals_equal_row_sums(ledger):
    t = ledger.totals()
    assert t["flops_total"] == pytest.approx(sum(r.flops_f + r.flops_b for r in ledger.rows))
    assert t["params_total"] == pytest.approx(sum(r.params_f + r.params_b for r in ledger.rows))
    assert t["flops_total"] == t["flops_f"] + t["flops_b"]


def test_totals_order_invariant(ledger):
    base = ledger.totals()
    for seed in range(5):
        rows = list(ledger.rows)
        random.Random(seed).shuffle(rows)
        shuffled = CostLedger(rows).totals()
        for k in base:
            assert shuffled[k] == pytest.approx(base[k], rel=1e-12)


def test_full_precision_flip(model, ledger):
    fp = account(model, (128, 128), binarize_parts=set())
    assert all(not r.binarized for r in fp.rows)
    assert [r.name for r in fp.rows] == [r.name for r in ledger.rows]
    for b, f in zip(ledger.rows, fp.rows):
        if b.binarized:
            assert f.params_f == PARAMS_DIVISOR * b.params_b
            assert f.flops_f == FLOPS_DIVISOR * b.flops_b


def test_equivalent_params_match_model(model, ledger):
    assert sum(r.params for r in ledger.rows) == model.parameter_count()


def test_bottleneck_only_binarization(model, ledger):
    fp = account(model, (128, 128), binarize_parts=set())
    bn = account(model, (128, 128), binarize_parts={"bottleneck"})
    assert {r.part for r in bn.rows if r.binarized} == {"bottleneck"}
    assert bn.params_total < fp.params_total
    assert bn.flops_total == bn.flops_b + bn.flops_f
    assert ledger.params_total < bn.params_total


def test_parts_and_outputs(ledger):
    parts = ledger.by_part()
    assert set(parts) == {"head", "stem", "encoder", "bottleneck", "decoder", "mapping", "tail"}
    doc = json.loads(ledger.to_json())
    assert doc["schema_version"] == 1 and len(doc["rows"]) == len(ledger.rows)
    assert "Flops^t" in ledger.table()


def test_default_model_figures(ledger):
    # self-consistent figures for the default config at 128x128
    assert ledger.params_total == pytest.approx(128331.0)
    assert ledger.flops_total == pytest.approx(294097584.0)
