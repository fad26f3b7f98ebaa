import math

import numpy as np
import pytest

from lensim.core import mean_pool
from lensim.rng import substream
from lensim.synthetic import (
    SyntheticConfig,
    SyntheticRecord,
    compare_to_theory,
    generate_sequence,
    length_gradient_bundle,
    run_synthetic_experiment,
    shared_direction,
)
from lensim.theory import AnisotropyParams, LengthPair, expected_cosine

D4096 = AnisotropyParams(10.0, 1.0, 4096)
NOISELESS = AnisotropyParams(10.0, 0.0, 64)


def test_noiseless_rows_equal_mu():
    seq = generate_sequence(NOISELESS, 5, substream(1))
    np.testing.assert_array_equal(seq.values, np.tile(shared_direction(NOISELESS), (5, 1)))
    assert seq.tokens == ()


def test_sample_mean_norm_law_of_large_numbers():
    # mean of 1e5 rows in d=4096, streamed in blocks to bound memory
    gen = substream(11)
    total = np.zeros(D4096.dim)
    for _ in range(20):
        total += generate_sequence(D4096, 5000, gen).values.sum(axis=0)
    assert abs(np.linalg.norm(total / 100_000) - 10.0) < 0.1


def test_generate_sequence_deterministic():
    a = generate_sequence(D4096, 7, substream(5, 3))
    b = generate_sequence(D4096, 7, substream(5, 3))
    assert a.values.tobytes() == b.values.tobytes()


def test_random_direction_has_requested_norm():
    mu = shared_direction(D4096, seed=9)
    assert np.linalg.norm(mu) == pytest.approx(10.0, rel=1e-12)
    assert np.count_nonzero(mu) > 4000
    np.testing.assert_array_equal(mu, shared_direction(D4096, seed=9))


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(D4096, ratio_lo=0.0)
    with pytest.raises(ValueError):
        SyntheticConfig(D4096, ratio_lo=0.8, ratio_hi=0.5)
    with pytest.raises(ValueError):
        SyntheticConfig(D4096, n_pairs=0)


def test_noiseless_experiment_is_exact():
    cfg = SyntheticConfig(NOISELESS, n_pairs=20, seed=3)
    recs = run_synthetic_experiment(cfg)
    assert all(r.cosine == 1.0 for r in recs)
    assert all(math.isnan(r.cka) for r in recs)
    cmp = compare_to_theory(recs, NOISELESS, cfg.base_length)
    assert cmp.deviations == (0.0,) * 20


def test_record_invariants():
    cfg = SyntheticConfig(AnisotropyParams(4.0, 1.0, 32), n_pairs=50, base_length=40, seed=1)
    for r in run_synthetic_experiment(cfg):
        assert cfg.ratio_lo <= r.ratio <= cfg.ratio_hi
        assert r.len_a == 40 and r.len_b == math.floor(40 / r.ratio)
        assert -1 <= r.cosine <= 1 and 0 <= r.cka <= 1


def test_single_pair_repeatable_and_worker_invariant():
    cfg = SyntheticConfig(AnisotropyParams(4.0, 1.0, 64), n_pairs=1, seed=123)
    assert run_synthetic_experiment(cfg) == run_synthetic_experiment(cfg)
    cfg = SyntheticConfig(AnisotropyParams(4.0, 1.0, 64), n_pairs=24, seed=123, random_direction=True)
    assert run_synthetic_experiment(cfg, workers=1) == run_synthetic_experiment(cfg, workers=4)


def test_seed_changes_records():
    p = AnisotropyParams(4.0, 1.0, 64)
    a = run_synthetic_experiment(SyntheticConfig(p, n_pairs=3, seed=1))
    b = run_synthetic_experiment(SyntheticConfig(p, n_pairs=3, seed=2))
    assert a != b


def test_single_pair_deviation_small():
    cfg = SyntheticConfig(D4096, n_pairs=1, ratio_lo=1.0, ratio_hi=1.0, seed=4)
    (rec,) = run_synthetic_experiment(cfg)
    assert (rec.len_a, rec.len_b) == (100, 100)
    assert abs(compare_to_theory([rec], D4096, 100).deviations[0]) < 0.05


def test_compare_rejects_mismatch():
    rec = SyntheticRecord(0, 0.5, 100, 200, 0.6, 0.9)
    with pytest.raises(ValueError, match="base_length"):
        compare_to_theory([rec], D4096, 50)
    with pytest.raises(ValueError):
        compare_to_theory([], D4096, 100)


def test_pipeline_mean_cosine_within_three_se():
    # 1e3 replicates through the generator and pooling path at fixed (m, n)
    p = AnisotropyParams(5.0, 1.0, 1024)
    m, n = 20, 50
    mu = shared_direction(p)
    vals = np.empty(1000)
    for i in range(vals.size):
        g = substream(77, i)
        a = mean_pool(generate_sequence(p, m, g, mu)).values
        b = mean_pool(generate_sequence(p, n, g, mu)).values
        vals[i] = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - expected_cosine(p, LengthPair(m, n))) < 3 * se


def test_length_gradient_bundle_shape():
    b = length_gradient_bundle(n_items=5, long_length=20, shared_range=(3, 4), n_layers=4, seed=2)
    assert b.languages == ["en", "xx"] and len(b.ids) == 5
    for seq_id in b.ids:
        short, long_ = b.entry(seq_id, "en"), b.entry(seq_id, "xx")
        assert long_.T == 20 and 3 <= short.T <= 20
        assert short.depth is not None
        shared = set(short.tokens) & set(long_.tokens)
        assert 3 <= len(shared) <= 4 and all(t.startswith("w") for t in shared)


@pytest.mark.slow
def test_confound_table_on_baseline_records():
    from lensim.stats import SimilarityRecord, confound_table
    from lensim.synthetic import BASELINE_CONFIG

    records = [
        SimilarityRecord(f"s{r.pair_index:03d}", {"cosine": r.cosine, "cka": r.cka}, r.len_a / r.len_b,
                         math.nan, 0.0, lengths=(r.len_a, r.len_b))
        for r in run_synthetic_experiment(BASELINE_CONFIG)
    ]
    cos = confound_table(records, "cosine", ci_method="fisher")
    cka = confound_table(records, "cka", ci_method="fisher")
    assert cos.full_predictors == ("length_ratio",)
    assert cos.length_only.r2 > 0.5 and cka.length_only.r2 < 0.05
    # n2 = floor(n1 / r) >= n1, so a larger ratio means a shorter partner and a
    # lower predicted cosine: the fitted slope carries that sign
    assert cos.length_only.betas["length_ratio"] < 0
