import numpy as np
import pytest

from mvsao.jump_process import (
    JumpPath,
    SelfIntersectionSampler,
    boundary_term,
    colored_boundary_local_time,
    colored_local_time,
    endpoint_indicator,
    sample_U,
    sample_hat_U,
    sample_si_times,
)
from mvsao.stochastic_paths import (
    DomainConfig,
    PathSample,
    boundary_local_time,
    local_time,
    sample_bridge,
)

HALF = DomainConfig(case=2)
UNIT = DomainConfig(case=3, theta=1.0)


def frozen_path(seed=0, t=1.0, dt=1e-3, dom=None, x=0.2, y=0.4):
    dom = dom or UNIT
    rng = np.random.default_rng(seed)
    return sample_bridge(dom, x, y, t, dt, rng)


class TestSampleU:
    def test_r1_never_jumps(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            path = sample_U(1, [(1.0, 1)], rng)
            assert path.n_jumps == 0

    def test_poisson_zero_probability(self):
        rng = np.random.default_rng(1)
        n = 100_000
        zeros = sum(sample_U(2, [(1.0, 1)], rng).n_jumps == 0 for _ in range(n))
        p = zeros / n
        se = np.sqrt(p * (1 - p) / n)
        assert abs(p - np.exp(-1.0)) <= 3 * se

    def test_mean_jump_count(self):
        rng = np.random.default_rng(2)
        n = 40_000
        counts = np.array([sample_U(3, [(2.0, 1)], rng).n_jumps for _ in range(n)])
        se = counts.std(ddof=1) / np.sqrt(n)
        assert abs(counts.mean() - 4.0) <= 3 * se

    def test_jumps_chain_within_segment(self):
        rng = np.random.default_rng(3)
        path = sample_U(4, [(3.0, 2), (2.0, 4)], rng)
        starts = path.segment_starts
        prev_color = None
        for tau, (frm, to) in zip(path.times, path.jumps):
            assert frm != to
            seg = int(np.searchsorted(starts, tau, side="right")) - 1
            if prev_color is not None and prev_seg == seg:
                assert frm == prev_color
            else:
                assert frm == path.segments[seg][1]
            prev_color, prev_seg = to, seg

    def test_segment_counts_uncorrelated(self):
        rng = np.random.default_rng(4)
        n = 20_000
        n1, n2 = np.empty(n), np.empty(n)
        starts_at = 1.0
        for k in range(n):
            p = sample_U(2, [(1.0, 1), (1.0, 2)], rng)
            n1[k] = np.count_nonzero(p.times < starts_at)
            n2[k] = p.n_jumps - n1[k]
        corr = np.corrcoef(n1, n2)[0, 1]
        assert abs(corr) <= 4 / np.sqrt(n)

    def test_bad_segments_rejected(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            sample_U(2, [(0.0, 1)], rng)
        with pytest.raises(ValueError):
            sample_U(2, [(1.0, 3)], rng)


class TestEndpointIndicator:
    def test_zero_jump_path(self):
        path = JumpPath(r=2, segments=((1.0, 1),), times=np.zeros(0), jumps=[])
        assert endpoint_indicator(path, [1]) is True
        assert endpoint_indicator(path, [2]) is False

    def test_two_color_parity(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            path = sample_U(2, [(1.0, 1)], rng)
            expected = 1 if path.n_jumps % 2 == 0 else 2
            assert endpoint_indicator(path, [expected]) is True

    def test_return_probability(self):
        rng = np.random.default_rng(7)
        n = 100_000
        hits = sum(endpoint_indicator(sample_U(2, [(1.0, 1)], rng), [1]) for _ in range(n))
        p = hits / n
        se = np.sqrt(p * (1 - p) / n)
        assert abs(p - (1 + np.exp(-2.0)) / 2) <= 3 * se


class TestColoredLocalTime:
    def test_r1_equals_total(self):
        path = frozen_path()
        u = JumpPath(r=1, segments=((1.0, 1),), times=np.zeros(0), jumps=[])
        fields = colored_local_time(u, path, h=0.05)
        total = local_time(path, (0.0, 1.0), h=0.05)
        got = fields[0]
        lo = got.offset
        np.testing.assert_allclose(
            got.masses, total.masses[lo - total.offset:lo - total.offset + len(got.masses)])

    def test_unvisited_color_zero(self):
        path = frozen_path()
        u = JumpPath(r=3, segments=((1.0, 2),), times=np.zeros(0), jumps=[])
        fields = colored_local_time(u, path, h=0.05)
        assert fields[0].masses.sum() == 0.0
        assert fields[2].masses.sum() == 0.0

    def test_color_occupation_sums(self):
        rng = np.random.default_rng(8)
        path = frozen_path(t=2.0)
        u = sample_U(3, [(1.0, 1), (1.0, 3)], rng)
        fields = colored_local_time(u, path, h=0.05)
        assert sum(f.total_mass() for f in fields) == pytest.approx(2.0, abs=1e-12)
        total = local_time(path, (0.0, 2.0), h=0.05)
        acc = np.zeros_like(total.masses)
        for f in fields:
            acc[f.offset - total.offset:f.offset - total.offset + len(f.masses)] += f.masses
        np.testing.assert_allclose(acc, total.masses, atol=1e-12)


class TestBoundaryTerm:
    def test_case1_zero(self):
        path = frozen_path(dom=DomainConfig(case=1), x=0.0, y=0.0)
        u = JumpPath(r=1, segments=((1.0, 1),), times=np.zeros(0), jumps=[])
        assert boundary_term(u, path, [1.5], None, DomainConfig(case=1)) == 0.0

    def test_zero_weights(self):
        path = frozen_path(dom=HALF, x=0.05, y=0.05)
        u = JumpPath(r=2, segments=((1.0, 1),), times=np.zeros(0), jumps=[])
        assert boundary_term(u, path, [0.0, 0.0], None, HALF) == 0.0

    def test_r1_matches_scalar(self):
        path = frozen_path(dom=HALF, x=0.02, y=0.05)
        u = JumpPath(r=1, segments=((1.0, 1),), times=np.zeros(0), jumps=[])
        w = 0.7
        want = w * boundary_local_time(path, 0.0, (0.0, 1.0), HALF)
        assert boundary_term(u, path, [w], None, HALF) == pytest.approx(want)

    def test_dirichlet_kill(self):
        path = frozen_path(dom=HALF, x=0.0, y=0.01, dt=1e-4)
        u = JumpPath(r=1, segments=((1.0, 1),), times=np.zeros(0), jumps=[])
        assert boundary_term(u, path, [-np.inf], None, HALF) == -np.inf

    def test_colored_split_sums_to_total(self):
        rng = np.random.default_rng(9)
        path = frozen_path(dom=UNIT, x=0.02, y=0.95, dt=1e-4)
        u = sample_U(2, [(1.0, 1)], rng)
        per_color = colored_boundary_local_time(u, path, 0.0, UNIT)
        total = boundary_local_time(path, 0.0, (0.0, 1.0), UNIT)
        assert per_color.sum() == pytest.approx(total, abs=1e-12)


class TestSelfIntersectionSampler:
    def test_constant_path_single_bin(self):
        path = PathSample(dt=0.01, values=np.full(101, 0.35), segment_times=(1.0,))
        sampler = SelfIntersectionSampler(path, h=0.1)
        rng = np.random.default_rng(10)
        t1, t2, _ = sampler.sample_pair(rng)
        assert 0.0 <= t1 < 1.0 and 0.0 <= t2 < 1.0

    def test_pairs_share_bin(self):
        path = frozen_path(dt=1e-3)
        h = np.sqrt(1e-3)
        sampler = SelfIntersectionSampler(path, h)
        rng = np.random.default_rng(11)
        vals = path.values
        for _ in range(500):
            t1, t2, _ = sampler.sample_pair(rng)
            z1 = vals[int(round(t1 / path.dt))]
            z2 = vals[int(round(t2 / path.dt))]
            assert abs(z1 - z2) <= h

    def test_bin_marginal_matches_mass_squared(self):
        path = frozen_path(dt=2e-3)
        h = 0.1
        sampler = SelfIntersectionSampler(path, h)
        rng = np.random.default_rng(12)
        n = 100_000
        bins = np.array([sampler.sample_pair(rng)[2] for _ in range(n)])
        field = local_time(path, (0.0, 1.0), h)
        probs = field.masses**2 * h / field.norm2_squared()
        for b, p in enumerate(probs):
            if p == 0:
                continue
            emp = np.count_nonzero(bins == b + field.offset) / n
            se = np.sqrt(max(p * (1 - p), 1e-12) / n)
            assert abs(emp - p) <= 4 * se + 1e-12

    def test_si_times_indexing(self):
        path = frozen_path(dt=1e-3)
        sampler = SelfIntersectionSampler(path, h=0.05)
        rng = np.random.default_rng(13)
        q = ((0, 3), (1, 2))
        times, bins = sample_si_times(sampler, q, rng)
        assert times.shape == (4,) and bins.shape == (2,)


class TestSampleHatU:
    def test_r1_degenerate(self):
        rng = np.random.default_rng(14)
        path = frozen_path()
        hat = sample_hat_U(1, path, [(1.0, 1)], h=0.05, n_max=12, rng=rng)
        assert hat.n_jumps == 0 and hat.matching == ()

    def test_mean_jump_count(self):
        rng = np.random.default_rng(15)
        path = frozen_path(dt=1e-3)
        h = np.sqrt(1e-3)
        sampler = SelfIntersectionSampler(path, h)
        lam2 = 1.0 * sampler.norm2_squared  # (r-1)^2 ||L||^2 with r = 2
        n = 30_000
        counts = []
        for _ in range(n):
            hat = sample_hat_U(2, path, [(1.0, 1)], h=h, n_max=100, rng=rng)
            counts.append(hat.n_jumps)
        counts = np.array(counts)
        se = counts.std(ddof=1) / np.sqrt(n)
        assert abs(counts.mean() - lam2) <= 3 * se

    def test_matching_structure_and_bin_coincidence(self):
        rng = np.random.default_rng(16)
        path = frozen_path(dt=1e-3)
        h = np.sqrt(1e-3)
        got_positive = 0
        for _ in range(400):
            hat = sample_hat_U(3, path, [(0.5, 1), (0.5, 2)], h=h, n_max=20, rng=rng)
            if hat is None or hat.n_jumps == 0:
                continue
            got_positive += 1
            n = hat.n_jumps
            flat = sorted(i for pair in hat.matching for i in pair)
            assert flat == list(range(n))
            # sorted times with the post-sort matching reproduce the pairs
            for l1, l2 in hat.matching:
                z1 = path.values[int(round(hat.times[l1] / path.dt))]
                z2 = path.values[int(round(hat.times[l2] / path.dt))]
                assert abs(z1 - z2) <= h
            # bijection with the pre-sort matching under the permutation
            mapped = {tuple(sorted((hat.sort_permutation[a], hat.sort_permutation[b])))
                      for a, b in hat.presort_matching}
            assert mapped == set(hat.matching)
        assert got_positive > 10

    def test_discard_flag(self):
        rng = np.random.default_rng(17)
        path = frozen_path(dt=1e-3)
        out = [sample_hat_U(6, path, [(1.0, 1)], h=np.sqrt(1e-3), n_max=0, rng=rng)
               for _ in range(50)]
        assert any(o is None for o in out)
