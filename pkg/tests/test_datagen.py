import numpy as np
import pytest

from semidistill.datagen import (Benchmark, BenchmarkSpec, DomainShift,
                                 DomainSpec, SampleRecord, build_protocol,
                                 default_benchmark_spec, generate_benchmark,
                                 generate_domain, generate_unlabeled_pool,
                                 read_manifest, write_manifest, write_sealed)
from semidistill.errors import ConfigError, ProtocolError

DIM = 8


def simple_spec(domain_id="d", n_ids=3, imgs=4, cams=2, strength=0.5, noise=0.2,
                occ=0.0, seed=5):
    return DomainSpec(domain_id, n_ids, imgs, cams,
                      DomainShift.from_strength(DIM, strength, seed=seed,
                                                noise_sigma=noise, occlusion_rate=occ))


class TestDomainShift:
    def test_strength_zero_is_identity_map(self):
        shift = DomainShift.from_strength(DIM, 0.0, seed=3)
        pts = np.random.default_rng(0).normal(size=(5, DIM))
        assert np.allclose(shift.apply(pts), pts, atol=1e-12)

    def test_rotation_is_orthogonal(self):
        shift = DomainShift.from_strength(DIM, 1.0, seed=3)
        from semidistill.datagen import _rotation_matrix
        rot = _rotation_matrix(shift.rotation_seed, shift.rotation_strength, DIM)
        assert np.max(np.abs(rot @ rot.T - np.eye(DIM))) < 1e-10

    def test_invariants(self):
        with pytest.raises(ConfigError):
            DomainShift(0, (1.0,) * DIM, (0.0,) * DIM, noise_sigma=-1.0, occlusion_rate=0.0)
        with pytest.raises(ConfigError):
            DomainShift(0, (1.0,) * DIM, (0.0,) * DIM, noise_sigma=0.1, occlusion_rate=1.5)
        with pytest.raises(ConfigError):
            DomainShift(0, (1.0,) * 3, (0.0,) * 4, noise_sigma=0.1, occlusion_rate=0.0)


class TestGenerateDomain:
    def test_record_count(self):
        records = generate_domain(simple_spec(n_ids=2, imgs=2, cams=1), 7)
        assert len(records) == 4

    def test_degenerate_shift_gives_identical_images(self):
        spec = DomainSpec("d", 2, 3, 1,
                          DomainShift.from_strength(DIM, 0.0, seed=1,
                                                    noise_sigma=0.0, occlusion_rate=0.0))
        records = generate_domain(spec, 7)
        by_id = {}
        for r in records:
            by_id.setdefault(r.identity, []).append(r.features)
        for feats in by_id.values():
            for f in feats[1:]:
                assert np.array_equal(f, feats[0])

    def test_deterministic(self):
        a = generate_domain(simple_spec(), 7)
        b = generate_domain(simple_spec(), 7)
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))
        assert [r.identity for r in a] == [r.identity for r in b]

    def test_identity_base_offsets_ids(self):
        records = generate_domain(simple_spec(n_ids=3), 7, identity_base=100)
        assert {r.identity for r in records} == {100, 101, 102}

    def test_cameras_round_robin(self):
        records = generate_domain(simple_spec(n_ids=2, imgs=4, cams=2), 7)
        cams = [r.camera for r in records if r.identity == records[0].identity]
        assert cams == [0, 1, 0, 1]

    def test_occlusion_zeroes_coordinates(self):
        spec = simple_spec(occ=0.5, noise=0.0)
        records = generate_domain(spec, 7)
        zero_fraction = np.mean([np.mean(r.features == 0.0) for r in records])
        assert 0.3 < zero_fraction < 0.7

    def test_spec_invariants(self):
        with pytest.raises(ConfigError):
            simple_spec(n_ids=1)
        with pytest.raises(ConfigError):
            simple_spec(imgs=1)
        with pytest.raises(ConfigError):
            simple_spec(cams=0)


class TestUnlabeledPool:
    def test_identities_absent(self):
        pool, _ = generate_unlabeled_pool(simple_spec(), 7)
        assert all(r.identity is None for r in pool)

    def test_pool_size(self):
        pool, _ = generate_unlabeled_pool(simple_spec(n_ids=5, imgs=7), 7)
        assert len(pool) == 35

    def test_sealed_side_channel_matches_generation(self):
        spec = simple_spec()
        pool, sealed = generate_unlabeled_pool(spec, 7)
        labeled = generate_domain(spec, 7)
        assert sealed.identities == tuple(r.identity for r in labeled)
        assert all(np.array_equal(p.features, l.features)
                   for p, l in zip(pool, labeled))

    def test_training_cannot_consume_pool_records(self):
        # API separation: labeled training paths reject identity-less records
        from semidistill.training import train_stage1
        from semidistill.models import ExtractorConfig, build_model
        from semidistill.optim import ScheduleConfig
        from semidistill.losses import TemperatureConfig
        pool, _ = generate_unlabeled_pool(simple_spec(), 7)
        model = build_model(ExtractorConfig(DIM, (4,), 2), k_main=3, seed=0)
        with pytest.raises(ValueError):
            train_stage1(model, None, pool, ScheduleConfig(total_epochs=1),
                         TemperatureConfig(), seed=0)


class TestProtocols:
    def domains(self, n=4):
        return [simple_spec(domain_id=f"d{i}", seed=i) for i in range(n)]

    def test_leave_one_out_yields_all_folds(self):
        protocols = build_protocol(self.domains(4), "leave_one_out")
        assert len(protocols) == 4
        for p in protocols:
            assert len(p.train_domains) == 3
            assert len(p.test_domains) == 1
            assert p.test_domains[0] not in p.train_domains

    def test_single_fold_with_held_out(self):
        protocols = build_protocol(self.domains(4), "leave_one_out", held_out="d2")
        assert len(protocols) == 1
        assert protocols[0].test_domains == ("d2",)

    def test_pool_reference_carried(self):
        protocols = build_protocol(self.domains(3), "fixed_split", held_out="d0",
                                   unlabeled="pool")
        assert protocols[0].unlabeled == "pool"
        assert len(protocols[0].train_domains) == 2

    def test_single_domain_leave_one_out_rejected(self):
        with pytest.raises(ProtocolError):
            build_protocol(self.domains(1), "leave_one_out")

    def test_unknown_held_out_rejected(self):
        with pytest.raises(ProtocolError):
            build_protocol(self.domains(3), "leave_one_out", held_out="zz")

    def test_fixed_split_requires_held_out(self):
        with pytest.raises(ProtocolError):
            build_protocol(self.domains(3), "fixed_split")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ProtocolError):
            build_protocol(self.domains(3), "bootstrap")


class TestBenchmark:
    def test_identity_spaces_disjoint(self):
        spec = BenchmarkSpec(input_dim=DIM,
                             domains=tuple(simple_spec(domain_id=f"d{i}", seed=i)
                                           for i in range(3)),
                             pool=simple_spec(domain_id="pool", n_ids=4),
                             seed=11)
        bench = generate_benchmark(spec)
        seen = set()
        for domain_id, records in bench.domains.items():
            ids = {r.identity for r in records}
            assert not ids & seen
            seen |= ids
        # pool ground truth (sealed) also occupies its own id range
        assert not set(bench.sealed.identities) & seen

    def test_labeled_subset_concatenates(self):
        spec = BenchmarkSpec(input_dim=DIM,
                             domains=tuple(simple_spec(domain_id=f"d{i}", seed=i)
                                           for i in range(3)),
                             pool=None, seed=11)
        bench = generate_benchmark(spec)
        subset = bench.labeled_subset(["d0", "d2"])
        assert len(subset) == len(bench.domains["d0"]) + len(bench.domains["d2"])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            BenchmarkSpec(input_dim=16, domains=(simple_spec(),), pool=None)

    def test_default_benchmark_shape(self):
        spec = default_benchmark_spec()
        assert len(spec.domains) == 4
        assert all(d.n_identities == 50 and d.images_per_identity == 8
                   for d in spec.domains)
        assert spec.pool.n_identities == 200
        assert spec.pool.images_per_identity == 7
        bench = generate_benchmark(spec)
        assert len(bench.pool) == 1400
        assert sum(len(v) for v in bench.domains.values()) == 1600


class TestManifests:
    def test_round_trip(self, tmp_path):
        records = generate_domain(simple_spec(), 7)
        path = str(tmp_path / "d.jsonl")
        write_manifest(records, path)
        loaded = read_manifest(path)
        assert len(loaded) == len(records)
        for a, b in zip(records, loaded):
            assert np.array_equal(a.features, b.features)
            assert (a.identity, a.camera, a.domain) == (b.identity, b.camera, b.domain)

    def test_pool_manifest_keeps_identity_null(self, tmp_path):
        pool, sealed = generate_unlabeled_pool(simple_spec(), 7)
        path = str(tmp_path / "pool.jsonl")
        write_manifest(pool, path)
        assert all(r.identity is None for r in read_manifest(path))
        write_sealed(sealed, str(tmp_path / "pool.sealed.json"))
        import json
        doc = json.load(open(tmp_path / "pool.sealed.json"))
        assert doc["identities"] == list(sealed.identities)


class TestShiftControllability:
    def test_zero_shift_no_gap_large_shift_widens(self):
        # Train on two zero-shift sources; compare rank-1 on a zero-shift
        # validation domain vs increasingly shifted test domains.
        from semidistill.datagen import ProtocolSpec
        from semidistill.evaluation import run_protocol
        from semidistill.losses import TemperatureConfig
        from semidistill.models import ExtractorConfig, build_model
        from semidistill.optim import ScheduleConfig
        from semidistill.training import BatchPlan, train_stage1

        def bench(test_strength):
            mk = lambda did, st, seed: DomainSpec(
                did, 40, 6, 2, DomainShift.from_strength(16, st, seed=seed,
                                                         noise_sigma=0.8))
            domains = (mk("src0", 0.0, 1), mk("src1", 0.0, 2),
                       mk("val0", 0.0, 3), mk("val1", 0.0, 5),
                       mk("test0", test_strength, 4), mk("test1", test_strength, 6))
            return generate_benchmark(
                BenchmarkSpec(input_dim=16, domains=domains, pool=None, seed=21))

        protocol = ProtocolSpec(name="probe", train_domains=("src0", "src1"),
                                test_domains=("val0", "val1", "test0", "test1"))
        gaps = {}
        for strength in (0.0, 1.0, 2.0):
            data = bench(strength)
            labeled = data.labeled_subset(protocol.train_domains)
            per_seed = []
            for seed in range(5):
                student = build_model(ExtractorConfig(16, (32,), 16),
                                      k_main=80, seed=seed)
                train_stage1(student, None, labeled,
                             ScheduleConfig(total_epochs=10), TemperatureConfig(),
                             seed=seed, plan=BatchPlan(8, 4, 0))
                res = run_protocol(protocol, student, data)
                val = (res["val0"].rank_k[1] + res["val1"].rank_k[1]) / 2
                test = (res["test0"].rank_k[1] + res["test1"].rank_k[1]) / 2
                per_seed.append(val - test)
            gaps[strength] = float(np.mean(per_seed))
        assert abs(gaps[0.0]) < 0.03
        assert gaps[2.0] > gaps[1.0] - 0.01 > gaps[0.0] - 0.02
