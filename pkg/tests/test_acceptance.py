"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as the
criteria complete.  Every tolerance and time budget is pinned here.
"""

import base64
import itertools
import time
from contextlib import contextmanager

import numpy as np
import pytest
import requests

from modelzoo.builders import MODELS, count_params, random_init
from modelzoo.cli import BENCH_CSV_HEADER, main
from modelzoo.compose import (
    Port,
    TypeSignature,
    check_compat,
    compose_sequential,
    run_service,
)
from modelzoo.graph import execute, report_to_csv
from modelzoo.naive import (
    naive_activation,
    naive_batchnorm,
    naive_concat,
    naive_conv2d,
    naive_dense,
    naive_execute,
    naive_pool2d,
)
from modelzoo.registry import export_service, publish, pull
from modelzoo.serve import encode_tensor, serve
from modelzoo.tensor import ConvSpec, Tensor, activation, batchnorm_infer, concat, conv2d, dense, pool2d

from conftest import FIXED_CREATED, make_dense_service, max_rel_err
from test_builders import INCEPTION_ORACLE, LENET5_ORACLE, VGG16_ORACLE
from test_compose import enumerate_small_signatures, oracle_compatible


@contextmanager
def criterion(number: int, budget_s: float, description: str):
    t0 = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"\n[FAIL] criterion {number}: {description}")
        raise
    elapsed = time.monotonic() - t0
    assert elapsed < budget_s, (
        f"criterion {number} exceeded its {budget_s}s budget: {elapsed:.1f}s")
    print(f"\n[PASS] criterion {number}: {description} ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 1. kernel oracle suite: 1000 randomized cases per op, rel err <= 1e-5


def test_criterion_1_kernel_oracles():
    rng = np.random.default_rng(1001)
    cases = 1000

    def rnd(*shape):
        return Tensor(rng.standard_normal(shape).astype(np.float32))

    with criterion(1, 60.0, "1000-case kernel oracle suite, rel err <= 1e-5"):
        for _ in range(cases):  # conv2d
            n, c, o = (int(v) for v in rng.integers(1, 3, size=3))
            h = int(rng.integers(2, 7))
            w = int(rng.integers(2, 7))
            kh = int(rng.integers(1, min(4, h + 1)))
            kw = int(rng.integers(1, min(4, w + 1)))
            stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
            padding = ("same", "valid")[int(rng.integers(0, 2))]
            x, k, b = rnd(n, c, h, w), rnd(o, c, kh, kw), rnd(o)
            fast = conv2d(x, k, b, ConvSpec((o, c, kh, kw), stride, padding))
            slow = naive_conv2d(x, k, b, stride, padding)
            assert max_rel_err(fast.array, slow.array) <= 1e-5

        for _ in range(cases):  # pool2d
            n, c = (int(v) for v in rng.integers(1, 3, size=2))
            h = int(rng.integers(2, 8))
            w = int(rng.integers(2, 8))
            kh = int(rng.integers(1, min(4, h + 1)))
            kw = int(rng.integers(1, min(4, w + 1)))
            stride = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
            padding = ("same", "valid")[int(rng.integers(0, 2))]
            mode = ("max", "avg")[int(rng.integers(0, 2))]
            x = rnd(n, c, h, w)
            fast = pool2d(x, (kh, kw), stride, padding, mode)
            slow = naive_pool2d(x, (kh, kw), stride, padding, mode)
            assert max_rel_err(fast.array, slow.array) <= 1e-5

        for _ in range(cases):  # dense
            n, d, m = (int(v) for v in rng.integers(1, 7, size=3))
            x, w_, b = rnd(n, d), rnd(d, m), rnd(m)
            assert max_rel_err(dense(x, w_, b).array,
                               naive_dense(x, w_, b).array) <= 1e-5

        for _ in range(cases):  # batchnorm
            c = int(rng.integers(1, 5))
            x = rnd(2, c, 3, 3)
            gamma, beta, mean = rnd(c), rnd(c), rnd(c)
            var = Tensor(np.abs(rng.standard_normal(c)).astype(np.float32) + 0.05)
            fast = batchnorm_infer(x, gamma, beta, mean, var, 1e-3)
            slow = naive_batchnorm(x, gamma, beta, mean, var, 1e-3)
            assert max_rel_err(fast.array, slow.array) <= 1e-5

        for _ in range(cases):  # concat
            rank = int(rng.integers(2, 5))
            axis = int(rng.integers(0, rank))
            base = [int(v) for v in rng.integers(1, 4, size=rank)]
            parts = []
            for _ in range(int(rng.integers(1, 4))):
                shape = list(base)
                shape[axis] = int(rng.integers(1, 4))
                parts.append(rnd(*shape))
            fast = concat(parts, axis)
            slow = naive_concat(parts, axis)
            assert fast.array.tobytes() == slow.array.tobytes()

        for _ in range(cases):  # activations
            kind = ("relu", "tanh", "softmax")[int(rng.integers(0, 3))]
            shape = tuple(int(v) for v in rng.integers(1, 6, size=2))
            x = Tensor((rng.standard_normal(shape) * 4).astype(np.float32))
            assert max_rel_err(activation(x, kind).array,
                               naive_activation(x, kind).array) <= 1e-5


# ---------------------------------------------------------------------------
# 2. whole-graph oracle: LeNet-5, seed 42 weights, fixed input


def test_criterion_2_whole_graph_oracle():
    with criterion(2, 10.0, "LeNet-5 vs naive interpreter, rel err <= 1e-4"):
        graph = MODELS["lenet5"].build()
        graph.params = random_init(graph, 42)
        data = np.random.default_rng(4242).standard_normal((1, 1, 32, 32))
        x = Tensor(data.astype(np.float32))
        fast, _ = execute(graph, {"image": x})
        slow = naive_execute(graph, {"image": x})
        assert fast.keys() == slow.keys()
        for name in fast:
            assert max_rel_err(fast[name].array, slow[name].array) <= 1e-4


# ---------------------------------------------------------------------------
# 3. structural anchors: node counts and parameter sizes


def test_criterion_3_structural_anchors():
    with criterion(3, 300.0, "node counts 8/38/313 and parameter sizes"):
        lenet = MODELS["lenet5"].build()
        vgg = MODELS["vgg16"].build()
        inception = MODELS["inceptionv3"].build()

        assert MODELS["lenet5"].node_count(lenet) == 8
        assert MODELS["vgg16"].node_count(vgg) == 38
        assert MODELS["inceptionv3"].node_count(inception) == 313

        lenet_count, lenet_bytes = count_params(lenet)
        assert lenet_count == LENET5_ORACLE
        assert lenet_bytes == 246_824
        assert abs(lenet_bytes / 1024 - 240) / 240 <= 0.05

        vgg_count, vgg_bytes = count_params(vgg)
        assert vgg_count == VGG16_ORACLE == 138_357_544
        assert abs(vgg_bytes / 2**20 - 500) / 500 <= 0.10

        inc_count, inc_bytes = count_params(inception)
        assert inc_count == INCEPTION_ORACLE
        assert 21_500_000 <= inc_count <= 24_500_000
        assert abs(inc_bytes / 2**20 - 100) / 100 <= 0.15

        # materialize the VGG16 table in full (the heavyweight of the three)
        table = random_init(vgg, 0)
        materialized = sum(t.size for t in table.values())
        assert materialized == vgg_count
        del table


# ---------------------------------------------------------------------------
# 4. profiling: InceptionV3, 313 rows, latency bound, numeric neutrality


def test_criterion_4_inception_profiling():
    with criterion(4, 120.0, "InceptionV3 profile: 313 rows, sum <= wall, bit-equal"):
        spec = MODELS["inceptionv3"]
        graph = spec.build()
        graph.params = random_init(graph, 0)
        data = np.random.default_rng(99).standard_normal(spec.input_shape)
        x = Tensor(data.astype(np.float32))

        outputs_profiled, report = execute(graph, {"image": x}, profile=True)
        assert report is not None
        assert len(report.records) == 313
        assert sum(r.latency_us for r in report.records) <= report.total_us

        csv_text = report_to_csv(report)
        lines = csv_text.strip().split("\n")
        assert lines[0] == "node_id,name,op,latency_us,output_shape"
        assert len(lines) == 1 + 313

        outputs_plain, no_report = execute(graph, {"image": x}, profile=False)
        assert no_report is None
        for name in outputs_plain:
            assert (outputs_plain[name].array.tobytes()
                    == outputs_profiled[name].array.tobytes())


# ---------------------------------------------------------------------------
# 5. composition: two-step equivalence and the brute-force compat oracle


def test_criterion_5_composition(tmp_path):
    with criterion(5, 60.0, "200 composed pairs bit-equal; compat == oracle"):
        from modelzoo.registry import LocalStore

        store = LocalStore(tmp_path / "store")
        rng = np.random.default_rng(55)
        for i in range(200):
            d1, d2, d3 = (int(v) for v in rng.integers(1, 7, size=3))
            a = make_dense_service(store.root, f"a{i}", "1.0.0", d1, d2, seed=2 * i)
            b = make_dense_service(store.root, f"b{i}", "1.0.0", d2, d3, seed=2 * i + 1)
            composed = compose_sequential([a, b], name=f"ab{i}", created=FIXED_CREATED)
            x = Tensor(rng.standard_normal((int(rng.integers(1, 3)), d1))
                       .astype(np.float32))
            mid, _ = run_service(a, {"x": x}, store)
            two_step, _ = run_service(b, {"x": mid["y"]}, store)
            piped, _ = run_service(composed, {"x": x}, store)
            assert piped["y"].array.tobytes() == two_step["y"].array.tobytes()

        sigs = enumerate_small_signatures(max_ports=2)
        for producer, consumer in itertools.product(sigs, sigs):
            report = check_compat(producer, consumer)
            assert report.compatible == oracle_compatible(producer, consumer)
            if not report.compatible:
                assert report.diagnostics


# ---------------------------------------------------------------------------
# 6. registry round trips, integrity, caching


def test_criterion_6_registry(tmp_path, http_registry):
    with criterion(6, 30.0, "publish/pull round trips, integrity, cache hits"):
        from modelzoo.errors import IntegrityError
        from modelzoo.registry import LocalStore

        src = tmp_path / "src"
        make_dense_service(src, "svc", "1.0.0", 5, 3, seed=6)
        service_dir = src / "svc" / "1.0.0"

        # HTTP round trip
        publish(service_dir, http_registry.url)
        store = LocalStore(tmp_path / "store-http")
        installed = pull("svc", "1.0.0", http_registry.url, store)
        for f in ("manifest.json", "graph.json", "weights.zoow"):
            assert (installed / f).read_bytes() == (service_dir / f).read_bytes()

        # second pull: zero network requests
        before = len(http_registry.log)
        pull("svc", "1.0.0", http_registry.url, store)
        assert len(http_registry.log) == before

        # file:// round trip
        file_registry = (tmp_path / "filereg").as_uri()
        publish(service_dir, file_registry)
        store2 = LocalStore(tmp_path / "store-file")
        installed2 = pull("svc", "1.0.0", file_registry, store2)
        for f in ("manifest.json", "graph.json", "weights.zoow"):
            assert (installed2 / f).read_bytes() == (service_dir / f).read_bytes()

        # corrupted weights: integrity error, store unchanged
        target = http_registry.root / "services" / "svc" / "1.0.0" / "weights.zoow"
        blob = bytearray(target.read_bytes())
        blob[20] ^= 0x55
        target.write_bytes(bytes(blob))
        fresh = LocalStore(tmp_path / "store-corrupt")
        with pytest.raises(IntegrityError):
            pull("svc", "1.0.0", http_registry.url, fresh)
        assert not fresh.has("svc", "1.0.0")
        assert not any(fresh.root.iterdir()) if fresh.root.exists() else True


# ---------------------------------------------------------------------------
# 7. serving: HTTP inference bit-equals in-process execution


def test_criterion_7_serving(tmp_path):
    with criterion(7, 30.0, "HTTP vs in-process bit-equal; 400/422 diagnostics"):
        from modelzoo.registry import LocalStore

        store = LocalStore(tmp_path / "store")

        # LeNet-5 as a stored service
        spec = MODELS["lenet5"]
        graph = spec.build()
        params = random_init(graph, 0)
        inputs = TypeSignature((Port("image", "f32", (-1, 1, 32, 32), "image/gray"),))
        outputs = TypeSignature((Port("scores", "f32", (-1, 10), "probabilities"),))
        lenet_manifest = export_service(
            graph, params, store.root / "lenet5" / "1.0.0", name="lenet5",
            version="1.0.0", authors=("t",), inputs=inputs, outputs=outputs,
            created=FIXED_CREATED)

        # a small head consuming LeNet's probabilities
        head = make_dense_service(store.root, "head", "1.0.0", 10, 5, seed=3,
                                  tag_in="probabilities", tag_out="scores")
        pipeline = compose_sequential([lenet_manifest, head], name="pipe",
                                      created=FIXED_CREATED)

        x = Tensor(np.random.default_rng(77).standard_normal((1, 1, 32, 32))
                   .astype(np.float32))

        for manifest, inputs_map in ((lenet_manifest, {"image": x}),
                                     (pipeline, {"image": x})):
            server = serve(manifest, store, port=0)
            try:
                body = {"inputs": [encode_tensor(k, v) for k, v in inputs_map.items()]}
                reply = requests.post(
                    f"http://127.0.0.1:{server.port}/v1/infer", json=body, timeout=30)
                assert reply.status_code == 200
                doc = reply.json()
                local, _ = run_service(manifest, inputs_map, store)
                for entry in doc["outputs"]:
                    assert (base64.b64decode(entry["data"])
                            == local[entry["name"]].tobytes())

                bad = requests.post(f"http://127.0.0.1:{server.port}/v1/infer",
                                    data=b"not json", timeout=10)
                assert bad.status_code == 400

                wrong = {"inputs": [encode_tensor("image",
                                                  Tensor(np.zeros((1, 2, 32, 32),
                                                                  np.float32)))]}
                r422 = requests.post(f"http://127.0.0.1:{server.port}/v1/infer",
                                     json=wrong, timeout=10)
                assert r422.status_code == 422
                assert "axis 1" in r422.json()["error"]
            finally:
                server.shutdown()


# ---------------------------------------------------------------------------
# 8. bench harness: structural columns and nonzero latencies, one run


def test_criterion_8_bench(tmp_path):
    with criterion(8, 600.0, "bench: all three models, structural columns exact"):
        csv_path = tmp_path / "bench.csv"
        code = main(["bench", "--models", "lenet5,vgg16,inceptionv3",
                     "--repeat", "2", "--csv", str(csv_path), "--seed", "0"])
        assert code == 0

        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == BENCH_CSV_HEADER
        assert len(lines) == 1 + 3 * (2 + 1)

        expected = {
            "lenet5": ("246824", "8"),
            "vgg16": ("553430176", "38"),
            "inceptionv3": ("95544864", "313"),
        }
        seen = {}
        for line in lines[1:]:
            model, rep, latency, pbytes, nodes = line.split(",")
            assert (pbytes, nodes) == expected[model]
            assert int(latency) > 0
            seen.setdefault(model, []).append(rep)
        for model, reps in seen.items():
            assert reps == ["1", "2", "median"]
