#!/usr/bin/env python3
"""End-to-end walkthrough: build, publish, pull, compose, serve, infer.

Builds LeNet-5 plus a small classifier head, publishes both to a throwaway
file registry, pulls them into a fresh store, composes them into a pipeline,
serves the pipeline over HTTP, and checks the HTTP answer against the
in-process run.
"""

import base64
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np
import requests

from modelzoo.builders import MODELS, GraphBuilder, random_init
from modelzoo.compose import (
    Port,
    TypeSignature,
    compose_sequential,
    run_service,
    serialize_manifest,
)
from modelzoo.registry import LocalStore, export_service, publish, pull
from modelzoo.serve import encode_tensor, serve
from modelzoo.tensor import Tensor


def build_head(out_dir: Path):
    """A 10-way probability vector in, 3 scores out."""
    b = GraphBuilder()
    x = b.input("probs", (10,))
    x = b.dense(x, 3)
    graph = b.finish([x])
    return export_service(
        graph, random_init(graph, 7), out_dir, name="tiny-head", version="1.0.0",
        authors=("demo",),
        inputs=TypeSignature((Port("probs", "f32", (-1, 10), "probabilities"),)),
        outputs=TypeSignature((Port("scores", "f32", (-1, 3), "any"),)),
    )


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        spec = MODELS["lenet5"]
        graph = spec.build()
        lenet = export_service(
            graph, random_init(graph, 42), tmp / "src" / "lenet5", name="lenet5",
            version="1.0.0", authors=("demo",),
            inputs=TypeSignature((Port("image", "f32", (-1,) + spec.input_shape[1:],
                                       spec.input_tag),)),
            outputs=TypeSignature((Port("scores", "f32", (-1, 10),
                                        spec.output_tag),)),
        )
        head = build_head(tmp / "src" / "head")

        registry = (tmp / "registry").as_uri()
        publish(tmp / "src" / "lenet5", registry)
        publish(tmp / "src" / "head", registry)
        print(f"published lenet5@1.0.0 and tiny-head@1.0.0 to {registry}")

        store = LocalStore(tmp / "store")
        pull("lenet5", "1.0.0", registry, store)
        pull("tiny-head", "1.0.0", registry, store)

        pipeline = compose_sequential([lenet, head], name="digits-to-scores")
        pipe_dir = store.root / pipeline.name / pipeline.version
        pipe_dir.mkdir(parents=True)
        (pipe_dir / "manifest.json").write_text(serialize_manifest(pipeline))
        print(f"composed {pipeline.ref}: {' -> '.join(pipeline.pipeline)}")

        server = serve(pipeline, store, port=0)
        try:
            x = Tensor(np.random.default_rng(0)
                       .standard_normal((1, 1, 32, 32)).astype(np.float32))
            body = {"inputs": [encode_tensor("image", x)]}
            reply = requests.post(f"http://127.0.0.1:{server.port}/v1/infer",
                                  json=body, timeout=30).json()
            http_scores = np.frombuffer(
                base64.b64decode(reply["outputs"][0]["data"]), "<f4")
            local, _ = run_service(pipeline, {"image": x}, store)
            match = http_scores.tobytes() == local["scores"].array.tobytes()
            print(f"HTTP scores {http_scores.round(4).tolist()} "
                  f"({reply['latency_us']} us), bit-equal to local run: {match}")
            return 0 if match else 1
        finally:
            server.shutdown()


if __name__ == "__main__":
    sys.exit(main())
