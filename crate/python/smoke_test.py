"""Exercises the extension module end to end on a small synthetic world.

Build first:
    cargo build -p patchpipe-py --release --features extension-module
    cp target/release/libpatchpipe_py.so python/patchpipe_py.so
"""

import json
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import patchpipe_py as pp


def main():
    world = pp.World(json.dumps({"seed": 4, "visits": 12}))
    flowers = world.flowers_json()
    poses = world.poses_ndjson()
    truth = world.visits_ndjson()

    ref = np.frombuffer(world.reference_frame(), dtype=np.uint8)
    assert ref.size == world.width * world.height * 3
    found = json.loads(pp.detect_flowers(world.width, world.height, 3, bytes(ref)))
    assert len(found) == len(json.loads(flowers)), found

    tracks = pp.track(poses)
    events = pp.detect_visits(tracks, flowers)
    m = pp.evaluate_events(events, truth)
    assert m["recall"] == 1.0, m
    print("visits", m)

    streamed, stats = pp.run_stream(poses, flowers, queue_capacity=4)
    assert streamed == pp.offline_visits(poses, flowers)
    assert stats.splitlines()[0].startswith("stage")

    rng = np.random.default_rng(0)
    data = rng.normal(size=(200, 6)) * np.array([5, 3, 1, 0.1, 0.1, 0.1])
    pca = pp.PcaModel(data.tolist(), 0.95)
    assert 1 <= pca.n_components <= 3
    assert sum(pca.explained_ratio[: pca.n_components]) >= 0.95
    assert len(pca.project(data[0].tolist())) == pca.n_components

    emb = [[0.0, 0.0], [0.1, 0.0], [3.0, 0.0], [3.1, 0.0]]
    assert pp.triplet_loss(emb, ["a", "a", "b", "b"], 0.2) == 0.0

    try:
        pp.track("not json\n")
    except ValueError as e:
        print("bad input rejected:", e)
    else:
        raise AssertionError("expected ValueError")

    print("smoke test ok")


if __name__ == "__main__":
    main()
