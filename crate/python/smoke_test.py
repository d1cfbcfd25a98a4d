"""Smoke test for the twinforge Python extension.

Build the module first, for example with
    maturin develop -m crates/py/Cargo.toml --release
or
    cargo build -p twinforge-py --release --features extension-module
    cp target/release/libtwinforge_py.so python/twinforge_py.so
"""

import math

import twinforge_py as tf


def main():
    scene = tf.Scene.generate("cabinet", seed=1, noise=0.001)
    frames = scene.frames
    assert len(frames) == 2 and len(frames[0]) > 1000

    labels = tf.segment(frames, scene.contacts)
    truth = scene.labels
    agree = sum(a == b for a, b in zip(labels, truth)) / len(truth)
    assert agree > 0.99, agree

    (joint,) = tf.fit_joints(frames, labels)
    assert joint.kind == "revolute"
    assert abs(abs(joint.axis[2]) - 1.0) < 1e-3, joint.axis
    print(f"segmentation accuracy {agree:.4f}, {joint}")

    cloud = tf.PointCloud([[0, 0, 0], [1, 0, 0]])
    assert cloud.chamfer_to(tf.PointCloud([[0, 0, 1]])) == [1.0, math.sqrt(2.0)]

    basis = tf.EigengraspBasis.for_hand("four_finger", 2)
    q = basis.reconstruct([0.0, 0.0])
    assert q == basis.mean and basis.dim == 2

    # unit variance holds over draws, not within one red-noise sequence
    draws = [tf.colored_noise(2.0, 32, seed=s) for s in range(400)]
    var = sum(x * x for d in draws for x in d) / (400 * 32)
    assert abs(var - 1.0) < 0.1, var

    try:
        tf.Scene.generate("teapot")
    except tf.TwinforgeError as e:
        assert "SynthError" in str(e)
    else:
        raise AssertionError("unknown category accepted")

    traj = tf.run_task("suction_drawer_open", seed=0)
    print(f"suction_drawer_open: success={traj['success']} steps={len(traj['actions'])}")
    assert traj["success"]
    print("ok")


if __name__ == "__main__":
    main()
