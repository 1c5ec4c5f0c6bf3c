"""Smoke test for the depthadapt Python extension.

Build and install first:

    pip install --no-build-isolation ./crates/python
"""

import sys
import tempfile

import numpy as np

import depthadapt


def check(cond, what):
    if not cond:
        print(f"FAIL {what}")
        sys.exit(1)
    print(f"ok   {what}")


def main():
    plan = depthadapt.compose_batch(12, "2", 3)
    check(plan["concat_total"] == 42, "compose_batch(12, 2, 3) has 42 inputs")

    m = depthadapt.compute_metrics([[2.0, 5.0, 6.0]], [[2.0, 4.0, 8.0]])
    check(abs(m["abs_rel"] - 1 / 6) < 1e-9 and abs(m["a1"] - 1 / 3) < 1e-9, "metrics example")

    check(abs(depthadapt.source_loss([[1.5]], [[1.4]], [[1.0]], [[2.0]]) - 0.1) < 1e-12,
          "pairwise source loss example")
    check(depthadapt.total_loss(1.0, 3.0) == 2.0, "total loss weights")
    table = [("7/4", 216.83), ("9/2", 198.83), ("6/5", 219.29), ("8/15", 210.15), ("2/1", 170.73)]
    check(depthadapt.select_by_scores(table) == "2/1", "uncertainty selection picks 2/1")

    with tempfile.TemporaryDirectory() as tmp:
        dirs = depthadapt.generate_toy_domain_pair(tmp, seed=7, n_source=2, n_target=2,
                                                   height=32, width=48)
        ids, images, depths = depthadapt.load_dataset(dirs["target_gt"])
        images = np.asarray(images, dtype=np.float32)
        check(images.shape == (2, 32, 48, 3), "toy dataset loads")

        net = depthadapt.DepthNet(height=32, width=48, depth=2, base_channels=4, seed=1)
        before = net.checksum()
        pred = np.asarray(net.predict(images.tolist()))
        check(pred.shape == (2, 32, 48) and (pred > 0).all() and (pred < 80).all(),
              "predictions lie in (0, 80)")
        score, blocks = net.uncertainty(images.tolist())
        check(score > 0 and len(blocks) == 2 and net.checksum() == before,
              "uncertainty is positive and read-only")

        path = f"{tmp}/net.ckpt"
        net.save(path)
        check(depthadapt.DepthNet.load(path).checksum() == before, "checkpoint round trip")

    try:
        depthadapt.DepthNet(height=60, width=64, depth=3)
    except ValueError:
        check(True, "indivisible resolution raises ValueError")
    else:
        check(False, "indivisible resolution raises ValueError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
