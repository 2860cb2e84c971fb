"""Smoke test for the qrbsa extension module. Run after `pip install`."""

import json
import math
import os
import tempfile

import qrbsa


def check_quat():
    p = qrbsa.Quat.from_axis_angle([0.0, 0.0, 1.0], math.pi / 2)
    q = qrbsa.Quat(1.0, 0.0, 0.0, 0.0)
    assert abs((p * q).norm() - 1.0) < 1e-12
    assert abs(p.misorientation_deg(p)) < 1e-6
    # 60 degrees about c is a hexagonal symmetry operator
    s = qrbsa.Quat.from_axis_angle([0.0, 0.0, 1.0], math.pi / 3)
    assert abs(q.misorientation_deg(s)) < 1e-6
    assert qrbsa.pixel_loss(p, p) == 0.0
    assert abs(qrbsa.rotational_distance(1.0) - 4 * math.asin(0.5)) < 1e-12
    r, g, b = p.ipf_color()
    assert max(r, g, b) <= 1.0 + 1e-12


def check_volume(tmp):
    vol = qrbsa.Volume.synth_voronoi([8, 12, 12], 4, seed=3)
    assert vol.dims == [8, 12, 12]
    path = os.path.join(tmp, "v.qvol")
    vol.write(path)
    back = qrbsa.Volume.read(path)
    assert back.data() == vol.data()
    lr = vol.sparse_section(2)
    assert lr.dims == [4, 12, 12]
    up = lr.nearest_plane_upsample(2)
    rep = qrbsa.evaluate(up, vol)
    assert len(rep["per_plane"]) == 8
    same = qrbsa.evaluate(vol, vol)
    assert same["psnr_db"] == 100.0 and same["mean_misorientation_deg"] < 1e-3
    return vol, lr


def check_network(vol, lr, tmp):
    cfg = json.dumps({"feature_channels": 8, "n_qrsa_blocks": 1, "scale": 2})
    net = qrbsa.Network(cfg, seed=1)
    assert net.scale == 2 and net.param_count > 0
    sr = net.super_resolve(lr, "x")
    assert sr.dims == vol.dims

    data = os.path.join(tmp, "train.qvol")
    qrbsa.Volume.synth_voronoi([16, 16, 16], 3, seed=5).write(data)
    run = json.loads(qrbsa.preset_config("desk"))
    run.update(
        {
            "network": {"feature_channels": 8, "n_qrsa_blocks": 1},
            "epochs": 2,
            "steps_per_epoch": 2,
            "schedule": {"sizes": [8], "epoch_boundaries": []},
            "split": None,
            "data": data,
            "checkpoint_dir": os.path.join(tmp, "ckpt"),
            "eval_interval": 1,
        }
    )
    log = qrbsa.train(json.dumps(run))
    assert [r["epoch"] for r in log] == [0, 1]
    assert all(math.isfinite(r["loss"]) for r in log)
    restored = qrbsa.Network.from_checkpoint(os.path.join(tmp, "ckpt", "last.qckpt"))
    assert restored.scale == 2


def main():
    check_quat()
    with tempfile.TemporaryDirectory() as tmp:
        vol, lr = check_volume(tmp)
        check_network(vol, lr, tmp)
    print("qrbsa smoke test passed")


if __name__ == "__main__":
    main()
