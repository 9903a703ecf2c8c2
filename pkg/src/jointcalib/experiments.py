"""Experiment drivers: ground-truth evaluation, one- vs two-stage ablation, intrinsic consistency."""

from __future__ import annotations

import numpy as np

from .board import BoardSpec, corner_points
from .errors import BehindCamera, FrameConventionMismatch, InsufficientViews, OutsideValidityRadius
from .geometry import Pose, angle_axis_from_rotation, project, rotation_from_rpy, rpy_from_rotation
from .optimize import OptimizeOptions, refine_intrinsics, solve, solve_two_stage
from .pipeline import prepare
from .simulate import EULER_CONVENTION, pose_from_config
from .zhang import initialize

INTRINSIC_NAMES = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2")


def _wrap_deg(a):
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


def evaluate_extrinsic(result, truth):
    """Compare a result's ``T_lidar_camera`` with the truth.

    Both documents carry a ``convention`` tag and a pose as ``{"r", "t"}`` or
    ``{"rpy_deg", "t"}``. Reports absolute per-axis translation error, absolute
    per-Euler-angle error (wrapped to [0, 180]) and the geodesic angle.
    """
    conv_r = result.get("convention", EULER_CONVENTION)
    conv_t = truth.get("convention", EULER_CONVENTION)
    if conv_r != conv_t:
        raise FrameConventionMismatch(f"result uses {conv_r!r}, truth uses {conv_t!r}")
    A = pose_from_config(result["T_lidar_camera"])
    B = pose_from_config(truth["T_lidar_camera"])
    dt = np.abs(A.t - B.t)
    drpy = np.abs(_wrap_deg(np.subtract(rpy_from_rotation(A.R), rpy_from_rotation(B.R))))
    geo = np.degrees(np.linalg.norm(angle_axis_from_rotation(A.R @ B.R.T)))
    return {
        "convention": conv_r,
        "dt_m": dt.tolist(),
        "drpy_deg": drpy.tolist(),
        "geodesic_deg": float(geo),
    }


def camera_errors(result_camera, truth_camera):
    """Relative focal / absolute principal point and distortion differences."""
    r, t = result_camera, truth_camera
    return {
        "fx_rel": abs(r["fx"] / t["fx"] - 1.0),
        "fy_rel": abs(r["fy"] / t["fy"] - 1.0),
        "cx_px": abs(r["cx"] - t["cx"]),
        "cy_px": abs(r["cy"] - t["cy"]),
        "dist_abs": np.abs(np.subtract(r["dist"], t["dist"])).tolist(),
    }


def ablation_study(entries, image_size, opts=None, fx_perturb=0.01, initial_extrinsic=None):
    """One-stage vs two-stage on identical inputs.

    The closed-form fx is scaled by ``1 + fx_perturb`` before the corner-only
    calibration; both solvers then start from the same parameters and anchors.
    Circle RMS is the LiDAR group (projected LiDAR hole centers against the
    anchors); corner RMS is the checkerboard group.
    """
    opts = opts or OptimizeOptions()
    prep = prepare(entries, image_size, opts, initial_extrinsic, fx_scale=1.0 + fx_perturb)
    one = solve(prep.initial, prep.pairs, opts)
    two = solve_two_stage(prep.initial, prep.pairs, opts)
    cells = {
        "one_stage": {"circle_rms_px": one.rms["lidar"], "corner_rms_px": one.rms["corner"]},
        "two_stage": {"circle_rms_px": two.rms["lidar"], "corner_rms_px": two.rms["corner"]},
    }
    return {
        "cells": cells,
        "metadata": {
            "fx_perturb": fx_perturb,
            "boards": len(prep.entries),
            "circle_one_lt_two": cells["one_stage"]["circle_rms_px"] < cells["two_stage"]["circle_rms_px"],
            "corner_two_le_one": cells["two_stage"]["corner_rms_px"] <= cells["one_stage"]["corner_rms_px"],
            "traces": {"one_stage": one.trace, "two_stage": two.trace},
        },
    }


def random_view_poses(camera, spec, n_views, seed, distance=(1.6, 3.0), max_tilt=35.0, max_roll=20.0):
    """Board -> camera poses with the whole checkerboard inside the image."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))
    w, h = camera.image_size
    obj = corner_points(spec)
    poses = []
    while len(poses) < n_views:
        z = rng.uniform(*distance)
        tx, ty = rng.uniform(-max_tilt, max_tilt, size=2)
        roll = rng.uniform(-max_roll, max_roll)
        R = np.diag([1.0, -1.0, -1.0]) @ rotation_from_rpy(tx, ty, roll)
        # aim somewhere in the central part of the image
        u, v = rng.uniform(0.25, 0.75) * w, rng.uniform(0.25, 0.75) * h
        t = np.array([(u - camera.cx) / camera.fx * z, (v - camera.cy) / camera.fy * z, z])
        pose = Pose.from_matrix(R, t)
        try:
            pix = project(camera, pose, obj)
        except (BehindCamera, OutsideValidityRadius):
            continue
        margin = 10.0
        if pix.min() < margin or np.any(pix[:, 0] > w - margin) or np.any(pix[:, 1] > h - margin):
            continue
        poses.append(pose)
    return poses


def synth_view_group(camera, spec=None, n_views=40, noise=0.2, seed=0):
    """Checkerboard-only views of one board held at random poses."""
    spec = spec or BoardSpec()
    obj = corner_points(spec)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(1,)))
    views = []
    for pose in random_view_poses(camera, spec, n_views, seed):
        pix = project(camera, pose, obj) + rng.normal(0.0, 1.0, size=(len(obj), 2)) * noise
        views.append((obj, pix))
    return views


def _calibrate_views(views, image_size, refine, opts):
    init = initialize(views, image_size)
    cam, trace = init.camera, []
    if refine:
        cam, _, lm = refine_intrinsics(cam, init.board_poses, views, opts)
        trace = lm.trace
    return [cam.fx, cam.fy, cam.cx, cam.cy, *cam.dist], trace


def consistency_study(groups, trials=100, subset_size=25, seed=0, image_size=None, refine=True, opts=None):
    """Repeat the intrinsic calibration on random view subsets and summarize the spread.

    Trial ``k`` of group ``g`` draws its subset from ``SeedSequence(seed,
    spawn_key=(g, k))``, so any single trial can be replayed on its own.
    """
    opts = opts or OptimizeOptions()
    out = []
    for g, views in enumerate(groups):
        if len(views) < subset_size:
            raise InsufficientViews(f"group {g} has {len(views)} views, need {subset_size}")
        samples, monotone = [], True
        for k in range(trials):
            rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(g, k)))
            idx = np.sort(rng.choice(len(views), size=subset_size, replace=False))
            sample, trace = _calibrate_views([views[i] for i in idx], image_size, refine, opts)
            samples.append(sample)
            monotone &= all(b <= a for a, b in zip(trace, trace[1:]))
        S = np.array(samples)
        out.append(
            {
                "group": g,
                "trials": trials,
                "subset_size": subset_size,
                "mean": dict(zip(INTRINSIC_NAMES, S.mean(axis=0).tolist())),
                "std": dict(zip(INTRINSIC_NAMES, S.std(axis=0).tolist())),
                "lm_monotone": bool(monotone),
            }
        )
    return {"parameters": list(INTRINSIC_NAMES), "refine": refine, "groups": out}
