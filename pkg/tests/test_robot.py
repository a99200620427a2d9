import math

import numpy as np
import pytest

from kinfeas.geometry import Pose2, Pose3, d_rot, quat_random
from kinfeas.gridmap import DynamicObstacle, Shape, World
from kinfeas.robot import (Joint, JointState, RobotConfigError, RobotModel,
                           VelocityCommand, check_base_collision, forward_kinematics,
                           integrate_base, load_robot, solve_ik)


def two_link_planar() -> RobotModel:
    """Minimal redundant-ish fixture: two revolute z joints in the plane."""
    return RobotModel(
        name="two_link", drive="omni", footprint_radius=0.2, base_diagonal=0.4,
        arm_reach=2.0,
        joints=(
            Joint("j1", "revolute", np.array([0, 0, 1.0]), np.array([0.0, 0.0, 0.5]),
                  (-3.0, 3.0), 2.0),
            Joint("j2", "revolute", np.array([0, 0, 1.0]), np.array([1.0, 0.0, 0.0]),
                  (-3.0, 3.0), 2.0),
        ),
        mount_offset=np.zeros(3), ee_offset=np.array([1.0, 0.0, 0.0]),
        torso_joint=None, learn_torso=False,
        max_linear_velocity=0.2, max_angular_velocity=1.0,
        goal_height_range=(0.2, 1.5), restricted_height_range=(0.4, 1.0),
    )


class TestForwardKinematics:
    def test_home_pose_matches_chain(self, pr2):
        ee = forward_kinematics(pr2, Pose2(), np.zeros(pr2.n_joints))
        # straight arm: mount + shoulder offsets + links along +x
        assert ee.position[0] == pytest.approx(0.05 + 0.1 + 0.5 + 0.42 + 0.18)
        assert ee.position[2] == pytest.approx(0.25 + 0.5)

    def test_single_revolute_rotation(self):
        model = two_link_planar()
        ee = forward_kinematics(model, Pose2(), np.array([math.pi / 2, 0.0]))
        np.testing.assert_allclose(ee.position, [0.0, 2.0, 0.5], atol=1e-12)

    def test_base_translation_equivariance(self, pr2):
        rng = np.random.default_rng(0)
        q = pr2.sample_joints(rng)
        a = forward_kinematics(pr2, Pose2(0, 0, 0.3), q)
        b = forward_kinematics(pr2, Pose2(1.0, 0.0, 0.3), q)
        np.testing.assert_allclose(b.position - a.position, [1.0, 0.0, 0.0], atol=1e-12)
        assert d_rot(a.orientation, b.orientation) < 1e-12

    def test_dimension_mismatch(self, pr2):
        with pytest.raises(ValueError):
            forward_kinematics(pr2, Pose2(), np.zeros(3))

    def test_composition_exactness(self, pr2):
        # chaining the base transform equals composing poses
        rng = np.random.default_rng(1)
        q = pr2.sample_joints(rng)
        base = Pose2(0.7, -0.3, 1.1)
        ee_local = forward_kinematics(pr2, Pose2(), q)
        ee_world = forward_kinematics(pr2, base, q)
        from kinfeas.geometry import transform_from_frame
        composed = transform_from_frame(ee_local, base)
        np.testing.assert_allclose(composed.position, ee_world.position, atol=1e-12)
        assert d_rot(composed.orientation, ee_world.orientation) < 1e-12


class TestIntegrateBase:
    def test_zero_command_fixed_point(self, pr2):
        base = Pose2(1, 2, 0.5)
        out = integrate_base(pr2, base, VelocityCommand(np.zeros(2), 0.0), 0.1)
        assert (out.x, out.y, out.theta) == (base.x, base.y, base.theta)

    def test_omni_max_speed(self, pr2):
        out = integrate_base(pr2, Pose2(), VelocityCommand(np.array([0.2, 0.0]), 0.0), 1.0)
        assert out.x == pytest.approx(0.2)

    def test_diff_drive_clamps_lateral(self, tiago):
        out = integrate_base(tiago, Pose2(), VelocityCommand(np.array([0.0, 0.2]), 0.0), 1.0)
        assert out.x == pytest.approx(0.0) and out.y == pytest.approx(0.0)

    def test_velocity_limit_on_displacement(self, pr2, tiago):
        rng = np.random.default_rng(2)
        for model in (pr2, tiago):
            for _ in range(300):
                lin = rng.uniform(-0.5, 0.5, 2 if model.drive == "omni" else 1)
                cmd = VelocityCommand(lin, rng.uniform(-2, 2))
                clamped = cmd.clamped(model)
                v = float(np.linalg.norm(clamped.linear)) if model.drive == "omni" \
                    else abs(float(clamped.linear[0]))
                dt = rng.uniform(0.01, 0.5)
                base = Pose2(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3))
                out = integrate_base(model, base, cmd, dt)
                disp = math.hypot(out.x - base.x, out.y - base.y)
                assert disp / dt <= v + 1e-12
                assert v <= model.max_linear_velocity + 1e-12

    def test_rotation_limit(self, pr2):
        out = integrate_base(pr2, Pose2(), VelocityCommand(np.zeros(2), 5.0), 0.1)
        assert out.theta == pytest.approx(0.1)  # clamped to 1.0 rad/s


class TestSolveIK:
    def test_fixed_point(self, pr2):
        rng = np.random.default_rng(3)
        q = JointState(pr2.sample_joints(rng))
        base = Pose2(0.2, 0.1, -0.4)
        target = forward_kinematics(pr2, base, q)
        out, achieved, ok = solve_ik(pr2, base, q, None, target, 0.1)
        assert ok
        np.testing.assert_allclose(out.values, q.values, atol=1e-6)

    def test_roundtrip_within_velocity_step(self, pr2):
        # FK roundtrip oracle: targets one velocity-limited step away are
        # recovered to high precision
        rng = np.random.default_rng(4)
        dt = 0.1
        vmax = pr2.max_joint_velocities()
        for _ in range(200):
            q0 = pr2.clamp_joints(pr2.sample_joints(rng))
            delta = rng.uniform(-1, 1, pr2.n_joints) * vmax * dt
            q1 = pr2.clamp_joints(q0 + delta)
            base = Pose2(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3))
            target = forward_kinematics(pr2, base, q1)
            out, achieved, ok = solve_ik(pr2, base, JointState(q0), None, target, dt)
            assert np.linalg.norm(achieved.position - target.position) <= 1e-3
            assert d_rot(achieved.orientation, target.orientation) <= 1e-4
            step = np.abs(out.values - q0)
            assert (step <= vmax * dt + 1e-12).all()

    def test_unreachable_best_effort(self, pr2):
        q = JointState(pr2.home_joints())
        target = Pose3(np.array([10.0, 0.0, 1.0]))
        out, achieved, ok = solve_ik(pr2, Pose2(), q, None, target, 0.1)
        assert not ok
        step = np.abs(out.values - pr2.home_joints())
        assert (step <= pr2.max_joint_velocities() * 0.1 + 1e-12).all()

    def test_torso_integrates_command_and_is_excluded(self, pr2):
        q = JointState(pr2.home_joints())
        base = Pose2()
        target = forward_kinematics(pr2, base, q)
        out, achieved, ok = solve_ik(pr2, base, q, 0.01, target, 0.1)
        ti = pr2.torso_joint
        assert out.values[ti] == pytest.approx(q.values[ti] + 0.001)

    def test_torso_command_clamped(self, pr2):
        q = JointState(pr2.home_joints())
        target = forward_kinematics(pr2, Pose2(), q)
        out, _, _ = solve_ik(pr2, Pose2(), q, 10.0, target, 0.1)
        ti = pr2.torso_joint
        tmax = pr2.joints[ti].max_velocity
        assert out.values[ti] == pytest.approx(q.values[ti] + tmax * 0.1)

    def test_min_displacement_preference(self):
        # seeded at the elbow-up and elbow-down solutions of the same target,
        # the solver stays near its seed: the returned configuration always
        # has the smaller weighted displacement from where it started
        model = two_link_planar()
        target_xy = np.array([1.2, 0.8])
        r = np.linalg.norm(target_xy)
        a1, a2 = 1.0, 1.0  # link lengths
        c2 = (r**2 - a1**2 - a2**2) / (2 * a1 * a2)
        s2 = math.sqrt(max(0.0, 1.0 - c2**2))
        phi = math.atan2(target_xy[1], target_xy[0])
        up = np.array([phi - math.atan2(s2, a1 + a2 * c2), math.atan2(s2, c2)])
        down = np.array([phi - math.atan2(-s2, a1 + a2 * c2), math.atan2(-s2, c2)])
        target = forward_kinematics(model, Pose2(), up)
        w = 1.0 / model.max_joint_velocities()
        for seed_q, other_q in ((up, down), (down, up)):
            start = JointState(seed_q + np.array([0.05, -0.05]))
            out, achieved, ok = solve_ik(model, Pose2(), start, None,
                                         Pose3(target.position, achieved_orientation(model, seed_q)),
                                         dt=10.0)
            d_self = np.sum(w * (out.values - start.values) ** 2)
            d_other = np.sum(w * (other_q - start.values) ** 2)
            assert d_self < d_other

    def test_velocity_box_never_exceeded_fuzz(self, pr2, hsr, tiago):
        rng = np.random.default_rng(5)
        for model in (pr2, hsr, tiago):
            vmax = model.max_joint_velocities()
            for _ in range(100):
                q0 = model.clamp_joints(model.sample_joints(rng))
                target = Pose3(rng.uniform(-2, 2, 3), quat_random(rng))
                dt = rng.uniform(0.02, 0.3)
                torso_cmd = rng.uniform(-1, 1) if model.learn_torso else None
                out, _, _ = solve_ik(model, Pose2(), JointState(q0), torso_cmd, target, dt)
                assert (np.abs(out.values - q0) <= vmax * dt + 1e-12).all()


def achieved_orientation(model, q):
    return forward_kinematics(model, Pose2(), q).orientation


class TestBaseCollision:
    def test_empty_world(self, pr2):
        world = World((0, 0, 5, 5), 0.05, [])
        assert not check_base_collision(pr2, Pose2(2.5, 2.5, 0), world)

    def test_cell_center_inside_footprint(self, pr2):
        world = World((0, 0, 5, 5), 0.05,
                      [Shape("rectangle", (2.8, 2.5), (0.05, 0.05), 0.0, 1.0)])
        # obstacle cell center 0.3 m from the base, inside footprint 0.33
        assert check_base_collision(pr2, Pose2(2.5, 2.5, 0), world)

    def test_just_beyond_radius(self, pr2):
        world = World((0, 0, 5, 5), 0.05,
                      [Shape("rectangle", (2.5 + 0.33 + 0.05, 2.5), (0.05, 0.05), 0.0, 1.0)])
        assert not check_base_collision(pr2, Pose2(2.5, 2.5, 0), world)

    def test_dynamic_obstacle_detected(self, pr2):
        world = World((0, 0, 5, 5), 0.05, [])
        dyn = DynamicObstacle("rectangle", (0.3, 0.3), Pose2(2.7, 2.5, 0),
                              np.array([0.1, 0.0]), 1.5)
        assert check_base_collision(pr2, Pose2(2.5, 2.5, 0), world, [dyn])
        assert not check_base_collision(pr2, Pose2(1.0, 1.0, 0), world, [dyn])


class TestRobotConfig:
    def test_builtin_configs_load(self):
        for name in ("pr2_like", "hsr_like", "tiago_like"):
            model = load_robot(name)
            assert model.max_linear_velocity == pytest.approx(0.2)
            assert model.max_angular_velocity == pytest.approx(1.0)
            assert model.n_joints >= 5

    def test_table_constraints(self, pr2, hsr, tiago):
        assert pr2.goal_height_range == (0.2, 1.55)
        assert tiago.goal_height_range == (0.2, 1.5)
        assert hsr.goal_height_range == (0.2, 1.4)
        assert pr2.restricted_height_range == (0.4, 1.0)
        assert pr2.base_diagonal == pytest.approx(0.91)

    def test_missing_file(self):
        with pytest.raises(RobotConfigError):
            load_robot("no_such_robot")

    def test_malformed_config(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("name: x\ndrive: omni\n")
        with pytest.raises(RobotConfigError):
            load_robot(bad)

    def test_invalid_joint(self):
        with pytest.raises(RobotConfigError):
            Joint("j", "revolute", np.array([0, 0, 1.0]), np.zeros(3), (1.0, -1.0), 1.0)
        with pytest.raises(RobotConfigError):
            Joint("j", "revolute", np.array([0, 0, 1.0]), np.zeros(3), (-1.0, 1.0), -2.0)
