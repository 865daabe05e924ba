from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from se3consensus.errors import MissingPair
from se3consensus.se3 import (
    FormationSpec,
    Pose,
    Reprojector,
    Twist,
    check_transitive_consistency,
    compose,
    conjugate_twist,
    exp_se3,
    from_formation_frame,
    inverse,
    relative_pose,
    to_formation_frame,
    unconjugate_twist,
)
from se3consensus.so3 import exp_so3, hat


def random_pose(rng):
    return Pose(exp_so3(rng.standard_normal(3)), rng.standard_normal(3))


seeds = st.integers(0, 2**32 - 1)


def test_pose_matrix_roundtrip(rng):
    g = random_pose(rng)
    assert Pose.from_matrix(g.as_matrix()).allclose(g, atol=0)
    assert Pose.from_row(g.to_row()).allclose(g, atol=0)


def test_pose_validity_flag(rng):
    assert random_pose(rng).is_valid()
    assert not Pose(2 * np.eye(3), np.zeros(3)).is_valid()


def test_compose_examples(rng):
    g = random_pose(rng)
    assert compose(Pose.identity(), g).allclose(g)
    assert compose(g, inverse(g)).allclose(Pose.identity(), atol=1e-9)


@given(seeds)
def test_compose_associative_and_matches_matrices(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_pose(rng) for _ in range(3))
    assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), atol=1e-10)
    assert np.allclose(compose(a, b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12)


def test_relative_pose_examples(rng):
    g = random_pose(rng)
    assert relative_pose(g, g).allclose(Pose.identity())
    assert relative_pose(Pose.identity(), g).allclose(g)


@given(seeds)
def test_relative_pose_definition(seed):
    rng = np.random.default_rng(seed)
    gi, gj = random_pose(rng), random_pose(rng)
    assert compose(gi, relative_pose(gi, gj)).allclose(gj, atol=1e-10)


def test_formation_frame_examples(rng):
    gs = random_pose(rng)
    assert to_formation_frame(gs, gs).allclose(Pose.identity(), atol=1e-12)
    g = random_pose(rng)
    assert to_formation_frame(g, Pose.identity()).allclose(g)
    assert from_formation_frame(to_formation_frame(g, gs), gs).allclose(g, atol=1e-12)


@given(seeds)
def test_equal_tilde_means_desired_relative_pose(seed):
    rng = np.random.default_rng(seed)
    gi_star, gj_star, common = random_pose(rng), random_pose(rng), random_pose(rng)
    gi = from_formation_frame(common, gi_star)
    gj = from_formation_frame(common, gj_star)
    assert relative_pose(gi, gj).allclose(relative_pose(gi_star, gj_star), atol=1e-10)


def test_conjugate_twist_examples(rng):
    xi = Twist(rng.standard_normal(3), rng.standard_normal(3))
    assert conjugate_twist(xi, Pose.identity()).allclose(xi)
    gs = random_pose(rng)
    assert unconjugate_twist(conjugate_twist(xi, gs), gs).allclose(xi, atol=1e-10)
    rot_only = Pose(gs.R, np.zeros(3))
    assert np.allclose(conjugate_twist(xi, rot_only).v, gs.R @ xi.v)


@given(seeds)
def test_conjugate_twist_matches_matrix_form(seed):
    rng = np.random.default_rng(seed)
    xi = Twist(rng.standard_normal(3), rng.standard_normal(3))
    G = random_pose(rng).as_matrix()
    expected = G @ xi.as_matrix() @ np.linalg.inv(G)
    got = conjugate_twist(xi, Pose.from_matrix(G)).as_matrix()
    assert np.allclose(got, expected, atol=1e-12)


def _all_pairs(targets):
    n = len(targets)
    return {(i, j): relative_pose(targets[i], targets[j]) for i in range(n) for j in range(n)}


def test_transitive_consistency(rng):
    targets = [random_pose(rng) for _ in range(4)]
    rel = _all_pairs(targets)
    assert check_transitive_consistency(rel)
    bad = dict(rel)
    g = bad[(0, 2)]
    bad[(0, 2)] = Pose(g.R @ exp_so3([0.1, 0, 0]), g.T)
    assert not check_transitive_consistency(bad)
    assert check_transitive_consistency({(0, 0): Pose.identity()})
    del bad[(1, 3)]
    with pytest.raises(MissingPair):
        check_transitive_consistency(bad)


def test_formation_spec_relative_target(rng):
    targets = [random_pose(rng) for _ in range(3)]
    spec = FormationSpec(targets)
    assert spec.n == 3
    assert spec.relative_target(1, 2).allclose(relative_pose(targets[1], targets[2]))


@given(seeds, st.floats(1e-9, 3.0))
def test_exp_se3_matches_matrix_exponential(seed, scale):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(3)
    w *= scale / np.linalg.norm(w)
    v = rng.standard_normal(3)
    M = np.zeros((4, 4))
    M[:3, :3] = hat(w)
    M[:3, 3] = v
    E = expm(M)
    R, T = exp_se3(w, v)
    assert np.allclose(R, E[:3, :3], atol=1e-12)
    assert np.allclose(T, E[:3, 3], atol=1e-12)


def test_reprojector_repairs_drift():
    rep = Reprojector(every=2, tol=1e-9)
    R = np.eye(3) * (1 + 1e-6)
    assert rep(R) is R
    fixed = rep(R)
    assert rep.repairs == 1
    assert np.allclose(fixed, np.eye(3), atol=1e-12)
