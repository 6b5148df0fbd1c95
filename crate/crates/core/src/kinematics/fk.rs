//! Forward kinematics, both on plain values and as differentiable tensor ops.

use serde::{Deserialize, Serialize};

use super::rotation::{
    add, axis_angle_jacobian, axis_angle_to_matrix, mat_mul, mat_vec, norm, scale, sub, transpose,
    AxisAngle, Mat3, Vec3, IDENTITY,
};
use super::skeleton::{Side, Skeleton};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Per-joint local rotations plus the body origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotations: Vec<AxisAngle>,
    pub root: Vec3,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Pose {
            rotations: vec![AxisAngle::IDENTITY; joints],
            root: [0.0; 3],
        }
    }

    /// Flat `[J * 3]` axis-angle components.
    pub fn flat_rotations(&self) -> Vec<f64> {
        self.rotations.iter().flat_map(|r| r.0).collect()
    }

    pub fn from_flat(values: &[f64], root: Vec3) -> Self {
        Pose {
            rotations: values
                .chunks_exact(3)
                .map(|c| AxisAngle([c[0], c[1], c[2]]))
                .collect(),
            root,
        }
    }
}

fn global_transforms(skeleton: &Skeleton, rotations: &[AxisAngle], root: Vec3) -> (Vec<Vec3>, Vec<Mat3>) {
    let n = skeleton.joint_count();
    let mut pos = vec![[0.0; 3]; n];
    let mut glob = vec![IDENTITY; n];
    for j in 0..n {
        let local = rotations[j].to_matrix();
        match skeleton.parent(j) {
            None => {
                pos[j] = add(root, skeleton.offset(j));
                glob[j] = local;
            }
            Some(p) => {
                pos[j] = add(pos[p], mat_vec(&glob[p], skeleton.offset(j)));
                glob[j] = mat_mul(&glob[p], &local);
            }
        }
    }
    (pos, glob)
}

/// Global joint positions: `pos(child) = pos(parent) + R_global(parent) · offset(child)`.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Vec3>> {
    if pose.rotations.len() != skeleton.joint_count() {
        return Err(Error::Contract(format!(
            "pose has {} rotations, skeleton has {} joints",
            pose.rotations.len(),
            skeleton.joint_count()
        )));
    }
    Ok(global_transforms(skeleton, &pose.rotations, pose.root).0)
}

/// Unit vectors shoulder→elbow and elbow→wrist, left side first.
pub fn arm_direction_vectors(skeleton: &Skeleton, positions: &[Vec3]) -> Result<[Vec3; 4]> {
    let mut out = [[0.0; 3]; 4];
    for (k, side) in [Side::Left, Side::Right].into_iter().enumerate() {
        let [s, e, w] = skeleton.arm_of(side);
        for (m, (a, b)) in [(s, e), (e, w)].into_iter().enumerate() {
            let d = sub(positions[b], positions[a]);
            let len = norm(d);
            if len <= 1e-12 {
                return Err(Error::DegenerateBone { from: a, to: b });
            }
            out[2 * k + m] = scale(d, 1.0 / len);
        }
    }
    Ok(out)
}

/// Rodrigues' formula over the last axis: `[..., 3]` → `[..., 3, 3]`.
pub fn axis_angle_to_matrix_tensor(r: &Tensor) -> Result<Tensor> {
    if r.shape().last() != Some(&3) {
        return shape_err("axis_angle_to_matrix", r.shape(), &[3]);
    }
    let count = r.numel() / 3;
    let mut out = Vec::with_capacity(count * 9);
    for v in r.data().chunks_exact(3) {
        let m = axis_angle_to_matrix([v[0], v[1], v[2]]);
        out.extend(m.iter().flatten());
    }
    let mut shape = r.shape().to_vec();
    shape.push(3);
    let rc = r.clone();
    Ok(Tensor::from_op(
        "axis_angle_to_matrix",
        shape,
        out,
        vec![r.clone()],
        Box::new(move |g| {
            let mut gr = vec![0.0; count * 3];
            for (i, v) in rc.data().chunks_exact(3).enumerate() {
                let jac = axis_angle_jacobian([v[0], v[1], v[2]]);
                let gm = &g[i * 9..(i + 1) * 9];
                for (k, dk) in jac.iter().enumerate() {
                    gr[i * 3 + k] = dk.iter().flatten().zip(gm).map(|(a, b)| a * b).sum();
                }
            }
            vec![Some(gr)]
        }),
    ))
}

fn mat_at(data: &[f64], idx: usize) -> Mat3 {
    let s = &data[idx * 9..idx * 9 + 9];
    [[s[0], s[1], s[2]], [s[3], s[4], s[5]], [s[6], s[7], s[8]]]
}

/// Chains local rotation matrices `[N, J, 3, 3]` down the hierarchy and returns
/// joint positions `[N, J, 3]` with the body origin fixed at zero.
pub fn fk_chain_tensor(skeleton: &Skeleton, local: &Tensor) -> Result<Tensor> {
    let j = skeleton.joint_count();
    if local.rank() != 4 || local.shape()[1..] != [j, 3, 3] {
        return shape_err("fk_chain", local.shape(), &[0, j, 3, 3]);
    }
    let frames = local.shape()[0];
    let parents: Vec<Option<usize>> = skeleton.parents().to_vec();
    let offsets: Vec<Vec3> = (0..j).map(|i| skeleton.offset(i)).collect();
    let ld = local.data();
    let mut pos = vec![[0.0; 3]; frames * j];
    let mut glob = vec![IDENTITY; frames * j];
    for f in 0..frames {
        for i in 0..j {
            let r = mat_at(ld, f * j + i);
            let (p, g) = match parents[i] {
                None => (offsets[i], r),
                Some(p) => {
                    let gp = &glob[f * j + p];
                    (add(pos[f * j + p], mat_vec(gp, offsets[i])), mat_mul(gp, &r))
                }
            };
            pos[f * j + i] = p;
            glob[f * j + i] = g;
        }
    }
    let out: Vec<f64> = pos.iter().flatten().copied().collect();
    let lc = local.clone();
    Ok(Tensor::from_op(
        "fk_chain",
        vec![frames, j, 3],
        out,
        vec![local.clone()],
        Box::new(move |g| {
            let ld = lc.data();
            let mut g_local = vec![0.0; frames * j * 9];
            for f in 0..frames {
                let mut g_pos: Vec<Vec3> = (0..j)
                    .map(|i| {
                        let k = (f * j + i) * 3;
                        [g[k], g[k + 1], g[k + 2]]
                    })
                    .collect();
                let mut g_glob = vec![[[0.0; 3]; 3]; j];
                for i in (0..j).rev() {
                    let r = mat_at(ld, f * j + i);
                    let g_r = match parents[i] {
                        None => g_glob[i],
                        Some(p) => {
                            let gp = glob[f * j + p];
                            let g_r = mat_mul(&transpose(&gp), &g_glob[i]);
                            let via_rot = mat_mul(&g_glob[i], &transpose(&r));
                            let o = offsets[i];
                            let gpi = g_pos[i];
                            for a in 0..3 {
                                for b in 0..3 {
                                    g_glob[p][a][b] += via_rot[a][b] + gpi[a] * o[b];
                                }
                            }
                            g_pos[p] = add(g_pos[p], gpi);
                            g_r
                        }
                    };
                    let dst = &mut g_local[(f * j + i) * 9..(f * j + i + 1) * 9];
                    dst.iter_mut()
                        .zip(g_r.iter().flatten())
                        .for_each(|(d, s)| *d = *s);
                }
            }
            vec![Some(g_local)]
        }),
    ))
}

/// Differentiable FK from axis-angle rotations `[..., J, 3]` to positions
/// `[..., J, 3]`, body origin at zero.
pub fn fk_tensor(skeleton: &Skeleton, rotations: &Tensor) -> Result<Tensor> {
    let j = skeleton.joint_count();
    let rank = rotations.rank();
    if rank < 2 || rotations.shape()[rank - 2..] != [j, 3] {
        return shape_err("fk", rotations.shape(), &[j, 3]);
    }
    let frames = rotations.numel() / (j * 3);
    let mats = axis_angle_to_matrix_tensor(&rotations.reshape(&[frames, j, 3])?)?;
    fk_chain_tensor(skeleton, &mats)?.reshape(rotations.shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::rotation::dot;

    #[test]
    fn identity_pose_gives_cumulative_offsets() {
        let s = Skeleton::default_rest();
        let pos = forward_kinematics(&s, &Pose::identity(48)).unwrap();
        for j in 0..48 {
            let mut expect = [0.0; 3];
            let mut cur = Some(j);
            while let Some(c) = cur {
                expect = add(expect, s.offset(c));
                cur = s.parent(c);
            }
            for k in 0..3 {
                assert!((pos[j][k] - expect[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn root_translation_is_equivariant() {
        let s = Skeleton::default_rest();
        let mut pose = Pose::identity(48);
        pose.rotations[1] = AxisAngle::new(0.1, 0.4, -0.2);
        let a = forward_kinematics(&s, &pose).unwrap();
        pose.root = [0.5, -1.0, 2.0];
        let b = forward_kinematics(&s, &pose).unwrap();
        for (p, q) in a.iter().zip(&b) {
            let d = sub(*q, *p);
            for (a, b) in d.iter().zip([0.5, -1.0, 2.0]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn straight_arm_directions() {
        let s = Skeleton::default_rest();
        let pos = forward_kinematics(&s, &Pose::identity(48)).unwrap();
        let d = arm_direction_vectors(&s, &pos).unwrap();
        assert_eq!(d[0], [1.0, 0.0, 0.0]);
        assert_eq!(d[1], [1.0, 0.0, 0.0]);
        assert_eq!(d[2], [-1.0, 0.0, 0.0]);
        let doubled: Vec<Vec3> = pos.iter().map(|p| scale(*p, 2.0)).collect();
        assert_eq!(arm_direction_vectors(&s, &doubled).unwrap(), d);
    }

    #[test]
    fn bent_elbow_direction_is_perpendicular() {
        let s = Skeleton::default_rest();
        let mut pose = Pose::identity(48);
        let [_, elbow, _] = s.arm_of(Side::Left);
        pose.rotations[elbow] = AxisAngle::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let pos = forward_kinematics(&s, &pose).unwrap();
        let d = arm_direction_vectors(&s, &pos).unwrap();
        assert!(dot(d[0], d[1]).abs() < 1e-12);
    }

    #[test]
    fn degenerate_bone_is_reported() {
        let s = Skeleton::default_rest();
        let mut pos = forward_kinematics(&s, &Pose::identity(48)).unwrap();
        let [sh, el, _] = s.arm_of(Side::Right);
        pos[el] = pos[sh];
        assert!(matches!(
            arm_direction_vectors(&s, &pos),
            Err(Error::DegenerateBone { .. })
        ));
    }

    #[test]
    fn tensor_fk_matches_plain_fk() {
        let s = Skeleton::default_rest();
        let flat: Vec<f64> = (0..144).map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 1.2).collect();
        let pose = Pose::from_flat(&flat, [0.0; 3]);
        let plain = forward_kinematics(&s, &pose).unwrap();
        let t = fk_tensor(&s, &Tensor::new(&[48, 3], flat).unwrap()).unwrap();
        for (j, p) in plain.iter().enumerate() {
            for k in 0..3 {
                assert!((t.data()[j * 3 + k] - p[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rodrigues_gradient_matches_finite_differences_near_zero() {
        use crate::tensor::gradcheck::check_gradients;
        for r in [[3e-5, -2e-5, 5e-5], [0.0, 0.0, 0.0], [0.4, -1.1, 0.7], [2.9, 0.3, -0.5]] {
            let x = Tensor::param(&[3], r.to_vec()).unwrap();
            let rep = check_gradients(|t| axis_angle_to_matrix_tensor(&t[0]), &[x], 1e-6).unwrap();
            assert!(rep.passes(1e-6), "{r:?}: {rep:?}");
        }
    }

    #[test]
    fn fk_gradient_matches_finite_differences() {
        use crate::tensor::gradcheck::check_gradients;
        let s = Skeleton::default_rest();
        let flat: Vec<f64> = (0..144).map(|i| ((i * 53 % 97) as f64 / 97.0 - 0.5) * 0.8).collect();
        let x = Tensor::param(&[48, 3], flat).unwrap();
        let rep = check_gradients(|t| fk_tensor(&s, &t[0]), &[x], 1e-5).unwrap();
        assert!(rep.passes(1e-5), "{rep:?}");
    }
}
