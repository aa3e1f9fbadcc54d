use gvf4d_core::gsplat::{project_gaussian, Camera};

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(a: V3) -> V3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Pinhole projection of a world point, built from the camera fields alone.
fn pixel(cam: &Camera, p: V3) -> [f64; 2] {
    let fwd = unit(sub(cam.look_at, cam.position));
    let right = unit(cross(fwd, cam.up));
    let down = cross(fwd, right);
    let rel = sub(p, cam.position);
    let (x, y, z) = (dot(rel, right), dot(rel, down), dot(rel, fwd));
    let f = cam.height as f64 / (2.0 * (cam.vertical_fov / 2.0).tan());
    [f * x / z + cam.width as f64 / 2.0, f * y / z + cam.height as f64 / 2.0]
}

fn rotation_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

#[test]
fn off_axis_projection_matches_numerical_jacobian() {
    let cam = Camera::new([0.7, 0.9, 2.1], [0.1, -0.05, 0.0], [0.0, 1.0, 0.0], 0.7, (40, 56)).unwrap();
    let mu = [0.35, -0.2, 0.25];
    let log_scales = [(0.08f64).ln(), (0.03f64).ln(), (0.15f64).ln()];
    let q = [0.8, 0.3, -0.4, 0.2];
    let proj = project_gaussian(&cam, mu, log_scales, q).unwrap();

    let center = pixel(&cam, mu);
    for k in 0..2 {
        assert!((proj.mean[k] - center[k]).abs() < 1e-9, "mean {k}");
    }
    let expected_center = [0.5 * 56.0, 0.5 * 40.0];
    assert!((center[0] - expected_center[0]).abs() > 2.0, "the case must be off-axis");

    let h = 1e-6;
    let mut jac = [[0.0; 3]; 2];
    for c in 0..3 {
        let (mut a, mut b) = (mu, mu);
        a[c] += h;
        b[c] -= h;
        let (pa, pb) = (pixel(&cam, a), pixel(&cam, b));
        for r in 0..2 {
            jac[r][c] = (pa[r] - pb[r]) / (2.0 * h);
        }
    }
    let rot = rotation_matrix(q);
    let s2 = log_scales.map(|s| (2.0 * s).exp());
    let sigma: [[f64; 3]; 3] =
        std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| rot[i][k] * s2[k] * rot[j][k]).sum()));
    let quad = |a: [f64; 3], b: [f64; 3]| -> f64 {
        (0..3).map(|i| (0..3).map(|j| a[i] * sigma[i][j] * b[j]).sum::<f64>()).sum()
    };
    let oracle = [quad(jac[0], jac[0]), quad(jac[0], jac[1]), quad(jac[1], jac[1])];
    let scale = oracle[0].abs().max(oracle[2].abs());
    for k in 0..3 {
        let err = (proj.cov_raw[k] - oracle[k]).abs() / scale;
        assert!(err < 1e-4, "cov component {k}: {} vs {} ({err})", proj.cov_raw[k], oracle[k]);
    }
    assert!((proj.cov[0] - proj.cov_raw[0] - 0.3).abs() < 1e-12);
    assert!((proj.cov[2] - proj.cov_raw[2] - 0.3).abs() < 1e-12);
    assert_eq!(proj.cov[1], proj.cov_raw[1]);
}
