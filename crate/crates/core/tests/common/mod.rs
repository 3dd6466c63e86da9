use pgjd::env::EnvState;
use pgjd::policy::FeatureMap;

/// (features, theta, state, sigma)
pub fn settings() -> Vec<(FeatureMap, Vec<f64>, EnvState, f64)> {
    vec![
        (FeatureMap::Bias, vec![0.0], EnvState::empty(), 1.0),
        (FeatureMap::Bias, vec![-1.3], EnvState::empty(), 0.4),
        (
            FeatureMap::Pendulum,
            vec![0.5, -0.2, 0.1],
            EnvState::new(&[0.7, -1.5]),
            1.0,
        ),
        (
            FeatureMap::Pendulum,
            vec![-1.0, 2.0, 0.3],
            EnvState::new(&[-2.9, 6.0]),
            2.5,
        ),
        (
            FeatureMap::Identity { dim: 2 },
            vec![0.25, -0.75],
            EnvState::new(&[3.0, 0.5]),
            0.7,
        ),
    ]
}

pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}
