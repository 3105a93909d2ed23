#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavbrivl::numerics::Tensor;
use wavbrivl::Result;

pub const FD_STEP: f32 = 1e-3;

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..=1.0)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f32,
    pub checked: usize,
    /// Coordinates skipped because the one-sided differences disagree, i.e.
    /// a ReLU kink lies inside the probe interval.
    pub kinks: usize,
}

impl GradCheck {
    pub fn passes(&self, rtol: f32) -> bool {
        self.max_rel_error < rtol && self.kinks * 50 <= self.checked
    }
}

/// Checks the gradient of the scalar probe `sum(out ⊙ w)` (with `w` fixed
/// uniform weights derived from `seed`) against central differences.
///
/// The probe is contracted in f64 from the raw outputs so the comparison is
/// not limited by rounding of an f32 sum. Relative error is
/// `|a - n| / max(|a|, |n|, 1)`.
pub fn grad_check(
    wrt: &[Tensor],
    limit: Option<usize>,
    seed: u64,
    out_fn: &dyn Fn() -> Result<Tensor>,
) -> GradCheck {
    for t in wrt {
        t.zero_grad();
    }
    let out = out_fn().unwrap();
    let mut r = rng(seed ^ 0x9e37_79b9);
    let weights = uniform(&mut r, out.numel());
    let w = Tensor::new(weights.clone(), out.shape()).unwrap();
    out.mul(&w).unwrap().sum().backward().unwrap();

    let contract = |t: &Tensor| -> f64 {
        t.data().iter().zip(&weights).map(|(a, b)| *a as f64 * *b as f64).sum()
    };
    let base = contract(&out);
    let mut report = GradCheck { max_rel_error: 0.0, checked: 0, kinks: 0 };
    for t in wrt {
        let analytic = t.grad().expect("gradient populated");
        let n = t.numel();
        let stride = limit.map(|l| (n / l).max(1)).unwrap_or(1);
        for i in (0..n).step_by(stride) {
            let orig = t.data()[i];
            t.update(|d| d[i] = orig + FD_STEP);
            let up = contract(&out_fn().unwrap());
            t.update(|d| d[i] = orig - FD_STEP);
            let down = contract(&out_fn().unwrap());
            t.update(|d| d[i] = orig);
            let h = FD_STEP as f64;
            let numeric = ((up - down) / (2.0 * h)) as f32;
            let forward = ((up - base) / h) as f32;
            let backward = ((base - down) / h) as f32;
            report.checked += 1;
            if (forward - backward).abs() > 1e-2 * numeric.abs().max(1.0) {
                report.kinks += 1;
                continue;
            }
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.max_rel_error = report.max_rel_error.max(err);
        }
    }
    report
}

/// Full check over every element; panics when more than 2% of coordinates
/// sit on a kink.
pub fn max_grad_error(wrt: &[Tensor], seed: u64, out_fn: &dyn Fn() -> Result<Tensor>) -> f32 {
    let r = grad_check(wrt, None, seed, out_fn);
    assert!(r.kinks * 50 <= r.checked.max(1), "too many non-smooth coordinates: {r:?}");
    r.max_rel_error
}
