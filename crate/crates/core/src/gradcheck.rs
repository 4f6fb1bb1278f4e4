//! Central finite-difference checks of the reverse pass.
//!
//! Each op is wrapped in a [`GradCase`] and registered by name. A check projects
//! the op output onto a fixed random cotangent `w`, so the scalar under test is
//! `sum(w * op(x))`; the numeric side evaluates that sum in `f64` from the `f32`
//! outputs.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::lpg::PatchGrid;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f32 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

pub trait GradCase: Send + Sync {
    fn name(&self) -> &str;

    /// Draws a sample point: one tensor per differentiable input.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor>;

    /// Records the op on `graph` given leaves for the sample inputs.
    fn build(&self, graph: &mut Graph, inputs: &[Var]) -> Result<Var>;

    /// Gradient of `sum(cotangent * output)` with respect to every input.
    fn vjp(&self, inputs: &[Tensor], cotangent: &[f32]) -> Result<Vec<Vec<f32>>> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(&t.detached().with_grad())).collect();
        let out = self.build(&mut g, &leaves)?;
        let w = g.constant(Tensor::new(g.value(out).shape().to_vec(), cotangent.to_vec())?);
        let prod = g.mul(out, w)?;
        let total = g.sum(prod);
        let grads = g.backward(total)?;
        Ok(leaves
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.wrt(v).map_or_else(|| vec![0.0; t.numel()], <[f32]>::to_vec))
            .collect())
    }
}

fn forward(case: &dyn GradCase, inputs: &[Tensor]) -> Result<Tensor> {
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = case.build(&mut g, &leaves)?;
    Ok(g.value(out).clone())
}

fn project(out: &Tensor, w: &[f32]) -> f64 {
    out.data().iter().zip(w).map(|(&y, &w)| y as f64 * w as f64).sum()
}

/// Max over all input elements of `|analytic - numeric| / max(1, |numeric|)`.
pub fn gradcheck(case: &dyn GradCase, inputs: &[Tensor], h: f32, rng: &mut ChaCha8Rng) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let out = forward(case, inputs)?;
    let cotangent: Vec<f32> = (0..out.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic = case.vjp(inputs, &cotangent)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.numel() {
            let x = t.data()[ei];
            let (xp, xm) = (x + h, x - h);
            probe[ti].data_mut()[ei] = xp;
            let fp = project(&forward(case, &probe)?, &cotangent);
            probe[ti].data_mut()[ei] = xm;
            let fm = project(&forward(case, &probe)?, &cotangent);
            probe[ti].data_mut()[ei] = x;
            let numeric = (fp - fm) / (xp as f64 - xm as f64);
            let err = (analytic[ti][ei] as f64 - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Op cases selected by name.
#[derive(Default)]
pub struct GradCaseRegistry {
    cases: Vec<Box<dyn GradCase>>,
}

impl GradCaseRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, case: Box<dyn GradCase>) {
        if let Some(slot) = self.cases.iter_mut().find(|c| c.name() == case.name()) {
            *slot = case;
        } else {
            self.cases.push(case);
        }
    }

    pub fn get(&self, name: &str) -> Option<&dyn GradCase> {
        self.cases.iter().find(|c| c.name() == name).map(|c| c.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.cases.iter().map(|c| c.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn GradCase> {
        self.cases.iter().map(|c| c.as_ref())
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Every differentiable op of the engine plus LPG expansion and the loss.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Box::new(Conv2dCase {
            name: "conv2d",
            input: [2, 3, 5, 5],
            weight: [4, 3, 3, 3],
            stride: 1,
            dilation: 1,
            padding: 1,
        }));
        r.register(Box::new(Conv2dCase {
            name: "conv2d_strided_dilated",
            input: [1, 2, 6, 6],
            weight: [3, 2, 3, 3],
            stride: 2,
            dilation: 2,
            padding: 2,
        }));
        r.register(Box::new(Conv2dCase {
            name: "conv2d_pointwise",
            input: [2, 4, 3, 3],
            weight: [3, 4, 1, 1],
            stride: 1,
            dilation: 1,
            padding: 0,
        }));
        r.register(Box::new(Unary::new("nearest_upsample", -1.0, 1.0, |g, x| g.upsample(x, 2))));
        r.register(Box::new(Unary::new("downsample_nearest", -1.0, 1.0, |g, x| g.downsample(x, 2))));
        r.register(Box::new(Unary::new("elu", -2.0, 2.0, |g, x| Ok(g.elu(x)))));
        r.register(Box::new(Unary::new("sigmoid", -4.0, 4.0, |g, x| Ok(g.sigmoid(x)))));
        r.register(Box::new(Unary::new("scale", -1.0, 1.0, |g, x| Ok(g.scale(x, 3.0)))));
        r.register(Box::new(Unary::new("add_scalar", -1.0, 1.0, |g, x| Ok(g.add_scalar(x, 0.5)))));
        r.register(Box::new(Unary::new("sum", -1.0, 1.0, |g, x| Ok(g.sum(x)))));
        r.register(Box::new(Unary::new("mean", -1.0, 1.0, |g, x| Ok(g.mean(x)))));
        r.register(Box::new(Unary::new("select_channel", -1.0, 1.0, |g, x| g.select_channel(x, 1))));
        r.register(Box::new(Binary::new("add", |g, a, b| g.add(a, b))));
        r.register(Box::new(Binary::new("mul", |g, a, b| g.mul(a, b))));
        r.register(Box::new(Binary::new("concat", |g, a, b| g.concat(&[a, b], 1))));
        for k in crate::lpg::SCALES {
            r.register(Box::new(LpgExpandCase::new(k)));
        }
        r.register(Box::new(SilogCase::default()));
        r
    }
}

struct Conv2dCase {
    name: &'static str,
    input: [usize; 4],
    weight: [usize; 4],
    stride: usize,
    dilation: usize,
    padding: usize,
}

impl GradCase for Conv2dCase {
    fn name(&self) -> &str {
        self.name
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        vec![
            uniform(rng, &self.input, -1.0, 1.0),
            uniform(rng, &self.weight, -0.5, 0.5),
            uniform(rng, &[self.weight[0]], -0.5, 0.5),
        ]
    }

    fn build(&self, g: &mut Graph, v: &[Var]) -> Result<Var> {
        g.conv2d(v[0], v[1], Some(v[2]), self.stride, self.dilation, self.padding)
    }
}

type UnaryFn = fn(&mut Graph, Var) -> Result<Var>;

struct Unary {
    name: &'static str,
    lo: f32,
    hi: f32,
    f: UnaryFn,
}

impl Unary {
    fn new(name: &'static str, lo: f32, hi: f32, f: UnaryFn) -> Self {
        Self { name, lo, hi, f }
    }
}

impl GradCase for Unary {
    fn name(&self) -> &str {
        self.name
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        vec![uniform(rng, &[2, 3, 4, 4], self.lo, self.hi)]
    }

    fn build(&self, g: &mut Graph, v: &[Var]) -> Result<Var> {
        (self.f)(g, v[0])
    }
}

type BinaryFn = fn(&mut Graph, Var, Var) -> Result<Var>;

struct Binary {
    name: &'static str,
    f: BinaryFn,
}

impl Binary {
    fn new(name: &'static str, f: BinaryFn) -> Self {
        Self { name, f }
    }
}

impl GradCase for Binary {
    fn name(&self) -> &str {
        self.name
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        vec![
            uniform(rng, &[2, 2, 3, 3], -1.0, 1.0),
            uniform(rng, &[2, 2, 3, 3], -1.0, 1.0),
        ]
    }

    fn build(&self, g: &mut Graph, v: &[Var]) -> Result<Var> {
        (self.f)(g, v[0], v[1])
    }
}

/// Differentiates the expansion with respect to theta, phi and n4.
pub struct LpgExpandCase {
    name: String,
    grid: Arc<PatchGrid>,
}

impl LpgExpandCase {
    pub fn new(k: usize) -> Self {
        Self {
            name: format!("lpg_expand_k{k}"),
            grid: Arc::new(PatchGrid::new(k).expect("k >= 1")),
        }
    }
}

impl GradCase for LpgExpandCase {
    fn name(&self) -> &str {
        &self.name
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        // theta <= 0.5 keeps the denominator >= 0.24, away from the clamp.
        let shape = [1, 1, 2, 2];
        vec![
            uniform(rng, &shape, 0.0, 0.5),
            uniform(rng, &shape, -3.1, 3.1),
            uniform(rng, &shape, 0.5, 5.0),
        ]
    }

    fn build(&self, g: &mut Graph, v: &[Var]) -> Result<Var> {
        g.lpg_expand(v[0], v[1], v[2], self.grid.clone())
    }
}

/// The full loss: prediction against a fixed random target under a random mask.
pub struct SilogCase {
    cfg: LossConfig,
}

impl Default for SilogCase {
    fn default() -> Self {
        Self {
            cfg: LossConfig::default(),
        }
    }
}

const SILOG_PIXELS: usize = 24;

fn silog_target() -> (Vec<f32>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5170_6c05);
    let gt = (0..SILOG_PIXELS).map(|_| rng.gen_range(0.5..8.0)).collect();
    let mut mask: Vec<bool> = (0..SILOG_PIXELS).map(|_| rng.gen_bool(0.7)).collect();
    mask[0] = true;
    (gt, mask)
}

impl GradCase for SilogCase {
    fn name(&self) -> &str {
        "silog_loss"
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        vec![uniform(rng, &[1, 1, 4, SILOG_PIXELS / 4], 0.5, 8.0)]
    }

    fn build(&self, g: &mut Graph, v: &[Var]) -> Result<Var> {
        let (gt, mask) = silog_target();
        Ok(g.silog(v[0], &gt, &mask, &self.cfg)?.0)
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckRow {
    pub name: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Runs `points` random checks per registered case.
pub fn run_suite(
    registry: &GradCaseRegistry,
    points: usize,
    h: f32,
    tolerance: f64,
    seed: u64,
) -> Result<Vec<GradcheckRow>> {
    let mut rows = Vec::with_capacity(registry.len());
    for case in registry.iter() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..points {
            let inputs = case.sample(&mut rng);
            worst = worst.max(gradcheck(case, &inputs, h, &mut rng)?);
        }
        rows.push(GradcheckRow {
            name: case.name().to_string(),
            points,
            max_rel_error: worst,
            passed: worst < tolerance,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Triple;

    impl GradCase for Triple {
        fn name(&self) -> &str {
            "triple"
        }
        fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
            // Dyadic values keep x +- h and 3x exact in f32.
            vec![Tensor::from_fn(&[5], |_| rng.gen_range(-64i32..64) as f32 / 64.0)]
        }
        fn build(&self, g: &mut Graph, v: &[Var]) -> Result<Var> {
            Ok(g.scale(v[0], 3.0))
        }
    }

    #[test]
    fn linear_op_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Triple.sample(&mut rng);
        let err = gradcheck(&Triple, &x, 1.0 / 1024.0, &mut rng).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Triple.sample(&mut rng);
        assert!(gradcheck(&Triple, &x, 0.0, &mut rng).is_err());
    }

    #[test]
    fn registry_replaces_by_name() {
        let mut r = GradCaseRegistry::builtin();
        let n = r.len();
        assert!(n >= 10);
        r.register(Box::new(SilogCase::default()));
        assert_eq!(r.len(), n);
        assert!(r.get("conv2d").is_some());
        assert!(r.get("nope").is_none());
    }
}
