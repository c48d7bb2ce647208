//! Central finite-difference gradient checking at 64-bit.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tape, Tensor, Var};

/// Default central-difference step.
pub const EPS: f64 = 1e-4;
/// Coordinates probed per input before subsampling kicks in.
pub const MAX_COORDS: usize = 64;
/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(input index, flat coordinate)` of the worst mismatch.
    pub worst: Option<(usize, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Contract(format!("grad_check needs a scalar function, got {} values", v.len())));
    }
    if !v[0].is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(v[0])
}

/// Reverse-mode gradients of `f` with respect to every input.
pub fn autograd<F>(inputs: &[Tensor<f64>], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| alloc::vec![0.0; t.len()], |g| g.to_vec()))
        .collect())
}

/// Compares autograd against `(f(x+eps) - f(x-eps)) / 2eps` on every input.
///
/// Inputs with more than [`MAX_COORDS`] elements are probed on a seeded
/// random subset of `MAX_COORDS` coordinates.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = autograd(inputs, &f)?;
    compare(inputs, &f, &analytic, eps, seed)
}

/// Finite-difference comparison against caller-supplied gradients.
pub fn compare<F>(inputs: &[Tensor<f64>], f: &F, analytic: &[Vec<f64>], eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if analytic.len() != inputs.len() || analytic.iter().zip(inputs).any(|(a, t)| a.len() != t.len()) {
        return Err(Error::Contract("analytic gradients do not match the inputs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: 0, worst: None };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if input.len() <= MAX_COORDS {
            (0..input.len()).collect()
        } else {
            let mut c = index::sample(&mut rng, input.len(), MAX_COORDS).into_vec();
            c.sort_unstable();
            c
        };
        for k in coords {
            let orig = input.data()[k];
            probe[i].data_mut()[k] = orig + eps;
            let plus = eval(f, &probe)?;
            probe[i].data_mut()[k] = orig - eps;
            let minus = eval(f, &probe)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i][k];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("analytic gradient of input {i}")));
            }
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, k));
            }
        }
    }
    Ok(report)
}

/// Maximum relative error accepted by [`suite`].
pub const SUITE_TOLERANCE: f64 = 1e-4;

/// One entry of the gradient suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCase {
    pub name: &'static str,
    pub report: Result<GradCheckReport>,
    /// Negative controls must fail the tolerance to count as passing.
    pub negative_control: bool,
}

impl SuiteCase {
    pub fn passed(&self) -> bool {
        match &self.report {
            Ok(r) => (r.max_rel_error < SUITE_TOLERANCE) != self.negative_control,
            Err(_) => false,
        }
    }
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn t(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n = crate::numel(shape);
        Tensor::new(shape, (0..n).map(|_| self.0.gen_range(-1.0..1.0)).collect()).expect("valid shape")
    }

    /// Values at least 0.1 away from zero, keeping kinks out of reach of
    /// the finite-difference step.
    fn away_from_zero(&mut self, shape: &[usize]) -> Tensor<f64> {
        self.t(shape).map(|v| if v < 0.0 { v - 0.1 } else { v + 0.1 })
    }
}

/// Scalar objective `Σ y ⊙ r` with a fixed random `r`, so every output
/// coordinate contributes a distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let r = Gen(ChaCha8Rng::seed_from_u64(seed)).t(&shape);
    let rv = tape.constant(r);
    let p = tape.mul(y, rv)?;
    Ok(tape.sum(p))
}

type Objective = alloc::boxed::Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn cases(g: &mut Gen) -> Vec<(&'static str, Vec<Tensor<f64>>, Objective)> {
    use crate::ops::{Activation, BatchNormState, ConvGeom, Mode};
    use crate::temporal;
    use alloc::boxed::Box;
    use alloc::vec;

    let geom = ConvGeom::default().with_stride(2, 1).with_dilation(1, 2).with_padding([1, 0, 2, 1]);
    let mut labels: Vec<u8> = (0..12).map(|i| (i % 3) as u8).collect();
    labels[5] = crate::VOID_LABEL;
    vec![
        (
            "conv2d",
            vec![g.t(&[2, 3, 5, 6]), g.t(&[4, 3, 3, 2]), g.t(&[4])],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), geom)?;
                project(t, y, 1)
            }) as Objective,
        ),
        (
            "conv_transpose2d",
            vec![g.t(&[2, 3, 3, 2]), g.t(&[3, 2, 2, 3]), g.t(&[2])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), (2, 2))?;
                project(t, y, 2)
            }),
        ),
        (
            "maxpool2d",
            vec![g.t(&[2, 2, 4, 6])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.maxpool2d(v[0])?;
                project(t, y, 3)
            }),
        ),
        (
            "batchnorm2d_train",
            vec![g.t(&[2, 3, 4, 4]), g.t(&[3]), g.t(&[3])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let mut state = BatchNormState::new(3);
                let y = t.batchnorm2d(v[0], v[1], v[2], &mut state, Mode::Train)?;
                project(t, y, 4)
            }),
        ),
        (
            "batchnorm2d_eval",
            vec![g.t(&[2, 3, 2, 2]), g.t(&[3]), g.t(&[3])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let mut state = BatchNormState::new(3);
                state.mean = vec![0.3, -0.2, 0.1];
                state.var = vec![0.5, 1.5, 2.0];
                let y = t.batchnorm2d(v[0], v[1], v[2], &mut state, Mode::Eval)?;
                project(t, y, 5)
            }),
        ),
        (
            "relu",
            vec![g.away_from_zero(&[3, 7])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.relu(v[0]);
                project(t, y, 6)
            }),
        ),
        (
            "leaky_relu",
            vec![g.away_from_zero(&[3, 7])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.activation(v[0], Activation::LeakyRelu(Activation::DEFAULT_LEAKY_SLOPE));
                project(t, y, 7)
            }),
        ),
        (
            "sigmoid",
            vec![g.t(&[4, 5])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.sigmoid(v[0]);
                project(t, y, 8)
            }),
        ),
        (
            "tanh",
            vec![g.t(&[4, 5])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.tanh(v[0]);
                project(t, y, 9)
            }),
        ),
        (
            "concat",
            vec![g.t(&[2, 1, 3]), g.t(&[2, 3, 3])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.concat(&[v[0], v[1], v[0]], 1)?;
                project(t, y, 10)
            }),
        ),
        (
            "narrow",
            vec![g.t(&[3, 5, 2])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.narrow(v[0], 1, 1, 3)?;
                project(t, y, 11)
            }),
        ),
        (
            "reshape_permute",
            vec![g.t(&[4, 2, 3, 3])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.reshape(v[0], &[8, 3, 3])?;
                let y = t.permute(y, &[2, 0, 1])?;
                project(t, y, 12)
            }),
        ),
        (
            "add",
            vec![g.t(&[3, 4]), g.t(&[3, 4])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.add(v[0], v[1])?;
                project(t, y, 13)
            }),
        ),
        (
            "mul",
            vec![g.t(&[3, 4]), g.t(&[3, 4])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.mul(v[0], v[1])?;
                project(t, y, 14)
            }),
        ),
        (
            "matmul",
            vec![g.t(&[3, 4]), g.t(&[4, 5])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y, 15)
            }),
        ),
        (
            "add_bias",
            vec![g.t(&[2, 3, 2, 2]), g.t(&[3])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = t.add_bias(v[0], v[1], 1)?;
                project(t, y, 16)
            }),
        ),
        (
            "softmax_cross_entropy",
            vec![g.t(&[1, 3, 2, 2]).map(|x| 2.0 * x), g.t(&[1, 3, 2, 2])],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                let logits = t.concat(&[v[0], v[1]], 0)?;
                let logits = t.reshape(logits, &[1, 3, 4, 2])?;
                t.softmax_cross_entropy(logits, &labels[..8], crate::VOID_LABEL)
            }),
        ),
        (
            "convlstm_cell",
            vec![g.t(&[1, 2, 3, 3]), g.t(&[1, 2, 3, 3]), g.t(&[1, 2, 3, 3]), g.t(&[8, 4, 3, 3]), g.t(&[8])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let state = temporal::ConvLstmState { h: v[1], c: v[2] };
                let next = temporal::convlstm_cell(t, v[0], state, v[3], Some(v[4]), 1)?;
                let both = t.concat(&[next.h, next.c], 1)?;
                project(t, both, 17)
            }),
        ),
        (
            "convlstm_sequence",
            vec![g.t(&[3, 2, 3, 3]), g.t(&[8, 4, 3, 3]), g.t(&[8])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = temporal::convlstm_sequence(t, v[0], 3, v[1], Some(v[2]), 1)?;
                project(t, y, 18)
            }),
        ),
        (
            "pointwise_tn",
            vec![g.t(&[4, 2, 3, 3]), g.t(&[4, 4]), g.t(&[4]), g.t(&[4, 4]), g.t(&[4])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = temporal::pointwise_tn(t, v[0], 4, v[1], Some(v[2]), v[3], Some(v[4]))?;
                project(t, y, 19)
            }),
        ),
        (
            "tn_2dhw",
            vec![g.t(&[2, 2, 4, 4]), g.t(&[4, 4, 2, 2]), g.t(&[4]), g.t(&[4, 4, 2, 2]), g.t(&[4])],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let y = temporal::tn_2dhw(t, v[0], 2, v[1], Some(v[2]), v[3], Some(v[4]), 1)?;
                project(t, y, 20)
            }),
        ),
    ]
}

/// Finite-difference checks of every differentiable primitive and temporal
/// unit at 64-bit, followed by a negative control whose analytic gradient
/// is deliberately corrupted.
pub fn suite(seed: u64) -> Vec<SuiteCase> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::new();
    for (k, (name, inputs, f)) in cases(&mut g).into_iter().enumerate() {
        let report = grad_check(&inputs, &f, EPS, seed.wrapping_add(k as u64));
        out.push(SuiteCase { name, report, negative_control: false });
    }
    let inputs = [g.away_from_zero(&[3, 7])];
    let f = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.relu(v[0]);
        project(t, y, 6)
    };
    let report = autograd(&inputs, &f).and_then(|mut grads| {
        // a backward that leaks gradient through the negative half
        for (g, x) in grads[0].iter_mut().zip(inputs[0].data()) {
            if *x < 0.0 {
                *g += 0.5;
            }
        }
        compare(&inputs, &f, &grads, EPS, seed)
    });
    out.push(SuiteCase { name: "corrupted_relu_backward", report, negative_control: true });
    out
}
