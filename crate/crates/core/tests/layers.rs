mod common;

use common::*;
use stseg_core::gradcheck::{grad_check, EPS};
use stseg_core::nn::*;
use stseg_core::ops::{Activation, BatchNormState, Mode};
use stseg_core::{Error, Tape, Tensor, Var};

fn leaky() -> Activation {
    Activation::LeakyRelu(Activation::DEFAULT_LEAKY_SLOPE)
}

#[test]
fn activation_values() {
    assert_eq!(Activation::Relu.apply(-1.0f64), 0.0);
    assert_eq!(Activation::Relu.apply(2.0f64), 2.0);
    assert!((leaky().apply(-2.0f64) + 0.02).abs() < 1e-15);
    assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
    assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
    assert!(Activation::Sigmoid.apply(-800.0f64).is_finite());
}

#[test]
fn batchnorm_train_normalises() {
    let x = randn(&mut rng(1), &[2, 3, 4, 4]).map(|v| 3.0 * v + 1.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::zeros(&[3]));
    let mut state = BatchNormState::new(3);
    let y = tape.batchnorm2d(xv, g, b, &mut state, Mode::Train).unwrap();
    let v = tape.value(y);
    for c in 0..3 {
        let vals: Vec<f64> = (0..2).flat_map(|n| v[(n * 3 + c) * 16..(n * 3 + c + 1) * 16].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / 32.0;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-4, "c {c}: {mean} {var}");
    }
    // running stats moved by momentum 0.1 from (0, 1)
    assert!(state.mean.iter().all(|m| m.abs() > 0.0));
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let mut tape = Tape::new();
    let xv = tape.constant(randn(&mut rng(2), &[2, 2, 3, 3]));
    let g = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::new(&[2], vec![0.25, -1.5]).unwrap());
    let y = tape.batchnorm2d(xv, g, b, &mut BatchNormState::new(2), Mode::Train).unwrap();
    for (i, &v) in tape.value(y).iter().enumerate() {
        assert_eq!(v, if (i / 9) % 2 == 0 { 0.25 } else { -1.5 });
    }
}

#[test]
fn batchnorm_running_stats_and_eval() {
    let x = randn(&mut rng(3), &[4, 1, 2, 2]);
    let mean = x.data().iter().sum::<f64>() / 16.0;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 15.0;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::full(&[1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let mut state = BatchNormState::new(1);
    tape.batchnorm2d(xv, g, b, &mut state, Mode::Train).unwrap();
    assert!((state.mean[0] - 0.1 * mean).abs() < 1e-12);
    assert!((state.var[0] - (0.9 + 0.1 * var)).abs() < 1e-12);
    let frozen = state.clone();
    let y = tape.batchnorm2d(xv, g, b, &mut state, Mode::Eval).unwrap();
    assert_eq!(state, frozen);
    let expect: Vec<f64> = x.data().iter().map(|v| (v - frozen.mean[0]) / (frozen.var[0] + 1e-5).sqrt()).collect();
    assert!(max_abs_diff(tape.value(y), &expect) < 1e-12);
}

#[test]
fn batchnorm_rejects_degenerate_batch() {
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
    let g = tape.constant(Tensor::full(&[2], 1.0));
    let b = tape.constant(Tensor::zeros(&[2]));
    let err = tape.batchnorm2d(xv, g, b, &mut BatchNormState::new(2), Mode::Train).unwrap_err();
    assert!(matches!(err, Error::DegenerateBatch(1)));
    assert!(tape.batchnorm2d(xv, g, b, &mut BatchNormState::new(2), Mode::Eval).is_ok());
}

#[test]
fn concat_reshape_permute_add_examples() {
    let mut r = rng(4);
    let mut tape = Tape::new();
    let a = tape.input(randn(&mut r, &[1, 2, 2, 2]));
    let b = tape.input(randn(&mut r, &[1, 3, 2, 2]));
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.shape(c), &[1, 5, 2, 2]);
    let single = tape.concat(&[a], 1).unwrap();
    assert_eq!(tape.value(single), tape.value(a));
    assert!(tape.concat(&[a, b], 0).is_err());

    let up = randn(&mut r, &[1, 5, 2, 2]);
    let upv = tape.constant(up.clone());
    let p = tape.mul(c, upv).unwrap();
    let loss = tape.sum(p);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &up.data()[..8]);
    assert_eq!(tape.grad(b).unwrap(), &up.data()[8..]);

    let mut tape = Tape::new();
    let x = tape.input(randn(&mut r, &[4, 2, 3, 3]));
    let y = tape.reshape(x, &[8, 3, 3]).unwrap();
    assert_eq!(tape.shape(y), &[8, 3, 3]);
    assert!(tape.reshape(x, &[7, 3, 3]).is_err());
    let p = tape.permute(x, &[2, 0, 3, 1]).unwrap();
    let back = tape.permute(p, &[1, 3, 0, 2]).unwrap();
    assert_eq!(tape.value(back), tape.value(x));
    assert!(tape.permute(x, &[0, 0, 1, 2]).is_err());

    let neg = tape.constant(Tensor::new(&[4, 2, 3, 3], tape.value(x).iter().map(|v| -v).collect()).unwrap());
    let zero = tape.add(x, neg).unwrap();
    assert!(tape.value(zero).iter().all(|&v| v == 0.0));
    let s = tape.sum(zero);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.input(Tensor::zeros(&[1, 19, 2, 2]));
    let loss = tape.softmax_cross_entropy(logits, &[0, 5, 18, 3], 255).unwrap();
    assert!((tape.value(loss)[0] - 19f64.ln()).abs() < 1e-12);

    let mut tape = Tape::<f64>::new();
    let logits = tape.input(randn(&mut rng(5), &[1, 3, 2, 2]));
    let loss = tape.softmax_cross_entropy(logits, &[255; 4], 255).unwrap();
    assert_eq!(tape.value(loss)[0], 0.0);
    tape.backward(loss).unwrap();
    assert!(tape.grad(logits).is_none_or(|g| g.iter().all(|&v| v == 0.0)));

    let mut tape = Tape::<f64>::new();
    let logits = tape.input(Tensor::zeros(&[1, 3, 1, 2]));
    assert!(matches!(tape.softmax_cross_entropy(logits, &[1, 3], 255), Err(Error::InvalidLabel { label: 3, classes: 3 })));
}

#[test]
fn cross_entropy_is_mean_of_unmasked_pixels() {
    let x = randn(&mut rng(6), &[2, 4, 3, 3]).map(|v| 3.0 * v);
    let labels: Vec<u8> = (0..18).map(|i| if i % 4 == 1 { 255 } else { (i % 4) as u8 }).collect();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let loss = tape.softmax_cross_entropy(xv, &labels, 255).unwrap();
    let mut per_pixel = Vec::new();
    for n in 0..2 {
        for p in 0..9 {
            let l = labels[n * 9 + p];
            if l == 255 {
                continue;
            }
            let z: Vec<f64> = (0..4).map(|c| x.data()[(n * 4 + c) * 9 + p]).collect();
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            per_pixel.push(lse - z[l as usize]);
        }
    }
    let oracle = per_pixel.iter().sum::<f64>() / per_pixel.len() as f64;
    assert!((tape.value(loss)[0] - oracle).abs() < 1e-12);
}

#[test]
fn conv_param_counts() {
    let mut reg = ParamRegistry::<f32>::new();
    ConvParams::register(&mut reg, "c", 3, 32, 3, stseg_core::ops::ConvGeom::padded(1), true, 0.01).unwrap();
    assert_eq!(reg.param_count(), 896);
    let mut reg = ParamRegistry::<f32>::new();
    BnParams::register(&mut reg, "bn", 32).unwrap();
    assert_eq!(reg.param_count(), 64);
    assert_eq!(reg.len(), 4);
    assert!(BnParams::register(&mut reg, "bn", 32).is_err());
}

#[test]
fn kaiming_init_statistics_and_determinism() {
    let mut reg = ParamRegistry::<f64>::new();
    let fan_in = 64 * 9;
    let id = reg.add_param("w", &[64, 64, 3, 3], Init::KaimingUniform { fan_in, slope: 0.01 }).unwrap();
    let g = BnParams::register(&mut reg, "bn", 8).unwrap();
    reg.init_params(7);
    let w = reg.get(id).data();
    assert!(w.len() >= 10_000);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
    let target = 2.0 / fan_in as f64;
    assert!((var - target).abs() < 0.2 * target, "{var} vs {target}");
    assert!(reg.get(g.gamma).data().iter().all(|&v| v == 1.0));
    assert!(reg.get(g.beta).data().iter().all(|&v| v == 0.0));
    let mut again = reg.clone();
    again.init_params(7);
    assert_eq!(again, reg);
    again.init_params(8);
    assert_ne!(again.get(id), reg.get(id));
}

fn block_registry(in_c: usize, out_c: usize) -> (ParamRegistry<f64>, ConvBlock) {
    let mut reg = ParamRegistry::new();
    let block = ConvBlock::register(&mut reg, "enc", in_c, out_c, leaky(), true).unwrap();
    reg.init_params(1);
    (reg, block)
}

#[test]
fn encoder_block_shapes_and_zero_weights() {
    let (mut reg, block) = block_registry(3, 32);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::zeros(&[1, 3, 64, 128]).map(|_| 0.5));
    let mut ctx = ForwardCtx::new(&mut tape, &mut reg, Mode::Train, true);
    let (f, p) = block.forward(&mut ctx, x).unwrap();
    assert_eq!(tape.shape(f), &[1, 32, 64, 128]);
    assert_eq!(tape.shape(p), &[1, 32, 32, 64]);

    let (mut reg, block) = block_registry(2, 4);
    reg.get_mut(block.conv.weight).data_mut().fill(0.0);
    let mut tape = Tape::new();
    let x = tape.constant(randn(&mut rng(2), &[2, 2, 4, 4]));
    let mut ctx = ForwardCtx::new(&mut tape, &mut reg, Mode::Eval, false);
    let (f, _) = block.forward(&mut ctx, x).unwrap();
    assert!(tape.value(f).iter().all(|&v| v == 0.0));
}

/// Gradient of a registered module w.r.t. its input and all parameters,
/// checked by finite differences.
fn check_module<F>(reg: &ParamRegistry<f64>, inputs: Vec<Tensor<f64>>, forward: F) -> f64
where
    F: Fn(&mut ForwardCtx<'_, f64>, &[Var]) -> stseg_core::Result<Var>,
{
    let ids: Vec<ParamId> = reg.param_ids().collect();
    let n_in = inputs.len();
    let mut all = inputs;
    all.extend(ids.iter().map(|&id| reg.get(id).clone()));
    let f = |tape: &mut Tape<f64>, v: &[Var]| {
        // fresh copy so train-mode running stats never leak between probes
        let mut local = reg.clone();
        let mut ctx = ForwardCtx::with_bindings(tape, &mut local, Mode::Train, &ids, &v[n_in..]);
        let y = forward(&mut ctx, &v[..n_in])?;
        let r = Tensor::new(tape.shape(y), (0..tape.value(y).len()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect())?;
        let rv = tape.constant(r);
        let p = tape.mul(y, rv)?;
        Ok(tape.sum(p))
    };
    grad_check(&all, f, EPS, 0).unwrap().max_rel_error
}

#[test]
fn encoder_block_gradient() {
    let (reg, block) = block_registry(2, 3);
    let x = randn(&mut rng(3), &[2, 2, 4, 4]);
    let err = check_module(&reg, vec![x], |ctx, v| Ok(block.forward(ctx, v[0])?.1));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn decoder_block_shapes_gradient_and_skip_zeroing() {
    let mut reg = ParamRegistry::<f64>::new();
    let dec = DecoderBlock::register(&mut reg, "dec", 64, 32, 16).unwrap();
    reg.init_params(2);
    let mut r = rng(4);
    let mut tape = Tape::new();
    let x = tape.constant(randn(&mut r, &[1, 64, 8, 16]));
    let skip = tape.constant(randn(&mut r, &[1, 32, 16, 32]));
    let mut ctx = ForwardCtx::new(&mut tape, &mut reg, Mode::Train, true);
    let y = dec.forward(&mut ctx, x, skip).unwrap();
    assert_eq!(ctx.tape.shape(y), &[1, 16, 16, 32]);
    let bad = ctx.tape.constant(Tensor::zeros(&[1, 32, 8, 8]));
    assert!(matches!(dec.forward(&mut ctx, x, bad), Err(Error::Shape(_))));

    // zero weights on the skip channels make the skip irrelevant
    let mut reg = ParamRegistry::<f64>::new();
    let dec = DecoderBlock::register(&mut reg, "dec", 4, 2, 3).unwrap();
    reg.init_params(3);
    let w = reg.get_mut(dec.conv.weight);
    for o in 0..3 {
        for c in 3..5 {
            w.data_mut()[(o * 5 + c) * 9..(o * 5 + c + 1) * 9].fill(0.0);
        }
    }
    let x = randn(&mut r, &[2, 4, 2, 2]);
    let run = |reg: &ParamRegistry<f64>, skip: Tensor<f64>| {
        let mut tape = Tape::new();
        let (xv, sv) = (tape.constant(x.clone()), tape.constant(skip));
        let mut ctx = ForwardCtx::frozen(&mut tape, reg);
        let y = dec.forward(&mut ctx, xv, sv).unwrap();
        tape.value(y).to_vec()
    };
    assert_eq!(run(&reg, Tensor::zeros(&[2, 2, 4, 4])), run(&reg, randn(&mut r, &[2, 2, 4, 4])));

    let (x, s) = (randn(&mut r, &[2, 4, 2, 2]), randn(&mut r, &[2, 2, 4, 4]));
    let err = check_module(&reg, vec![x, s], |ctx, v| dec.forward(ctx, v[0], v[1]));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn frozen_context_rejects_train_batchnorm() {
    let (reg, block) = block_registry(1, 2);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::zeros(&[1, 1, 2, 2]));
    let mut ctx = ForwardCtx::frozen(&mut tape, &reg);
    ctx.mode = Mode::Train;
    assert!(matches!(block.forward(&mut ctx, x), Err(Error::Contract(_))));
}
