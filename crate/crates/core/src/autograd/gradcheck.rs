use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ops;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients with central finite differences.
///
/// `f` receives one tensor per entry of `inputs` and must return a scalar.
/// Returns the largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`
/// over every input element. Differences are formed in f64 from the f32
/// evaluations, using the actually representable perturbed inputs.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f32) -> Result<f32>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if !(eps > 0.0 && eps < 0.1) {
        return Err(Error::invalid(format!("grad_check: eps must be in (0, 0.1), got {eps}")));
    }
    let analytic = analytic_grads(&f, inputs)?;

    let constants: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    let eval = |which: usize, idx: usize, value: f32| -> Result<f64> {
        let mut args = constants.clone();
        let mut data = args[which].data().to_vec();
        data[idx] = value;
        args[which] = Tensor::new(data, inputs[which].shape())?;
        Ok(f(&args)?.item()? as f64)
    };

    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        for idx in 0..input.numel() {
            let x = input.data()[idx];
            let (hi, lo) = (x + eps, x - eps);
            let numeric = (eval(which, idx, hi)? - eval(which, idx, lo)?) / (hi as f64 - lo as f64);
            let a = analytic[which][idx] as f64;
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst as f32)
}

fn analytic_grads<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Vec<f32>>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves = inputs
        .iter()
        .map(|t| Tensor::param(t.data().to_vec(), t.shape()))
        .collect::<Result<Vec<_>>>()?;
    f(&leaves)?.backward()?;
    Ok(leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect())
}

const ALONG_GRADIENT: f64 = 3.0;

/// Typical magnitude of an input, floored so zero-initialized biases still move.
fn input_scale(x: &Tensor) -> f32 {
    let rms = (x.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / x.numel() as f64).sqrt();
    (rms as f32).max(0.02)
}

/// [`grad_check`] along `directions` directions through all inputs at once.
///
/// Every input is replaced by `x + s_x * sum_k t_k v_k`, where `s_x` is the
/// RMS of `x` (at least 0.02), and [`grad_check`] runs on the coefficients
/// `t` at zero. Each `v_k` is a Gaussian vector plus a component of norm 3
/// along the scaled analytic gradient, signed to reinforce the Gaussian
/// part, so no directional derivative is accidentally close to zero. A wrong gradient
/// entry still changes every directional derivative through the Gaussian
/// part. This is how large composites are checked in f32, where per-entry
/// differences of tiny gradient entries are dominated by rounding.
pub fn grad_check_directional<F>(f: F, inputs: &[Tensor], directions: usize, eps: f32, seed: u64) -> Result<f32>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if directions == 0 {
        return Err(Error::invalid("grad_check_directional: need at least one direction"));
    }
    let grads = analytic_grads(&f, inputs)?;
    let scales: Vec<f32> = inputs.iter().map(input_scale).collect();
    let scaled_norm = grads
        .iter()
        .zip(&scales)
        .map(|(g, s)| g.iter().map(|v| ((v * s) as f64).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<Vec<f32>> = inputs.iter().map(|x| Vec::with_capacity(directions * x.numel())).collect();
    for _ in 0..directions {
        let random: Vec<Vec<f32>> = inputs
            .iter()
            .map(|x| (0..x.numel()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let projection: f64 = random
            .iter()
            .zip(&grads)
            .zip(&scales)
            .map(|((r, g), s)| r.iter().zip(g).map(|(rv, gv)| (*rv as f64) * (*gv * *s) as f64).sum::<f64>())
            .sum();
        let along = if scaled_norm > 0.0 {
            ALONG_GRADIENT * projection.signum() / scaled_norm
        } else {
            0.0
        };
        for (i, r) in random.iter().enumerate() {
            dirs[i].extend(r.iter().zip(&grads[i]).map(|(rv, g)| rv + (along * (g * scales[i]) as f64) as f32));
        }
    }
    let dirs = dirs
        .into_iter()
        .zip(inputs)
        .zip(&scales)
        .map(|((d, x), s)| Ok(ops::scale(&Tensor::new(d, &[directions, x.numel()])?, *s)))
        .collect::<Result<Vec<_>>>()?;
    let coeffs = Tensor::new(vec![0.0; directions], &[1, directions])?;
    grad_check(
        |t| {
            let moved = inputs
                .iter()
                .zip(&dirs)
                .map(|(x, v)| {
                    let delta = ops::reshape(&ops::linear(&t[0], v, None)?, x.shape())?;
                    ops::add(x, &delta)
                })
                .collect::<Result<Vec<_>>>()?;
            f(&moved)
        },
        &[coeffs],
        eps,
    )
}
