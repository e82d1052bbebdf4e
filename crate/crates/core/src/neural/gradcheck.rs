//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ForwardCache, Layer, Network, NnError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Denominator floor in `|a − n| / max(|a|, floor)`.
    pub floor: f64,
    /// Coordinates sampled per parameter tensor (all of them if smaller).
    pub coords_per_param: usize,
    pub check_input: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-8,
            coords_per_param: 16,
            check_input: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose ±h perturbation flipped a ReLU; the loss is not
    /// differentiable across that interval so no comparison is made.
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
    /// `name[index]` of the coordinate with the largest error.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_relative_error < tolerance
    }
}

fn relu_pattern(net: &Network, cache: &ForwardCache) -> Vec<bool> {
    net.layers()
        .iter()
        .zip(cache.layer_inputs())
        .filter(|(l, _)| matches!(l, Layer::Relu))
        .flat_map(|(_, x)| x.data().iter().map(|&v| v > 0.0))
        .collect()
}

fn pick(len: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= k {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, k).into_vec();
        idx.sort_unstable();
        idx
    }
}

struct Tally<'a> {
    cfg: &'a GradCheckConfig,
    report: GradCheckReport,
}

impl Tally<'_> {
    fn record(&mut self, label: String, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(self.cfg.floor);
        self.report.checked += 1;
        if err > self.report.max_relative_error || self.report.worst.is_empty() {
            self.report.max_relative_error = err.max(self.report.max_relative_error);
            self.report.worst = label;
        }
    }
}

/// Compares analytic gradients of `loss(net(input))` against central
/// differences. `loss` maps the network output to the loss and its gradient
/// with respect to that output.
pub fn check_gradients<L>(
    net: &Network,
    input: &Tensor,
    loss: L,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, NnError>
where
    L: Fn(&Tensor) -> Result<(f64, Tensor), NnError>,
{
    let cache = net.forward_cached(input)?;
    let pattern = relu_pattern(net, &cache);
    let (_, upstream) = loss(cache.output())?;
    let (grads, dx) = net.backward(&cache, &upstream)?;

    let eval = |n: &Network, x: &Tensor| -> Result<(f64, bool), NnError> {
        let c = n.forward_cached(x)?;
        let same = relu_pattern(n, &c) == pattern;
        Ok((loss(c.output())?.0, same))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tally = Tally {
        cfg,
        report: GradCheckReport {
            checked: 0,
            skipped_kinks: 0,
            max_relative_error: 0.0,
            worst: String::new(),
        },
    };
    let h = cfg.step;

    let names: Vec<String> = net.params().iter().map(|(n, _)| n.to_string()).collect();
    let mut probe = net.clone();
    for name in &names {
        let analytic = grads
            .get(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(net.params().get(name).unwrap().shape()));
        for i in pick(analytic.len(), cfg.coords_per_param, &mut rng) {
            let orig = probe.params().get(name).unwrap().data()[i];
            probe.params_mut().value_mut(name).unwrap().data_mut()[i] = orig + h;
            let (lp, sp) = eval(&probe, input)?;
            probe.params_mut().value_mut(name).unwrap().data_mut()[i] = orig - h;
            let (lm, sm) = eval(&probe, input)?;
            probe.params_mut().value_mut(name).unwrap().data_mut()[i] = orig;
            if !(sp && sm) {
                tally.report.skipped_kinks += 1;
                continue;
            }
            tally.record(format!("{name}[{i}]"), analytic.data()[i], (lp - lm) / (2.0 * h));
        }
    }

    if cfg.check_input {
        let mut x = input.clone();
        for i in pick(x.len(), cfg.coords_per_param, &mut rng) {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let (lp, sp) = eval(net, &x)?;
            x.data_mut()[i] = orig - h;
            let (lm, sm) = eval(net, &x)?;
            x.data_mut()[i] = orig;
            if !(sp && sm) {
                tally.report.skipped_kinks += 1;
                continue;
            }
            tally.record(format!("input[{i}]"), dx.data()[i], (lp - lm) / (2.0 * h));
        }
    }
    Ok(tally.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{cross_entropy, glorot_uniform, ModelParameters, Target};
    use rand::Rng;

    const TOL: f64 = 1e-4;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn ce_loss(target: usize) -> impl Fn(&Tensor) -> Result<(f64, Tensor), NnError> {
        move |out| cross_entropy(out, Target::Class(target))
    }

    /// Weighted-sum head: loss = Σ wᵢ outᵢ, so probability layers get a
    /// non-trivial upstream gradient.
    fn linear_loss(weights: Vec<f64>) -> impl Fn(&Tensor) -> Result<(f64, Tensor), NnError> {
        move |out| {
            let l = out.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
            Ok((l, Tensor::new(out.shape().to_vec(), weights.clone())?))
        }
    }

    fn run_layer_case(seed: u64, layer: &str) -> GradCheckReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(1..3);
        let h = rng.random_range(4..7);
        let w = rng.random_range(4..7);
        let mut p = ModelParameters::new();
        let (layers, input, out_len) = match layer {
            "conv" => {
                let f = rng.random_range(1..4);
                p.insert("c.kernels", rand_tensor(&[f, c, 3, 2], &mut rng));
                p.insert("c.bias", rand_tensor(&[f], &mut rng));
                let out = f * (h - 2) * (w - 1);
                (vec![Layer::conv2d("c"), Layer::Flatten], rand_tensor(&[c, h, w], &mut rng), out)
            }
            "dense" => {
                let n = rng.random_range(2..9);
                let m = rng.random_range(2..6);
                p.insert("d.weights", rand_tensor(&[m, n], &mut rng));
                p.insert("d.bias", rand_tensor(&[m], &mut rng));
                (vec![Layer::dense("d")], rand_tensor(&[n], &mut rng), m)
            }
            act => {
                let n = rng.random_range(2..9);
                let l = match act {
                    "relu" => Layer::Relu,
                    "sigmoid" => Layer::Sigmoid,
                    _ => Layer::Softmax,
                };
                (vec![l], rand_tensor(&[n], &mut rng), n)
            }
        };
        let net = Network::new(layers, p).unwrap();
        let weights: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = GradCheckConfig {
            seed,
            coords_per_param: 64,
            ..GradCheckConfig::default()
        };
        check_gradients(&net, &input, linear_loss(weights), &cfg).unwrap()
    }

    #[test]
    fn every_layer_type_over_100_seeds() {
        for layer in ["conv", "dense", "relu", "sigmoid", "softmax"] {
            for seed in 0..100 {
                let r = run_layer_case(seed, layer);
                assert!(
                    r.passes(TOL),
                    "{layer} seed {seed}: {} at {}",
                    r.max_relative_error,
                    r.worst
                );
            }
        }
    }

    #[test]
    fn small_stack_with_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = ModelParameters::new();
        p.insert("c.kernels", glorot_uniform(&[3, 1, 3, 3], 9, 27, &mut rng));
        p.insert("c.bias", rand_tensor(&[3], &mut rng));
        p.insert("d.weights", glorot_uniform(&[4, 27], 27, 4, &mut rng));
        p.insert("d.bias", rand_tensor(&[4], &mut rng));
        let net = Network::new(
            vec![Layer::conv2d("c"), Layer::Relu, Layer::Flatten, Layer::dense("d")],
            p,
        )
        .unwrap();
        let x = rand_tensor(&[1, 5, 5], &mut rng);
        let r = check_gradients(&net, &x, ce_loss(2), &GradCheckConfig::default()).unwrap();
        assert!(r.passes(TOL), "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut p = ModelParameters::new();
        p.insert("d.weights", Tensor::new(vec![1, 2], vec![0.5, -0.3]).unwrap());
        p.insert("d.bias", Tensor::vector(vec![0.4]));
        let net = Network::new(vec![Layer::dense("d")], p).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0]);
        // reports twice the true derivative
        let bad = |out: &Tensor| -> Result<(f64, Tensor), NnError> {
            let v = out.data()[0];
            Ok((v * v, Tensor::vector(vec![4.0 * v])))
        };
        let r = check_gradients(&net, &x, bad, &GradCheckConfig::default()).unwrap();
        assert!(!r.passes(TOL));
    }
}
