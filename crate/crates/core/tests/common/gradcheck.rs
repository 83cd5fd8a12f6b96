//! Analytic gradients against central finite differences in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usmae::model::{init_parameters, mae_loss, patchify, sample_mask, ModelConfig, VitMae};
use usmae::tensor::{Tape, Tensor, Var};

pub const SEEDS: u64 = 20;
/// Central-difference step for single operations.
pub const H: f64 = 1e-3;
/// And for the full model, whose loss is more curved.
pub const H_MODEL: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-3;
pub const MODEL_TOLERANCE: f64 = 1e-2;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub out_len: usize,
    pub build: Box<Build>,
}

fn case(name: &'static str, shapes: &[&[usize]], out_len: usize, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        out_len,
        build: Box::new(build),
    }
}

/// Every differentiable primitive of the tape.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        case("matmul", &[&[3, 4], &[4, 5]], 15, |t, v| t.matmul(v[0], v[1]).unwrap()),
        case("add", &[&[2, 3], &[2, 3]], 6, |t, v| t.add(v[0], v[1]).unwrap()),
        case("sub", &[&[2, 3], &[2, 3]], 6, |t, v| t.sub(v[0], v[1]).unwrap()),
        case("mul", &[&[2, 3], &[2, 3]], 6, |t, v| t.mul(v[0], v[1]).unwrap()),
        case("add_bias", &[&[4, 3], &[3]], 12, |t, v| t.add_bias(v[0], v[1]).unwrap()),
        case("scale", &[&[5]], 5, |t, v| t.scale(v[0], -1.7)),
        case("gelu", &[&[3, 4]], 12, |t, v| {
            let x = t.scale(v[0], 3.0);
            t.gelu(x)
        }),
        case("softmax axis 0", &[&[3, 4]], 12, |t, v| t.softmax(v[0], 0).unwrap()),
        case("softmax axis 1", &[&[3, 4]], 12, |t, v| t.softmax(v[0], 1).unwrap()),
        case("softmax 3d", &[&[2, 3, 2]], 12, |t, v| t.softmax(v[0], 1).unwrap()),
        case("layernorm", &[&[3, 6], &[6], &[6]], 18, |t, v| t.layernorm(v[0], v[1], v[2], 1e-6).unwrap()),
        case("transpose", &[&[2, 5]], 10, |t, v| t.transpose(v[0]).unwrap()),
        case("reshape", &[&[2, 6]], 12, |t, v| t.reshape(v[0], &[3, 4]).unwrap()),
        case("concat axis 0", &[&[2, 3], &[1, 3]], 9, |t, v| t.concat(&[v[0], v[1]], 0).unwrap()),
        case("concat axis 1", &[&[2, 3], &[2, 2]], 10, |t, v| t.concat(&[v[0], v[1]], 1).unwrap()),
        case("narrow", &[&[4, 5]], 8, |t, v| t.narrow(v[0], 1, 1, 2).unwrap()),
        case("index_select", &[&[4, 3]], 12, |t, v| t.index_select(v[0], &[3, 0, 3, 1]).unwrap()),
        case("sum", &[&[3, 2]], 1, |t, v| t.sum(v[0])),
        case("mean", &[&[3, 2]], 1, |t, v| t.mean(v[0]).unwrap()),
        case("mean_rows", &[&[4, 3]], 3, |t, v| t.mean_rows(v[0]).unwrap()),
        case("cross_entropy_logits", &[&[3, 5]], 1, |t, v| t.cross_entropy_logits(v[0], &[4, 0, 2]).unwrap()),
        // two sequences of three tokens, width 4, two heads
        case("attention", &[&[6, 12]], 24, |t, v| t.attention(v[0], 3, 2).unwrap()),
    ]
}

/// Reduces `build`'s output to a scalar with fixed random weights.
fn scalar_loss(build: &Build, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> (Tape<f64>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars);
    let out = if tape.shape(out).is_empty() {
        out
    } else {
        let w = tape.constant(weights.clone().reshape(tape.shape(out)).unwrap());
        let p = tape.mul(out, w).unwrap();
        tape.sum(p)
    };
    (tape, vars, out)
}

/// Worst relative error over every input of `op` for one seed.
pub fn check_op(op: &OpCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = op.shapes.iter().map(|s| random(&mut rng, s).with_grad()).collect();
    let weights = random(&mut rng, &[op.out_len]);
    let (tape, vars, loss) = scalar_loss(&*op.build, &inputs, &weights);
    let grads = tape.backward(loss);

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("input reached").to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, g) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let mut shifted = inputs.clone();
                shifted[i].data_mut()[j] += delta;
                let (tape, _, loss) = scalar_loss(&*op.build, &shifted, &weights);
                tape.scalar(loss)
            };
            *g = (eval(H) - eval(-H)) / (2.0 * H);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Image 8×8, patch 4, width 8, one block, two heads, three classes.
pub fn micro() -> ModelConfig {
    let mut c = ModelConfig::with_encoder(8, 1, 2);
    c.image_size = 8;
    c.patch_size = 4;
    c.num_classes = 3;
    c.head_hidden = 8;
    c
}

/// Loss of `model` on one image: masked reconstruction or classification.
fn model_loss(model: &VitMae<f64>, image: &Tensor<f64>, seed: u64, classify: bool) -> (Tape<f64>, Var) {
    let c = model.config();
    let patches = patchify(image, c.patch_size).unwrap();
    let mut tape = Tape::new();
    let loss = if classify {
        let logits = model.classify_batch(&mut tape, &[&patches]).unwrap();
        tape.cross_entropy_logits(logits, &[(seed % 3) as usize]).unwrap()
    } else {
        // 4 patches at ratio 0.5: two masked
        let mask = sample_mask(c.num_patches(), 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let e = model.encode(&mut tape, &patches, &mask).unwrap();
        let r = model.decode_reconstruct(&mut tape, e, &mask).unwrap();
        mae_loss(&mut tape, r, &patches, &mask).unwrap()
    };
    (tape, loss)
}

/// Global relative error over all parameters and the worst per-tensor one.
pub fn check_model(config: &ModelConfig, seed: u64, classify: bool) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: VitMae<f64> = init_parameters(config, &mut rng).unwrap();
    // scale weights up from the 0.02 init so every path carries signal
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let image = random(&mut rng, &[3, 8, 8]);
    let (tape, loss) = model_loss(&model, &image, seed, classify);
    let grads = tape.backward(loss);

    let (mut all_a, mut all_n, mut worst) = (Vec::new(), Vec::new(), 0.0f64);
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    for (k, name) in names.iter().enumerate() {
        let Some(var) = tape.param_var(name) else { continue };
        let analytic = grads.get(var).unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, g) in numeric.iter_mut().enumerate() {
            let mut eval = |delta: f64| {
                model.params_mut()[k].value.data_mut()[j] += delta;
                let (tape, loss) = model_loss(&model, &image, seed, classify);
                model.params_mut()[k].value.data_mut()[j] -= delta;
                tape.scalar(loss)
            };
            *g = (eval(H_MODEL) - eval(-H_MODEL)) / (2.0 * H_MODEL);
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        // per tensor, with an absolute floor for near-zero gradients
        let local = norm(&diff) / (norm(&analytic).max(norm(&numeric)) + 1e-7);
        worst = worst.max(local);
        all_a.extend(analytic);
        all_n.extend(numeric);
    }
    (rel_err(&all_a, &all_n), worst)
}
