use candle_core::{DType, Tensor, D};
use formula_distill_core::datagen::{PointSet, SamplingSpec};
use formula_distill_core::expr::parse_tokens;
use formula_distill_core::seed::rng_from;
use formula_distill_core::vocab::Vocab;
use formula_distill_model::model::Batch;
use formula_distill_model::{ModelConfig, SeqModel};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

fn points(n: usize, seed: u64) -> PointSet {
    let mut rng = rng_from(seed);
    let x: Array2<f64> = Array2::from_shape_fn((n, 2), |_| rng.random_range(-3.0..3.0));
    let y = x.rows().into_iter().map(|r| r[0] * r[1] + r[0].sin()).collect();
    PointSet::new(x, y, SamplingSpec::uniform(-3.0, 3.0, n, 2, seed), 0.0).unwrap()
}

fn ids(spellings: &[&str]) -> Vec<u32> {
    Vocab::new().encode(&parse_tokens(spellings).unwrap())
}

fn batch(model: &SeqModel) -> Batch {
    let v = Vocab::new();
    let p1 = points(6, 1);
    let p2 = points(6, 2);
    let seqs = vec![ids(&["sin", "x1", "0.42", "*", "x1", "x2", "0.97"]), ids(&["x2", "0.10", "+", "C", "x1", "0.33"])];
    Batch::new(model, &[&p1, &p2], &seqs, v.pad_id(), v.bos_id()).unwrap()
}

#[test]
fn gradients_match_central_differences() {
    let model = SeqModel::new(ModelConfig::tiny(), 7, DType::F64).unwrap();
    let b = batch(&model);
    let loss = model.loss(&b, None).unwrap();
    let grads = loss.backward().unwrap();
    let mut rng = rng_from(99);
    let named = model.params.named().to_vec();
    let mut probes = 0;
    let mut worst: f64 = 0.0;
    while probes < 40 {
        let (name, var) = &named[rng.random_range(0..named.len())];
        let Some(g) = grads.get(var.as_tensor()) else { continue };
        let g: Vec<f64> = g.flatten_all().unwrap().to_vec1().unwrap();
        let k = rng.random_range(0..g.len());
        if g[k].abs() < 1e-6 {
            continue;
        }
        let orig: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let shape = var.dims().to_vec();
        let eval_at = |delta: f64| {
            let mut w = orig.clone();
            w[k] += delta;
            var.set(&Tensor::from_vec(w, shape.as_slice(), model.device()).unwrap()).unwrap();
            model.loss(&b, None).unwrap().to_scalar::<f64>().unwrap()
        };
        let h = 1e-5;
        let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        var.set(&Tensor::from_vec(orig, shape.as_slice(), model.device()).unwrap()).unwrap();
        let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs());
        assert!(rel < 1e-3, "{name}[{k}]: analytic {} vs numeric {fd}", g[k]);
        worst = worst.max(rel);
        probes += 1;
    }
    assert!(worst < 1e-3);
}

#[test]
fn encoder_is_permutation_invariant() {
    let model = SeqModel::new(ModelConfig::default(), 3, DType::F32).unwrap();
    let p = points(50, 4);
    let mut order: Vec<usize> = (0..50).collect();
    order.shuffle(&mut rng_from(5));
    let x = Array2::from_shape_fn((50, 2), |(i, j)| p.x[[order[i], j]]);
    let y = order.iter().map(|&i| p.y[i]).collect();
    let shuffled = PointSet::new(x, y, p.spec, 0.0).unwrap();
    let a = model.encode_points(&p).unwrap();
    let b = model.encode_points(&shuffled).unwrap();
    let diff: f32 = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
    assert!(diff < 1e-5, "max abs difference {diff}");
}

#[test]
fn latent_shape_ignores_point_count_and_zero_input_is_finite() {
    let cfg = ModelConfig::default();
    let model = SeqModel::new(cfg.clone(), 3, DType::F32).unwrap();
    let one = model.encode_points(&points(1, 1)).unwrap();
    let many = model.encode_points(&points(100, 1)).unwrap();
    assert_eq!(one.dims(), &[1, cfg.n_seed_vectors, cfg.d_model]);
    assert_eq!(one.dims(), many.dims());
    let zeros = PointSet::new(Array2::zeros((5, 2)), vec![0.0; 5], SamplingSpec::uniform(0.0, 1.0, 5, 2, 0), 0.0).unwrap();
    let z: Vec<f32> = model.encode_points(&zeros).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    assert!(z.iter().all(|v| v.is_finite()));
}

#[test]
fn decoder_is_causal() {
    let model = SeqModel::new(ModelConfig::default(), 3, DType::F32).unwrap();
    let z = model.encode_points(&points(20, 1)).unwrap();
    let a = Tensor::new(&[[1u32, 6, 12, 60, 2, 12, 13]], model.device()).unwrap();
    let b = Tensor::new(&[[1u32, 6, 12, 60, 3, 13, 90]], model.device()).unwrap();
    let la: Vec<Vec<f32>> = model.decode(&a, &z, None).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
    let lb: Vec<Vec<f32>> = model.decode(&b, &z, None).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
    assert_eq!(la[..4], lb[..4]);
    assert_ne!(la[4], lb[4]);
    assert_eq!(la[0].len(), Vocab::new().len());
}

#[test]
fn incremental_decoding_matches_full_pass() {
    let model = SeqModel::new(ModelConfig::default(), 11, DType::F32).unwrap();
    let z = model.encode_points(&points(20, 2)).unwrap();
    let seq = [1u32, 6, 12, 60, 2, 12, 13, 110];
    let full: Vec<Vec<f32>> =
        model.decode(&Tensor::new(&[seq], model.device()).unwrap(), &z, None).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
    let mut state = model.start(&z).unwrap();
    for (t, &id) in seq.iter().enumerate() {
        let step = model.step(&mut state, id).unwrap();
        let err = step.iter().zip(&full[t]).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(err < 1e-4, "position {t}: {err}");
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let model = SeqModel::new(ModelConfig::default(), 0, DType::F32).unwrap();
    let loss: f32 = model.loss(&batch(&model), None).unwrap().to_scalar().unwrap();
    let uniform = (Vocab::new().len() as f32).ln();
    assert!((loss - uniform).abs() < 0.05, "initial loss {loss} vs ln V = {uniform}");
}

#[test]
fn logits_normalize_to_a_distribution() {
    let model = SeqModel::new(ModelConfig::tiny(), 0, DType::F32).unwrap();
    let z = model.encode_points(&points(4, 1)).unwrap();
    let logits = model.decode(&Tensor::new(&[[1u32]], model.device()).unwrap(), &z, None).unwrap();
    let p = candle_nn::ops::softmax(&logits, D::Minus1).unwrap();
    let s: f32 = p.sum_all().unwrap().to_scalar().unwrap();
    assert!((s - 1.0).abs() < 1e-5);
}

#[test]
fn dimension_errors() {
    let model = SeqModel::new(ModelConfig { max_vars: 1, ..ModelConfig::tiny() }, 0, DType::F32).unwrap();
    assert!(model.encode_points(&points(4, 1)).is_err());
    assert!(SeqModel::new(ModelConfig { d_model: 10, n_heads: 4, ..ModelConfig::tiny() }, 0, DType::F32).is_err());
}
