//! Central finite differences against the tape gradients of the LM loss and
//! the three auxiliary debiasing losses.

use convbias_core::biasspec::{BiasSpecification, BiasType};
use convbias_core::debias::{DebiasConfig, DebiasObjective, Method};
use convbias_core::lm::{Batch, CausalLM, Forward, LMConfig, Tape, Tokenizer, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const COORDS: usize = 100;
const MAX_REL_ERR: f64 = 1e-2;
/// Gradients below this magnitude are compared on an absolute scale.
const FLOOR: f64 = 1e-6;

const SENTENCES: &[&str] = &[
    "jews are meek and spoiled",
    "the jewish man plays the violin",
    "christians are confident and disciplined",
    "a jew is a nerd with greed",
    "the christian man is spiritual",
    "jews love the violin",
];

fn setup() -> (CausalLM, Batch, BiasSpecification) {
    let tok = Tokenizer::build(SENTENCES, 200).unwrap();
    let config = LMConfig {
        layers: 2,
        model_dim: 16,
        heads: 2,
        ffn_dim: 32,
        max_seq: 16,
        vocab_size: tok.len(),
        tied_embeddings: true,
    };
    let mut model = CausalLM::new(config, tok, 11).unwrap();
    // move off the symmetric initialization so no |.| sits at a kink
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in model.params.values_mut() {
        p.mapv_inplace(|x| x + rng.random_range(-0.05..0.05));
    }
    let seqs: Vec<Vec<usize>> = SENTENCES.iter().map(|s| model.encode_text(s).unwrap()).collect();
    let batch = Batch::new(&seqs);
    (model, batch, BiasSpecification::bundled(BiasType::Religion1).unwrap())
}

type LossFn<'a> = dyn Fn(&mut Tape, &CausalLM, &Batch, &Forward) -> Var + 'a;

fn value(model: &CausalLM, batch: &Batch, f: &LossFn) -> f64 {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, batch).unwrap();
    let loss = f(&mut tape, model, batch, &fwd);
    tape.scalar_value(loss)
}

/// Largest relative error over random coordinates, with the coordinate.
fn check(name: &str, f: &LossFn) {
    let (mut model, batch, _) = setup();
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &batch).unwrap();
    let loss = f(&mut tape, &model, &batch, &fwd);
    let grads = tape.backward(loss, model.params.len());

    let sizes: Vec<usize> = model.params.values().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let mut worst = (0.0_f64, String::new());
    let mut nonzero = 0;
    for _ in 0..COORDS {
        let mut k = rng.random_range(0..total);
        let mut p = 0;
        while k >= sizes[p] {
            k -= sizes[p];
            p += 1;
        }
        let cols = model.params.values()[p].ncols();
        let (i, j) = (k / cols, k % cols);
        let orig = model.params.values()[p][[i, j]];
        model.params.values_mut()[p][[i, j]] = orig + STEP;
        let up = value(&model, &batch, f);
        model.params.values_mut()[p][[i, j]] = orig - STEP;
        let down = value(&model, &batch, f);
        model.params.values_mut()[p][[i, j]] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grads[p].as_ref().map_or(0.0, |g| g[[i, j]]);
        if analytic.abs() > FLOOR {
            nonzero += 1;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        if rel > worst.0 {
            worst = (
                rel,
                format!(
                    "{}[{i},{j}] analytic {analytic:.3e} numeric {numeric:.3e}",
                    model.params.names()[p]
                ),
            );
        }
    }
    assert!(
        nonzero >= COORDS / 4,
        "{name}: only {nonzero} coordinates carry gradient"
    );
    assert!(
        worst.0 < MAX_REL_ERR,
        "{name}: relative error {:.3e} at {}",
        worst.0,
        worst.1
    );
}

fn objective(method: Method) -> DebiasObjective {
    let (model, _, spec) = setup();
    let mut obj = DebiasObjective::new(&model, &spec, &DebiasConfig::new(method)).unwrap();
    if method == Method::Hd {
        obj.refresh_subspace(&model).unwrap();
    }
    obj
}

#[test]
fn lm_loss_gradient() {
    check("lm", &|tape, m, b, fwd| m.lm_loss(tape, b, fwd));
}

#[test]
fn lmd_loss_gradient() {
    let obj = objective(Method::Lmd);
    check("lmd", &|tape, m, b, fwd| {
        obj.debias_term(tape, m, b, fwd).unwrap().expect("pair terms present")
    });
}

#[test]
fn add_loss_gradient() {
    let obj = objective(Method::Add);
    check("add", &|tape, m, b, fwd| {
        obj.debias_term(tape, m, b, fwd).unwrap().expect("attributes present")
    });
}

#[test]
fn hd_loss_gradient() {
    let obj = objective(Method::Hd);
    check("hd", &|tape, m, b, fwd| {
        obj.debias_term(tape, m, b, fwd).unwrap().expect("attributes present")
    });
}

#[test]
fn combined_objective_gradient() {
    use convbias_core::lm::Objective;
    let obj = std::cell::RefCell::new(objective(Method::Add));
    check("combined", &|tape, m, b, fwd| {
        let lm = m.lm_loss(tape, b, fwd);
        obj.borrow_mut().loss(tape, m, b, fwd, lm).unwrap().0
    });
}
